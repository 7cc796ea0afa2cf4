//! Correlation polytopes for binary-input, binary-output scenarios.
//!
//! Conditional distributions are flat vectors. For `k` parties the entry for
//! outcome tuple `o` and input tuple `x` sits at `o + 2^k * x`, with each tuple
//! packed as bits, party 0 lowest. For two parties this gives the table order
//! used throughout the crate: outcomes (1,1), (2,1), (1,2), (2,2) within each
//! settings block (1,1), (2,1), (1,2), (2,2).

use std::f64::consts::SQRT_2;

use crate::error::{QpvError, Result};
use crate::lp::{LinearProgram, LpError};
use crate::optim;

/// Tsirelson's bound for the CHSH correlator.
pub const TSIRELSON: f64 = 2.0 * SQRT_2;
/// Tolerance used when checking a point against a polytope.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// A two-party conditional distribution in flat layout (16 entries).
pub type Dist2 = [f64; 16];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub parties: usize,
}

impl Layout {
    pub fn outcomes(self) -> usize {
        1 << self.parties
    }

    pub fn inputs(self) -> usize {
        1 << self.parties
    }

    pub fn len(self) -> usize {
        self.outcomes() * self.inputs()
    }

    pub fn is_empty(self) -> bool {
        false
    }

    #[inline]
    pub fn index(self, outcome: usize, input: usize) -> usize {
        outcome + self.outcomes() * input
    }
}

/// Half-space description: equality rows and `<=` rows.
#[derive(Clone, Debug)]
pub struct PolytopeH {
    layout: Layout,
    eq: Vec<(Vec<f64>, f64)>,
    le: Vec<(Vec<f64>, f64)>,
}

impl PolytopeH {
    /// Normalization, non-signaling and nonnegativity constraints for `parties` parties.
    pub fn non_signaling(parties: usize) -> Self {
        let layout = Layout { parties };
        let n = layout.len();
        let no = layout.outcomes();
        let ni = layout.inputs();
        let mut eq = Vec::new();
        for x in 0..ni {
            let mut row = vec![0.0; n];
            for o in 0..no {
                row[layout.index(o, x)] = 1.0;
            }
            eq.push((row, 1.0));
        }
        // The marginal of everyone except party j must not depend on x_j.
        for j in 0..parties {
            let bit = 1 << j;
            for x in (0..ni).filter(|x| x & bit == 0) {
                for o_rest in (0..no).filter(|o| o & bit == 0) {
                    let mut row = vec![0.0; n];
                    for oj in [0, bit] {
                        row[layout.index(o_rest | oj, x)] += 1.0;
                        row[layout.index(o_rest | oj, x | bit)] -= 1.0;
                    }
                    eq.push((row, 0.0));
                }
            }
        }
        let le = (0..n)
            .map(|i| {
                let mut row = vec![0.0; n];
                row[i] = -1.0;
                (row, 0.0)
            })
            .collect();
        Self { layout, eq, le }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    pub fn equalities(&self) -> &[(Vec<f64>, f64)] {
        &self.eq
    }

    pub fn inequalities(&self) -> &[(Vec<f64>, f64)] {
        &self.le
    }

    pub fn add_inequality(&mut self, row: Vec<f64>, rhs: f64) {
        assert_eq!(row.len(), self.dim());
        self.le.push((row, rhs));
    }

    pub fn equality_rank(&self) -> usize {
        let rows: Vec<Vec<f64>> = self.eq.iter().map(|(r, _)| r.clone()).collect();
        optim::rank(&rows, self.dim())
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (row, rhs) in &self.eq {
            worst = worst.max((dot(row, x) - rhs).abs());
        }
        for (row, rhs) in &self.le {
            worst = worst.max(dot(row, x) - rhs);
        }
        worst
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.max_violation(x) <= MEMBERSHIP_TOL
    }

    /// The uniform distribution, which lies inside every polytope built here.
    pub fn uniform_point(&self) -> Vec<f64> {
        vec![1.0 / self.layout.outcomes() as f64; self.dim()]
    }

    /// Converts to the solver's `x >= 0` form. Coordinates without an explicit
    /// nonnegativity row are split into positive and negative parts.
    fn to_lp(&self) -> (LinearProgram, Vec<Option<usize>>) {
        let n = self.dim();
        let mut nonneg = vec![false; n];
        let mut general = Vec::new();
        for (row, rhs) in &self.le {
            let nz: Vec<usize> = (0..n).filter(|&i| row[i] != 0.0).collect();
            if nz.len() == 1 && row[nz[0]] < 0.0 && *rhs == 0.0 {
                nonneg[nz[0]] = true;
            } else {
                general.push((row, *rhs));
            }
        }
        let mut neg_col = vec![None; n];
        let mut cols = n;
        for i in 0..n {
            if !nonneg[i] {
                neg_col[i] = Some(cols);
                cols += 1;
            }
        }
        let expand = |row: &[f64]| {
            let mut r = row.to_vec();
            r.resize(cols, 0.0);
            for i in 0..n {
                if let Some(k) = neg_col[i] {
                    r[k] = -row[i];
                }
            }
            r
        };
        let mut lp = LinearProgram::new(cols);
        for (row, rhs) in &self.eq {
            lp.add_eq(expand(row), *rhs).expect("row length");
        }
        for (row, rhs) in general {
            lp.add_le(expand(row), rhs).expect("row length");
        }
        (lp, neg_col)
    }
}

/// Result of a linear maximization over a polytope.
#[derive(Clone, Debug)]
pub struct LinearOptimum {
    pub value: f64,
    pub point: Vec<f64>,
    /// Dual infeasibility plus duality gap of the returned certificate.
    pub certificate_error: f64,
}

/// Maximizes `objective · x` over `poly`.
pub fn max_linear(objective: &[f64], poly: &PolytopeH) -> Result<LinearOptimum> {
    let n = poly.dim();
    if objective.len() != n {
        return Err(LpError::Dimension(format!(
            "objective has {} entries, polytope has {n}",
            objective.len()
        ))
        .into());
    }
    let (lp, neg_col) = poly.to_lp();
    let mut c = objective.to_vec();
    c.resize(lp.num_vars(), 0.0);
    for i in 0..n {
        if let Some(k) = neg_col[i] {
            c[k] = -objective[i];
        }
    }
    let sol = lp.maximize(&c)?;
    let certificate_error = lp.certificate_error(&c, &sol);
    let point = (0..n)
        .map(|i| sol.x[i] - neg_col[i].map_or(0.0, |k| sol.x[k]))
        .collect();
    Ok(LinearOptimum {
        value: sol.value,
        point,
        certificate_error,
    })
}

pub fn min_linear(objective: &[f64], poly: &PolytopeH) -> Result<LinearOptimum> {
    let neg: Vec<f64> = objective.iter().map(|c| -c).collect();
    let mut opt = max_linear(&neg, poly)?;
    opt.value = -opt.value;
    Ok(opt)
}

/// Three parties with inputs (mqa, b, b') and outcomes (oqa, zqa, zqb).
pub fn ns3_polytope() -> PolytopeH {
    PolytopeH::non_signaling(3)
}

/// Two-party non-signaling.
pub fn ns2_polytope() -> PolytopeH {
    PolytopeH::non_signaling(2)
}

/// Two-party non-signaling distributions obeying all eight Tsirelson bounds.
pub fn quantum_set() -> PolytopeH {
    let mut poly = ns2_polytope();
    for row in chsh_rows() {
        poly.add_inequality(row.to_vec(), TSIRELSON);
    }
    poly
}

/// Coefficients of the correlator E(s) = p(same) - p(different) for settings `s`.
fn correlator_row(s: usize) -> Dist2 {
    let mut row = [0.0; 16];
    for o in 0..4 {
        let same = (o & 1) == (o >> 1);
        row[o + 4 * s] = if same { 1.0 } else { -1.0 };
    }
    row
}

/// The eight CHSH expressions: `2k` is Σ E - 2E(k), `2k + 1` its negation.
pub fn chsh_rows() -> [Dist2; 8] {
    let mut rows = [[0.0; 16]; 8];
    for k in 0..4 {
        for s in 0..4 {
            let sign = if s == k { -1.0 } else { 1.0 };
            let e = correlator_row(s);
            for i in 0..16 {
                rows[2 * k][i] += sign * e[i];
            }
        }
        rows[2 * k + 1] = rows[2 * k].map(|v| -v);
    }
    rows
}

pub fn chsh_values(p: &Dist2) -> [f64; 8] {
    chsh_rows().map(|row| dot(&row, p))
}

pub fn correlators(p: &Dist2) -> [f64; 4] {
    let mut e = [0.0; 4];
    for (s, es) in e.iter_mut().enumerate() {
        *es = dot(&correlator_row(s), p);
    }
    e
}

/// A deterministic local strategy: outcomes (1 or 2) of each party per input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LrStrategy {
    pub a: [u8; 2],
    pub p: [u8; 2],
}

impl LrStrategy {
    pub fn from_index(index: usize) -> Self {
        let bit = |k: usize| ((index >> k) & 1) as u8 + 1;
        Self {
            a: [bit(0), bit(1)],
            p: [bit(2), bit(3)],
        }
    }

    pub fn index(&self) -> usize {
        usize::from(self.a[0] - 1)
            | usize::from(self.a[1] - 1) << 1
            | usize::from(self.p[0] - 1) << 2
            | usize::from(self.p[1] - 1) << 3
    }

    /// Matched outcome index (oqa, oqp) produced for settings index `s`.
    pub fn outcome(&self, s: usize) -> usize {
        let oa = self.a[s & 1] - 1;
        let op = self.p[s >> 1] - 1;
        usize::from(oa) | usize::from(op) << 1
    }

    pub fn distribution(&self) -> Dist2 {
        let mut d = [0.0; 16];
        for s in 0..4 {
            d[self.outcome(s) + 4 * s] = 1.0;
        }
        d
    }
}

#[derive(Clone, Debug)]
pub struct LrStrategySet {
    strategies: Vec<LrStrategy>,
}

impl LrStrategySet {
    pub fn strategies(&self) -> &[LrStrategy] {
        &self.strategies
    }

    pub fn len(&self) -> usize {
        self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
    }

    pub fn distributions(&self) -> Vec<Dist2> {
        self.strategies
            .iter()
            .map(LrStrategy::distribution)
            .collect()
    }
}

/// All 16 deterministic strategies; index 0 always answers 1.
pub fn lr_vertices() -> LrStrategySet {
    LrStrategySet {
        strategies: (0..16).map(LrStrategy::from_index).collect(),
    }
}

/// Convex weights over the LR vertices reproducing `p`, if any exist.
pub fn lr_decomposition(p: &Dist2) -> Result<Option<Vec<f64>>> {
    let verts = lr_vertices().distributions();
    let mut lp = LinearProgram::new(16);
    for i in 0..16 {
        lp.add_eq(verts.iter().map(|v| v[i]).collect(), p[i])?;
    }
    lp.add_eq(vec![1.0; 16], 1.0)?;
    match lp.feasible_point() {
        Ok(w) => Ok(Some(w)),
        Err(LpError::Infeasible(_)) => Ok(None),
        Err(e) => Err(QpvError::Lp(e)),
    }
}

pub fn lr_membership(p: &Dist2) -> Result<bool> {
    Ok(lr_decomposition(p)?.is_some())
}

/// The Popescu-Rohrlich box: perfectly correlated except on settings (2,2).
pub fn pr_box() -> Dist2 {
    let mut d = [0.0; 16];
    for s in 0..4 {
        let anti = s == 3;
        for o in 0..4 {
            let same = (o & 1) == (o >> 1);
            if same != anti {
                d[o + 4 * s] = 0.5;
            }
        }
    }
    d
}

/// Index of μ(o | mqa, b, b') in the three-party layout (all 0-based).
#[inline]
pub fn ns3_index(oqa: usize, zqa: usize, zqb: usize, mqa: usize, b: usize, b2: usize) -> usize {
    (oqa | zqa << 1 | zqb << 2) + 8 * (mqa | b << 1 | b2 << 2)
}

/// Exchanges the roles of the two responding parties: (zqa, b) <-> (zqb, b').
pub fn symmetrize_ns3(mu: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 64];
    for (i, o) in out.iter_mut().enumerate() {
        let (o3, x) = (i % 8, i / 8);
        let swapped = ns3_index(
            o3 & 1,
            (o3 >> 2) & 1,
            (o3 >> 1) & 1,
            x & 1,
            (x >> 2) & 1,
            (x >> 1) & 1,
        );
        *o = 0.5 * (mu[i] + mu[swapped]);
    }
    out
}

/// Two-party marginal (oqa, zqa | mqa, b) taken on the b' = b slice.
pub fn ns3_matched_marginal(mu: &[f64]) -> Dist2 {
    let mut d = [0.0; 16];
    for mqa in 0..2 {
        for b in 0..2 {
            let s = mqa | b << 1;
            for oqa in 0..2 {
                for zqa in 0..2 {
                    d[(oqa | zqa << 1) + 4 * s] = (0..2)
                        .map(|zqb| mu[ns3_index(oqa, zqa, zqb, mqa, b, b)])
                        .sum();
                }
            }
        }
    }
    d
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ns_ranks() {
        assert_eq!(ns2_polytope().equality_rank(), 8);
        assert_eq!(ns3_polytope().equality_rank(), 38);
        assert_eq!(ns3_polytope().equalities().len(), 8 + 48);
    }

    #[test]
    fn uniform_is_inside_everything() {
        for poly in [ns2_polytope(), ns3_polytope(), quantum_set()] {
            assert!(poly.contains(&poly.uniform_point()));
        }
    }

    #[test]
    fn signaling_point_is_rejected() {
        // oqa copies b deterministically
        let mut mu = vec![0.0; 64];
        for x in 0..8 {
            let b = (x >> 1) & 1;
            mu[b + 8 * x] = 1.0;
        }
        assert!(!ns3_polytope().contains(&mu));
    }

    #[test]
    fn pr_box_with_uniform_third_party() {
        let pr = pr_box();
        let mut mu = vec![0.0; 64];
        for mqa in 0..2 {
            for b in 0..2 {
                for b2 in 0..2 {
                    for o3 in 0..8 {
                        let (oqa, zqa) = (o3 & 1, (o3 >> 1) & 1);
                        mu[o3 + 8 * (mqa | b << 1 | b2 << 2)] =
                            0.5 * pr[(oqa | zqa << 1) + 4 * (mqa | b << 1)];
                    }
                }
            }
        }
        assert!(ns3_polytope().contains(&mu));
    }

    #[test]
    fn lr_vertices_are_quantum_and_pr_is_not() {
        let q = quantum_set();
        let set = lr_vertices();
        assert_eq!(set.len(), 16);
        assert_eq!(set.strategies()[0].distribution()[0], 1.0);
        for v in set.distributions() {
            assert!(q.contains(&v));
        }
        assert!(!q.contains(&pr_box()));
        assert!(chsh_values(&pr_box())
            .iter()
            .any(|v| (v - 4.0).abs() < 1e-12));
    }

    #[test]
    fn chsh_maxima() {
        let row = chsh_rows()[6];
        let ns = max_linear(&row, &ns2_polytope()).unwrap();
        assert!((ns.value - 4.0).abs() < 1e-9);
        assert!(ns.certificate_error < 1e-9);
        let q = max_linear(&row, &quantum_set()).unwrap();
        assert!((q.value - TSIRELSON).abs() < 1e-9);
        let lr = lr_vertices()
            .distributions()
            .iter()
            .map(|v| dot(&row, v))
            .fold(f64::MIN, f64::max);
        assert_eq!(lr, 2.0);
    }

    #[test]
    fn constant_objective() {
        let poly = ns3_polytope();
        let c = vec![0.7; 64];
        let opt = max_linear(&c, &poly).unwrap();
        assert!((opt.value - 0.7 * 8.0).abs() < 1e-9);
        assert!(poly.max_violation(&opt.point) < 1e-9);
    }

    #[test]
    fn membership() {
        assert!(lr_membership(&[0.25; 16]).unwrap());
        assert!(!lr_membership(&pr_box()).unwrap());
        let w = lr_decomposition(&lr_vertices().strategies()[5].distribution())
            .unwrap()
            .unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn strategy_index_roundtrip() {
        for i in 0..16 {
            assert_eq!(LrStrategy::from_index(i).index(), i);
        }
    }
}
