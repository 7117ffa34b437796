//! Dense linear programming and the polytope queries built on it.
//!
//! The user-facing problem is `min c'x subject to A x <= b` with free `x`.
//! Internally we run a two-phase tableau simplex with Bland's rule on the
//! standard-form dual `min b'mu, A'mu = -c, mu >= 0`, which has only `n` rows;
//! the primal vertex is recovered from the simplex multipliers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HPolytope, NormP, ProblemInstance};

const OPT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;

/// Carrier for one bounding program: minimize `objective . x` over `constraints`.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub objective: DVector<f64>,
    pub constraints: HPolytope,
}

/// Componentwise enclosing box.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxSummary {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSummary {
    pub fn midpoint(&self) -> DVector<f64> {
        DVector::from_fn(self.lower.len(), |i, _| 0.5 * (self.lower[i] + self.upper[i]))
    }

    pub fn max_halfwidth(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (u - l))
            .fold(0.0, f64::max)
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.max_halfwidth()
    }
}

enum SimplexOutcome {
    Optimal {
        basis: Vec<usize>,
        value: f64,
    },
    Unbounded,
    Infeasible,
}

/// Two-phase tableau simplex on `min c'w, A w = b, w >= 0`.
///
/// Entering variable: lowest index with negative reduced cost (Bland).
/// Leaving variable: ratio test, ties broken by lowest basic index.
fn standard_simplex(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> SimplexOutcome {
    let rows = a.nrows();
    let cols = a.ncols();
    let total = cols + rows; // structural + one artificial per row
    // tableau: rows x (total + 1), last column is the rhs
    let mut t = DMatrix::zeros(rows, total + 1);
    for i in 0..rows {
        let flip = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..cols {
            t[(i, j)] = flip * a[(i, j)];
        }
        t[(i, cols + i)] = 1.0;
        t[(i, total)] = flip * b[i];
    }
    let mut basis: Vec<usize> = (cols..total).collect();

    // phase 1 cost row: minimize the sum of artificials
    let mut cost = DVector::zeros(total + 1);
    for j in cols..total {
        cost[j] = 1.0;
    }
    for i in 0..rows {
        for j in 0..=total {
            cost[j] -= t[(i, j)];
        }
    }
    if !pivot_until_optimal(&mut t, &mut cost, &mut basis, cols) {
        // phase 1 of a feasible-by-construction program cannot be unbounded
        return SimplexOutcome::Infeasible;
    }
    if -cost[total] > 1e-7 {
        return SimplexOutcome::Infeasible;
    }

    // phase 2: original costs, artificial columns barred from entering
    let mut cost = DVector::zeros(total + 1);
    for j in 0..cols {
        cost[j] = c[j];
    }
    for (i, &bi) in basis.iter().enumerate() {
        if bi < cols && cost[bi].abs() > 0.0 {
            let f = cost[bi];
            for j in 0..=total {
                cost[j] -= f * t[(i, j)];
            }
        }
    }
    if !pivot_until_optimal(&mut t, &mut cost, &mut basis, cols) {
        return SimplexOutcome::Unbounded;
    }
    SimplexOutcome::Optimal {
        basis,
        value: -cost[t.ncols() - 1],
    }
}

/// Runs Bland pivots until no negative reduced cost remains among the first
/// `enterable` columns. Returns false on unboundedness.
fn pivot_until_optimal(
    t: &mut DMatrix<f64>,
    cost: &mut DVector<f64>,
    basis: &mut [usize],
    enterable: usize,
) -> bool {
    let rows = t.nrows();
    let rhs = t.ncols() - 1;
    loop {
        let mut entering = None;
        for j in 0..enterable {
            if cost[j] < -OPT_TOL {
                entering = Some(j);
                break;
            }
        }
        let Some(e) = entering else {
            return true;
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..rows {
            let aij = t[(i, e)];
            if aij > FEAS_TOL {
                let ratio = t[(i, rhs)] / aij;
                let better = match leave {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - 1e-12 || (ratio < lr + 1e-12 && basis[i] < basis[li])
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((l, _)) = leave else {
            return false;
        };
        let pivot = t[(l, e)];
        for j in 0..=rhs {
            t[(l, j)] /= pivot;
        }
        for i in 0..rows {
            if i != l {
                let f = t[(i, e)];
                if f != 0.0 {
                    for j in 0..=rhs {
                        t[(i, j)] -= f * t[(l, j)];
                    }
                }
            }
        }
        let f = cost[e];
        if f != 0.0 {
            for j in 0..=rhs {
                cost[j] -= f * t[(l, j)];
            }
        }
        basis[l] = e;
    }
}

/// Minimizes `c . x` over `A x <= b`; returns a vertex optimizer and the value.
pub fn solve_lp_raw(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let n = a.ncols();
    let k = a.nrows();
    // dual: min b'mu subject to A'mu = -c, mu >= 0
    let at = a.transpose();
    let neg_c = -c;
    match standard_simplex(&at, &neg_c, b) {
        SimplexOutcome::Optimal { basis, value } => {
            // primal optimum = simplex multipliers: solve B' pi = c_B
            let mut bmat = DMatrix::zeros(n, n);
            let mut cb = DVector::zeros(n);
            for (i, &bi) in basis.iter().enumerate() {
                if bi < k {
                    bmat.set_column(i, &at.column(bi));
                    cb[i] = b[bi];
                } else {
                    // artificial column, zero cost
                    bmat[(bi - k, i)] = 1.0;
                }
            }
            let lu = bmat.transpose().lu();
            let pi = lu.solve(&cb).ok_or(Error::NumericalFailure(
                "singular basis while recovering primal vertex".into(),
            ))?;
            // dual min value is -c'x at the primal optimum
            Ok((pi, -value))
        }
        SimplexOutcome::Unbounded => Err(Error::Infeasible),
        SimplexOutcome::Infeasible => {
            // dual infeasible: primal is unbounded if feasible at all
            if polytope_is_feasible(a, b)? {
                Err(Error::Unbounded)
            } else {
                Err(Error::Infeasible)
            }
        }
    }
}

fn polytope_is_feasible(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<bool> {
    let at = a.transpose();
    let zero = DVector::zeros(a.ncols());
    match standard_simplex(&at, &zero, b) {
        SimplexOutcome::Optimal { .. } => Ok(true),
        SimplexOutcome::Unbounded => Ok(false),
        SimplexOutcome::Infeasible => Ok(true), // mu = 0 is always feasible here
    }
}

pub fn solve_lp(p: &LpProblem) -> Result<(DVector<f64>, f64)> {
    solve_lp_raw(&p.constraints.a_matrix(), &p.constraints.b_vector(), &p.objective)
}

/// Whether `A x <= b` has a solution.
pub fn feasible(poly: &HPolytope) -> Result<bool> {
    polytope_is_feasible(&poly.a_matrix(), &poly.b_vector())
}

impl HPolytope {
    /// Center and radius of the largest inscribed Euclidean ball, by LP over
    /// `(x, t)`: maximize `t` subject to `a_i'x + |a_i| t <= b_i`.
    pub fn chebyshev_center(&self) -> Result<(DVector<f64>, f64)> {
        let k = self.rows();
        let n = self.dim();
        let a = self.a_matrix();
        let mut ext = DMatrix::zeros(k + 1, n + 1);
        let mut rhs = DVector::zeros(k + 1);
        for i in 0..k {
            for j in 0..n {
                ext[(i, j)] = a[(i, j)];
            }
            ext[(i, n)] = a.row(i).norm();
            rhs[i] = self.b[i];
        }
        ext[(k, n)] = -1.0;
        let mut c = DVector::zeros(n + 1);
        c[n] = -1.0;
        let (xt, value) = solve_lp_raw(&ext, &rhs, &c)?;
        Ok((xt.rows(0, n).into_owned(), -value))
    }

    /// Nonempty interior per a Chebyshev-center program.
    pub fn has_interior(&self) -> bool {
        matches!(self.chebyshev_center(), Ok((_, r)) if r > 1e-10)
    }
}

/// Per-coordinate LP bounds over the polytope.
pub fn coordinate_bounds(poly: &HPolytope, coords: &[usize]) -> Result<BoxSummary> {
    let n = poly.dim();
    let a = poly.a_matrix();
    let b = poly.b_vector();
    let mut lower = Vec::with_capacity(coords.len());
    let mut upper = Vec::with_capacity(coords.len());
    for &i in coords {
        assert!(i < n, "coordinate index out of range");
        let mut c = DVector::zeros(n);
        c[i] = 1.0;
        let (_, lo) = solve_lp_raw(&a, &b, &c)?;
        c[i] = -1.0;
        let (_, neg_hi) = solve_lp_raw(&a, &b, &c)?;
        lower.push(lo);
        upper.push(-neg_hi);
    }
    Ok(BoxSummary { lower, upper })
}

/// Tightest box around `S K`, its midpoint (the sup-norm Chebyshev center) and
/// the worst-case radius, via `2s` linear programs.
pub fn worst_case_box(inst: &ProblemInstance) -> Result<(DVector<f64>, f64, BoxSummary)> {
    if inst.norm_p != NormP::Inf {
        return Err(Error::UnsupportedNorm(
            "worst-case box geometry is defined for the sup norm".into(),
        ));
    }
    let poly = crate::model::consistency_polytope(inst)?;
    let a = poly.a_matrix();
    let b = poly.b_vector();
    let s = inst.s();
    let mut lower = Vec::with_capacity(s);
    let mut upper = Vec::with_capacity(s);
    for i in 0..s {
        let c = inst.solution_matrix.row(i).transpose();
        let (_, lo) = solve_lp_raw(&a, &b, &c)?;
        let (_, neg_hi) = solve_lp_raw(&a, &b, &(-&c))?;
        lower.push(lo);
        upper.push(-neg_hi);
    }
    let box_summary = BoxSummary { lower, upper };
    Ok((box_summary.midpoint(), box_summary.max_halfwidth(), box_summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::consistency_polytope;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn box_polytope(lo: f64, hi: f64, n: usize) -> HPolytope {
        let mut a = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for i in 0..n {
            a[(i, i)] = 1.0;
            b[i] = hi;
            a[(n + i, i)] = -1.0;
            b[n + i] = -lo;
        }
        HPolytope::new(a, b)
    }

    #[test]
    fn minimize_over_interval() {
        let p = LpProblem {
            objective: DVector::from_vec(vec![1.0]),
            constraints: box_polytope(-1.0, 1.0, 1),
        };
        let (x, v) = solve_lp(&p).unwrap();
        assert!((x[0] + 1.0).abs() < 1e-9);
        assert!((v + 1.0).abs() < 1e-9);
    }

    #[test]
    fn minimize_sum_over_square() {
        let p = LpProblem {
            objective: DVector::from_vec(vec![1.0, 1.0]),
            constraints: box_polytope(-1.0, 1.0, 2),
        };
        let (x, v) = solve_lp(&p).unwrap();
        assert!((v + 2.0).abs() < 1e-9);
        assert!((x[0] + 1.0).abs() < 1e-9 && (x[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![-1.0, -1.0]); // x <= -1 and x >= 1
        let c = DVector::from_vec(vec![1.0]);
        assert!(matches!(solve_lp_raw(&a, &b, &c), Err(Error::Infeasible)));
    }

    #[test]
    fn detects_unbounded() {
        let a = DMatrix::from_row_slice(1, 1, &[1.0]); // x <= 1, minimize x
        let b = DVector::from_vec(vec![1.0]);
        let c = DVector::from_vec(vec![1.0]);
        assert!(matches!(solve_lp_raw(&a, &b, &c), Err(Error::Unbounded)));
    }

    /// Brute-force oracle: all facet-pair intersections, feasibility filter,
    /// minimum of the objective over surviving vertices.
    fn brute_force_min(poly: &HPolytope, c: &DVector<f64>) -> f64 {
        let a = poly.a_matrix();
        let b = poly.b_vector();
        let k = poly.rows();
        let mut best = f64::INFINITY;
        for i in 0..k {
            for j in (i + 1)..k {
                let m = DMatrix::from_row_slice(
                    2,
                    2,
                    &[a[(i, 0)], a[(i, 1)], a[(j, 0)], a[(j, 1)]],
                );
                let rhs = DVector::from_vec(vec![b[i], b[j]]);
                if let Some(v) = m.lu().solve(&rhs) {
                    if v.iter().all(|x| x.is_finite()) && poly.contains(&v, 1e-7) {
                        best = best.min(c.dot(&v));
                    }
                }
            }
        }
        best
    }

    #[test]
    fn agrees_with_vertex_enumeration_on_random_polytopes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..50 {
            // random halfspaces around the origin, plus a bounding box
            let mut rows = vec![];
            let mut rhs = vec![];
            for _ in 0..6 {
                let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                rows.push(vec![th.cos(), th.sin()]);
                rhs.push(rng.gen_range(0.4..2.0));
            }
            for (dx, dy, b) in [
                (1.0, 0.0, 3.0),
                (-1.0, 0.0, 3.0),
                (0.0, 1.0, 3.0),
                (0.0, -1.0, 3.0),
            ] {
                rows.push(vec![dx, dy]);
                rhs.push(b);
            }
            let poly = HPolytope {
                a: rows,
                b: rhs,
            };
            let c = DVector::from_vec(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let (_, v) = solve_lp(&LpProblem {
                objective: c.clone(),
                constraints: poly.clone(),
            })
            .unwrap();
            let oracle = brute_force_min(&poly, &c);
            assert!(
                (v - oracle).abs() < 1e-8 * (1.0 + oracle.abs()),
                "trial {trial}: simplex {v} vs enumeration {oracle}"
            );
        }
    }

    #[test]
    fn coordinate_bounds_square() {
        let poly = box_polytope(-1.0, 1.0, 2);
        let bounds = coordinate_bounds(&poly, &[0, 1]).unwrap();
        assert!((bounds.lower[0] + 1.0).abs() < 1e-9);
        assert!((bounds.upper[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn worst_case_box_interval() {
        let inst = ProblemInstance::new(
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::zeros(2),
            1.0,
            NormP::Inf,
            DMatrix::from_row_slice(1, 1, &[1.0]),
        );
        let (z, r, _) = worst_case_box(&inst).unwrap();
        assert!(z[0].abs() < 1e-9);
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn worst_case_box_square() {
        let inst = ProblemInstance::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            1.0,
            NormP::Inf,
            DMatrix::identity(2, 2),
        );
        let (z, r, _) = worst_case_box(&inst).unwrap();
        assert!(z.norm() < 1e-9);
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn worst_case_radius_monotone_in_rho() {
        let info = DMatrix::from_fn(10, 3, |i, j| (((i + 1) * (j + 2) + i) as f64).sin() * 3.0);
        let x0 = DVector::from_vec(vec![0.5, -1.0, 0.25]);
        let y = &info * &x0;
        let mut last = 0.0;
        for rho in [0.5, 1.0, 2.0] {
            let inst = ProblemInstance::new(
                info.clone(),
                y.clone(),
                rho,
                NormP::Inf,
                DMatrix::identity(3, 3),
            );
            let (_, r, _) = worst_case_box(&inst).unwrap();
            assert!(r > last, "r_wc must grow with rho");
            last = r;
        }
    }

    #[test]
    fn chebyshev_center_of_square() {
        let poly = box_polytope(-1.0, 1.0, 2);
        let (c, r) = poly.chebyshev_center().unwrap();
        assert!(c.norm() < 1e-9);
        assert!((r - 1.0).abs() < 1e-9);
        assert!(poly.has_interior());
    }

    #[test]
    fn consistency_polytope_bounded_when_full_rank() {
        let info = DMatrix::from_fn(8, 3, |i, j| (((i + 2) * (j + 1) * (j + 1)) as f64).cos() * 2.0);
        let inst = ProblemInstance::new(
            info,
            DVector::zeros(8),
            1.0,
            NormP::Inf,
            DMatrix::identity(3, 3),
        );
        let poly = consistency_polytope(&inst).unwrap();
        let bounds = coordinate_bounds(&poly, &[0, 1, 2]).unwrap();
        for i in 0..3 {
            assert!(bounds.lower[i].is_finite() && bounds.upper[i].is_finite());
            assert!(bounds.lower[i] <= bounds.upper[i]);
        }
    }
}
