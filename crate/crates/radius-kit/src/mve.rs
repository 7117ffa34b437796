//! Deterministic lower-bound relaxation: jointly optimizes the cylinder
//! center z and the maximum-volume ellipsoid inscribed in `K ∩ C(z, r)`.
//!
//! Containment of the ellipsoid `{x_E + P w : |w|_2 <= 1}` in a halfspace
//! `a'x <= b` is exactly `|P a|_2 <= b - a'x_E`, so the problem is solved as
//! a smooth log-barrier program over (P, x_E, z) with damped Newton steps.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{consistency_polytope, NormP, RegularizedProblem};
use crate::sampling::RngStream;
use crate::violation::ViolationSolver;

/// Maximum-volume inscribed ellipsoid together with the cylinder center it
/// was optimized against.
#[derive(Debug, Clone)]
pub struct InscribedEllipsoid {
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
    pub cylinder_center: DVector<f64>,
    pub log_det: f64,
}

/// Halfspace rows of the joint constraint set: the K rows have fixed offsets,
/// the cylinder rows' offsets depend affinely on z (`dz` holds the sign).
struct Rows {
    a: Vec<DVector<f64>>,
    b0: Vec<f64>,
    /// for row i: offset = b0[i] + dz_sign[i] * z[dz_index[i]] (K rows: sign 0)
    dz_sign: Vec<f64>,
    dz_index: Vec<usize>,
}

impl Rows {
    fn build(reg: &RegularizedProblem, r: f64) -> Result<Self> {
        let poly = consistency_polytope(&reg.base)?;
        let n = reg.n();
        let s = reg.s();
        let mut a = Vec::new();
        let mut b0 = Vec::new();
        let mut dz_sign = Vec::new();
        let mut dz_index = Vec::new();
        for (row, &b) in poly.a.iter().zip(poly.b.iter()) {
            a.push(DVector::from_vec(row.clone()));
            b0.push(b);
            dz_sign.push(0.0);
            dz_index.push(0);
        }
        for i in 0..s {
            let mut v = DVector::zeros(n);
            for j in 0..s {
                v[j] = reg.s_bar[(i, j)];
            }
            a.push(v.clone());
            b0.push(r);
            dz_sign.push(1.0);
            dz_index.push(i);
            a.push(-v);
            b0.push(r);
            dz_sign.push(-1.0);
            dz_index.push(i);
        }
        Ok(Self {
            a,
            b0,
            dz_sign,
            dz_index,
        })
    }

    fn len(&self) -> usize {
        self.a.len()
    }

    fn offset(&self, i: usize, z: &DVector<f64>) -> f64 {
        self.b0[i] + self.dz_sign[i] * z[self.dz_index[i]]
    }
}

/// Packing of the decision variables theta = (P upper triangle, x_E, z).
struct Vars {
    n: usize,
    s: usize,
}

impl Vars {
    fn dim(&self) -> usize {
        self.n * (self.n + 1) / 2 + self.n + self.s
    }

    fn unpack(&self, theta: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let n = self.n;
        let mut p = DMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                p[(i, j)] = theta[k];
                p[(j, i)] = theta[k];
                k += 1;
            }
        }
        let x = DVector::from_fn(n, |i, _| theta[k + i]);
        let z = DVector::from_fn(self.s, |i, _| theta[k + n + i]);
        (p, x, z)
    }

    fn pack(&self, p: &DMatrix<f64>, x: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let mut theta = DVector::zeros(self.dim());
        let mut k = 0;
        for i in 0..self.n {
            for j in i..self.n {
                theta[k] = p[(i, j)];
                k += 1;
            }
        }
        for i in 0..self.n {
            theta[k + i] = x[i];
        }
        for i in 0..self.s {
            theta[k + self.n + i] = z[i];
        }
        theta
    }
}

struct Barrier<'a> {
    rows: &'a Rows,
    vars: Vars,
    mu: f64,
}

impl Barrier<'_> {
    /// Strict feasibility: P positive definite and every slack h - q > 0.
    fn feasible(&self, theta: &DVector<f64>) -> bool {
        let (p, x, z) = self.vars.unpack(theta);
        if Cholesky::new(p.clone()).is_none() {
            return false;
        }
        for i in 0..self.rows.len() {
            let h = self.rows.offset(i, &z) - self.rows.a[i].dot(&x);
            if h <= 0.0 {
                return false;
            }
            let q2 = (&p * &self.rows.a[i]).norm_squared();
            if h * h - q2 <= 0.0 {
                return false;
            }
        }
        true
    }

    fn value(&self, theta: &DVector<f64>) -> f64 {
        let (p, x, z) = self.vars.unpack(theta);
        let chol = match Cholesky::new(p.clone()) {
            Some(c) => c,
            None => return f64::INFINITY,
        };
        let log_det: f64 = (0..self.vars.n).map(|i| chol.l()[(i, i)].ln()).sum::<f64>() * 2.0;
        let mut f = -log_det;
        for i in 0..self.rows.len() {
            let h = self.rows.offset(i, &z) - self.rows.a[i].dot(&x);
            let u = h * h - (&p * &self.rows.a[i]).norm_squared();
            if u <= 0.0 || h <= 0.0 {
                return f64::INFINITY;
            }
            f -= self.mu * u.ln();
        }
        f
    }

    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let (p, x, z) = self.vars.unpack(theta);
        let n = self.vars.n;
        let s = self.vars.s;
        let pinv = p
            .clone()
            .try_inverse()
            .expect("gradient evaluated at a feasible point");
        let mut gp = DMatrix::zeros(n, n); // d f / d P (symmetric accumulation)
        // -log det P
        for i in 0..n {
            for j in 0..n {
                gp[(i, j)] = -pinv[(i, j)];
            }
        }
        let mut gx = DVector::zeros(n);
        let mut gz = DVector::zeros(s);
        for i in 0..self.rows.len() {
            let a = &self.rows.a[i];
            let h = self.rows.offset(i, &z) - a.dot(&x);
            let pa = &p * a;
            let u = h * h - pa.norm_squared();
            let w = self.mu / u;
            // d(-mu ln u) = -w * (2h dh - d(q^2))
            // dh/dx = -a; dh/dz_k = dz_sign
            gx += a * (2.0 * h * w);
            if self.rows.dz_sign[i] != 0.0 {
                gz[self.rows.dz_index[i]] -= 2.0 * h * w * self.rows.dz_sign[i];
            }
            // d(q^2)/dP = P a a' + a a' P  (symmetric part handled below)
            for j in 0..n {
                for k in 0..n {
                    gp[(j, k)] += w * (pa[j] * a[k] + a[j] * pa[k]);
                }
            }
        }
        // map the symmetric matrix gradient to the packed triangle: the
        // off-diagonal packed variable appears in two matrix entries
        let mut g = DVector::zeros(self.vars.dim());
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                g[k] = if i == j {
                    gp[(i, i)]
                } else {
                    gp[(i, j)] + gp[(j, i)]
                };
                k += 1;
            }
        }
        for i in 0..n {
            g[k + i] = gx[i];
        }
        for i in 0..s {
            g[k + n + i] = gz[i];
        }
        g
    }

    fn fd_hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let d = self.vars.dim();
        let g0 = self.gradient(theta);
        let mut h = DMatrix::zeros(d, d);
        for i in 0..d {
            let step = 1e-6 * (1.0 + theta[i].abs());
            let mut tp = theta.clone();
            tp[i] += step;
            let gi = if self.feasible(&tp) {
                self.gradient(&tp)
            } else {
                tp[i] = theta[i] - step;
                // one-sided from the other direction
                let gm = self.gradient(&tp);
                let col = (&g0 - &gm) / step;
                for j in 0..d {
                    h[(j, i)] = col[j];
                }
                continue;
            };
            let col = (&gi - &g0) / step;
            for j in 0..d {
                h[(j, i)] = col[j];
            }
        }
        // symmetrize
        let ht = h.transpose();
        (h + ht) * 0.5
    }
}

/// Jointly maximizes `log det P` over the ellipsoid and the cylinder center.
pub fn solve_mve(reg: &RegularizedProblem, r: f64) -> Result<InscribedEllipsoid> {
    if reg.base.norm_p != NormP::Inf {
        return Err(Error::UnsupportedNorm(
            "the inscribed-ellipsoid relaxation requires the sup norm".into(),
        ));
    }
    if !(r > 0.0) {
        return Err(Error::InfeasibleIntersection { r });
    }
    let rows = Rows::build(reg, r)?;
    let n = reg.n();
    let s = reg.s();
    let vars = Vars { n, s };

    // strictly feasible start: Chebyshev ball of K, cylinder centered on it
    let poly = consistency_polytope(&reg.base)?;
    let (x0, cheb_r) = poly.chebyshev_center()?;
    if cheb_r <= 0.0 {
        return Err(Error::InfeasibleIntersection { r });
    }
    let mut z0 = DVector::zeros(s);
    for i in 0..s {
        for j in 0..s {
            z0[i] += reg.s_bar[(i, j)] * x0[j];
        }
    }
    let mut t = f64::INFINITY;
    for i in 0..rows.len() {
        let h = rows.offset(i, &z0) - rows.a[i].dot(&x0);
        t = t.min(h / rows.a[i].norm());
    }
    let p0 = DMatrix::identity(n, n) * (0.5 * t);
    let mut theta = vars.pack(&p0, &x0, &z0);

    let k_rows = rows.len();
    let mut mu = 1.0;
    loop {
        let barrier = Barrier {
            rows: &rows,
            vars: Vars { n, s },
            mu,
        };
        if !barrier.feasible(&theta) {
            return Err(Error::NumericalFailure(format!(
                "barrier iterate left the feasible region at mu={mu}, theta={:?}",
                theta.as_slice()
            )));
        }
        // damped Newton for the current barrier parameter
        for _ in 0..60 {
            let g = barrier.gradient(&theta);
            let mut h = barrier.fd_hessian(&theta);
            // ridge until the Newton system is positive definite
            let scale = (0..h.nrows()).map(|i| h[(i, i)].abs()).fold(1.0, f64::max);
            let mut ridge = 1e-12 * scale;
            let dir = loop {
                if let Some(ch) = Cholesky::new(h.clone()) {
                    break ch.solve(&(-&g));
                }
                for i in 0..h.nrows() {
                    h[(i, i)] += ridge;
                }
                ridge *= 10.0;
                if ridge > 1e12 * scale {
                    return Err(Error::NumericalFailure(
                        "Hessian regularization diverged".into(),
                    ));
                }
            };
            let decrement = -0.5 * g.dot(&dir);
            if decrement.abs() < 1e-11 * (1.0 + barrier.value(&theta).abs()) {
                break;
            }
            let f0 = barrier.value(&theta);
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand = &theta + &dir * step;
                if barrier.feasible(&cand)
                    && barrier.value(&cand) <= f0 + 1e-4 * step * g.dot(&dir)
                {
                    theta = cand;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break; // converged to line-search resolution
            }
        }
        let (p, _, _) = vars.unpack(&theta);
        let ld = Cholesky::new(p)
            .map(|c| (0..n).map(|i| c.l()[(i, i)].ln()).sum::<f64>() * 2.0)
            .ok_or_else(|| Error::NumericalFailure("shape lost definiteness".into()))?;
        // each constraint contributes two logarithmic terms via h^2 - q^2
        let gap = 2.0 * k_rows as f64 * mu;
        if gap <= 1e-8 * (1.0 + ld.abs()) {
            break;
        }
        mu /= 5.0;
    }

    let (p, x, z) = vars.unpack(&theta);
    let log_det = Cholesky::new(p.clone())
        .map(|c| (0..n).map(|i| c.l()[(i, i)].ln()).sum::<f64>() * 2.0)
        .ok_or_else(|| Error::NumericalFailure("shape lost definiteness".into()))?;
    Ok(InscribedEllipsoid {
        center: x,
        shape: p,
        cylinder_center: z,
        log_det,
    })
}

/// Per-halfspace slack `b(z) - a'x_E - |P a|_2` of the returned ellipsoid;
/// nonnegative (up to tolerance) certifies containment.
pub fn feasibility_residuals(reg: &RegularizedProblem, r: f64, ell: &InscribedEllipsoid) -> Result<Vec<f64>> {
    let rows = Rows::build(reg, r)?;
    let mut out = Vec::with_capacity(rows.len());
    for i in 0..rows.len() {
        let h = rows.offset(i, &ell.cylinder_center) - rows.a[i].dot(&ell.center);
        out.push(h - (&ell.shape * &rows.a[i]).norm());
    }
    Ok(out)
}

/// Suboptimal violation value at the relaxation's center:
/// `v_sdp = 1 - phi(z_sdp, r)/vol(K)`, with phi from the volume oracle.
pub fn sdp_violation(
    reg: &RegularizedProblem,
    r: f64,
    oracle_samples: usize,
    stream: RngStream,
) -> Result<(f64, DVector<f64>)> {
    let ell = solve_mve(reg, r)?;
    let use_exact = reg.n() <= 3;
    let solver = ViolationSolver::new(reg.clone(), use_exact, oracle_samples.max(1), stream)?;
    let (phi, _) = solver.phi_at(
        &ell.cylinder_center,
        r,
        oracle_samples.max(1),
        stream.substream(17),
    )?;
    let v = (1.0 - phi / solver.vol_k).clamp(0.0, 1.0);
    Ok((v, ell.cylinder_center))
}
