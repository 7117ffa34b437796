//! Closed-form baselines for normally distributed noise: the (weighted)
//! least-squares / Gauss-Markov estimate, the average radius, and the
//! probabilistic-radius upper bound.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::ProblemInstance;

/// Noise model `eta ~ N(mean, sigma^2 I)`.
#[derive(Debug, Clone)]
pub struct GaussianNoiseModel {
    pub mean: DVector<f64>,
    pub variance: f64,
}

impl GaussianNoiseModel {
    pub fn new(mean: DVector<f64>, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise variance must be positive, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }
}

/// Cholesky factor `L` with `W = L L^T`, or an error when `W` is not s.p.d.
fn chol(weight: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(weight.clone())
        .map(|c| c.l())
        .ok_or(Error::SingularNormalEquations)
}

/// Weighted least squares `x_ls = (I'WI)^{-1} I'W y`.
///
/// Solved through a QR factorization of `L^T I` (with `W = L L^T`) instead of
/// forming the normal equations.
pub fn least_squares(inst: &ProblemInstance, weight: &DMatrix<f64>) -> Result<DVector<f64>> {
    let l = chol(weight)?;
    let lt_i = l.transpose() * &inst.info_matrix;
    let lt_y = l.transpose() * &inst.data;
    let qr = lt_i.qr();
    let n = inst.n();
    let r = qr.r();
    for i in 0..n {
        if r[(i, i)].abs() < 1e-12 * r[(0, 0)].abs().max(1.0) {
            return Err(Error::SingularNormalEquations);
        }
    }
    let rhs = qr.q().transpose() * lt_y;
    r.solve_upper_triangular(&rhs)
        .ok_or(Error::SingularNormalEquations)
}

/// Closed-form average radius `sqrt(Trace(S (I' Sigma^{-1} I)^{-1} S'))`.
///
/// Independent of the measurement `y`. Computed as the Frobenius norm of
/// `S R^{-1}` where `R` comes from a QR factorization of `Sigma^{-1/2} I`.
pub fn average_radius(inst: &ProblemInstance, noise: &GaussianNoiseModel) -> Result<f64> {
    let sigma = noise.variance;
    let scaled = &inst.info_matrix / sigma.sqrt();
    let qr = scaled.qr();
    let r = qr.r();
    let n = inst.n();
    for i in 0..n {
        if r[(i, i)].abs() < 1e-12 * r[(0, 0)].abs().max(1.0) {
            return Err(Error::SingularNormalEquations);
        }
    }
    // Trace(S G^{-1} S') with G = R'R equals |S R^{-1}|_F^2
    let m = r
        .transpose()
        .solve_lower_triangular(&inst.solution_matrix.transpose())
        .ok_or(Error::SingularNormalEquations)?;
    Ok(m.norm())
}

/// Upper bound `sqrt(2 ln(5/eps)) * r_av` on the probabilistic radius.
pub fn gaussian_radius_bound(
    inst: &ProblemInstance,
    noise: &GaussianNoiseModel,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidEpsilon(epsilon));
    }
    Ok((2.0 * (5.0 / epsilon).ln()).sqrt() * average_radius(inst, noise)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NormP;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn inst_with(info: DMatrix<f64>, y: DVector<f64>, s: DMatrix<f64>) -> ProblemInstance {
        ProblemInstance::new(info, y, 1.0, NormP::Two, s)
    }

    #[test]
    fn identity_reproduces_data() {
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let inst = inst_with(DMatrix::identity(3, 3), y.clone(), DMatrix::identity(3, 3));
        let x = least_squares(&inst, &DMatrix::identity(3, 3)).unwrap();
        assert!((x - y).norm() < 1e-12);
    }

    #[test]
    fn exact_data_recovers_parameters() {
        let info = DMatrix::from_fn(6, 3, |i, j| (((i + 1) * (j + 1) * (j + 1)) as f64).sin());
        let x0 = DVector::from_vec(vec![1.0, -0.5, 2.0]);
        let y = &info * &x0;
        let inst = inst_with(info, y, DMatrix::identity(3, 3));
        let x = least_squares(&inst, &DMatrix::identity(6, 6)).unwrap();
        assert!((x - x0).norm() < 1e-9);
    }

    #[test]
    fn residual_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let info = DMatrix::from_fn(8, 3, |_, _| rng.gen_range(-2.0..2.0));
        let y = DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
        let w = DMatrix::from_fn(8, 8, |i, j| if i == j { rng.gen_range(0.5..2.0) } else { 0.0 });
        let inst = inst_with(info.clone(), y.clone(), DMatrix::identity(3, 3));
        let x = least_squares(&inst, &w).unwrap();
        let resid = info.transpose() * &w * (y - info * x);
        assert!(resid.norm() < 1e-8);
    }

    #[test]
    fn average_radius_identity() {
        // I = S = identity: r_av = sigma * sqrt(n)
        let inst = inst_with(DMatrix::identity(4, 4), DVector::zeros(4), DMatrix::identity(4, 4));
        let noise = GaussianNoiseModel::new(DVector::zeros(4), 0.01).unwrap();
        let r = average_radius(&inst, &noise).unwrap();
        assert!((r - 0.2).abs() < 1e-12);
    }

    #[test]
    fn average_radius_row_selector() {
        let mut s = DMatrix::zeros(1, 3);
        s[(0, 0)] = 1.0;
        let inst = inst_with(DMatrix::identity(3, 3), DVector::zeros(3), s);
        let noise = GaussianNoiseModel::new(DVector::zeros(3), 0.25).unwrap();
        let r = average_radius(&inst, &noise).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn average_radius_matches_simulation() {
        // simulation oracle: RMS of |S(x_ls - x_true)|_2 over noise draws
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let info = DMatrix::from_fn(10, 3, |_, _| rng.gen_range(-2.0..2.0_f64));
        let smat = DMatrix::from_fn(2, 3, |_, _| rng.gen_range(-1.0..1.0_f64));
        let x0 = DVector::from_vec(vec![0.3, -1.0, 0.7]);
        let sigma2 = 0.04;
        let noise = GaussianNoiseModel::new(DVector::zeros(10), sigma2).unwrap();
        let draws = 100_000;
        // precompute the estimator matrix P with x_ls = P y
        let gram = info.transpose() * &info;
        let p = gram.clone().lu().solve(&info.transpose()).unwrap();
        let mut acc = 0.0;
        for _ in 0..draws {
            let eta = DVector::from_fn(10, |_, _| {
                sigma2.sqrt() * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            });
            let y = &info * &x0 + eta;
            let x_ls = &p * y;
            acc += (&smat * (&x_ls - &x0)).norm_squared();
        }
        let rms = (acc / draws as f64).sqrt();
        let inst = inst_with(info, DVector::zeros(10), smat);
        let closed = average_radius(&inst, &noise).unwrap();
        assert!(
            (rms - closed).abs() < 0.02 * closed,
            "simulated {rms} vs closed form {closed}"
        );
    }

    #[test]
    fn bound_multiplier_and_domain() {
        let inst = inst_with(DMatrix::identity(2, 2), DVector::zeros(2), DMatrix::identity(2, 2));
        let noise = GaussianNoiseModel::new(DVector::zeros(2), 1.0).unwrap();
        let r_av = average_radius(&inst, &noise).unwrap();
        let bound = gaussian_radius_bound(&inst, &noise, 0.1).unwrap();
        assert!((bound / r_av - (2.0 * 50.0_f64.ln()).sqrt()).abs() < 1e-12);
        assert!(gaussian_radius_bound(&inst, &noise, 5.0).is_err());
        assert!(gaussian_radius_bound(&inst, &noise, 0.0).is_err());
        // monotone growth as eps -> 0
        let mut last = 0.0;
        for eps in [0.5, 0.1, 0.01, 0.001] {
            let b = gaussian_radius_bound(&inst, &noise, eps).unwrap();
            assert!(b > last);
            last = b;
        }
        // multiplier >= 1 on a grid of eps <= 5 exp(-1/2)
        for i in 1..20 {
            let eps = 5.0 * (-0.5_f64).exp() * (i as f64) / 20.0;
            if eps < 1.0 {
                assert!(gaussian_radius_bound(&inst, &noise, eps).unwrap() >= r_av - 1e-12);
            }
        }
    }
}
