//! Seeded random generation: Gamma variates, uniform samples in lp norm
//! balls, and uniform samples in the bounded cylinder.
//!
//! All sampling is driven by an explicit `(seed, stream_id)` pair so that
//! results are reproducible and callers can parallelize over disjoint streams.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::NormP;

/// Reproducible stream handle: equal `(seed, stream_id)` pairs yield
/// identical sequences; distinct stream ids are independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Same seed, different stream.
    pub fn substream(&self, offset: u64) -> Self {
        Self {
            seed: self.seed,
            stream_id: self.stream_id.wrapping_add(offset),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// The bounded cylinder: lp ball of radius `r` around `center` in the first
/// `s` (solution) coordinates, a box over the remaining free coordinates.
#[derive(Debug, Clone)]
pub struct BoundedCylinder {
    pub center: DVector<f64>,
    pub radius: f64,
    pub s_bar: DMatrix<f64>,
    pub free_lower: Vec<f64>,
    pub free_upper: Vec<f64>,
    pub norm_p: NormP,
}

impl BoundedCylinder {
    pub fn new(
        center: DVector<f64>,
        radius: f64,
        s_bar: DMatrix<f64>,
        free_lower: Vec<f64>,
        free_upper: Vec<f64>,
        norm_p: NormP,
    ) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidConfig(format!("cylinder radius must be positive, got {radius}")));
        }
        if free_lower.len() != free_upper.len()
            || free_lower.iter().zip(&free_upper).any(|(l, u)| l > u)
        {
            return Err(Error::InvalidConfig("free-coordinate bounds must satisfy lower <= upper".into()));
        }
        if s_bar.nrows() != center.len() || s_bar.ncols() != center.len() {
            return Err(Error::InvalidConfig("S_bar must be square of the solution dimension".into()));
        }
        Ok(Self {
            center,
            radius,
            s_bar,
            free_lower,
            free_upper,
            norm_p,
        })
    }

    pub fn s(&self) -> usize {
        self.center.len()
    }

    pub fn n(&self) -> usize {
        self.s() + self.free_lower.len()
    }
}

/// iid draws from the unilateral Gamma density `G_{a,b}`.
pub fn sample_gamma(a: f64, b: f64, stream: RngStream, count: usize) -> Vec<f64> {
    assert!(a > 0.0 && b > 0.0, "Gamma parameters must be positive");
    let dist = rand_distr::Gamma::new(a, b).expect("validated parameters");
    let mut rng = stream.rng();
    (0..count).map(|_| dist.sample(&mut rng)).collect()
}

fn sample_ball_into(
    out: &mut DVector<f64>,
    center: &DVector<f64>,
    radius: f64,
    p: NormP,
    rng: &mut ChaCha8Rng,
) {
    let s = center.len();
    match p {
        NormP::Inf => {
            for j in 0..s {
                out[j] = center[j] + radius * rng.gen_range(-1.0..=1.0);
            }
        }
        NormP::One | NormP::Two => {
            let pval = if p == NormP::One { 1.0 } else { 2.0 };
            let dist = rand_distr::Gamma::new(1.0 / pval, 1.0).expect("static parameters");
            let mut norm = 0.0;
            for j in 0..s {
                let g: f64 = dist.sample(rng);
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let e = sign * g.powf(1.0 / pval);
                out[j] = e;
                norm += e.abs().powf(pval);
            }
            norm = norm.powf(1.0 / pval);
            let w: f64 = rng.gen::<f64>();
            // radial factor w^{1/s} makes the draw uniform over the s-dimensional ball
            let scale = radius * w.powf(1.0 / s as f64) / norm;
            for j in 0..s {
                out[j] = center[j] + scale * out[j];
            }
        }
    }
}

/// Uniform samples in the lp ball `{z : |z - center|_p <= radius}`.
pub fn sample_lp_ball(
    center: &DVector<f64>,
    radius: f64,
    p: NormP,
    stream: RngStream,
    count: usize,
) -> Vec<DVector<f64>> {
    let mut rng = stream.rng();
    let mut out = Vec::with_capacity(count);
    let mut buf = DVector::zeros(center.len());
    for _ in 0..count {
        sample_ball_into(&mut buf, center, radius, p, &mut rng);
        out.push(buf.clone());
    }
    out
}

/// Uniform samples in the bounded cylinder, assembled as `[S_bar^{-1} zeta; xi]`.
pub fn sample_cylinder(cyl: &BoundedCylinder, stream: RngStream, count: usize) -> Vec<DVector<f64>> {
    let lu = cyl.s_bar.clone().lu();
    let s = cyl.s();
    let n = cyl.n();
    let mut rng = stream.rng();
    let mut out = Vec::with_capacity(count);
    let mut zeta = DVector::zeros(s);
    for _ in 0..count {
        sample_ball_into(&mut zeta, &cyl.center, cyl.radius, cyl.norm_p, &mut rng);
        let head = lu.solve(&zeta).expect("S_bar is invertible by construction");
        let mut x = DVector::zeros(n);
        x.rows_mut(0, s).copy_from(&head);
        for (j, (lo, hi)) in cyl.free_lower.iter().zip(&cyl.free_upper).enumerate() {
            x[s + j] = if hi > lo { rng.gen_range(*lo..*hi) } else { *lo };
        }
        out.push(x);
    }
    out
}

/// Closed-form cylinder volume
/// `(2r)^s Gamma(1/p+1)^s / (|det S_bar| Gamma(s/p+1)) * prod(widths)`.
pub fn cylinder_volume(cyl: &BoundedCylinder) -> f64 {
    let s = cyl.s() as f64;
    let det = cyl.s_bar.clone().lu().determinant().abs();
    let gamma_ratio = match cyl.norm_p {
        NormP::Inf => 1.0,
        NormP::One => (s * ln_gamma(2.0) - ln_gamma(s + 1.0)).exp(),
        NormP::Two => (s * ln_gamma(1.5) - ln_gamma(s / 2.0 + 1.0)).exp(),
    };
    let widths: f64 = cyl
        .free_lower
        .iter()
        .zip(&cyl.free_upper)
        .map(|(l, u)| u - l)
        .product();
    (2.0 * cyl.radius).powf(s) * gamma_ratio / det * widths
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(id: u64) -> RngStream {
        RngStream::new(42, id)
    }

    #[test]
    fn gamma_unit_is_exponential() {
        let xs = sample_gamma(1.0, 1.0, stream(0), 100_000);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!(xs.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn gamma_half_mean() {
        let xs = sample_gamma(0.5, 1.0, stream(1), 100_000);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn one_dimensional_ball_is_uniform() {
        // Kolmogorov-Smirnov statistic against the uniform CDF on [c-r, c+r]
        for p in [NormP::One, NormP::Two, NormP::Inf] {
            let center = DVector::from_vec(vec![0.5]);
            let mut xs: Vec<f64> = sample_lp_ball(&center, 2.0, p, stream(2), 100_000)
                .into_iter()
                .map(|v| v[0])
                .collect();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = xs.len() as f64;
            let mut ks = 0.0_f64;
            for (i, x) in xs.iter().enumerate() {
                let cdf = ((x - (-1.5)) / 4.0).clamp(0.0, 1.0);
                let emp_hi = (i + 1) as f64 / n;
                let emp_lo = i as f64 / n;
                ks = ks.max((cdf - emp_lo).abs()).max((cdf - emp_hi).abs());
            }
            assert!(ks < 0.006, "KS statistic {ks} for p={p:?}");
        }
    }

    /// Sub-ball fractions must scale like t^s.
    #[test]
    fn sub_ball_fraction_scaling() {
        let cases = [
            (NormP::Inf, 2usize, 0.5, 0.25),
            (NormP::Two, 3usize, 0.5, 0.125),
            (NormP::One, 2usize, 0.7, 0.49),
        ];
        for (p, s, t, expected) in cases {
            let center = DVector::zeros(s);
            let samples = sample_lp_ball(&center, 1.0, p, stream(3), 100_000);
            let inside = samples
                .iter()
                .filter(|v| p.norm(v) <= t)
                .count() as f64;
            let frac = inside / samples.len() as f64;
            let sigma = (expected * (1.0 - expected) / 100_000.0_f64).sqrt();
            assert!(
                (frac - expected).abs() < 3.0 * sigma + 1e-4,
                "p={p:?} s={s}: fraction {frac}, expected {expected}"
            );
        }
    }

    #[test]
    fn deterministic_streams() {
        let a = sample_lp_ball(&DVector::zeros(3), 1.0, NormP::Two, stream(9), 100);
        let b = sample_lp_ball(&DVector::zeros(3), 1.0, NormP::Two, stream(9), 100);
        assert_eq!(a, b);
        let c = sample_lp_ball(&DVector::zeros(3), 1.0, NormP::Two, stream(10), 100);
        assert_ne!(a, c);
    }

    #[test]
    fn cylinder_reduces_to_ball_without_free_coords() {
        let cyl = BoundedCylinder::new(
            DVector::zeros(2),
            1.0,
            DMatrix::identity(2, 2),
            vec![],
            vec![],
            NormP::Inf,
        )
        .unwrap();
        let xs = sample_cylinder(&cyl, stream(4), 10_000);
        assert!(xs.iter().all(|x| x.len() == 2 && x.amax() <= 1.0));
    }

    #[test]
    fn cylinder_scaled_identity_fills_half_square() {
        // S_bar = 2I maps the unit sup-ball to the square [-1/2, 1/2]^2;
        // oracle bounding box from the images of the four corners.
        let cyl = BoundedCylinder::new(
            DVector::zeros(2),
            1.0,
            DMatrix::identity(2, 2) * 2.0,
            vec![],
            vec![],
            NormP::Inf,
        )
        .unwrap();
        let xs = sample_cylinder(&cyl, stream(5), 100_000);
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for x in &xs {
            for j in 0..2 {
                lo[j] = lo[j].min(x[j]);
                hi[j] = hi[j].max(x[j]);
            }
        }
        for j in 0..2 {
            assert!((lo[j] + 0.5).abs() < 0.01, "lower {:?}", lo);
            assert!((hi[j] - 0.5).abs() < 0.01, "upper {:?}", hi);
        }
    }

    #[test]
    fn free_coordinate_uniform_mean() {
        let cyl = BoundedCylinder::new(
            DVector::zeros(1),
            1.0,
            DMatrix::identity(1, 1),
            vec![0.0],
            vec![3.0],
            NormP::Inf,
        )
        .unwrap();
        let xs = sample_cylinder(&cyl, stream(6), 100_000);
        let mean = xs.iter().map(|x| x[1]).sum::<f64>() / xs.len() as f64;
        assert!((mean - 1.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn cylinder_volume_closed_forms() {
        let disk = BoundedCylinder::new(
            DVector::zeros(2),
            1.0,
            DMatrix::identity(2, 2),
            vec![],
            vec![],
            NormP::Two,
        )
        .unwrap();
        assert!((cylinder_volume(&disk) - std::f64::consts::PI).abs() < 1e-12);

        let cube = BoundedCylinder::new(
            DVector::zeros(3),
            0.5,
            DMatrix::identity(3, 3),
            vec![],
            vec![],
            NormP::Inf,
        )
        .unwrap();
        assert!((cylinder_volume(&cube) - 1.0).abs() < 1e-12);

        let diamond = BoundedCylinder::new(
            DVector::zeros(2),
            1.0,
            DMatrix::identity(2, 2),
            vec![],
            vec![],
            NormP::One,
        )
        .unwrap();
        assert!((cylinder_volume(&diamond) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cylinder_volume_matches_box_rejection() {
        // random 3-D cylinder (s=2 ball x 1 free coordinate), 1e6 samples
        let s_bar = DMatrix::from_row_slice(2, 2, &[1.5, 0.3, -0.2, 0.8]);
        let cyl = BoundedCylinder::new(
            DVector::from_vec(vec![0.4, -0.1]),
            0.9,
            s_bar.clone(),
            vec![-1.0],
            vec![2.0],
            NormP::Two,
        )
        .unwrap();
        let exact = cylinder_volume(&cyl);
        // enclosing box of S_bar^{-1} B(z, r): center S_bar^{-1} z, halfwidths
        // r * row sums of |S_bar^{-1}| (image of the l2 ball is inside that box)
        let inv = s_bar.clone().try_inverse().unwrap();
        let c = &inv * &cyl.center;
        let mut rng = stream(7).rng();
        let mut hits = 0usize;
        let half: Vec<f64> = (0..2).map(|i| cyl.radius * inv.row(i).norm()).collect();
        let n_total = 1_000_000;
        for _ in 0..n_total {
            let x0 = c[0] + rng.gen_range(-half[0]..half[0]);
            let x1 = c[1] + rng.gen_range(-half[1]..half[1]);
            let x2 = rng.gen_range(-1.0..2.0);
            let z = &s_bar * DVector::from_vec(vec![x0, x1]);
            let d = (z - &cyl.center).norm();
            let _ = x2; // uniform over the full free range: always inside
            if d <= cyl.radius {
                hits += 1;
            }
        }
        let boxvol = 4.0 * half[0] * half[1] * 3.0;
        let mc = boxvol * hits as f64 / n_total as f64;
        assert!(
            (mc - exact).abs() < 0.01 * exact,
            "Monte Carlo {mc} vs formula {exact}"
        );
    }
}
