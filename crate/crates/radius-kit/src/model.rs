//! Problem definition, assumption checks, solution-operator regularization and
//! the halfspace description of the consistency set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative threshold below which singular values count as zero.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormP {
    #[serde(rename = "one")]
    One,
    #[serde(rename = "two")]
    Two,
    #[serde(rename = "inf")]
    Inf,
}

impl NormP {
    /// `‖v‖_p` for the three supported exponents.
    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        match self {
            NormP::One => v.iter().map(|x| x.abs()).sum(),
            NormP::Two => v.norm(),
            NormP::Inf => v.iter().fold(0.0, |acc, x| acc.max(x.abs())),
        }
    }
}

/// The estimation problem `y = I x + eta`, `‖eta‖_p ≤ rho`, target `z = S x`.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub info_matrix: DMatrix<f64>,
    pub data: DVector<f64>,
    pub noise_radius: f64,
    pub norm_p: NormP,
    pub solution_matrix: DMatrix<f64>,
}

/// JSON schema: row-major matrices of IEEE doubles.
#[derive(Serialize, Deserialize)]
struct ProblemInstanceJson {
    info_matrix: Vec<Vec<f64>>,
    data: Vec<f64>,
    noise_radius: f64,
    norm_p: NormP,
    solution_matrix: Vec<Vec<f64>>,
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::InvalidInstance("empty matrix".into()));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidInstance("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl ProblemInstance {
    pub fn new(
        info_matrix: DMatrix<f64>,
        data: DVector<f64>,
        noise_radius: f64,
        norm_p: NormP,
        solution_matrix: DMatrix<f64>,
    ) -> Self {
        Self {
            info_matrix,
            data,
            noise_radius,
            norm_p,
            solution_matrix,
        }
    }

    pub fn m(&self) -> usize {
        self.info_matrix.nrows()
    }

    pub fn n(&self) -> usize {
        self.info_matrix.ncols()
    }

    pub fn s(&self) -> usize {
        self.solution_matrix.nrows()
    }

    pub fn to_json(&self) -> String {
        let doc = ProblemInstanceJson {
            info_matrix: matrix_to_rows(&self.info_matrix),
            data: self.data.iter().copied().collect(),
            noise_radius: self.noise_radius,
            norm_p: self.norm_p,
            solution_matrix: matrix_to_rows(&self.solution_matrix),
        };
        serde_json::to_string_pretty(&doc).expect("instance serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ProblemInstanceJson = serde_json::from_str(text)?;
        Ok(Self {
            info_matrix: rows_to_matrix(&doc.info_matrix)?,
            data: DVector::from_vec(doc.data),
            noise_radius: doc.noise_radius,
            norm_p: doc.norm_p,
            solution_matrix: rows_to_matrix(&doc.solution_matrix)?,
        })
    }
}

/// Numerical rank: singular values above `RANK_TOL` times the largest one.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().singular_values();
    let top = sv.iter().cloned().fold(0.0_f64, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&x| x > RANK_TOL * top).count()
}

/// Outcome of checking the standing assumptions on an instance.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub m: usize,
    pub n: usize,
    pub s: usize,
    pub rank_info: usize,
    pub rank_solution: usize,
    pub failures: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks dimensions, ranks and the noise bound; failures are listed, not raised.
pub fn validate(inst: &ProblemInstance) -> ValidationReport {
    let (m, n, s) = (inst.m(), inst.n(), inst.s());
    let rank_info = numerical_rank(&inst.info_matrix);
    let rank_solution = numerical_rank(&inst.solution_matrix);
    let mut failures = Vec::new();
    if !(m >= n && n >= s && s >= 1) {
        failures.push(format!("dimension chain m >= n >= s >= 1 violated: m={m}, n={n}, s={s}"));
    }
    if inst.solution_matrix.ncols() != n {
        failures.push(format!(
            "solution matrix has {} columns, expected n={n}",
            inst.solution_matrix.ncols()
        ));
    }
    if inst.data.len() != m {
        failures.push(format!("data has length {}, expected m={m}", inst.data.len()));
    }
    if rank_info < n {
        failures.push(format!("rank(I)={rank_info} < n={n}: information operator not one-to-one"));
    }
    if rank_solution < s {
        failures.push(format!("rank(S)={rank_solution} < s={s}: solution operator not full row rank"));
    }
    if !(inst.noise_radius > 0.0) {
        failures.push(format!("noise radius must be positive, got {}", inst.noise_radius));
    }
    ValidationReport {
        m,
        n,
        s,
        rank_info,
        rank_solution,
        failures,
    }
}

/// Instance rewritten in coordinates where `S = [S_bar 0]`.
#[derive(Debug, Clone)]
pub struct RegularizedProblem {
    /// The transformed instance: `I·T`, `S·T`, same data and noise bound.
    pub base: ProblemInstance,
    /// Invertible leading `s x s` block of the transformed solution operator.
    pub s_bar: DMatrix<f64>,
    /// Orthogonal change of variables `x = T x_tilde`.
    pub transform: DMatrix<f64>,
}

impl RegularizedProblem {
    pub fn n(&self) -> usize {
        self.base.n()
    }

    pub fn s(&self) -> usize {
        self.base.s()
    }

    /// Maps a point from regularized coordinates back to the original ones.
    pub fn to_original(&self, x_tilde: &DVector<f64>) -> DVector<f64> {
        &self.transform * x_tilde
    }
}

/// Flips each column so its first entry of nonneglible size is positive.
fn fix_column_signs(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let lead = m.column(j).iter().find(|x| x.abs() > 1e-12).copied();
        if let Some(v) = lead {
            if v < 0.0 {
                let negated = -m.column(j);
                m.set_column(j, &negated);
            }
        }
    }
}

/// Change of variables making the solution operator `[S_bar 0]`.
///
/// The transform is `T = [T1 T2]` with `T1` an orthonormal basis of the column
/// space of `S^T` and `T2` of the null space of `S`. When the trailing columns
/// of `S` are already zero the identity transform is used, which makes the
/// operation idempotent.
pub fn regularize(inst: &ProblemInstance) -> Result<RegularizedProblem> {
    let (n, s) = (inst.n(), inst.s());
    let sm = &inst.solution_matrix;
    if numerical_rank(sm) < s {
        return Err(Error::RankDeficient {
            rank: numerical_rank(sm),
            s,
        });
    }
    let scale = sm.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let already = s == n
        || sm
            .columns(s, n - s)
            .iter()
            .all(|x| x.abs() <= 1e-12 * scale.max(1.0));
    let transform = if already {
        DMatrix::identity(n, n)
    } else {
        // T1 from a QR factorization of S^T; T2 by orthogonalizing the
        // remaining coordinate directions against T1.
        let qr = sm.transpose().qr();
        let mut t1 = qr.q().columns(0, s).into_owned();
        fix_column_signs(&mut t1);
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n - s);
        for j in 0..n {
            if cols.len() == n - s {
                break;
            }
            let mut v = DVector::zeros(n);
            v[j] = 1.0;
            for k in 0..s {
                let t = t1.column(k);
                let dot = t.dot(&v);
                v -= dot * DVector::from_column_slice(t.as_slice());
            }
            for c in &cols {
                let dot = c.dot(&v);
                v -= dot * c;
            }
            let nrm = v.norm();
            if nrm > 1e-8 {
                v /= nrm;
                let lead = v.iter().find(|x| x.abs() > 1e-12).copied().unwrap_or(1.0);
                if lead < 0.0 {
                    v = -v;
                }
                cols.push(v);
            }
        }
        if cols.len() != n - s {
            return Err(Error::RankDeficient { rank: s + cols.len(), s });
        }
        let mut t = DMatrix::zeros(n, n);
        for j in 0..s {
            t.set_column(j, &t1.column(j));
        }
        for (j, c) in cols.iter().enumerate() {
            t.set_column(s + j, c);
        }
        t
    };

    let s_tilde = sm * &transform;
    let s_bar = s_tilde.columns(0, s).into_owned();
    let det = s_bar.clone().lu().determinant();
    let bar_scale = s_bar.iter().fold(0.0_f64, |a, x| a.max(x.abs())).max(1.0);
    if det.abs() <= 1e-12 * bar_scale.powi(s as i32) {
        return Err(Error::RankDeficient { rank: numerical_rank(&s_bar), s });
    }
    let base = ProblemInstance {
        info_matrix: &inst.info_matrix * &transform,
        data: inst.data.clone(),
        noise_radius: inst.noise_radius,
        norm_p: inst.norm_p,
        solution_matrix: s_tilde,
    };
    Ok(RegularizedProblem {
        base,
        s_bar,
        transform,
    })
}

/// Halfspace description `A x ≤ b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HPolytope {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl HPolytope {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        Self {
            a: matrix_to_rows(&a),
            b: b.iter().copied().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.b.len()
    }

    pub fn dim(&self) -> usize {
        self.a.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.a).expect("halfspace rows are rectangular")
    }

    pub fn b_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.b.clone())
    }

    /// Membership test with absolute slack `tol` on each residual.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.a
            .iter()
            .zip(self.b.iter())
            .all(|(row, &b)| row.iter().zip(x.iter()).map(|(a, x)| a * x).sum::<f64>() <= b + tol)
    }

    /// Appends the halfspaces of `other` (same ambient dimension).
    pub fn intersect(&self, other: &HPolytope) -> HPolytope {
        let mut a = self.a.clone();
        a.extend(other.a.iter().cloned());
        let mut b = self.b.clone();
        b.extend(other.b.iter().copied());
        HPolytope { a, b }
    }
}

/// Halfspace form of the consistency set for `p ∈ {1, ∞}`.
///
/// For the sup norm this is `[I; -I] x ≤ [rho 1 + y; rho 1 - y]`. For the
/// 1-norm every sign pattern contributes one facet, so the row count is `2^m`
/// and the construction is capped at `m ≤ 12`.
pub fn consistency_polytope(inst: &ProblemInstance) -> Result<HPolytope> {
    let (m, n) = (inst.m(), inst.n());
    match inst.norm_p {
        NormP::Two => Err(Error::UnsupportedNorm(
            "p=2 consistency set is an ellipsoid; use consistency_ellipsoid".into(),
        )),
        NormP::Inf => {
            let mut a = DMatrix::zeros(2 * m, n);
            let mut b = DVector::zeros(2 * m);
            for i in 0..m {
                for j in 0..n {
                    a[(i, j)] = inst.info_matrix[(i, j)];
                    a[(m + i, j)] = -inst.info_matrix[(i, j)];
                }
                b[i] = inst.noise_radius + inst.data[i];
                b[m + i] = inst.noise_radius - inst.data[i];
            }
            Ok(HPolytope::new(a, b))
        }
        NormP::One => {
            const CAP: usize = 12;
            if m > CAP {
                return Err(Error::TooManyFacets { m, cap: CAP });
            }
            let k = 1usize << m;
            let mut a = DMatrix::zeros(k, n);
            let mut b = DVector::zeros(k);
            for mask in 0..k {
                for j in 0..n {
                    let mut acc = 0.0;
                    for i in 0..m {
                        let sign = if mask & (1 << i) != 0 { 1.0 } else { -1.0 };
                        acc += sign * inst.info_matrix[(i, j)];
                    }
                    a[(mask, j)] = acc;
                }
                let mut rhs = inst.noise_radius;
                for i in 0..m {
                    let sign = if mask & (1 << i) != 0 { 1.0 } else { -1.0 };
                    rhs += sign * inst.data[i];
                }
                b[mask] = rhs;
            }
            Ok(HPolytope::new(a, b))
        }
    }
}

/// Ellipsoidal consistency set for weighted `l2` noise:
/// center `x_ls`, shape `I^T W I / rho^2`, set `{x : (x-c)^T shape (x-c) ≤ 1}`.
pub fn consistency_ellipsoid(
    inst: &ProblemInstance,
    weight: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if inst.norm_p != NormP::Two {
        return Err(Error::UnsupportedNorm("consistency_ellipsoid requires p=2".into()));
    }
    let center = crate::gaussian::least_squares(inst, weight)?;
    let gram = inst.info_matrix.transpose() * weight * &inst.info_matrix;
    let shape = gram / (inst.noise_radius * inst.noise_radius);
    Ok((center, shape))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interval_instance() -> ProblemInstance {
        ProblemInstance::new(
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![0.0, 0.0]),
            1.0,
            NormP::Inf,
            DMatrix::from_row_slice(1, 1, &[1.0]),
        )
    }

    fn sec7_solution_matrix() -> DMatrix<f64> {
        DMatrix::from_row_slice(
            3,
            5,
            &[-5.0, 10.0, -7.0, 0.0, 0.0, 3.0, -4.0, 7.0, 0.0, 0.0, 2.0, 6.0, 4.0, 0.0, 0.0],
        )
    }

    #[test]
    fn validate_interval_passes() {
        let rep = validate(&interval_instance());
        assert!(rep.passed(), "{:?}", rep.failures);
        assert_eq!((rep.m, rep.n, rep.s), (2, 1, 1));
    }

    #[test]
    fn validate_flags_rank_deficient_info() {
        let inst = ProblemInstance::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            DVector::zeros(2),
            1.0,
            NormP::Inf,
            DMatrix::identity(2, 2),
        );
        let rep = validate(&inst);
        assert!(!rep.passed());
        assert_eq!(rep.rank_info, 1);
    }

    #[test]
    fn validate_sec7_shape() {
        // m=150, n=5, s=3 instance with a full-rank deterministic I.
        let info = DMatrix::from_fn(150, 5, |i, j| (((i + 1) * (j + 1) * (j + 1) + i) as f64).sin() * 10.0);
        let inst = ProblemInstance::new(
            info,
            DVector::zeros(150),
            5.0,
            NormP::Inf,
            sec7_solution_matrix(),
        );
        let rep = validate(&inst);
        assert!(rep.passed(), "{:?}", rep.failures);
        assert_eq!((rep.m, rep.n, rep.s), (150, 5, 3));
    }

    #[test]
    fn regularize_row_vector() {
        // S = [3 4]: the magnitude of S_bar is forced to 5.
        let inst = ProblemInstance::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            1.0,
            NormP::Inf,
            DMatrix::from_row_slice(1, 2, &[3.0, 4.0]),
        );
        let reg = regularize(&inst).unwrap();
        assert!((reg.s_bar[(0, 0)].abs() - 5.0).abs() < 1e-12);
        assert!(reg.base.solution_matrix[(0, 1)].abs() < 1e-12);
        let tt = reg.transform.transpose() * &reg.transform;
        assert!((tt - DMatrix::identity(2, 2)).norm() < 1e-10);
    }

    #[test]
    fn regularize_padded_identity_is_identity_transform() {
        let mut s = DMatrix::zeros(2, 4);
        s[(0, 0)] = 1.0;
        s[(1, 1)] = 1.0;
        let inst = ProblemInstance::new(
            DMatrix::identity(4, 4),
            DVector::zeros(4),
            1.0,
            NormP::Inf,
            s,
        );
        let reg = regularize(&inst).unwrap();
        assert_eq!(reg.transform, DMatrix::identity(4, 4));
        assert_eq!(reg.s_bar, DMatrix::identity(2, 2));
    }

    /// Independent oracle: singular values of the 3x5 operator from the roots
    /// of the characteristic polynomial of S S^T (cubic, solved in closed form).
    fn singular_values_via_charpoly(s: &DMatrix<f64>) -> Vec<f64> {
        let g = s * s.transpose(); // 3x3 symmetric psd
        // det(G - t I) = -t^3 + c2 t^2 + c1 t + c0
        let tr = g.trace();
        let tr2 = (&g * &g).trace();
        let det = g.clone().lu().determinant();
        // eigenvalues of symmetric 3x3 via trigonometric formula
        let q = tr / 3.0;
        let p2 = tr2 - 2.0 * q * tr + 3.0 * q * q;
        let p = (p2 / 6.0).sqrt();
        let b = (g - DMatrix::identity(3, 3) * q) / p;
        let r = (b.clone().lu().determinant() / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        let e2 = tr - e1 - e3;
        let _ = det;
        let mut ev = vec![e1.max(0.0).sqrt(), e2.max(0.0).sqrt(), e3.max(0.0).sqrt()];
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ev
    }

    #[test]
    fn regularize_sec7_solution_operator() {
        let s = sec7_solution_matrix();
        let inst = ProblemInstance::new(
            DMatrix::from_fn(150, 5, |i, j| (((i + 1) * (j + 1) * (j + 1) + i) as f64).sin() * 10.0),
            DVector::zeros(150),
            5.0,
            NormP::Inf,
            s.clone(),
        );
        let reg = regularize(&inst).unwrap();
        // trailing columns of the regularized operator vanish
        for i in 0..3 {
            for j in 3..5 {
                assert!(reg.base.solution_matrix[(i, j)].abs() < 1e-9);
            }
        }
        let det = reg.s_bar.clone().lu().determinant().abs();
        let sv = singular_values_via_charpoly(&s);
        let prod: f64 = sv.iter().product();
        assert!(
            (det - prod).abs() < 1e-6 * prod,
            "det {det} vs product of singular values {prod}"
        );
    }

    #[test]
    fn regularize_is_idempotent() {
        let inst = ProblemInstance::new(
            DMatrix::from_fn(6, 4, |i, j| (((i + 1) * (j + 1) + 2 * i) as f64).cos()),
            DVector::zeros(6),
            1.0,
            NormP::Inf,
            DMatrix::from_row_slice(2, 4, &[1.0, 2.0, -1.0, 0.5, 0.0, 1.0, 1.0, -2.0]),
        );
        let reg = regularize(&inst).unwrap();
        let reg2 = regularize(&reg.base).unwrap();
        assert!((reg2.transform - DMatrix::identity(4, 4)).norm() < 1e-9);
    }

    #[test]
    fn consistency_polytope_interval() {
        let poly = consistency_polytope(&interval_instance()).unwrap();
        assert_eq!(poly.rows(), 4);
        assert!(poly.contains(&DVector::from_vec(vec![0.99]), 0.0));
        assert!(!poly.contains(&DVector::from_vec(vec![1.01]), 0.0));
    }

    #[test]
    fn consistency_polytope_square() {
        let inst = ProblemInstance::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            1.0,
            NormP::Inf,
            DMatrix::identity(2, 2),
        );
        let poly = consistency_polytope(&inst).unwrap();
        assert!(poly.contains(&DVector::from_vec(vec![1.0, -1.0]), 1e-12));
        assert!(!poly.contains(&DVector::from_vec(vec![1.0, -1.1]), 1e-9));
    }

    #[test]
    fn consistency_polytope_l1_cap() {
        let inst = ProblemInstance::new(
            DMatrix::from_fn(13, 2, |i, j| ((i + j) as f64).sin() + 2.0 * (j as f64)),
            DVector::zeros(13),
            1.0,
            NormP::One,
            DMatrix::identity(2, 2),
        );
        assert!(matches!(
            consistency_polytope(&inst),
            Err(Error::TooManyFacets { m: 13, cap: 12 })
        ));
    }

    #[test]
    fn consistency_polytope_rejects_l2() {
        let mut inst = interval_instance();
        inst.norm_p = NormP::Two;
        assert!(matches!(consistency_polytope(&inst), Err(Error::UnsupportedNorm(_))));
    }

    #[test]
    fn membership_of_nominal_element() {
        // any instance built with ‖eta‖_inf ≤ rho keeps x_true feasible
        let x_true = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        let info = DMatrix::from_fn(8, 3, |i, j| (((i + 3) * (j + 1) * (j + 1)) as f64).cos() * 4.0);
        let eta = DVector::from_fn(8, |i, _| 0.4 * ((i as f64) * 2.1).sin());
        let y = &info * &x_true + &eta;
        let inst = ProblemInstance::new(info, y, 0.5, NormP::Inf, DMatrix::identity(3, 3));
        let poly = consistency_polytope(&inst).unwrap();
        assert!(poly.contains(&x_true, 1e-12));
    }

    #[test]
    fn ellipsoid_identity_case() {
        let y = DVector::from_vec(vec![0.4, -1.2]);
        let inst = ProblemInstance::new(
            DMatrix::identity(2, 2),
            y.clone(),
            1.0,
            NormP::Two,
            DMatrix::identity(2, 2),
        );
        let (c, shape) = consistency_ellipsoid(&inst, &DMatrix::identity(2, 2)).unwrap();
        assert!((c - y).norm() < 1e-12);
        assert!((shape - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn ellipsoid_exact_interpolation() {
        let info = DMatrix::from_fn(4, 2, |i, j| (((i + 1) * (j + 1) + i * i) as f64).sin() + 1.5);
        let x0 = DVector::from_vec(vec![0.7, -0.2]);
        let y = &info * &x0;
        let inst = ProblemInstance::new(info, y, 1.0, NormP::Two, DMatrix::identity(2, 2));
        let (c, _) = consistency_ellipsoid(&inst, &DMatrix::identity(4, 4)).unwrap();
        assert!((c - x0).norm() < 1e-9);
    }

    #[test]
    fn json_round_trip() {
        let inst = interval_instance();
        let text = inst.to_json();
        let back = ProblemInstance::from_json(&text).unwrap();
        assert_eq!(back.info_matrix, inst.info_matrix);
        assert_eq!(back.norm_p, inst.norm_p);
        assert_eq!(back.noise_radius, inst.noise_radius);
    }
}
