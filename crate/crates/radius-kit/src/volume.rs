//! Volume of the intersection between the consistency set and the cylinder:
//! the randomized oracle `phi_hat`, and an exact 2-D/3-D oracle used as an
//! independent reference in tests and for small problems.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{Beta, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::lp::coordinate_bounds;
use crate::model::{consistency_polytope, HPolytope, NormP, RegularizedProblem};
use crate::sampling::{cylinder_volume, sample_cylinder, BoundedCylinder, RngStream};

/// Fixed chunk size: results are identical for a given seed no matter how the
/// chunks are scheduled.
const CHUNK: usize = 16 * 1024;

/// Monte Carlo volume estimate `phi_hat = (hits / samples) * V_C`.
#[derive(Debug, Clone)]
pub struct VolumeEstimate {
    pub value: f64,
    pub hit_count: u64,
    pub sample_count: u64,
    pub confidence_halfwidth: f64,
    pub cylinder_volume: f64,
}

/// Exact binomial (Clopper-Pearson) two-sided interval at level `1 - delta`.
pub fn clopper_pearson(hits: u64, total: u64, delta: f64) -> (f64, f64) {
    let h = hits as f64;
    let n = total as f64;
    let lo = if hits == 0 {
        0.0
    } else {
        Beta::new(h, n - h + 1.0).unwrap().inverse_cdf(delta / 2.0)
    };
    let hi = if hits == total {
        1.0
    } else {
        Beta::new(h + 1.0, n - h).unwrap().inverse_cdf(1.0 - delta / 2.0)
    };
    (lo, hi)
}

/// Per-instance state reused across all `(z, r)` queries: the regularized
/// problem, the free-coordinate bounds (they do not depend on z or r), and
/// the confidence level of the reported halfwidths.
/// Tail (free-coordinate) rows of the measurement matrix when the slice
/// estimator applies: one or two free coordinates under the sup norm.
#[derive(Debug, Clone)]
enum TailRows {
    Line(Vec<f64>),
    Plane(Vec<[f64; 2]>),
}

/// For the sup norm with at most two free coordinates the indicator can be
/// integrated exactly over the free coordinates (an interval length or a
/// clipped-polygon area), so only the head coordinates are sampled. This is
/// the same estimator with the conditional expectation taken in closed form:
/// unbiased, and with far smaller variance when `vol K << V_C`.
#[derive(Debug, Clone)]
struct SlicePlan {
    /// maps head coordinates `zeta` directly to the head contribution of
    /// each measurement row: `I_head * S_bar^{-1}`
    hmap: DMatrix<f64>,
    tails: TailRows,
    inv_abs_det: f64,
    /// per-row min/max of the tail part over the free-coordinate box; rows
    /// that cannot cut the box are skipped and empty slices rejected with
    /// two comparisons instead of a polygon clip
    row_lo: Vec<f64>,
    row_hi: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct VolumeContext {
    pub reg: RegularizedProblem,
    pub free_lower: Vec<f64>,
    pub free_upper: Vec<f64>,
    pub delta: f64,
    slice: Option<SlicePlan>,
}

impl VolumeContext {
    /// Solves the `2(n-s)` bounding programs once and caches the result.
    pub fn new(reg: RegularizedProblem) -> Result<Self> {
        let (n, s) = (reg.n(), reg.s());
        let (free_lower, free_upper) = if n == s {
            (vec![], vec![])
        } else {
            match reg.base.norm_p {
                NormP::One | NormP::Inf => {
                    let poly = consistency_polytope(&reg.base)?;
                    let coords: Vec<usize> = (s..n).collect();
                    let bounds = coordinate_bounds(&poly, &coords).map_err(|e| match e {
                        Error::Infeasible => Error::EmptyCylinder,
                        other => other,
                    })?;
                    (bounds.lower, bounds.upper)
                }
                NormP::Two => {
                    // ellipsoidal consistency set: bounds from the shape matrix
                    let (c, shape) =
                        crate::model::consistency_ellipsoid(&reg.base, &DMatrix::identity(reg.base.m(), reg.base.m()))?;
                    let inv = shape
                        .try_inverse()
                        .ok_or(Error::SingularNormalEquations)?;
                    let mut lo = Vec::new();
                    let mut hi = Vec::new();
                    for i in s..n {
                        let half = inv[(i, i)].max(0.0).sqrt();
                        lo.push(c[i] - half);
                        hi.push(c[i] + half);
                    }
                    (lo, hi)
                }
            }
        };
        let slice = if reg.base.norm_p == NormP::Inf && n > s && n - s <= 2 {
            let s_inv = reg
                .s_bar
                .clone()
                .try_inverse()
                .ok_or(Error::SingularNormalEquations)?;
            let info = &reg.base.info_matrix;
            let hmap = info.columns(0, s) * s_inv;
            let tails = if n - s == 1 {
                TailRows::Line((0..reg.base.m()).map(|i| info[(i, s)]).collect())
            } else {
                TailRows::Plane(
                    (0..reg.base.m())
                        .map(|i| [info[(i, s)], info[(i, s + 1)]])
                        .collect(),
                )
            };
            let det = reg.s_bar.clone().lu().determinant().abs();
            if det <= 0.0 {
                return Err(Error::SingularNormalEquations);
            }
            let (mut row_lo, mut row_hi) = (Vec::new(), Vec::new());
            let interval = |t: f64, lo: f64, hi: f64| {
                if t >= 0.0 {
                    (t * lo, t * hi)
                } else {
                    (t * hi, t * lo)
                }
            };
            match &tails {
                TailRows::Line(t) => {
                    for &ti in t {
                        let (a, b) = interval(ti, free_lower[0], free_upper[0]);
                        row_lo.push(a);
                        row_hi.push(b);
                    }
                }
                TailRows::Plane(t) => {
                    for ti in t {
                        let (a0, b0) = interval(ti[0], free_lower[0], free_upper[0]);
                        let (a1, b1) = interval(ti[1], free_lower[1], free_upper[1]);
                        row_lo.push(a0 + a1);
                        row_hi.push(b0 + b1);
                    }
                }
            }
            Some(SlicePlan {
                hmap,
                tails,
                inv_abs_det: 1.0 / det,
                row_lo,
                row_hi,
            })
        } else {
            None
        };
        Ok(Self {
            reg,
            free_lower,
            free_upper,
            delta: 0.05,
            slice,
        })
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn cylinder(&self, z: &DVector<f64>, r: f64) -> Result<BoundedCylinder> {
        BoundedCylinder::new(
            z.clone(),
            r,
            self.reg.s_bar.clone(),
            self.free_lower.clone(),
            self.free_upper.clone(),
            self.reg.base.norm_p,
        )
    }

    /// Counts how many of the columns of `x` satisfy the consistency test.
    fn count_consistent(&self, x: &[DVector<f64>]) -> u64 {
        if x.is_empty() {
            return 0;
        }
        let mat = DMatrix::from_columns(x);
        let resid = &self.reg.base.info_matrix * mat;
        let y = &self.reg.base.data;
        let rho = self.reg.base.noise_radius;
        let mut hits = 0u64;
        for j in 0..resid.ncols() {
            let col = resid.column(j);
            let ok = match self.reg.base.norm_p {
                NormP::Inf => col.iter().zip(y.iter()).all(|(v, yi)| (v - yi).abs() <= rho),
                NormP::One => col.iter().zip(y.iter()).map(|(v, yi)| (v - yi).abs()).sum::<f64>() <= rho,
                NormP::Two => {
                    col.iter().zip(y.iter()).map(|(v, yi)| (v - yi) * (v - yi)).sum::<f64>() <= rho * rho
                }
            };
            if ok {
                hits += 1;
            }
        }
        hits
    }

    /// Measure of the slice of K at head coordinates `zeta`: the head
    /// contribution `c = hmap * zeta` is given per row, the free coordinates
    /// are cut down from their bounding interval/box by each row.
    fn slice_measure(
        &self,
        plan: &SlicePlan,
        c: &[f64],
        scratch: &mut (Vec<P2>, Vec<P2>),
    ) -> f64 {
        let y = &self.reg.base.data;
        let rho = self.reg.base.noise_radius;
        // fast reject: the slice is empty as soon as any row's reachable
        // interval over the free box misses `[d - rho, d + rho]`
        for i in 0..c.len() {
            let d = y[i] - c[i];
            if plan.row_lo[i] > d + rho || plan.row_hi[i] < d - rho {
                return 0.0;
            }
        }
        match &plan.tails {
            TailRows::Line(t) => {
                let (mut lo, mut hi) = (self.free_lower[0], self.free_upper[0]);
                for (i, &ti) in t.iter().enumerate() {
                    let d = y[i] - c[i];
                    if plan.row_hi[i] <= d + rho && plan.row_lo[i] >= d - rho {
                        continue; // row does not constrain inside the box
                    }
                    let (a, b) = ((d - rho) / ti, (d + rho) / ti);
                    let (a, b) = if a <= b { (a, b) } else { (b, a) };
                    lo = lo.max(a);
                    hi = hi.min(b);
                    if lo >= hi {
                        return 0.0;
                    }
                }
                hi - lo
            }
            TailRows::Plane(t) => {
                let (lx, ux) = (self.free_lower[0], self.free_upper[0]);
                let (ly, uy) = (self.free_lower[1], self.free_upper[1]);
                let (cur, next) = (&mut scratch.0, &mut scratch.1);
                cur.clear();
                cur.extend_from_slice(&[[lx, ly], [ux, ly], [ux, uy], [lx, uy]]);
                for (i, ti) in t.iter().enumerate() {
                    let d = y[i] - c[i];
                    if plan.row_hi[i] > d + rho {
                        clip_polygon_into(cur, *ti, d + rho, next);
                        std::mem::swap(cur, next);
                        if cur.len() < 3 {
                            return 0.0;
                        }
                    }
                    if plan.row_lo[i] < d - rho {
                        clip_polygon_into(cur, [-ti[0], -ti[1]], rho - d, next);
                        std::mem::swap(cur, next);
                        if cur.len() < 3 {
                            return 0.0;
                        }
                    }
                }
                polygon_area(cur)
            }
        }
    }

    /// Head-sampled estimate with the free coordinates integrated exactly.
    fn estimate_phi_sliced(
        &self,
        plan: &SlicePlan,
        z: &DVector<f64>,
        r: f64,
        n_samples: usize,
        stream: RngStream,
    ) -> VolumeEstimate {
        let s = self.reg.s();
        let head_vol = (2.0 * r).powi(s as i32);
        let scale = head_vol * plan.inv_abs_det;
        let (mut sum, mut sumsq) = (0.0f64, 0.0f64);
        let mut hits = 0u64;
        let mut done = 0usize;
        let mut chunk_idx = 0u64;
        let mut scratch = (Vec::with_capacity(16), Vec::with_capacity(16));
        while done < n_samples {
            let take = CHUNK.min(n_samples - done);
            let mut rng = stream.substream(chunk_idx).rng();
            let mut heads = DMatrix::zeros(s, take);
            for j in 0..take {
                for i in 0..s {
                    heads[(i, j)] = rng.gen_range(z[i] - r..z[i] + r);
                }
            }
            let c = &plan.hmap * heads;
            for j in 0..take {
                let a = self.slice_measure(plan, c.column(j).as_slice(), &mut scratch);
                if a > 0.0 {
                    hits += 1;
                }
                sum += a;
                sumsq += a * a;
            }
            done += take;
            chunk_idx += 1;
        }
        let n = n_samples as f64;
        let mean = sum / n;
        let var = ((sumsq - n * mean * mean) / (n - 1.0).max(1.0)).max(0.0);
        let q = Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - self.delta / 2.0);
        let free_area: f64 = self
            .free_lower
            .iter()
            .zip(self.free_upper.iter())
            .map(|(l, u)| u - l)
            .product();
        VolumeEstimate {
            value: mean * scale,
            hit_count: hits,
            sample_count: n_samples as u64,
            confidence_halfwidth: q * (var / n).sqrt() * scale,
            cylinder_volume: scale * free_area,
        }
    }

    /// Centroid of the head coordinates under the measure induced on K,
    /// restricted to the cylinder at `(z, r)`; used as a stable seed for
    /// center searches. Returns the centroid and the total captured weight.
    pub fn head_centroid(
        &self,
        z: &DVector<f64>,
        r: f64,
        n_samples: usize,
        stream: RngStream,
    ) -> Result<(DVector<f64>, f64)> {
        let s = self.reg.s();
        let mut w_sum = 0.0f64;
        let mut zw_sum: DVector<f64> = DVector::zeros(s);
        if let (Some(plan), true) = (&self.slice, r > 0.0) {
            let mut scratch = (Vec::with_capacity(16), Vec::with_capacity(16));
            let mut done = 0usize;
            let mut chunk_idx = 0u64;
            while done < n_samples {
                let take = CHUNK.min(n_samples - done);
                let mut rng = stream.substream(chunk_idx).rng();
                let mut heads = DMatrix::zeros(s, take);
                for j in 0..take {
                    for i in 0..s {
                        heads[(i, j)] = rng.gen_range(z[i] - r..z[i] + r);
                    }
                }
                let c = &plan.hmap * &heads;
                for j in 0..take {
                    let a = self.slice_measure(plan, c.column(j).as_slice(), &mut scratch);
                    if a > 0.0 {
                        w_sum += a;
                        zw_sum.axpy(a, &heads.column(j).into_owned(), 1.0);
                    }
                }
                done += take;
                chunk_idx += 1;
            }
        } else {
            let cyl = self.cylinder(z, r)?;
            let mut done = 0usize;
            let mut chunk_idx = 0u64;
            while done < n_samples {
                let take = CHUNK.min(n_samples - done);
                let batch = sample_cylinder(&cyl, stream.substream(chunk_idx), take);
                for x in &batch {
                    if self.count_consistent(std::slice::from_ref(x)) == 1 {
                        let head = self.reg.s_bar.clone() * x.rows(0, s).into_owned();
                        w_sum += 1.0;
                        zw_sum += head;
                    }
                }
                done += take;
                chunk_idx += 1;
            }
        }
        if w_sum <= 0.0 {
            return Err(Error::EmptyCylinder);
        }
        Ok((zw_sum / w_sum, w_sum))
    }

    /// Randomized volume oracle: uniform samples in the bounded cylinder,
    /// consistency test against the measurement equation, rescale by `V_C`.
    pub fn estimate_phi(
        &self,
        z: &DVector<f64>,
        r: f64,
        n_samples: usize,
        stream: RngStream,
    ) -> Result<VolumeEstimate> {
        if let Some(plan) = &self.slice {
            if r > 0.0 {
                return Ok(self.estimate_phi_sliced(plan, z, r, n_samples, stream));
            }
        }
        let cyl = self.cylinder(z, r)?;
        let v_c = cylinder_volume(&cyl);
        let mut hits = 0u64;
        let mut done = 0usize;
        let mut chunk_idx = 0u64;
        while done < n_samples {
            let take = CHUNK.min(n_samples - done);
            let batch = sample_cylinder(&cyl, stream.substream(chunk_idx), take);
            hits += self.count_consistent(&batch);
            done += take;
            chunk_idx += 1;
        }
        let (lo, hi) = clopper_pearson(hits, n_samples as u64, self.delta);
        Ok(VolumeEstimate {
            value: hits as f64 / n_samples as f64 * v_c,
            hit_count: hits,
            sample_count: n_samples as u64,
            confidence_halfwidth: 0.5 * (hi - lo) * v_c,
            cylinder_volume: v_c,
        })
    }
}

/// Halfspace rows (in ambient coordinates) of the cylinder
/// `{x : |S_bar x_{1..s} - z|_p <= r}` for the polytopic norms.
pub fn cylinder_halfspaces(
    s_bar: &DMatrix<f64>,
    z: &DVector<f64>,
    r: f64,
    p: NormP,
    ambient: usize,
) -> Result<HPolytope> {
    let s = s_bar.nrows();
    let mut a: Vec<Vec<f64>> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    match p {
        NormP::Inf => {
            for i in 0..s {
                let mut row = vec![0.0; ambient];
                for j in 0..s {
                    row[j] = s_bar[(i, j)];
                }
                a.push(row.clone());
                b.push(r + z[i]);
                a.push(row.into_iter().map(|v| -v).collect());
                b.push(r - z[i]);
            }
        }
        NormP::One => {
            for mask in 0..(1usize << s) {
                let mut row = vec![0.0; ambient];
                let mut rhs = r;
                for i in 0..s {
                    let sign = if mask & (1 << i) != 0 { 1.0 } else { -1.0 };
                    for j in 0..s {
                        row[j] += sign * s_bar[(i, j)];
                    }
                    rhs += sign * z[i];
                }
                a.push(row);
                b.push(rhs);
            }
        }
        NormP::Two => {
            return Err(Error::UnsupportedNorm(
                "cylinder halfspaces exist only for p in {1, inf}".into(),
            ))
        }
    }
    Ok(HPolytope { a, b })
}

// ---------------------------------------------------------------------------
// exact 2-D / 3-D geometry
// ---------------------------------------------------------------------------

type P2 = [f64; 2];

fn polygon_area(v: &[P2]) -> f64 {
    let n = v.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        acc += v[i][0] * v[j][1] - v[j][0] * v[i][1];
    }
    acc.abs() / 2.0
}

/// Sutherland-Hodgman clip of a convex polygon against `a.x <= b`.
fn clip_polygon(poly: &[P2], a: [f64; 2], b: f64) -> Vec<P2> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    clip_polygon_into(poly, a, b, &mut out);
    out
}

/// Same clip writing into a caller-owned buffer (cleared first); the hot
/// sampling loop calls this thousands of times per query.
fn clip_polygon_into(poly: &[P2], a: [f64; 2], b: f64, out: &mut Vec<P2>) {
    out.clear();
    let n = poly.len();
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        let dp = a[0] * p[0] + a[1] * p[1] - b;
        let dq = a[0] * q[0] + a[1] * q[1] - b;
        if dp <= 0.0 {
            out.push(p);
            if dq > 0.0 {
                let t = dp / (dp - dq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        } else if dq <= 0.0 {
            let t = dp / (dp - dq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
}

/// Vertices of a bounded 2-D polytope by facet-pair intersection, ordered
/// counterclockwise. Empty output means an empty or lower-dimensional set.
pub fn polygon_vertices(poly: &HPolytope) -> Vec<P2> {
    let k = poly.rows();
    let mut verts: Vec<P2> = Vec::new();
    let scale: f64 = poly
        .b
        .iter()
        .fold(1.0_f64, |acc, x| acc.max(x.abs()));
    for i in 0..k {
        for j in (i + 1)..k {
            let (a1, a2) = (&poly.a[i], &poly.a[j]);
            let det = a1[0] * a2[1] - a1[1] * a2[0];
            let norm = (a1[0].hypot(a1[1])) * (a2[0].hypot(a2[1]));
            if det.abs() <= 1e-12 * norm.max(1e-300) {
                continue;
            }
            let x = (poly.b[i] * a2[1] - poly.b[j] * a1[1]) / det;
            let y = (a1[0] * poly.b[j] - a2[0] * poly.b[i]) / det;
            let v = DVector::from_vec(vec![x, y]);
            if poly.contains(&v, 1e-9 * scale.max(1.0)) {
                verts.push([x, y]);
            }
        }
    }
    if verts.len() < 3 {
        return Vec::new();
    }
    // dedup and order around the centroid
    let cx = verts.iter().map(|v| v[0]).sum::<f64>() / verts.len() as f64;
    let cy = verts.iter().map(|v| v[1]).sum::<f64>() / verts.len() as f64;
    verts.sort_by(|u, v| {
        let au = (u[1] - cy).atan2(u[0] - cx);
        let av = (v[1] - cy).atan2(v[0] - cx);
        au.partial_cmp(&av).unwrap()
    });
    let mut out: Vec<P2> = Vec::new();
    for v in verts {
        if out
            .iter()
            .all(|u| (u[0] - v[0]).abs() + (u[1] - v[1]).abs() > 1e-9 * scale.max(1.0))
        {
            out.push(v);
        }
    }
    out
}

fn volume_3d(poly: &HPolytope) -> f64 {
    let k = poly.rows();
    let a = poly.a_matrix();
    let b = poly.b_vector();
    let scale: f64 = b.iter().fold(1.0_f64, |acc, x| acc.max(x.abs()));
    let tol = 1e-9 * scale;
    let mut verts: Vec<DVector<f64>> = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            for l in (j + 1)..k {
                let m = DMatrix::from_rows(&[a.row(i), a.row(j), a.row(l)]);
                let rhs = DVector::from_vec(vec![b[i], b[j], b[l]]);
                let lu = m.lu();
                if let Some(v) = lu.solve(&rhs) {
                    if v.iter().all(|x| x.is_finite() && x.abs() < 1e12)
                        && poly.contains(&v, tol)
                        && verts.iter().all(|u| (u - &v).norm() > 1e-8 * scale.max(1.0))
                    {
                        verts.push(v);
                    }
                }
            }
        }
    }
    if verts.len() < 4 {
        return 0.0;
    }
    let centroid = verts.iter().fold(DVector::zeros(3), |acc, v| acc + v) / verts.len() as f64;
    let mut vol = 0.0;
    for f in 0..k {
        let row = a.row(f).transpose();
        let rn = row.norm();
        if rn < 1e-300 {
            continue;
        }
        let mut face: Vec<&DVector<f64>> = verts
            .iter()
            .filter(|v| (a.row(f).transpose().dot(v) - b[f]).abs() <= 10.0 * tol)
            .collect();
        if face.len() < 3 {
            continue;
        }
        // order face vertices around their centroid in the facet plane
        let fc = face.iter().fold(DVector::zeros(3), |acc, v| acc + *v) / face.len() as f64;
        let normal = &row / rn;
        let e1 = {
            let trial = if normal[0].abs() < 0.9 {
                DVector::from_vec(vec![1.0, 0.0, 0.0])
            } else {
                DVector::from_vec(vec![0.0, 1.0, 0.0])
            };
            let p = &trial - &normal * normal.dot(&trial);
            &p / p.norm()
        };
        let e2 = {
            let c = DVector::from_vec(vec![
                normal[1] * e1[2] - normal[2] * e1[1],
                normal[2] * e1[0] - normal[0] * e1[2],
                normal[0] * e1[1] - normal[1] * e1[0],
            ]);
            c
        };
        face.sort_by(|u, v| {
            let du = *u - &fc;
            let dv = *v - &fc;
            let au = e2.dot(&du).atan2(e1.dot(&du));
            let av = e2.dot(&dv).atan2(e1.dot(&dv));
            au.partial_cmp(&av).unwrap()
        });
        for t in 1..face.len() - 1 {
            let p0 = face[0] - &centroid;
            let p1 = face[t] - &centroid;
            let p2 = face[t + 1] - &centroid;
            let det = p0[0] * (p1[1] * p2[2] - p1[2] * p2[1])
                - p0[1] * (p1[0] * p2[2] - p1[2] * p2[0])
                + p0[2] * (p1[0] * p2[1] - p1[1] * p2[0]);
            vol += det.abs() / 6.0;
        }
    }
    vol
}

/// Exact volume of a bounded polytope in dimension 2 or 3.
pub fn exact_polytope_volume(poly: &HPolytope) -> Result<f64> {
    match poly.dim() {
        2 => Ok(polygon_area(&polygon_vertices(poly))),
        3 => Ok(volume_3d(poly)),
        d => Err(Error::DimensionTooLarge(d)),
    }
}

/// Exact `phi(z, r) = vol(K intersect C(z, r))` for ambient dimension 2 or 3
/// and polytopic norms. Empty or lower-dimensional intersections return 0.
pub fn exact_phi(
    poly: &HPolytope,
    s_bar: &DMatrix<f64>,
    z: &DVector<f64>,
    r: f64,
    p: NormP,
) -> Result<f64> {
    let n = poly.dim();
    if n != 2 && n != 3 {
        return Err(Error::DimensionTooLarge(n));
    }
    let cyl = cylinder_halfspaces(s_bar, z, r, p, n)?;
    exact_polytope_volume(&poly.intersect(&cyl))
}

/// Exact oracle with the consistency polygon cached; fast repeated `(z, r)`
/// queries in 2-D by clipping, plain re-enumeration in 3-D.
#[derive(Debug, Clone)]
pub struct ExactOracle {
    poly: HPolytope,
    polygon: Option<Vec<P2>>,
    s_bar: DMatrix<f64>,
    norm_p: NormP,
    vol_k: f64,
}

impl ExactOracle {
    pub fn new(reg: &RegularizedProblem) -> Result<Self> {
        let poly = consistency_polytope(&reg.base)?;
        let n = reg.n();
        let polygon = match n {
            2 => Some(polygon_vertices(&poly)),
            3 => None,
            d => return Err(Error::DimensionTooLarge(d)),
        };
        let vol_k = match &polygon {
            Some(pg) => polygon_area(pg),
            None => volume_3d(&poly),
        };
        Ok(Self {
            poly,
            polygon,
            s_bar: reg.s_bar.clone(),
            norm_p: reg.base.norm_p,
            vol_k,
        })
    }

    pub fn vol_k(&self) -> f64 {
        self.vol_k
    }

    pub fn phi(&self, z: &DVector<f64>, r: f64) -> Result<f64> {
        match &self.polygon {
            Some(pg) => {
                let cyl = cylinder_halfspaces(&self.s_bar, z, r, self.norm_p, 2)?;
                let mut cur = pg.clone();
                for (row, &b) in cyl.a.iter().zip(cyl.b.iter()) {
                    if cur.is_empty() {
                        break;
                    }
                    cur = clip_polygon(&cur, [row[0], row[1]], b);
                }
                Ok(polygon_area(&cur))
            }
            None => exact_phi(&self.poly, &self.s_bar, z, r, self.norm_p),
        }
    }
}
