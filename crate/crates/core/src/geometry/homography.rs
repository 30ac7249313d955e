//! Four-point homography estimation.
//!
//! A normalized direct linear transform seeds a Levenberg–Marquardt
//! refinement of the corner reprojection residuals. Both stages run in
//! Hartley-normalized coordinates; the result is denormalized and scaled so
//! that `H[(2, 2)] == 1`.

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3};

use super::{GeometryError, Point};

const DET_EPS: f64 = 1e-12;

/// 3×3 projective map normalized so that the bottom-right entry is 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    matrix: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            matrix: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
        }
    }

    /// Scales `matrix` so its (3,3) entry is 1 and checks invertibility.
    pub fn from_matrix(matrix: Matrix3<f64>) -> Result<Self, GeometryError> {
        let h33 = matrix[(2, 2)];
        if !h33.is_finite() || h33.abs() < 1e-15 {
            return Err(GeometryError::Singular(0.0));
        }
        let matrix = matrix / h33;
        let det = matrix.determinant();
        if !det.is_finite() || det.abs() <= DET_EPS {
            return Err(GeometryError::Singular(det));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    /// Maps a point; `None` when it lands on the line at infinity.
    pub fn apply(&self, p: Point) -> Option<Point> {
        let v = self.matrix * Vector3::new(p.x, p.y, 1.0);
        if v.z.abs() < 1e-14 {
            return None;
        }
        Some(Point::new(v.x / v.z, v.y / v.z))
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let det = self.matrix.determinant();
        let inv = self.matrix.try_inverse().ok_or(GeometryError::Singular(det))?;
        Self::from_matrix(inv)
    }

    /// The map `p ↦ other(self(p))`.
    pub fn then(&self, other: &Homography) -> Result<Self, GeometryError> {
        Self::from_matrix(other.matrix * self.matrix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub initial_damping: f64,
    /// Stop once an accepted step lowers the squared residual by less than this.
    pub cost_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_damping: 1e-3,
            cost_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomographyFit {
    pub homography: Homography,
    pub iterations: usize,
    /// Max corner reprojection error in pixels.
    pub max_reprojection_error: f64,
    pub converged: bool,
}

/// Estimates the homography mapping each `src` corner onto the matching
/// `dst` corner.
pub fn estimate_homography(src: &[Point; 4], dst: &[Point; 4]) -> Result<Homography, GeometryError> {
    let fit = estimate_homography_with(src, dst, &LmOptions::default())?;
    if !fit.converged {
        return Err(GeometryError::NoConvergence {
            best: Box::new(fit.homography),
            iterations: fit.iterations,
            cost: fit.max_reprojection_error,
        });
    }
    Ok(fit.homography)
}

/// Like [`estimate_homography`] but reports non-convergence in the returned
/// fit instead of failing.
pub fn estimate_homography_with(
    src: &[Point; 4],
    dst: &[Point; 4],
    options: &LmOptions,
) -> Result<HomographyFit, GeometryError> {
    if has_collinear_triple(src) || has_collinear_triple(dst) {
        return Err(GeometryError::DegenerateCorners);
    }
    let (src_n, t_src) = normalize(src);
    let (dst_n, t_dst) = normalize(dst);

    let init = dlt(&src_n, &dst_n)?;
    let mut params = SVector::<f64, 8>::from_iterator(init.iter().take(8).copied());
    let (iterations, converged) = levenberg_marquardt(&mut params, &src_n, &dst_n, options);

    let h_norm = params_to_matrix(&params);
    let t_dst_inv = t_dst.try_inverse().ok_or(GeometryError::DegenerateCorners)?;
    let homography = Homography::from_matrix(t_dst_inv * h_norm * t_src)?;

    let max_reprojection_error = src
        .iter()
        .zip(dst)
        .map(|(s, d)| homography.apply(*s).map_or(f64::INFINITY, |p| (p - d).norm()))
        .fold(0.0, f64::max);

    Ok(HomographyFit {
        homography,
        iterations,
        max_reprojection_error,
        converged,
    })
}

fn has_collinear_triple(pts: &[Point; 4]) -> bool {
    const TRIPLES: [(usize, usize, usize); 4] = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];
    if pts.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return true;
    }
    TRIPLES.iter().any(|&(a, b, c)| {
        let u = pts[b] - pts[a];
        let v = pts[c] - pts[a];
        let scale = u.norm() * v.norm();
        scale == 0.0 || (u.x * v.y - u.y * v.x).abs() <= 1e-9 * scale
    })
}

/// Hartley normalization: centroid at the origin, mean distance √2.
fn normalize(pts: &[Point; 4]) -> ([Point; 4], Matrix3<f64>) {
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / 4.0;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / 4.0;
    let mean_dist = pts
        .iter()
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / 4.0;
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    let out = pts.map(|p| Point::new(s * (p.x - cx), s * (p.y - cy)));
    (out, t)
}

/// Direct linear transform; returns the 9 entries row-major with h33 = 1.
fn dlt(src: &[Point; 4], dst: &[Point; 4]) -> Result<[f64; 9], GeometryError> {
    // 8 equations, padded to 9×9 so the SVD yields a full right basis.
    let mut a = DMatrix::<f64>::zeros(9, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r0 = 2 * i;
        let r1 = r0 + 1;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateCorners)?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(GeometryError::DegenerateCorners)?;
    let h = v_t.row(min_idx);
    if h[8].abs() < 1e-12 {
        return Err(GeometryError::DegenerateCorners);
    }
    let mut out = [0.0; 9];
    for (o, v) in out.iter_mut().zip(h.iter()) {
        *o = v / h[8];
    }
    Ok(out)
}

fn params_to_matrix(p: &SVector<f64, 8>) -> Matrix3<f64> {
    Matrix3::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], 1.0)
}

fn residuals(p: &SVector<f64, 8>, src: &[Point; 4], dst: &[Point; 4]) -> SVector<f64, 8> {
    let mut r = SVector::<f64, 8>::zeros();
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let w = p[6] * s.x + p[7] * s.y + 1.0;
        r[2 * i] = (p[0] * s.x + p[1] * s.y + p[2]) / w - d.x;
        r[2 * i + 1] = (p[3] * s.x + p[4] * s.y + p[5]) / w - d.y;
    }
    r
}

fn jacobian(p: &SVector<f64, 8>, src: &[Point; 4]) -> SMatrix<f64, 8, 8> {
    let mut j = SMatrix::<f64, 8, 8>::zeros();
    for (i, s) in src.iter().enumerate() {
        let (x, y) = (s.x, s.y);
        let w = p[6] * x + p[7] * y + 1.0;
        let u = (p[0] * x + p[1] * y + p[2]) / w;
        let v = (p[3] * x + p[4] * y + p[5]) / w;
        let (ru, rv) = (2 * i, 2 * i + 1);
        j[(ru, 0)] = x / w;
        j[(ru, 1)] = y / w;
        j[(ru, 2)] = 1.0 / w;
        j[(ru, 6)] = -u * x / w;
        j[(ru, 7)] = -u * y / w;
        j[(rv, 3)] = x / w;
        j[(rv, 4)] = y / w;
        j[(rv, 5)] = 1.0 / w;
        j[(rv, 6)] = -v * x / w;
        j[(rv, 7)] = -v * y / w;
    }
    j
}

/// Returns (iterations, converged).
fn levenberg_marquardt(
    params: &mut SVector<f64, 8>,
    src: &[Point; 4],
    dst: &[Point; 4],
    options: &LmOptions,
) -> (usize, bool) {
    let mut lambda = options.initial_damping;
    let mut cost = residuals(params, src, dst).norm_squared();
    for iter in 0..options.max_iterations {
        if cost < 1e-30 {
            return (iter, true);
        }
        let r = residuals(params, src, dst);
        let j = jacobian(params, src);
        let jtj = j.transpose() * j;
        let g = j.transpose() * r;
        loop {
            let mut damped = jtj;
            for k in 0..8 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let step = damped.lu().solve(&(-g));
            let accepted = step.and_then(|delta| {
                let candidate = *params + delta;
                let c = residuals(&candidate, src, dst).norm_squared();
                (c.is_finite() && c < cost).then_some((candidate, c))
            });
            match accepted {
                Some((candidate, new_cost)) => {
                    let decrease = cost - new_cost;
                    *params = candidate;
                    cost = new_cost;
                    lambda = (lambda / 10.0).max(1e-15);
                    if decrease < options.cost_tolerance {
                        return (iter + 1, true);
                    }
                    break;
                }
                None => {
                    lambda *= 10.0;
                    // No descent direction left at any damping: a local minimum.
                    if lambda > 1e16 {
                        return (iter + 1, true);
                    }
                }
            }
        }
    }
    (options.max_iterations, cost < 1e-30)
}
