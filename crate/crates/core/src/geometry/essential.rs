use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, Matrix3, Rotation3, Vector2, Vector3};
#[allow(unused_imports)]
use num_traits::Float;

use super::triangulation::triangulate_dlt;
use super::{GeomError, PointPair, Pose};

/// Rank-2 essential matrix on normalized coordinates.
///
/// Convention: for a pose `x_b = R x_a + t` the matrix is `E = [t]x R` and
/// every correspondence satisfies `b^T E a = 0` (homogeneous coordinates).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(Matrix3<f64>);

impl EssentialMatrix {
    /// Wraps a raw matrix without enforcing the essential constraints.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// `[t]x R` for the given pose, scaled to Frobenius norm √2.
    pub fn from_pose(pose: &Pose) -> Self {
        let m = skew(&pose.translation) * pose.rotation.matrix();
        let n = m.norm();
        Self(if n > 0.0 { m * (2.0.sqrt() / n) } else { m })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Algebraic epipolar residual `b^T E a`.
    pub fn residual(&self, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
        let ah = a.push(1.0);
        let bh = b.push(1.0);
        bh.dot(&(self.0 * ah))
    }
}

/// Skew-symmetric cross-product matrix, `skew(v) * w == v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// A hypothesis generator for RANSAC: fits essential matrices to a
/// minimal (or larger) set of normalized correspondences.
pub trait EssentialSolver {
    /// Pairs drawn per RANSAC hypothesis.
    const SAMPLE_SIZE: usize;

    fn solve(&self, pairs: &[PointPair]) -> Result<Vec<EssentialMatrix>, GeomError>;
}

/// Normalized eight-point algorithm.
#[derive(Debug, Clone, Copy, Default)]
pub struct EightPoint;

impl EssentialSolver for EightPoint {
    const SAMPLE_SIZE: usize = 8;

    fn solve(&self, pairs: &[PointPair]) -> Result<Vec<EssentialMatrix>, GeomError> {
        estimate_essential(pairs).map(|e| vec![e])
    }
}

/// Similarity moving the centroid to the origin with RMS distance √2.
pub(super) fn conditioning<'a>(pts: impl Iterator<Item = &'a Vector2<f64>> + Clone) -> Option<Matrix3<f64>> {
    let n = pts.clone().count() as f64;
    let centroid = pts.clone().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let ms = pts.map(|p| (p - centroid).norm_squared()).sum::<f64>() / n;
    let rms = ms.sqrt();
    if !(rms > 1e-12) {
        return None;
    }
    let s = 2.0.sqrt() / rms;
    Some(Matrix3::new(
        s,
        0.0,
        -s * centroid.x,
        0.0,
        s,
        -s * centroid.y,
        0.0,
        0.0,
        1.0,
    ))
}

pub(super) fn apply(t: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
}

/// Singular values (σ, σ, 0) with σ = (σ1 + σ2) / 2, then scaled so that
/// the Frobenius norm is √2.
fn enforce_essential(m: &Matrix3<f64>) -> Result<Matrix3<f64>, GeomError> {
    let svd = m.svd(true, true);
    let u = svd.u.ok_or(GeomError::DegenerateConfiguration)?;
    let v_t = svd.v_t.ok_or(GeomError::DegenerateConfiguration)?;
    let mut order = [0usize, 1, 2];
    let s = svd.singular_values;
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let sigma = 0.5 * (s[order[0]] + s[order[1]]);
    if !(sigma > 0.0) {
        return Err(GeomError::DegenerateConfiguration);
    }
    let mut d = Vector3::zeros();
    d[order[0]] = sigma;
    d[order[1]] = sigma;
    let e = u * Matrix3::from_diagonal(&d) * v_t;
    Ok(e * (2.0.sqrt() / e.norm()))
}

/// Flips the overall sign so that the entry of largest magnitude is positive.
fn canonical_sign(m: Matrix3<f64>) -> Matrix3<f64> {
    let (idx, _) = m
        .iter()
        .enumerate()
        .fold((0, 0.0), |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best });
    if m[idx] < 0.0 {
        -m
    } else {
        m
    }
}

/// Normalized eight-point estimate from at least eight normalized pairs.
///
/// Each point set is conditioned separately, the design matrix null vector
/// is taken from its SVD and the result is projected onto the essential
/// manifold.
pub fn estimate_essential(pairs: &[PointPair]) -> Result<EssentialMatrix, GeomError> {
    if pairs.len() < 8 {
        return Err(GeomError::NotEnoughPairs {
            needed: 8,
            got: pairs.len(),
        });
    }
    let ta = conditioning(pairs.iter().map(|p| &p.a)).ok_or(GeomError::DegenerateConfiguration)?;
    let tb = conditioning(pairs.iter().map(|p| &p.b)).ok_or(GeomError::DegenerateConfiguration)?;

    let rows = pairs.len().max(9);
    let mut design = DMatrix::<f64>::zeros(rows, 9);
    for (i, p) in pairs.iter().enumerate() {
        let a = apply(&ta, &p.a);
        let b = apply(&tb, &p.b);
        let ah = [a.x, a.y, 1.0];
        let bh = [b.x, b.y, 1.0];
        for r in 0..3 {
            for c in 0..3 {
                design[(i, 3 * r + c)] = bh[r] * ah[c];
            }
        }
    }

    let svd = design.svd(false, true);
    let v_t = svd.v_t.ok_or(GeomError::DegenerateConfiguration)?;
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let smallest = order[8];
    // A second (near) null direction means the pairs do not pin down E.
    if s[order[7]] <= 1e-10 * s[order[0]] {
        return Err(GeomError::DegenerateConfiguration);
    }
    let f = v_t.row(smallest);
    let conditioned = Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);
    let e = tb.transpose() * conditioned * ta;
    let e = enforce_essential(&e)?;
    Ok(EssentialMatrix(canonical_sign(e)))
}

/// First-order geometric error of the epipolar constraint.
///
/// With `l_b = E a` and `l_a = E^T b` this is
/// `|b^T E a| / sqrt(l_b.x² + l_b.y² + l_a.x² + l_a.y²)`. When all four
/// gradient terms vanish the algebraic residual `|b^T E a|` is returned.
pub fn sampson_distance(e: &EssentialMatrix, pair: &PointPair) -> f64 {
    let ah = pair.a.push(1.0);
    let bh = pair.b.push(1.0);
    let m = e.matrix();
    let lb = m * ah;
    let la = m.transpose() * bh;
    let r = bh.dot(&lb);
    let g = lb.x * lb.x + lb.y * lb.y + la.x * la.x + la.y * la.y;
    if g > 0.0 {
        r.abs() / g.sqrt()
    } else {
        r.abs()
    }
}

/// The four `(R, t)` candidates of an essential matrix.
pub(crate) fn pose_candidates(e: &EssentialMatrix) -> Result<[Pose; 4], GeomError> {
    let svd = e.matrix().svd(true, true);
    let u = svd.u.ok_or(GeomError::DegenerateConfiguration)?;
    let v_t = svd.v_t.ok_or(GeomError::DegenerateConfiguration)?;
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let mut u = Matrix3::from_columns(&[u.column(order[0]), u.column(order[1]), u.column(order[2])]);
    let mut v_t = Matrix3::from_rows(&[v_t.row(order[0]), v_t.row(order[1]), v_t.row(order[2])]);
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = Rotation3::from_matrix_unchecked(u * w * v_t);
    let r2 = Rotation3::from_matrix_unchecked(u * w.transpose() * v_t);
    let t: Vector3<f64> = u.column(2).into_owned().normalize();
    Ok([
        Pose::from_parts(r1, t, false),
        Pose::from_parts(r1, -t, false),
        Pose::from_parts(r2, t, false),
        Pose::from_parts(r2, -t, false),
    ])
}

pub(crate) fn count_in_front(pose: &Pose, pairs: &[PointPair]) -> usize {
    pairs
        .iter()
        .filter(|p| match triangulate_dlt(&p.a, &p.b, pose) {
            Some(x) => x.z > 0.0 && pose.transform(&x).z > 0.0,
            None => false,
        })
        .count()
}

/// Recovers the up-to-scale pose of camera B relative to camera A.
///
/// The candidate placing the most pairs in front of both cameras wins; it
/// must hold for more than half of the pairs.
pub fn decompose_essential(e: &EssentialMatrix, pairs: &[PointPair]) -> Result<Pose, GeomError> {
    if pairs.is_empty() {
        return Err(GeomError::NotEnoughPairs { needed: 1, got: 0 });
    }
    let candidates = pose_candidates(e)?;
    let mut best = (0usize, 0usize);
    for (i, c) in candidates.iter().enumerate() {
        let n = count_in_front(c, pairs);
        if n > best.1 {
            best = (i, n);
        }
    }
    if 2 * best.1 <= pairs.len() {
        return Err(GeomError::CheiralityAmbiguity {
            best_fraction: best.1 as f64 / pairs.len() as f64,
        });
    }
    Ok(candidates[best.0])
}
