use alloc::vec::Vec;
use nalgebra::{DMatrix, Matrix3, Rotation3, Vector3};
#[allow(unused_imports)]
use num_traits::Float;

use super::essential::{apply, conditioning, EssentialMatrix, EssentialSolver};
use super::{GeomError, PointPair, Pose};

/// Plane-induced homography `b ~ H a` from at least four normalized pairs
/// (normalized DLT).
pub fn estimate_homography(pairs: &[PointPair]) -> Result<Matrix3<f64>, GeomError> {
    if pairs.len() < 4 {
        return Err(GeomError::NotEnoughPairs {
            needed: 4,
            got: pairs.len(),
        });
    }
    let ta = conditioning(pairs.iter().map(|p| &p.a)).ok_or(GeomError::DegenerateConfiguration)?;
    let tb = conditioning(pairs.iter().map(|p| &p.b)).ok_or(GeomError::DegenerateConfiguration)?;
    let rows = (2 * pairs.len()).max(9);
    let mut design = DMatrix::<f64>::zeros(rows, 9);
    for (i, p) in pairs.iter().enumerate() {
        let a = apply(&ta, &p.a);
        let b = apply(&tb, &p.b);
        let ah = [a.x, a.y, 1.0];
        for c in 0..3 {
            design[(2 * i, c)] = -ah[c];
            design[(2 * i, 6 + c)] = b.x * ah[c];
            design[(2 * i + 1, 3 + c)] = -ah[c];
            design[(2 * i + 1, 6 + c)] = b.y * ah[c];
        }
    }
    let svd = design.svd(false, true);
    let v_t = svd.v_t.ok_or(GeomError::DegenerateConfiguration)?;
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    if s[order[7]] <= 1e-10 * s[order[0]] {
        return Err(GeomError::DegenerateConfiguration);
    }
    let h = v_t.row(order[8]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let tb_inv = tb.try_inverse().ok_or(GeomError::DegenerateConfiguration)?;
    let m = tb_inv * hn * ta;
    let n = m.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(GeomError::DegenerateConfiguration);
    }
    Ok(m / n)
}

/// The motions compatible with a calibrated homography `H ∝ R + t nᵀ / d`.
///
/// Returns up to eight `(pose, plane normal)` candidates with unit
/// translation; cheirality has to pick among them.
pub fn decompose_homography(h: &Matrix3<f64>) -> Result<Vec<(Pose, Vector3<f64>)>, GeomError> {
    let svd = h.svd(true, true);
    let u = svd.u.ok_or(GeomError::DegenerateConfiguration)?;
    let v_t = svd.v_t.ok_or(GeomError::DegenerateConfiguration)?;
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let u = Matrix3::from_columns(&[u.column(order[0]), u.column(order[1]), u.column(order[2])]);
    let v_t = Matrix3::from_rows(&[v_t.row(order[0]), v_t.row(order[1]), v_t.row(order[2])]);
    let v = v_t.transpose();
    let (d1, d2, d3) = (sv[order[0]], sv[order[1]], sv[order[2]]);
    if d1 / d2 < 1.000_01 || d2 / d3 < 1.000_01 {
        return Err(GeomError::DegenerateConfiguration);
    }
    let s = u.determinant() * v_t.determinant();
    let s = if s < 0.0 { -1.0 } else { 1.0 };

    let x1 = ((d1 * d1 - d2 * d2) / (d1 * d1 - d3 * d3)).sqrt();
    let x3 = ((d2 * d2 - d3 * d3) / (d1 * d1 - d3 * d3)).sqrt();
    let x1s = [x1, x1, -x1, -x1];
    let x3s = [x3, -x3, x3, -x3];
    let mut out = Vec::with_capacity(8);
    let mut push = |rp: Matrix3<f64>, tp: Vector3<f64>, np: Vector3<f64>| {
        let r = s * u * rp * v_t;
        let t = u * tp;
        let norm = t.norm();
        if !(norm > 0.0) {
            return;
        }
        let mut n = v * np;
        if n.z < 0.0 {
            n = -n;
        }
        let rot = Rotation3::from_matrix(&r);
        out.push((Pose::from_parts(rot, t / norm, false), n));
    };

    // d' = +d2
    let aux = ((d1 * d1 - d2 * d2) * (d2 * d2 - d3 * d3)).sqrt() / ((d1 + d3) * d2);
    let ct = (d2 * d2 + d1 * d3) / ((d1 + d3) * d2);
    let sts = [aux, -aux, -aux, aux];
    for i in 0..4 {
        let rp = Matrix3::new(ct, 0.0, -sts[i], 0.0, 1.0, 0.0, sts[i], 0.0, ct);
        let tp = Vector3::new(x1s[i], 0.0, -x3s[i]) * (d1 - d3);
        push(rp, tp, Vector3::new(x1s[i], 0.0, x3s[i]));
    }
    // d' = -d2
    let aux = ((d1 * d1 - d2 * d2) * (d2 * d2 - d3 * d3)).sqrt() / ((d1 - d3) * d2);
    let cp = (d1 * d3 - d2 * d2) / ((d1 - d3) * d2);
    let sps = [aux, -aux, -aux, aux];
    for i in 0..4 {
        let rp = Matrix3::new(cp, 0.0, sps[i], 0.0, -1.0, 0.0, sps[i], 0.0, -cp);
        let tp = Vector3::new(x1s[i], 0.0, x3s[i]) * (d1 + d3);
        push(rp, tp, Vector3::new(x1s[i], 0.0, x3s[i]));
    }
    Ok(out)
}

/// Four-point hypothesis generator for scenes dominated by one plane, such
/// as body centers of people walking on flat ground. Every motion of the
/// homography decomposition is offered as an essential matrix.
#[derive(Debug, Clone, Copy, Default)]
pub struct FourPointHomography;

impl EssentialSolver for FourPointHomography {
    const SAMPLE_SIZE: usize = 4;

    fn solve(&self, pairs: &[PointPair]) -> Result<Vec<EssentialMatrix>, GeomError> {
        let h = estimate_homography(pairs)?;
        let mut out: Vec<EssentialMatrix> = Vec::with_capacity(4);
        for (pose, _) in decompose_homography(&h)? {
            let e = EssentialMatrix::from_pose(&pose);
            // ±t give the same matrix up to sign.
            if out
                .iter()
                .all(|o| (o.matrix() - e.matrix()).amax() > 1e-9 && (o.matrix() + e.matrix()).amax() > 1e-9)
            {
                out.push(e);
            }
        }
        Ok(out)
    }
}
