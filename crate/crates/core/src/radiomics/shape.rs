use super::{FeatureFamily, FeatureVector, RadiomicsError};
use crate::volume::{surface_voxels, BinaryMask, FACE_OFFSETS};
use std::f64::consts::PI;

pub const SHAPE_NAMES: [&str; 6] = [
    "shape_volume",
    "shape_surface_area",
    "shape_sphericity",
    "shape_max_diameter",
    "shape_elongation",
    "shape_flatness",
];

/// Sum of three terms in ascending order, so the result does not depend on
/// which axis each term came from.
#[inline]
fn sum3(mut t: [f64; 3]) -> f64 {
    t.sort_by(f64::total_cmp);
    (t[0] + t[1]) + t[2]
}

fn sorted_sum(mut t: Vec<f64>) -> f64 {
    t.sort_by(f64::total_cmp);
    t.iter().sum()
}

/// Eigenvalues of a symmetric 3x3 matrix in descending order, by the
/// trigonometric closed form. Invariant terms are summed in sorted order.
pub(crate) fn sym3_eigenvalues(a: [[f64; 3]; 3]) -> [f64; 3] {
    let p1 = sum3([a[0][1] * a[0][1], a[0][2] * a[0][2], a[1][2] * a[1][2]]);
    let q = sum3([a[0][0], a[1][1], a[2][2]]) / 3.0;
    let d = [a[0][0] - q, a[1][1] - q, a[2][2] - q];
    let p2 = sorted_sum(vec![d[0] * d[0], d[1] * d[1], d[2] * d[2], 2.0 * p1]);
    if p2 <= 0.0 {
        return [q; 3];
    }
    let p = (p2 / 6.0).sqrt();
    let b = |i: usize, j: usize| if i == j { d[i] / p } else { a[i][j] / p };
    let prod3 = |mut f: [f64; 3]| {
        f.sort_by(f64::total_cmp);
        f[0] * f[1] * f[2]
    };
    let det = sorted_sum(vec![
        prod3([b(0, 0), b(1, 1), b(2, 2)]),
        2.0 * prod3([b(0, 1), b(0, 2), b(1, 2)]),
        -b(0, 0) * b(1, 2) * b(1, 2),
        -b(1, 1) * b(0, 2) * b(0, 2),
        -b(2, 2) * b(0, 1) * b(0, 1),
    ]);
    let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    let mut e = [e1, e2, e3];
    e.sort_by(|x, y| y.total_cmp(x));
    e
}

pub fn shape_features(roi: &BinaryMask) -> Result<FeatureVector, RadiomicsError> {
    let n = roi.count();
    if n == 0 {
        return Err(RadiomicsError::EmptyRegion);
    }
    let sp = roi.spacing();
    let mut s_sorted = sp;
    s_sorted.sort_by(f64::total_cmp);
    let volume = n as f64 * (s_sorted[0] * s_sorted[1] * s_sorted[2]);

    let dims = roi.dims();
    let mut faces = [0u64; 3];
    // coordinate sums for the covariance, exact in integers
    let mut s1 = [0i128; 3];
    let mut s2 = [[0i128; 3]; 3];
    for p in roi.coords() {
        for (k, o) in FACE_OFFSETS.iter().enumerate() {
            let out = crate::volume::offset(dims, p, *o).is_none_or(|[z, y, x]| !roi.get(z, y, x));
            if out {
                faces[k / 2] += 1;
            }
        }
        for a in 0..3 {
            s1[a] += p[a] as i128;
            for b in 0..3 {
                s2[a][b] += (p[a] * p[b]) as i128;
            }
        }
    }
    // face normal along axis a has area = product of the other two spacings
    let area = sum3([
        faces[0] as f64 * (sp[1] * sp[2]),
        faces[1] as f64 * (sp[0] * sp[2]),
        faces[2] as f64 * (sp[0] * sp[1]),
    ]);
    let sphericity = PI.cbrt() * (6.0 * volume).powf(2.0 / 3.0) / area;

    let surf: Vec<[usize; 3]> = surface_voxels(roi).coords().collect();
    let mut best = 0.0f64;
    for (i, a) in surf.iter().enumerate() {
        for b in &surf[i + 1..] {
            let t = [0, 1, 2].map(|k| {
                let d = (a[k] as f64 - b[k] as f64) * sp[k];
                d * d
            });
            best = best.max(sum3(t));
        }
    }
    let diameter = best.sqrt();

    let nn = n as i128;
    let mut cov = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            cov[a][b] = (nn * s2[a][b] - s1[a] * s1[b]) as f64 * (sp[a] * sp[b]);
        }
    }
    let [l1, l2, l3] = sym3_eigenvalues(cov);
    let ratio = |l: f64| if l1 > 0.0 { (l.max(0.0) / l1).sqrt().min(1.0) } else { 1.0 };

    let mut fv = FeatureVector::default();
    for (name, v) in SHAPE_NAMES
        .iter()
        .zip([volume, area, sphericity, diameter, ratio(l2), ratio(l3)])
    {
        fv.push(name, FeatureFamily::Shape, v);
    }
    Ok(fv)
}
