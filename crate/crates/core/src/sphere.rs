//! Unit vectors and batches on the hypersphere, with geodesic and linear mixup.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Mat};

/// Norm tolerance for accepting an already-normalized vector.
pub const UNIT_NORM_TOL: f64 = 1e-5;
/// Below this norm a vector is treated as zero.
pub const ZERO_NORM_EPS: f64 = 1e-12;
/// Below this sin(theta) the geodesic collapses to the normalized chord.
pub const SIN_THETA_EPS: f64 = 1e-6;
/// Above pi - this, inputs are treated as antipodal.
pub const ANTIPODAL_EPS: f64 = 1e-6;

/// An L2-normalized vector on S^(d-1), d >= 2.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Wrap a vector that is already unit-norm within [`UNIT_NORM_TOL`].
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.len() < 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: components.len(),
            });
        }
        let n = norm(&components);
        if libm::fabs(n - 1.0) > UNIT_NORM_TOL {
            return Err(Error::OutOfRange {
                what: "unit vector norm",
                value: n,
            });
        }
        Ok(UnitVector(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Clamp a dot product into [-1, 1] before any acos.
pub fn clamp_cos(c: f64) -> f64 {
    c.clamp(-1.0, 1.0)
}

/// Normalize `v` to unit length.
pub fn l2_normalize(v: &[f64]) -> Result<UnitVector> {
    if v.len() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: v.len(),
        });
    }
    let n = norm(v);
    if n < ZERO_NORM_EPS {
        return Err(Error::ZeroVector);
    }
    Ok(UnitVector(v.iter().map(|x| x / n).collect()))
}

/// Mixing ratio lambda in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixRatio(f64);

impl MixRatio {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) || !lambda.is_finite() {
            return Err(Error::OutOfRange {
                what: "mix ratio lambda",
                value: lambda,
            });
        }
        Ok(MixRatio(lambda))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Dot product of two unit vectors, clamped to [-1, 1].
pub fn cosine_sim(a: &UnitVector, b: &UnitVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(clamp_cos(dot(a.as_slice(), b.as_slice())))
}

/// Which formula produced a mixed vector; gradients need the same branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum MixBranch {
    /// Proper slerp with the opening angle theta.
    Geodesic { theta: f64 },
    /// Near-parallel fallback: normalized convex combination.
    Linear { pre_norm: f64 },
}

/// Slerp on raw slices; lambda = 1 returns `a`, lambda = 0 returns `b`.
///
/// Near-parallel inputs (sin theta < [`SIN_THETA_EPS`]) fall back to the
/// normalized chord, which is the geodesic limit. Antipodal inputs error.
pub(crate) fn slerp_raw(lambda: f64, a: &[f64], b: &[f64]) -> Result<(Vec<f64>, MixBranch)> {
    debug_assert_eq!(a.len(), b.len());
    let theta = libm::acos(clamp_cos(dot(a, b)));
    if theta > core::f64::consts::PI - ANTIPODAL_EPS {
        return Err(Error::AntipodalInputs { row: None });
    }
    let sin_theta = libm::sin(theta);
    if sin_theta < SIN_THETA_EPS {
        // Geodesic limit equals the normalized chord.
        let mixed: Vec<f64> = a
            .iter()
            .zip(b)
            .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
            .collect();
        let n = norm(&mixed);
        if n < ZERO_NORM_EPS {
            return Err(Error::ZeroVector);
        }
        let out = mixed.iter().map(|x| x / n).collect();
        return Ok((out, MixBranch::Linear { pre_norm: n }));
    }
    let ca = libm::sin(lambda * theta) / sin_theta;
    let cb = libm::sin((1.0 - lambda) * theta) / sin_theta;
    let out = a.iter().zip(b).map(|(x, y)| ca * x + cb * y).collect();
    Ok((out, MixBranch::Geodesic { theta }))
}

/// Geodesic mixup: lambda = 1 returns `a` exactly, lambda = 0 returns `b`.
pub fn geodesic_mix(lambda: MixRatio, a: &UnitVector, b: &UnitVector) -> Result<UnitVector> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if lambda.get() == 1.0 {
        return Ok(a.clone());
    }
    if lambda.get() == 0.0 {
        return Ok(b.clone());
    }
    let (v, _) = slerp_raw(lambda.get(), a.as_slice(), b.as_slice())?;
    Ok(UnitVector(v))
}

/// Convex combination followed by manual L2 normalization (ablation baseline).
pub fn linear_mix_normalized(lambda: MixRatio, a: &UnitVector, b: &UnitVector) -> Result<UnitVector> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let l = lambda.get();
    let mixed: Vec<f64> = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| l * x + (1.0 - l) * y)
        .collect();
    l2_normalize(&mixed)
}

/// M x d batch of unit rows, one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    rows: Mat,
}

impl EmbeddingBatch {
    /// Build from rows that must already be unit-norm.
    pub fn from_rows(rows: Vec<UnitVector>) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(Error::BatchTooSmall { min: 1, got: 0 });
        }
        let d = rows[0].dim();
        let mut data = Vec::with_capacity(m * d);
        for r in &rows {
            if r.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.dim(),
                });
            }
            data.extend_from_slice(r.as_slice());
        }
        Ok(EmbeddingBatch {
            rows: Mat::from_vec(m, d, data),
        })
    }

    /// Build from a raw matrix, validating every row's norm.
    pub fn from_unit_mat(rows: Mat) -> Result<Self> {
        if rows.rows() == 0 {
            return Err(Error::BatchTooSmall { min: 1, got: 0 });
        }
        if rows.cols() < 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: rows.cols(),
            });
        }
        for i in 0..rows.rows() {
            let n = norm(rows.row(i));
            if libm::fabs(n - 1.0) > UNIT_NORM_TOL {
                return Err(Error::OutOfRange {
                    what: "batch row norm",
                    value: n,
                });
            }
        }
        Ok(EmbeddingBatch { rows })
    }

    /// Build from a raw matrix, normalizing each row.
    pub fn normalize_mat(mut rows: Mat) -> Result<Self> {
        if rows.rows() == 0 {
            return Err(Error::BatchTooSmall { min: 1, got: 0 });
        }
        if rows.cols() < 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: rows.cols(),
            });
        }
        for i in 0..rows.rows() {
            let n = norm(rows.row(i));
            if n < ZERO_NORM_EPS {
                return Err(Error::ZeroVector);
            }
            for v in rows.row_mut(i) {
                *v /= n;
            }
        }
        Ok(EmbeddingBatch { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }

    pub fn as_mat(&self) -> &Mat {
        &self.rows
    }

    pub fn row_unit(&self, i: usize) -> UnitVector {
        UnitVector(self.rows.row(i).to_vec())
    }
}

/// Row-wise geodesic mixup of two same-shape batches.
pub fn batch_geodesic_mix(
    lambda: MixRatio,
    a: &EmbeddingBatch,
    b: &EmbeddingBatch,
) -> Result<EmbeddingBatch> {
    check_same_shape(a, b)?;
    if lambda.get() == 1.0 {
        return Ok(a.clone());
    }
    if lambda.get() == 0.0 {
        return Ok(b.clone());
    }
    let mut out = Mat::zeros(a.len(), a.dim());
    for i in 0..a.len() {
        let (v, _) = slerp_raw(lambda.get(), a.row(i), b.row(i)).map_err(|e| e.at_row(i))?;
        out.row_mut(i).copy_from_slice(&v);
    }
    Ok(EmbeddingBatch { rows: out })
}

/// Row-wise linear-then-normalize mixup (Table-style ablation baseline).
pub fn batch_linear_mix(
    lambda: MixRatio,
    a: &EmbeddingBatch,
    b: &EmbeddingBatch,
) -> Result<EmbeddingBatch> {
    check_same_shape(a, b)?;
    let l = lambda.get();
    let mut out = Mat::zeros(a.len(), a.dim());
    for i in 0..a.len() {
        let mixed: Vec<f64> = a
            .row(i)
            .iter()
            .zip(b.row(i))
            .map(|(x, y)| l * x + (1.0 - l) * y)
            .collect();
        let u = l2_normalize(&mixed).map_err(|e| e.at_row(i))?;
        out.row_mut(i).copy_from_slice(u.as_slice());
    }
    Ok(EmbeddingBatch { rows: out })
}

/// Similarity table: entry (i, j) = A_i . B_j, clamped to [-1, 1].
pub fn pairwise_similarity(a: &EmbeddingBatch, b: &EmbeddingBatch) -> Result<Mat> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let mut s = Mat::zeros(a.len(), b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            s[(i, j)] = clamp_cos(dot(a.row(i), b.row(j)));
        }
    }
    Ok(s)
}

/// Reverse row order (row i <-> row M-1-i).
pub fn flip_batch(a: &EmbeddingBatch) -> EmbeddingBatch {
    let m = a.len();
    let d = a.dim();
    let mut out = Mat::zeros(m, d);
    for i in 0..m {
        out.row_mut(i).copy_from_slice(a.row(m - 1 - i));
    }
    EmbeddingBatch { rows: out }
}

pub(crate) fn check_same_shape(a: &EmbeddingBatch, b: &EmbeddingBatch) -> Result<()> {
    if a.len() != b.len() || a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            m_a: a.len(),
            d_a: a.dim(),
            m_b: b.len(),
            d_b: b.dim(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn uv(v: &[f64]) -> UnitVector {
        l2_normalize(v).unwrap()
    }

    #[test]
    fn normalize_scales_345_triple() {
        let u = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((u.as_slice()[0] - 0.6).abs() < 1e-12);
        assert!((u.as_slice()[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn normalize_is_identity_on_unit_vector() {
        let u = l2_normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(u.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_rejects_zero() {
        assert_eq!(l2_normalize(&[0.0, 0.0]), Err(Error::ZeroVector));
    }

    #[test]
    fn cosine_sim_basics() {
        let e1 = uv(&[1.0, 0.0]);
        let e2 = uv(&[0.0, 1.0]);
        let ne1 = uv(&[-1.0, 0.0]);
        assert_eq!(cosine_sim(&e1, &e1).unwrap(), 1.0);
        assert_eq!(cosine_sim(&e1, &e2).unwrap(), 0.0);
        assert_eq!(cosine_sim(&e1, &ne1).unwrap(), -1.0);
    }

    #[test]
    fn cosine_sim_dimension_mismatch() {
        let a = uv(&[1.0, 0.0]);
        let b = uv(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            cosine_sim(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn geodesic_endpoints_and_midpoint() {
        let a = uv(&[1.0, 0.0]);
        let b = uv(&[0.0, 1.0]);
        let one = geodesic_mix(MixRatio::new(1.0).unwrap(), &a, &b).unwrap();
        assert_eq!(one, a);
        let half = geodesic_mix(MixRatio::new(0.5).unwrap(), &a, &b).unwrap();
        let s = core::f64::consts::FRAC_1_SQRT_2;
        assert!((half.as_slice()[0] - s).abs() < 1e-12);
        assert!((half.as_slice()[1] - s).abs() < 1e-12);
    }

    #[test]
    fn geodesic_quarter_arc_matches_closed_form() {
        // lambda = 0.25 on the quarter arc: (sin(pi/8), sin(3pi/8)).
        let a = uv(&[1.0, 0.0]);
        let b = uv(&[0.0, 1.0]);
        let q = geodesic_mix(MixRatio::new(0.25).unwrap(), &a, &b).unwrap();
        let pi = core::f64::consts::PI;
        assert!((q.as_slice()[0] - libm::sin(pi / 8.0)).abs() < 1e-12);
        assert!((q.as_slice()[1] - libm::sin(3.0 * pi / 8.0)).abs() < 1e-12);
    }

    #[test]
    fn geodesic_antipodal_errors() {
        let a = uv(&[1.0, 0.0]);
        let b = uv(&[-1.0, 0.0]);
        assert!(matches!(
            geodesic_mix(MixRatio::new(0.5).unwrap(), &a, &b),
            Err(Error::AntipodalInputs { .. })
        ));
    }

    #[test]
    fn linear_mix_endpoint_and_degenerate() {
        let a = uv(&[1.0, 0.0]);
        let b = uv(&[0.0, 1.0]);
        let one = linear_mix_normalized(MixRatio::new(1.0).unwrap(), &a, &b).unwrap();
        assert_eq!(one.as_slice(), a.as_slice());
        let nb = uv(&[-1.0, 0.0]);
        assert_eq!(
            linear_mix_normalized(MixRatio::new(0.5).unwrap(), &a, &nb),
            Err(Error::ZeroVector)
        );
    }

    #[test]
    fn batch_mix_endpoints_and_rows() {
        let a = EmbeddingBatch::from_rows(vec![uv(&[1.0, 0.0]), uv(&[0.0, 1.0])]).unwrap();
        let b = EmbeddingBatch::from_rows(vec![uv(&[0.0, 1.0]), uv(&[1.0, 0.0])]).unwrap();
        let l = |x: f64| MixRatio::new(x).unwrap();
        assert_eq!(batch_geodesic_mix(l(1.0), &a, &b).unwrap(), a);
        assert_eq!(batch_geodesic_mix(l(0.0), &a, &b).unwrap(), b);
        let half = batch_geodesic_mix(l(0.5), &a, &b).unwrap();
        let s = core::f64::consts::FRAC_1_SQRT_2;
        for i in 0..2 {
            assert!((half.row(i)[0] - s).abs() < 1e-12);
            assert!((half.row(i)[1] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_similarity_identity_and_antipodal() {
        let a = EmbeddingBatch::from_rows(vec![uv(&[1.0, 0.0]), uv(&[0.0, 1.0])]).unwrap();
        let s = pairwise_similarity(&a, &a).unwrap();
        assert_eq!(s[(0, 0)], 1.0);
        assert_eq!(s[(0, 1)], 0.0);
        assert_eq!(s[(1, 1)], 1.0);
        let b = EmbeddingBatch::from_rows(vec![uv(&[-1.0, 0.0]), uv(&[0.0, -1.0])]).unwrap();
        let sn = pairwise_similarity(&a, &b).unwrap();
        assert_eq!(sn[(0, 0)], -1.0);
        assert_eq!(sn[(1, 1)], -1.0);
    }

    #[test]
    fn flip_is_involution() {
        let a = EmbeddingBatch::from_rows(vec![
            uv(&[1.0, 0.0]),
            uv(&[0.0, 1.0]),
            uv(&[-1.0, 0.0]),
        ])
        .unwrap();
        let f = flip_batch(&a);
        assert_eq!(f.row(0), a.row(2));
        assert_eq!(flip_batch(&f), a);
        let single = EmbeddingBatch::from_rows(vec![uv(&[1.0, 0.0])]).unwrap();
        assert_eq!(flip_batch(&single), single);
    }

    #[test]
    fn near_parallel_fallback_matches_linear() {
        // theta ~ 1e-4 is still on the geodesic branch; both formulas agree there.
        let a = uv(&[1.0, 0.0]);
        let t = 1e-4;
        let b = uv(&[libm::cos(t), libm::sin(t)]);
        let l = MixRatio::new(0.3).unwrap();
        let g = geodesic_mix(l, &a, &b).unwrap();
        let lin = linear_mix_normalized(l, &a, &b).unwrap();
        for (x, y) in g.as_slice().iter().zip(lin.as_slice()) {
            assert!((x - y).abs() < 1e-6);
        }
        // Identical inputs hit the fallback and return the input.
        let same = geodesic_mix(MixRatio::new(0.5).unwrap(), &a, &a).unwrap();
        assert!((same.as_slice()[0] - 1.0).abs() < 1e-12);
    }
}
