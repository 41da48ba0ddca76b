//! Unit-length face descriptors and the distance they are compared under.
//!
//! Components are stored as `f32`; every distance and mean is accumulated in
//! `f64` so that comparison results do not depend on vector length.

use std::sync::Arc;

use thiserror::Error;

/// Normalized descriptors land within this of unit length.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum DescriptorError {
    #[error("cannot normalize a vector with zero norm")]
    ZeroVector,
    #[error("vector contains a non-finite component")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("empty descriptor set")]
    EmptySet,
    #[error("vector norm {norm} is not unit length")]
    NotUnit { norm: f64 },
}

/// An L2-normalized embedding vector.
///
/// Immutable after construction; clones share storage, so snapshots of large
/// galleries stay cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    values: Arc<[f32]>,
}

impl Descriptor {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Wraps values that are already unit length, bit for bit.
    ///
    /// Restores from serialized form must not re-normalize (a second pass can
    /// perturb the low bits), so this validates and adopts instead. The norm
    /// check is looser than `UNIT_NORM_TOLERANCE` to absorb f32 storage.
    pub fn from_unit_values(values: Vec<f32>) -> Result<Self, DescriptorError> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(DescriptorError::NonFinite);
        }
        let norm = values
            .iter()
            .map(|&x| {
                let x = f64::from(x);
                x * x
            })
            .sum::<f64>()
            .sqrt();
        if (norm - 1.0).abs() > 1e-4 {
            return Err(DescriptorError::NotUnit { norm });
        }
        Ok(Descriptor {
            values: values.into(),
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Euclidean norm, accumulated in f64.
    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| {
                let v = f64::from(v);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Scales `v` to unit Euclidean length.
pub fn l2_normalize(v: &[f32]) -> Result<Descriptor, DescriptorError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(DescriptorError::NonFinite);
    }
    let norm = v
        .iter()
        .map(|&x| {
            let x = f64::from(x);
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        return Err(DescriptorError::ZeroVector);
    }
    let scaled: Vec<f32> = v.iter().map(|&x| (f64::from(x) / norm) as f32).collect();
    Ok(Descriptor {
        values: scaled.into(),
    })
}

/// Normalizes an f64 working vector down to descriptor storage.
///
/// Generators and embedders accumulate in f64; this is their exit point.
pub fn normalize_f64(v: &[f64]) -> Result<Descriptor, DescriptorError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(DescriptorError::NonFinite);
    }
    let norm = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(DescriptorError::ZeroVector);
    }
    let scaled: Vec<f32> = v.iter().map(|&x| (x / norm) as f32).collect();
    Ok(Descriptor {
        values: scaled.into(),
    })
}

/// Euclidean distance between two descriptors of equal dimension.
pub fn euclidean_distance(a: &Descriptor, b: &Descriptor) -> Result<f64, DescriptorError> {
    if a.dim() != b.dim() {
        return Err(DescriptorError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(distance_unchecked(a, b))
}

/// Distance without the dimension check, for inner loops that validated
/// dimensions at the boundary.
pub fn distance_unchecked(a: &Descriptor, b: &Descriptor) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.values
        .iter()
        .zip(b.values.iter())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Component-wise mean of a non-empty set, re-normalized to unit length.
///
/// Fails with `ZeroVector` when the inputs cancel, e.g. two antipodal
/// descriptors.
pub fn mean_descriptor(set: &[Descriptor]) -> Result<Descriptor, DescriptorError> {
    let first = set.first().ok_or(DescriptorError::EmptySet)?;
    let dim = first.dim();
    let mut acc = vec![0.0f64; dim];
    for d in set {
        if d.dim() != dim {
            return Err(DescriptorError::DimensionMismatch {
                expected: dim,
                actual: d.dim(),
            });
        }
        for (a, &v) in acc.iter_mut().zip(d.values.iter()) {
            *a += f64::from(v);
        }
    }
    let n = set.len() as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }
    normalize_f64(&acc)
}
