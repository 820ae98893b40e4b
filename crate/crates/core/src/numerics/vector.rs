use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite real vector; embeddings are the unit-norm ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorK(Vec<f64>);

impl VectorK {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Shape("vector must have positive dimension".into()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite vector entry at index {i}")));
        }
        Ok(Self(data))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "vector must have positive dimension");
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn dot(&self, other: &VectorK) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(dot(&self.0, &other.0))
    }
}

impl From<VectorK> for Vec<f64> {
    fn from(v: VectorK) -> Self {
        v.0
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_normalize(v: &VectorK) -> Result<VectorK> {
    let n = v.norm();
    if n == 0.0 {
        return Err(Error::Normalization("cannot normalize a zero vector".into()));
    }
    Ok(VectorK(v.0.iter().map(|x| x / n).collect()))
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &VectorK, b: &VectorK) -> Result<f64> {
    let d = a.dot(b)?;
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Normalization("cosine similarity of a zero vector".into()));
    }
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> VectorK {
        VectorK::new(x.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let n = l2_normalize(&v(&[3.0, 4.0])).unwrap();
        assert!((n.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((n.as_slice()[1] - 0.8).abs() < 1e-15);
        assert_eq!(l2_normalize(&v(&[1.0, 0.0, 0.0])).unwrap(), v(&[1.0, 0.0, 0.0]));
        assert!(matches!(
            l2_normalize(&v(&[0.0, 0.0])),
            Err(Error::Normalization(_))
        ));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(
            cosine_similarity(&v(&[1.0, 0.0]), &v(&[-2.0, 0.0])).unwrap(),
            -1.0
        );
        assert!(matches!(
            cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0])),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(Error::Normalization(_))
        ));
    }

    proptest! {
        #[test]
        fn normalize_is_unit_and_idempotent(x in prop::collection::vec(-1e3f64..1e3, 1..40)) {
            prop_assume!(x.iter().any(|e| e.abs() > 1e-6));
            let a = l2_normalize(&v(&x)).unwrap();
            prop_assert!((a.norm() - 1.0).abs() < 1e-12);
            let b = l2_normalize(&a).unwrap();
            for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn self_cosine_is_one_and_symmetric(
            x in prop::collection::vec(-1e3f64..1e3, 8),
            y in prop::collection::vec(-1e3f64..1e3, 8),
        ) {
            prop_assume!(x.iter().any(|e| e.abs() > 1e-6) && y.iter().any(|e| e.abs() > 1e-6));
            let (a, b) = (v(&x), v(&y));
            prop_assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
            let ab = cosine_similarity(&a, &b).unwrap();
            prop_assert_eq!(ab, cosine_similarity(&b, &a).unwrap());
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
