use serde::{Deserialize, Serialize};

use crate::diffcore::{Element, Tensor};
use crate::error::{Error, Result};

/// A point of the latent space [−1, 1]^n_z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentVector(Vec<f64>);

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("latent vector must be non-empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!(
                "latent component {v} outside [-1, 1]"
            )));
        }
        Ok(LatentVector(values))
    }

    /// Clamps every component into [−1, 1]; NaN is rejected.
    pub fn clamped(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::NumericInput("latent vector".into()));
        }
        Self::new(values.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::vector(self.0.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_enforced() {
        assert!(LatentVector::new(vec![0.0, 1.0, -1.0]).is_ok());
        assert!(LatentVector::new(vec![1.01]).is_err());
        assert_eq!(
            LatentVector::clamped(vec![3.0, -2.0]).unwrap().values(),
            &[1.0, -1.0]
        );
        assert!(LatentVector::clamped(vec![f64::NAN]).is_err());
    }
}
