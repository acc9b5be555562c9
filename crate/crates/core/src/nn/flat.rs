use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The full parameter gradient of a network as one contiguous vector.
///
/// Coordinates follow the network's parameter layout (layer-major, weights
/// before biases, weights row-major over `(fan_in, fan_out)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatGradient {
    values: Vec<f64>,
    /// Sub-task the gradient was computed from, if known.
    pub tag: Option<usize>,
}

impl FlatGradient {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, tag: None }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![0.0; len])
    }

    pub fn with_tag(mut self, tag: usize) -> Self {
        self.tag = Some(tag);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    fn check_len(&self, other: &FlatGradient) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Shape {
                what: "flat gradient",
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &FlatGradient) -> Result<f64> {
        self.check_len(other)?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.values, &self.values)
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &FlatGradient) -> Result<()> {
        self.check_len(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    /// Cosine similarity; defined as 0 when either vector has zero norm.
    pub fn cosine(&self, other: &FlatGradient) -> Result<f64> {
        self.check_len(other)?;
        Ok(cosine(&self.values, &other.values))
    }

    /// Count-weighted mean of gradients that are themselves batch means.
    pub fn weighted_mean(parts: &[(&FlatGradient, usize)]) -> Result<FlatGradient> {
        let Some((first, _)) = parts.first() else {
            return Err(Error::Precondition("weighted mean of no gradients".into()));
        };
        let total: usize = parts.iter().map(|(_, n)| n).sum();
        if total == 0 {
            return Err(Error::Precondition("weighted mean with zero total weight".into()));
        }
        let mut out = FlatGradient::zeros(first.len());
        for (g, n) in parts {
            out.add_scaled(*n as f64 / total as f64, g)?;
        }
        Ok(out)
    }
}

impl From<Vec<f64>> for FlatGradient {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}

// Four independent partial sums so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let mut acc = [0.0; 4];
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    cosine_with_norm(a, dot(a, a), b)
}

/// [`cosine`] with `na = ⟨a, a⟩` already known. Reads `b` once.
pub(crate) fn cosine_with_norm(a: &[f64], na: f64, b: &[f64]) -> f64 {
    let (ab, nb) = dot_and_norm(a, b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    ab / (na.sqrt() * nb.sqrt())
}

/// `(⟨a, b⟩, ⟨b, b⟩)` in one pass, each bitwise equal to [`dot`].
fn dot_and_norm(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    let tail_ab: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    let tail_bb: f64 = rb.iter().map(|y| y * y).sum();
    let (mut ab, mut bb) = ([0.0; 4], [0.0; 4]);
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            ab[k] += x[k] * y[k];
            bb[k] += y[k] * y[k];
        }
    }
    ((ab[0] + ab[1]) + (ab[2] + ab[3]) + tail_ab, (bb[0] + bb[1]) + (bb[2] + bb[3]) + tail_bb)
}
