use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STD_FLOOR: f64 = 1e-12;

/// Per-feature z-score parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn identity(len: usize) -> Self {
        NormalizationStats {
            mean: vec![0.0; len],
            std: vec![1.0; len],
        }
    }

    /// Fits population mean and standard deviation over `rows`.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut rows_vec = Vec::new();
        for row in rows {
            if count == 0 {
                sum = vec![0.0; row.len()];
            } else if row.len() != sum.len() {
                return Err(Error::Invalid(format!(
                    "feature vector length {} differs from {}",
                    row.len(),
                    sum.len()
                )));
            }
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
            rows_vec.push(row);
            count += 1;
        }
        if count < 2 {
            return Err(Error::Invalid(format!(
                "normalization needs at least 2 training vectors, got {count}"
            )));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut var = vec![0.0; mean.len()];
        for row in rows_vec {
            for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Ok(NormalizationStats { mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply(&self, row: &mut [f64]) {
        for ((v, mu), sd) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - mu) / sd;
        }
    }

    pub fn applied(&self, row: &[f64]) -> Vec<f64> {
        let mut out = row.to_vec();
        self.apply(&mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn constant_column_maps_to_zero() {
        let rows = [vec![3.0, 1.0], vec![3.0, 2.0], vec![3.0, 3.0]];
        let st = NormalizationStats::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        assert_eq!(st.std[0], STD_FLOOR);
        for r in &rows {
            assert_eq!(st.applied(r)[0], 0.0);
        }
    }

    #[test]
    fn standardizes_a_normal_column() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..5000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                vec![5.0 + 3.0 * z]
            })
            .collect();
        let st = NormalizationStats::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        let out: Vec<f64> = rows.iter().map(|r| st.applied(r)[0]).collect();
        let n = out.len() as f64;
        let mean = out.iter().sum::<f64>() / n;
        let sd = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-6, "{mean}");
        assert!((sd - 1.0).abs() < 1e-6, "{sd}");
    }

    #[test]
    fn identity_is_idempotent() {
        let id = NormalizationStats::identity(3);
        let row = [1.5, -2.0, 1e9];
        assert_eq!(id.applied(&id.applied(&row)), row.to_vec());
    }

    #[test]
    fn needs_two_samples() {
        let one = [vec![1.0]];
        assert!(NormalizationStats::fit(one.iter().map(|r| r.as_slice())).is_err());
    }
}
