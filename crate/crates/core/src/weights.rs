//! Entrywise weights derived from the residual `X − WHᵀ`.
//!
//! `none`, `cim` and `huber` produce weights in `(0, 1]`. The `l1` and `l21`
//! reweighting forms are unbounded above; [`WeightMatrix::clamped_unit`]
//! rescales them into `(0, 1]` for use in a convex combination.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    None,
    Cim,
    Huber,
    L1,
    L21,
}

impl WeightKind {
    pub const ALL: [WeightKind; 5] = [
        WeightKind::None,
        WeightKind::Cim,
        WeightKind::Huber,
        WeightKind::L1,
        WeightKind::L21,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeightKind::None => "none",
            WeightKind::Cim => "cim",
            WeightKind::Huber => "huber",
            WeightKind::L1 => "l1",
            WeightKind::L21 => "l21",
        }
    }

    /// Whether the scheme's weights already lie in `(0, 1]`.
    pub fn is_bounded(self) -> bool {
        matches!(self, WeightKind::None | WeightKind::Cim | WeightKind::Huber)
    }
}

impl fmt::Display for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::config(format!("unknown weight scheme `{s}`")))
    }
}

/// Which matrix the CIM bandwidth σ² is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaSource {
    /// Population variance of the residual entries.
    #[default]
    Residual,
    /// Population variance of the data entries.
    Data,
}

impl FromStr for SigmaSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "residual" => Ok(SigmaSource::Residual),
            "data" => Ok(SigmaSource::Data),
            other => Err(Error::config(format!("unknown sigma source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub kind: WeightKind,
    pub epsilon: f64,
    pub cim_sigma: SigmaSource,
}

impl WeightScheme {
    pub fn new(kind: WeightKind) -> Self {
        Self {
            kind,
            epsilon: EPS,
            cim_sigma: SigmaSource::Residual,
        }
    }

    pub fn none() -> Self {
        Self::new(WeightKind::None)
    }

    pub fn with_sigma_source(mut self, source: SigmaSource) -> Self {
        self.cim_sigma = source;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("weight epsilon must be positive and finite"));
        }
        Ok(())
    }
}

impl Default for WeightScheme {
    fn default() -> Self {
        Self::none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    g: DenseMatrix,
}

impl WeightMatrix {
    pub fn matrix(&self) -> &DenseMatrix {
        &self.g
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.g
    }

    /// Divides by the largest entry when any weight exceeds 1, so the result
    /// lies in `(0, 1]`. Bounded schemes pass through untouched.
    pub fn clamped_unit(self) -> WeightMatrix {
        let top = self.g.max();
        if top <= 1.0 {
            return self;
        }
        let g = self
            .g
            .map(|v| (v / top).min(1.0))
            .expect("rescaling finite weights stays finite");
        WeightMatrix { g }
    }
}

/// Weight matrix for `x` against the current reconstruction `approx`.
pub fn compute_weights(
    scheme: &WeightScheme,
    x: &DenseMatrix,
    approx: &DenseMatrix,
) -> Result<WeightMatrix> {
    x.ensure_same_shape(approx, "compute_weights")?;
    scheme.validate()?;
    let eps = scheme.epsilon;
    let residual: Vec<f64> = x
        .as_slice()
        .iter()
        .zip(approx.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    let (rows, cols) = x.shape();

    let g: Vec<f64> = match scheme.kind {
        WeightKind::None => vec![1.0; residual.len()],
        WeightKind::Cim => {
            let variance = match scheme.cim_sigma {
                SigmaSource::Residual => population_variance(&residual),
                SigmaSource::Data => population_variance(x.as_slice()),
            };
            if variance <= 0.0 {
                vec![1.0; residual.len()]
            } else {
                residual
                    .iter()
                    .map(|r| (-(r * r) / variance).exp().max(f64::MIN_POSITIVE))
                    .collect()
            }
        }
        WeightKind::Huber => {
            let abs: Vec<f64> = residual.iter().map(|r| r.abs()).collect();
            let delta = crate::matrix::median(&abs);
            abs.iter()
                .map(|&a| huber_weight(a, delta, eps))
                .collect()
        }
        WeightKind::L1 => residual.iter().map(|r| 1.0 / r.abs().max(eps)).collect(),
        WeightKind::L21 => {
            let mut col_norm = vec![0.0; cols];
            for i in 0..rows {
                for (j, norm) in col_norm.iter_mut().enumerate() {
                    let r = residual[i * cols + j];
                    *norm += r * r;
                }
            }
            let inv: Vec<f64> = col_norm.iter().map(|s| 1.0 / s.sqrt().max(eps)).collect();
            (0..rows * cols).map(|idx| inv[idx % cols]).collect()
        }
    };

    Ok(WeightMatrix {
        g: DenseMatrix::new(rows, cols, g)?,
    })
}

fn huber_weight(abs_residual: f64, delta: f64, eps: f64) -> f64 {
    if abs_residual <= delta {
        1.0
    } else if delta > 0.0 {
        delta / abs_residual
    } else {
        // δ = 0: a majority of entries are fitted exactly
        (eps / abs_residual).clamp(f64::MIN_POSITIVE, 1.0)
    }
}

pub(crate) fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(x: &[f64], approx: &[f64]) -> (DenseMatrix, DenseMatrix) {
        (
            DenseMatrix::new(1, x.len(), x.to_vec()).unwrap(),
            DenseMatrix::new(1, approx.len(), approx.to_vec()).unwrap(),
        )
    }

    #[test]
    fn parse_kinds() {
        for k in WeightKind::ALL {
            assert_eq!(k.as_str().parse::<WeightKind>().unwrap(), k);
        }
        assert_eq!("CIM".parse::<WeightKind>().unwrap(), WeightKind::Cim);
        assert!("l3".parse::<WeightKind>().is_err());
        assert_eq!("data".parse::<SigmaSource>().unwrap(), SigmaSource::Data);
    }

    #[test]
    fn none_is_all_ones() {
        let (x, a) = pair(&[1.0, 5.0, 0.0], &[0.0, 0.0, 3.0]);
        let g = compute_weights(&WeightScheme::none(), &x, &a).unwrap();
        assert_eq!(g.matrix(), &DenseMatrix::ones(1, 3));
    }

    #[test]
    fn cim_zero_residual_gets_unit_weight() {
        // residuals (0, 2, -2): variance = 8/3
        let (x, a) = pair(&[1.0, 3.0, 0.0], &[1.0, 1.0, 2.0]);
        let g = compute_weights(&WeightScheme::new(WeightKind::Cim), &x, &a).unwrap();
        assert_eq!(g.matrix().get(0, 0), 1.0);
        let expected = (-4.0f64 / (8.0 / 3.0)).exp();
        assert!((g.matrix().get(0, 1) - expected).abs() < 1e-15);
    }

    #[test]
    fn cim_residual_at_sigma_gives_inverse_e() {
        // residuals (1, -1): mean 0, population variance 1
        let (x, a) = pair(&[2.0, 0.0], &[1.0, 1.0]);
        let g = compute_weights(&WeightScheme::new(WeightKind::Cim), &x, &a).unwrap();
        for &v in g.matrix().as_slice() {
            assert!((v - 0.367_879_441_171_442_3).abs() < 1e-15);
        }
    }

    #[test]
    fn cim_perfect_fit_is_all_ones() {
        let (x, a) = pair(&[0.0, 10.0, 10.0, 0.0], &[0.0, 10.0, 10.0, 0.0]);
        let g = compute_weights(&WeightScheme::new(WeightKind::Cim), &x, &a).unwrap();
        assert_eq!(g.matrix(), &DenseMatrix::ones(1, 4));
    }

    #[test]
    fn cim_data_sigma_source() {
        // data (0, 2): variance 1; residuals (0, 1)
        let (x, a) = pair(&[0.0, 2.0], &[0.0, 1.0]);
        let scheme = WeightScheme::new(WeightKind::Cim).with_sigma_source(SigmaSource::Data);
        let g = compute_weights(&scheme, &x, &a).unwrap();
        assert_eq!(g.matrix().get(0, 0), 1.0);
        assert!((g.matrix().get(0, 1) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn huber_cases() {
        // |r| = (1, 1, 1, 2, 4): δ = 1
        let (x, a) = pair(&[1.0, 1.0, 1.0, 2.0, 4.0], &[0.0; 5]);
        let g = compute_weights(&WeightScheme::new(WeightKind::Huber), &x, &a).unwrap();
        assert_eq!(g.matrix().as_slice(), &[1.0, 1.0, 1.0, 0.5, 0.25]);
    }

    #[test]
    fn huber_zero_delta_is_guarded() {
        let (x, a) = pair(&[0.0, 0.0, 0.0, 3.0], &[0.0, 0.0, 0.0, 0.0]);
        let g = compute_weights(&WeightScheme::new(WeightKind::Huber), &x, &a).unwrap();
        let s = g.matrix().as_slice();
        assert_eq!(&s[..3], &[1.0, 1.0, 1.0]);
        assert!(s[3] > 0.0 && s[3] <= 1.0 && s[3].is_finite());
    }

    #[test]
    fn l1_and_l21_forms() {
        let x = DenseMatrix::from_rows(&[vec![3.0, 1.0], vec![4.0, 1.0]]).unwrap();
        let a = DenseMatrix::zeros(2, 2);
        let g = compute_weights(&WeightScheme::new(WeightKind::L1), &x, &a).unwrap();
        assert_eq!(g.matrix().as_slice(), &[1.0 / 3.0, 1.0, 0.25, 1.0]);
        let g = compute_weights(&WeightScheme::new(WeightKind::L21), &x, &a).unwrap();
        let s = g.matrix().as_slice();
        assert_eq!(s[0], 0.2);
        assert_eq!(s[2], 0.2);
        assert!((s[1] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s[1], s[3]);

        let g = compute_weights(&WeightScheme::new(WeightKind::L1), &x, &x).unwrap();
        assert!(g.matrix().as_slice().iter().all(|&v| v == 1.0 / EPS));
        let unit = g.clamped_unit();
        assert!(unit.matrix().as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn shape_mismatch() {
        let x = DenseMatrix::zeros(2, 2);
        let a = DenseMatrix::zeros(2, 3);
        assert!(compute_weights(&WeightScheme::none(), &x, &a).is_err());
    }
}
