//! Seeded block and salt corruption of image matrices.
//!
//! Each column of the matrix is one image stored row-major. Image `j` draws
//! from its own ChaCha stream of the `CorruptionSpec` seed, so the corruption of one
//! image does not depend on how many images precede it.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    None,
    Block,
    Salt,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Block => "block",
            NoiseKind::Salt => "salt",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(NoiseKind::None),
            "block" => Ok(NoiseKind::Block),
            "salt" => Ok(NoiseKind::Salt),
            other => Err(Error::config(format!("unknown noise kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: NoiseKind,
    /// Side of the square block.
    pub block_size: usize,
    /// Overrides `block_size` for the block height.
    pub block_h: Option<usize>,
    /// Overrides `block_size` for the block width.
    pub block_w: Option<usize>,
    pub salt_fraction: f64,
    pub intensity: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: NoiseKind) -> Self {
        Self {
            kind,
            block_size: 10,
            block_h: None,
            block_w: None,
            salt_fraction: 0.10,
            intensity: 1.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn block_dims(&self) -> (usize, usize) {
        (
            self.block_h.unwrap_or(self.block_size),
            self.block_w.unwrap_or(self.block_size),
        )
    }

    /// Pixels altered per image of the given size.
    pub fn pixels_per_image(&self, height: usize, width: usize) -> usize {
        match self.kind {
            NoiseKind::None => 0,
            NoiseKind::Block => {
                let (bh, bw) = self.block_dims();
                bh * bw
            }
            NoiseKind::Salt => (self.salt_fraction * (height * width) as f64).floor() as usize,
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let (bh, bw) = self.block_dims();
        if self.kind == NoiseKind::Block && (bh == 0 || bw == 0 || bh > height || bw > width) {
            return Err(Error::config(format!(
                "block {bh}x{bw} does not fit a {height}x{width} image"
            )));
        }
        if !(0.0..=1.0).contains(&self.salt_fraction) {
            return Err(Error::config("salt fraction must lie in [0, 1]"));
        }
        if !(self.intensity >= 0.0 && self.intensity.is_finite()) {
            return Err(Error::config("intensity must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Corrupted copy of `x` plus the row-major mask of altered entries.
pub fn corrupt_with_mask(
    x: &DenseMatrix,
    image_shape: (usize, usize),
    spec: &CorruptionSpec,
) -> Result<(DenseMatrix, Vec<bool>)> {
    let (height, width) = image_shape;
    if height * width != x.rows() {
        return Err(Error::shape(format!(
            "{} pixels per column but images are {height}x{width}",
            x.rows()
        )));
    }
    spec.validate(height, width)?;
    let mut out = x.clone();
    let mut mask = vec![false; x.len()];
    let cols = x.cols();

    for j in 0..cols {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(j as u64);
        let pixels: Vec<usize> = match spec.kind {
            NoiseKind::None => Vec::new(),
            NoiseKind::Block => {
                let (bh, bw) = spec.block_dims();
                let top = rng.random_range(0..=height - bh);
                let left = rng.random_range(0..=width - bw);
                (top..top + bh)
                    .flat_map(|r| (left..left + bw).map(move |c| r * width + c))
                    .collect()
            }
            NoiseKind::Salt => {
                let count = spec.pixels_per_image(height, width);
                index::sample(&mut rng, height * width, count).into_vec()
            }
        };
        for p in pixels {
            out.set(p, j, spec.intensity);
            mask[p * cols + j] = true;
        }
    }
    Ok((out, mask))
}

pub fn corrupt(x: &DenseMatrix, image_shape: (usize, usize), spec: &CorruptionSpec) -> Result<DenseMatrix> {
    corrupt_with_mask(x, image_shape, spec).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(h: usize, w: usize, n: usize) -> DenseMatrix {
        DenseMatrix::from_fn(h * w, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 20.0)
    }

    #[test]
    fn none_is_identity() {
        let x = images(6, 5, 3);
        let y = corrupt(&x, (6, 5), &CorruptionSpec::new(NoiseKind::None)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn full_salt_whitens_everything() {
        let x = images(6, 5, 3);
        let spec = CorruptionSpec {
            salt_fraction: 1.0,
            ..CorruptionSpec::new(NoiseKind::Salt)
        };
        let y = corrupt(&x, (6, 5), &spec).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn block_is_contiguous_square() {
        let (h, w) = (20, 20);
        let x = images(h, w, 4);
        let spec = CorruptionSpec {
            block_size: 5,
            ..CorruptionSpec::new(NoiseKind::Block).with_seed(3)
        };
        let (y, mask) = corrupt_with_mask(&x, (h, w), &spec).unwrap();
        for j in 0..4 {
            let hit: Vec<(usize, usize)> = (0..h * w)
                .filter(|&p| mask[p * 4 + j])
                .map(|p| (p / w, p % w))
                .collect();
            assert_eq!(hit.len(), 25);
            let r0 = hit.iter().map(|p| p.0).min().unwrap();
            let c0 = hit.iter().map(|p| p.1).min().unwrap();
            for &(r, c) in &hit {
                assert!(r < r0 + 5 && c < c0 + 5);
                assert_eq!(y.get(r * w + c, j), 1.0);
            }
        }
        for (k, &m) in mask.iter().enumerate() {
            if !m {
                assert_eq!(y.as_slice()[k].to_bits(), x.as_slice()[k].to_bits());
            }
        }
    }

    #[test]
    fn salt_counts_and_determinism() {
        let x = images(9, 7, 5);
        let spec = CorruptionSpec {
            salt_fraction: 0.3,
            intensity: 2.5,
            ..CorruptionSpec::new(NoiseKind::Salt).with_seed(11)
        };
        let (y, mask) = corrupt_with_mask(&x, (9, 7), &spec).unwrap();
        let expected = (0.3f64 * 63.0).floor() as usize;
        for j in 0..5 {
            let n = (0..63).filter(|&p| mask[p * 5 + j]).count();
            assert_eq!(n, expected);
        }
        assert_eq!(corrupt(&x, (9, 7), &spec).unwrap(), y);
        let other = corrupt(&x, (9, 7), &spec.with_seed(12)).unwrap();
        assert_ne!(other, y);
    }

    #[test]
    fn rectangular_override() {
        let x = images(8, 10, 2);
        let spec = CorruptionSpec {
            block_h: Some(2),
            block_w: Some(6),
            ..CorruptionSpec::new(NoiseKind::Block)
        };
        let (_, mask) = corrupt_with_mask(&x, (8, 10), &spec).unwrap();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 24);
    }

    #[test]
    fn invalid_specs() {
        let x = images(4, 4, 2);
        assert!(matches!(
            corrupt(&x, (5, 4), &CorruptionSpec::new(NoiseKind::None)),
            Err(Error::Shape(_))
        ));
        assert!(corrupt(&x, (4, 4), &CorruptionSpec::new(NoiseKind::Block)).is_err());
        let bad = CorruptionSpec {
            salt_fraction: 1.5,
            ..CorruptionSpec::new(NoiseKind::Salt)
        };
        assert!(corrupt(&x, (4, 4), &bad).is_err());
        assert!("pepper".parse::<NoiseKind>().is_err());
    }
}
