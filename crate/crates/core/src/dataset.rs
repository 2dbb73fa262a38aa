//! Grayscale face datasets laid out one image per column.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::metrics::LabelVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// `s<k>/<i>.pgm`
    Orl,
    /// One folder of PGM files per subject.
    Yaleb,
    /// `<label>_<i>.pgm` (or `.png` with the `png` feature) in one folder.
    Flat,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "orl" => Ok(Layout::Orl),
            "yaleb" => Ok(Layout::Yaleb),
            "flat" => Ok(Layout::Flat),
            other => Err(Error::config(format!("unknown layout `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// pixels × images, intensities in `[0, 1]`
    pub x: DenseMatrix,
    pub labels: LabelVector,
    /// `(height, width)`
    pub image_shape: (usize, usize),
    pub name: String,
    /// Subject names indexed by label id.
    pub subjects: Vec<String>,
}

impl Dataset {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_shape;
        if self.x.rows() != h * w {
            return Err(Error::shape("pixel count does not match image shape"));
        }
        if self.x.cols() != self.labels.len() {
            return Err(Error::shape("one label per image required"));
        }
        if self.labels.as_slice().iter().any(|&l| l >= self.subjects.len()) {
            return Err(Error::shape("label id out of range"));
        }
        Ok(())
    }
}

/// Grayscale raster with intensities already scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self) -> std::result::Result<usize, String> {
        let tok = self.token().ok_or("truncated header")?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("bad header value `{}`", String::from_utf8_lossy(tok)))
    }
}

/// Parses binary (`P5`) or ASCII (`P2`) PGM data; samples are divided by the
/// file's maxval.
pub fn parse_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut hdr = Header { bytes, pos: 0 };
    let magic = hdr.token().ok_or("empty file")?;
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        other => return Err(format!("unsupported magic `{}`", String::from_utf8_lossy(other))),
    };
    let width = hdr.number()?;
    let height = hdr.number()?;
    let maxval = hdr.number()?;
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    let n = width * height;
    let scale = maxval as f64;
    let raw: Vec<usize> = if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = hdr.pos + 1;
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        let body = bytes.get(start..start + need).ok_or("truncated raster")?;
        if wide {
            body.chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as usize)
                .collect()
        } else {
            body.iter().map(|&b| b as usize).collect()
        }
    } else {
        (0..n).map(|_| hdr.number()).collect::<std::result::Result<_, _>>()?
    };
    if let Some(v) = raw.iter().find(|&&v| v > maxval) {
        return Err(format!("sample {v} exceeds maxval {maxval}"));
    }
    Ok(GrayImage {
        width,
        height,
        pixels: raw.into_iter().map(|v| v as f64 / scale).collect(),
    })
}

#[cfg(feature = "png")]
fn parse_png(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| e.to_string())?
        .into_luma8();
    Ok(GrayImage {
        width: img.width() as usize,
        height: img.height() as usize,
        pixels: img.as_raw().iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

fn is_image(path: &Path) -> bool {
    match extension(path).as_str() {
        "pgm" => true,
        "png" => cfg!(feature = "png"),
        _ => false,
    }
}

pub fn load_image(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path)?;
    let parsed = match extension(path).as_str() {
        #[cfg(feature = "png")]
        "png" => parse_png(&bytes),
        _ => parse_pgm(&bytes),
    };
    parsed.map_err(|reason| Error::data(path, reason))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::data(dir, e.to_string()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// `(subject, image path)` pairs in load order.
fn collect_files(root: &Path, layout: Layout) -> Result<Vec<(String, PathBuf)>> {
    let mut files = Vec::new();
    match layout {
        Layout::Orl | Layout::Yaleb => {
            for sub in sorted_entries(root)? {
                if !sub.is_dir() {
                    continue;
                }
                let subject = file_name(&sub);
                if layout == Layout::Orl {
                    let numbered = subject
                        .strip_prefix('s')
                        .is_some_and(|k| !k.is_empty() && k.bytes().all(|b| b.is_ascii_digit()));
                    if !numbered {
                        continue;
                    }
                }
                for f in sorted_entries(&sub)? {
                    if f.is_file() && is_image(&f) {
                        files.push((subject.clone(), f));
                    }
                }
            }
        }
        Layout::Flat => {
            for f in sorted_entries(root)? {
                if !(f.is_file() && is_image(&f)) {
                    continue;
                }
                let name = file_name(&f);
                let subject = name
                    .split_once('_')
                    .map(|(label, _)| label.to_string())
                    .ok_or_else(|| Error::data(&f, "expected `<label>_<index>` file name"))?;
                files.push((subject, f));
            }
        }
    }
    Ok(files)
}

/// Loads every image under `root`, one column per image, subjects numbered in
/// lexicographic order of their names.
pub fn load_image_dir(root: &Path, layout: Layout) -> Result<Dataset> {
    let files = collect_files(root, layout)?;
    if files.is_empty() {
        return Err(Error::data(root, "no images found"));
    }

    let subject_ids: BTreeMap<String, usize> = {
        let mut names: Vec<&String> = files.iter().map(|(s, _)| s).collect();
        names.sort();
        names.dedup();
        names.into_iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
    };

    let images = files
        .iter()
        .map(|(_, p)| load_image(p).map(|img| (p, img)))
        .collect::<Result<Vec<_>>>()?;
    let (height, width) = (images[0].1.height, images[0].1.width);
    if let Some((p, img)) = images.iter().find(|(_, img)| (img.height, img.width) != (height, width)) {
        return Err(Error::data(
            p.as_path(),
            format!(
                "image is {}x{}, expected {height}x{width}",
                img.height, img.width
            ),
        ));
    }

    let pixels = height * width;
    let n = images.len();
    let mut data = vec![0.0; pixels * n];
    for (j, (_, img)) in images.iter().enumerate() {
        for (i, &v) in img.pixels.iter().enumerate() {
            data[i * n + j] = v;
        }
    }
    let labels = files.iter().map(|(s, _)| subject_ids[s]).collect();
    let dataset = Dataset {
        x: DenseMatrix::nonneg_checked(pixels, n, data)?,
        labels: LabelVector::new(labels),
        image_shape: (height, width),
        name: root
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| root.display().to_string()),
        subjects: subject_ids.into_keys().collect(),
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes an 8-bit binary PGM of `pixels` (values in `[0, 1]`, clipped).
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::shape("pixel count does not match image size"));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, out)?;
    Ok(())
}
