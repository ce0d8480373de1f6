//! Label maps and the `HSL1` format: magic, `u32` height and width, then
//! `h*w` little-endian `u16` labels row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{expect_magic, read_u16s, read_u32, to_u32, write_u16s, write_u32};
use crate::error::{Error, Result};

pub const LABEL_MAGIC: &[u8; 4] = b"HSL1";

/// Per-pixel class assignment; 0 means unlabeled.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim(format!("label map extents {height}x{width}")));
        }
        if labels.len() != height * width {
            return Err(Error::dim(format!(
                "{height}x{width} map needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> u16) -> Self {
        let labels = (0..height * width)
            .map(|i| f(i / width, i % width))
            .collect();
        Self::new(height, width, labels).expect("positive extents")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    /// Largest label present (0 for an all-background map).
    pub fn class_count(&self) -> u16 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Sorted distinct nonzero labels.
    pub fn classes(&self) -> Vec<u16> {
        let mut seen = vec![false; self.class_count() as usize + 1];
        self.labels.iter().for_each(|&l| seen[l as usize] = true);
        (1..seen.len())
            .filter(|&l| seen[l])
            .map(|l| l as u16)
            .collect()
    }

    /// Pixels carrying `label`, in scan order.
    pub fn pixels_of(&self, label: u16) -> Vec<(usize, usize)> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }

    /// All pixels with a nonzero label, in scan order.
    pub fn labeled_pixels(&self) -> Vec<(usize, usize)> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 0)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }

    /// Maps `order[i]` to `i + 1` and every other label to 0.
    pub fn relabeled(&self, order: &[u16]) -> LabelMap {
        let labels = self
            .labels
            .iter()
            .map(|l| {
                order
                    .iter()
                    .position(|o| o == l)
                    .map_or(0, |i| i as u16 + 1)
            })
            .collect();
        LabelMap {
            labels,
            ..self.clone()
        }
    }

    /// Zeroes every label not listed in `keep`.
    pub fn retain_classes(&self, keep: &[u16]) -> LabelMap {
        let labels = self
            .labels
            .iter()
            .map(|&l| if keep.contains(&l) { l } else { 0 })
            .collect();
        LabelMap {
            labels,
            ..self.clone()
        }
    }
}

pub fn write_labelmap<W: Write>(w: &mut W, map: &LabelMap) -> Result<()> {
    w.write_all(LABEL_MAGIC)?;
    write_u32(w, to_u32(map.height, "height")?)?;
    write_u32(w, to_u32(map.width, "width")?)?;
    write_u16s(w, &map.labels)
}

pub fn read_labelmap<R: Read>(r: &mut R) -> Result<LabelMap> {
    expect_magic(r, LABEL_MAGIC)?;
    let h = read_u32(r)? as usize;
    let w = read_u32(r)? as usize;
    if h == 0 || w == 0 {
        return Err(Error::Format(format!("zero label map extent {h}x{w}")));
    }
    let labels = read_u16s(r, h * w)?;
    LabelMap::new(h, w, labels)
}

pub fn load_labelmap(path: impl AsRef<Path>) -> Result<LabelMap> {
    read_labelmap(&mut BufReader::new(File::open(path)?))
}

pub fn save_labelmap(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_labelmap(&mut w, map)?;
    w.flush()?;
    Ok(())
}
