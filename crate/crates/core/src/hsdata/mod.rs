//! Hyperspectral cubes, label maps, and their file formats.
//!
//! Native cube layout (`HSC1`): magic, `u32` height, width, bands, then
//! `h*w*b` little-endian `f32` values in band-sequential order.

mod envi;
mod labelmap;
mod ppm;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{expect_magic, read_f32s, read_u32, to_u32, write_f32s, write_u32};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use envi::load_envi;
pub use labelmap::{load_labelmap, read_labelmap, save_labelmap, write_labelmap, LabelMap};
pub use ppm::{export_map_image, palette_color, render_ppm};

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";

/// `h x w x b` reflectance volume stored band-sequentially.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f32>,
}

impl HyperCube {
    /// `data` is band-sequential: `bands` planes of `height x width`, row-major.
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::dim(format!(
                "cube extents must be positive, got {height}x{width}x{bands}"
            )));
        }
        if data.len() != height * width * bands {
            return Err(Error::dim(format!(
                "{height}x{width}x{bands} cube needs {} values, got {}",
                height * width * bands,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at flat offset {i}")));
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[(band * self.height + row) * self.width + col]
    }

    pub fn band(&self, band: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[band * plane..(band + 1) * plane]
    }

    /// Drops the listed band indices (e.g. water-absorption channels).
    pub fn exclude_bands(&self, excluded: &[usize]) -> Result<HyperCube> {
        if let Some(&b) = excluded.iter().find(|&&b| b >= self.bands) {
            return Err(Error::Bounds(format!("band {b} of {}", self.bands)));
        }
        let kept: Vec<usize> = (0..self.bands).filter(|b| !excluded.contains(b)).collect();
        if kept.is_empty() {
            return Err(Error::param("band exclusion removes every band"));
        }
        let data = kept
            .iter()
            .flat_map(|&b| self.band(b).iter().copied())
            .collect();
        HyperCube::new(self.height, self.width, kept.len(), data)
    }

    fn map_bands(&self, stats: &BandStats, f: impl Fn(f64, usize) -> f64) -> Result<HyperCube> {
        if stats.mean.len() != self.bands || stats.std.len() != self.bands {
            return Err(Error::dim(format!(
                "statistics cover {} bands, cube has {}",
                stats.mean.len(),
                self.bands
            )));
        }
        let plane = self.height * self.width;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v as f64, i / plane) as f32)
            .collect();
        HyperCube::new(self.height, self.width, self.bands, data)
    }
}

/// Per-band mean and population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct BandStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn band_statistics(cube: &HyperCube) -> BandStats {
    let (mean, std) = (0..cube.bands)
        .map(|b| {
            let band = cube.band(b);
            let n = band.len() as f64;
            let mean = band.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = band.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .unzip();
    BandStats { mean, std }
}

/// Subtracts each band's mean.
pub fn center_bands(cube: &HyperCube, stats: &BandStats) -> Result<HyperCube> {
    cube.map_bands(stats, |v, b| v - stats.mean[b])
}

/// `(x - mean) / max(std, epsilon)` per band.
pub fn standardize_bands(cube: &HyperCube, stats: &BandStats, epsilon: f64) -> Result<HyperCube> {
    cube.map_bands(stats, |v, b| {
        (v - stats.mean[b]) / stats.std[b].max(epsilon)
    })
}

/// Square spatial window around a pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub center: (usize, usize),
    /// `[bands, side, side]`
    pub window: Tensor<f32>,
}

impl Patch {
    pub fn side(&self) -> usize {
        self.window.shape()[1]
    }
}

/// Reflects an index into `0..n` without repeating the edge sample
/// (`-1 -> 1`, `n -> n - 2`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

fn check_patch_request(cube: &HyperCube, center: (usize, usize), side: usize) -> Result<()> {
    if side.is_multiple_of(2) {
        return Err(Error::param(format!("patch side must be odd, got {side}")));
    }
    if center.0 >= cube.height || center.1 >= cube.width {
        return Err(Error::Bounds(format!(
            "center {center:?} outside {}x{} image",
            cube.height, cube.width
        )));
    }
    Ok(())
}

fn write_window(cube: &HyperCube, center: (usize, usize), side: usize, out: &mut [f32]) {
    let half = (side / 2) as isize;
    let rows: Vec<usize> = (0..side)
        .map(|d| reflect(center.0 as isize + d as isize - half, cube.height))
        .collect();
    let cols: Vec<usize> = (0..side)
        .map(|d| reflect(center.1 as isize + d as isize - half, cube.width))
        .collect();
    for b in 0..cube.bands {
        let plane = cube.band(b);
        for (dy, &r) in rows.iter().enumerate() {
            let dst = &mut out[(b * side + dy) * side..][..side];
            for (d, &c) in dst.iter_mut().zip(&cols) {
                *d = plane[r * cube.width + c];
            }
        }
    }
}

/// `side x side` window centered at `center`, mirrored across image borders.
pub fn extract_patch(cube: &HyperCube, center: (usize, usize), side: usize) -> Result<Patch> {
    check_patch_request(cube, center, side)?;
    let mut window = Tensor::zeros(vec![cube.bands, side, side]);
    write_window(cube, center, side, window.data_mut());
    Ok(Patch { center, window })
}

/// Stacks patches for many centers into a `[N, bands, side, side]` batch.
pub fn gather_patches(
    cube: &HyperCube,
    centers: &[(usize, usize)],
    side: usize,
) -> Result<Tensor<f32>> {
    if centers.is_empty() {
        return Err(Error::dim("empty patch batch"));
    }
    let per = cube.bands * side * side;
    let mut batch = Tensor::zeros(vec![centers.len(), cube.bands, side, side]);
    for (i, &c) in centers.iter().enumerate() {
        check_patch_request(cube, c, side)?;
        write_window(cube, c, side, &mut batch.data_mut()[i * per..][..per]);
    }
    Ok(batch)
}

pub fn write_cube<W: Write>(w: &mut W, cube: &HyperCube) -> Result<()> {
    w.write_all(CUBE_MAGIC)?;
    write_u32(w, to_u32(cube.height, "height")?)?;
    write_u32(w, to_u32(cube.width, "width")?)?;
    write_u32(w, to_u32(cube.bands, "bands")?)?;
    write_f32s(w, &cube.data)
}

pub fn read_cube<R: Read>(r: &mut R) -> Result<HyperCube> {
    expect_magic(r, CUBE_MAGIC)?;
    let h = read_u32(r)? as usize;
    let w = read_u32(r)? as usize;
    let b = read_u32(r)? as usize;
    if h == 0 || w == 0 || b == 0 {
        return Err(Error::Format(format!("zero cube extent {h}x{w}x{b}")));
    }
    let data = read_f32s(r, h * w * b)?;
    HyperCube::new(h, w, b, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CubeFormat {
    Native,
    Envi,
}

/// Loads a cube. For ENVI, `path` may name either the header or the data file.
pub fn load_cube(path: impl AsRef<Path>, format: CubeFormat) -> Result<HyperCube> {
    match format {
        CubeFormat::Native => read_cube(&mut BufReader::new(File::open(path)?)),
        CubeFormat::Envi => load_envi(path),
    }
}

/// Writes the native `HSC1` format.
pub fn save_cube(cube: &HyperCube, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cube(&mut w, cube)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize, b: usize) -> HyperCube {
        HyperCube::new(h, w, b, (0..h * w * b).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn native_layout() {
        let mut bytes = b"HSC1".to_vec();
        for v in [2u32, 2, 1] {
            bytes.extend(v.to_le_bytes());
        }
        for v in [1f32, 2.0, 3.0, 4.0] {
            bytes.extend(v.to_le_bytes());
        }
        let cube = read_cube(&mut bytes.as_slice()).unwrap();
        assert_eq!(cube.get(0, 1, 0), 3.0);
    }

    #[test]
    fn native_errors() {
        assert!(matches!(
            read_cube(&mut &b"HSCX"[..]),
            Err(Error::Format(_))
        ));
        let mut bytes = b"HSC1".to_vec();
        for v in [2u32, 2, 1] {
            bytes.extend(v.to_le_bytes());
        }
        bytes.extend(1f32.to_le_bytes());
        assert!(matches!(
            read_cube(&mut bytes.as_slice()),
            Err(Error::Io(_))
        ));
        assert!(matches!(
            HyperCube::new(1, 1, 1, vec![f32::NAN]),
            Err(Error::Data(_))
        ));
    }

    proptest! {
        #[test]
        fn native_round_trip(h in 1usize..6, w in 1usize..6, b in 1usize..4, seed in any::<u32>()) {
            let data: Vec<f32> = (0..h * w * b)
                .map(|i| f32::from_bits((seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 40503)) & 0x3fff_ffff))
                .collect();
            let cube = HyperCube::new(h, w, b, data).unwrap();
            let mut buf = Vec::new();
            write_cube(&mut buf, &cube).unwrap();
            prop_assert_eq!(read_cube(&mut buf.as_slice()).unwrap(), cube);
        }
    }

    #[test]
    fn constant_band_stats() {
        let cube = HyperCube::new(2, 3, 1, vec![5.0; 6]).unwrap();
        let s = band_statistics(&cube);
        assert_eq!((s.mean[0], s.std[0]), (5.0, 0.0));
        let c = center_bands(&cube, &s).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
        let z = standardize_bands(&cube, &s, 1e-8).unwrap();
        assert!(z.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn two_value_band() {
        let cube = HyperCube::new(1, 2, 1, vec![1.0, 3.0]).unwrap();
        let s = band_statistics(&cube);
        assert_eq!((s.mean[0], s.std[0]), (2.0, 1.0));
        let z = standardize_bands(&cube, &s, 1e-8).unwrap();
        assert_eq!(z.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn band_count_mismatch() {
        let cube = ramp(2, 2, 2);
        let s = BandStats {
            mean: vec![0.0],
            std: vec![1.0],
        };
        assert!(matches!(center_bands(&cube, &s), Err(Error::Dimension(_))));
    }

    #[test]
    fn exclude_bands_keeps_order() {
        let cube = ramp(2, 2, 4);
        let kept = cube.exclude_bands(&[1, 2]).unwrap();
        assert_eq!(kept.bands(), 2);
        assert_eq!(kept.band(1), cube.band(3));
        assert!(cube.exclude_bands(&[4]).is_err());
    }

    #[test]
    fn reflect_rule() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(3, 1), 0);
        assert_eq!(reflect(-7, 3), 1);
    }

    #[test]
    fn interior_patch_is_plain_crop() {
        let cube = ramp(7, 8, 3);
        let p = extract_patch(&cube, (3, 4), 5).unwrap();
        for b in 0..3 {
            for dy in 0..5 {
                for dx in 0..5 {
                    assert_eq!(p.window.get(&[b, dy, dx]), cube.get(b, 1 + dy, 2 + dx));
                }
            }
        }
    }

    #[test]
    fn corner_patch_mirrors() {
        let cube = ramp(4, 4, 1);
        let p = extract_patch(&cube, (0, 0), 3).unwrap();
        assert_eq!(p.window.get(&[0, 0, 0]), cube.get(0, 1, 1));
        assert_eq!(p.window.get(&[0, 0, 1]), cube.get(0, 1, 0));
        assert_eq!(p.window.get(&[0, 1, 1]), cube.get(0, 0, 0));
    }

    #[test]
    fn patch_errors() {
        let cube = ramp(4, 4, 1);
        assert!(matches!(
            extract_patch(&cube, (0, 0), 4),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            extract_patch(&cube, (4, 0), 3),
            Err(Error::Bounds(_))
        ));
    }

    #[test]
    fn every_pixel_windows_valid() {
        let cube = ramp(7, 7, 2);
        for r in 0..7 {
            for c in 0..7 {
                let p = extract_patch(&cube, (r, c), 5).unwrap();
                assert_eq!(p.window.shape(), &[2, 5, 5]);
                assert!(p.window.is_finite());
                assert_eq!(p.window.get(&[1, 2, 2]), cube.get(1, r, c));
            }
        }
        // windows wider than the image still resolve
        let tiny = ramp(2, 3, 1);
        assert!(extract_patch(&tiny, (1, 2), 9).unwrap().window.is_finite());
    }

    #[test]
    fn gather_matches_single_extraction() {
        let cube = ramp(6, 5, 2);
        let centers = [(0, 0), (5, 4), (2, 3)];
        let batch = gather_patches(&cube, &centers, 3).unwrap();
        for (i, &c) in centers.iter().enumerate() {
            let p = extract_patch(&cube, c, 3).unwrap();
            assert_eq!(&batch.data()[i * 18..(i + 1) * 18], p.window.data());
        }
    }
}
