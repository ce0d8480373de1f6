//! Binary PPM rendering of label maps.

use std::fs;
use std::path::Path;

use super::LabelMap;
use crate::error::{Error, Result};

/// RGB color of class `label`: black for 0, otherwise hue `label * 137.508`
/// degrees at saturation 0.8 and value 0.95.
pub fn palette_color(label: u16) -> [u8; 3] {
    if label == 0 {
        return [0, 0, 0];
    }
    let hue = (label as f64 * 137.508).rem_euclid(360.0);
    let (s, v) = (0.8, 0.95);
    let c = v * s;
    let sector = hue / 60.0;
    let x = c * (1.0 - (sector.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match sector as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to8 = |f: f64| ((f + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [to8(r), to8(g), to8(b)]
}

pub fn render_ppm(map: &LabelMap) -> Result<Vec<u8>> {
    if map.class_count() > 255 {
        return Err(Error::param(format!(
            "{} classes exceed the 255-color palette",
            map.class_count()
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.reserve(map.labels().len() * 3);
    for &l in map.labels() {
        out.extend(palette_color(l));
    }
    Ok(out)
}

pub fn export_map_image(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render_ppm(map)?)?;
    Ok(())
}
