//! Binary PGM (P5) and PPM (P6) export for slices and heatmap overlays.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::slices::Plane;

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Grayscale plane with values in [0, 1] to 8-bit binary PGM.
pub fn write_pgm(p: &Plane, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", p.w, p.h)?;
    let bytes: Vec<u8> = p.data.iter().map(|&v| to_byte(v)).collect();
    f.write_all(&bytes)?;
    Ok(())
}

/// RGB planes with values in [0, 1] to 8-bit binary PPM.
pub fn write_ppm(r: &Plane, g: &Plane, b: &Plane, path: &Path) -> Result<()> {
    if r.h != g.h || g.h != b.h || r.w != g.w || g.w != b.w {
        return Err(Error::Shape(format!(
            "ppm channels disagree: {}x{}, {}x{}, {}x{}",
            r.h, r.w, g.h, g.w, b.h, b.w
        )));
    }
    let mut f = fs::File::create(path)?;
    write!(f, "P6\n{} {}\n255\n", r.w, r.h)?;
    let mut bytes = Vec::with_capacity(r.data.len() * 3);
    for i in 0..r.data.len() {
        bytes.push(to_byte(r.data[i]));
        bytes.push(to_byte(g.data[i]));
        bytes.push(to_byte(b.data[i]));
    }
    f.write_all(&bytes)?;
    Ok(())
}

/// Read back a binary PGM written by [`write_pgm`]; intensities return to
/// [0, 1] as value/255.
pub fn read_pgm(path: &Path) -> Result<Plane> {
    let bytes = fs::read(path)?;
    let bad = |msg: &str| Error::Format { path: path.into(), msg: msg.into() };
    // Header: "P5" WIDTH HEIGHT MAXVAL single-whitespace-separated.
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(&bytes[start..pos]);
    }
    if fields.len() != 4 || fields[0] != b"P5" {
        return Err(bad("not a binary PGM"));
    }
    let num = |f: &[u8]| -> Result<usize> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header number"))
    };
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() - pos != w * h {
        return Err(bad("pixel payload length mismatch"));
    }
    Plane::new(h, w, bytes[pos..].iter().map(|&b| b as f32 / 255.0).collect())
}
