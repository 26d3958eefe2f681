//! Axial slice extraction and 2-D preprocessing (resize, normalize).

use crate::error::{Error, Result};

use super::volume::{Label, Volume, Voxels};

/// A single-channel 2-D image, row-major f32.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Shape(format!("plane {h}x{w} needs {} pixels, got {}", h * w, data.len())));
        }
        Ok(Self { h, w, data })
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }
}

/// One axial slice plus its provenance. `entropy_bits` stays 0 until the
/// ranking step fills it in; `raw_u8` records whether pixels still hold
/// 8-bit intensities (0..255) rather than normalized values.
#[derive(Debug, Clone)]
pub struct SliceRecord {
    pub subject_id: String,
    pub label: Label,
    pub slice_index: usize,
    pub entropy_bits: f64,
    pub pixels: Plane,
    pub raw_u8: bool,
}

/// One record per z index; pixels are the raw (y, x) plane.
pub fn extract_axial(v: &Volume) -> Vec<SliceRecord> {
    let (z, y, x) = v.dims;
    (0..z)
        .map(|zi| SliceRecord {
            subject_id: v.subject_id.clone(),
            label: v.label,
            slice_index: zi,
            entropy_bits: 0.0,
            pixels: Plane { h: y, w: x, data: v.plane_f32(zi) },
            raw_u8: matches!(v.voxels, Voxels::U8(_)),
        })
        .collect()
}

/// Bilinear resize under the half-pixel-center convention:
/// src = (dst + 0.5) * (in/out) - 0.5, clamped to the valid range.
pub fn resize_bilinear(p: &Plane, out_h: usize, out_w: usize) -> Result<Plane> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!("resize target {out_h}x{out_w} must be positive")));
    }
    let sy = p.h as f32 / out_h as f32;
    let sx = p.w as f32 / out_w as f32;
    let mut data = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (p.h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(p.h - 1);
        let ty = fy - y0 as f32;
        for ox in 0..out_w {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (p.w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(p.w - 1);
            let tx = fx - x0 as f32;
            let top = p.at(y0, x0) * (1.0 - tx) + p.at(y0, x1) * tx;
            let bot = p.at(y1, x0) * (1.0 - tx) + p.at(y1, x1) * tx;
            data.push(top * (1.0 - ty) + bot * ty);
        }
    }
    Plane::new(out_h, out_w, data)
}

/// Bring pixels into [0, 1]: 8-bit intensities divide by 255, float data is
/// min-max scaled per slice, and a constant float slice becomes all zeros.
pub fn normalize(rec: &mut SliceRecord) {
    if rec.raw_u8 {
        for v in &mut rec.pixels.data {
            *v /= 255.0;
        }
        rec.raw_u8 = false;
        return;
    }
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in &rec.pixels.data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = hi - lo;
    if range <= 0.0 {
        rec.pixels.data.iter_mut().for_each(|v| *v = 0.0);
    } else {
        rec.pixels.data.iter_mut().for_each(|v| *v = (*v - lo) / range);
    }
}
