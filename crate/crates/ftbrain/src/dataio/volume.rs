//! Volumes and the MVOL on-disk format.
//!
//! MVOL layout: magic "MVOL" | u32-LE z, y, x | u32-LE dtype (0 = u8,
//! 1 = f32-LE) | raw voxels, z-major then y then x. Subject identity and
//! class label ride on the filename as `<subject_id>__<LABEL>.mvol`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "AD")]
    Ad,
    #[serde(rename = "MCI")]
    Mci,
    #[serde(rename = "NC")]
    Nc,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Ad, Label::Mci, Label::Nc];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Ad => "AD",
            Label::Mci => "MCI",
            Label::Nc => "NC",
        }
    }

    pub fn parse(s: &str) -> Result<Label> {
        match s {
            "AD" => Ok(Label::Ad),
            "MCI" => Ok(Label::Mci),
            "NC" => Ok(Label::Nc),
            other => Err(Error::Data(format!("unknown label {other:?}, expected AD|MCI|NC"))),
        }
    }

    /// Severity scaling used by the synthetic generator.
    pub fn severity(self) -> f32 {
        match self {
            Label::Nc => 1.0,
            Label::Mci => 1.3,
            Label::Ad => 1.6,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Voxels {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl Voxels {
    pub fn len(&self) -> usize {
        match self {
            Voxels::U8(v) => v.len(),
            Voxels::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A z-major voxel grid tagged with subject identity and class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub subject_id: String,
    pub label: Label,
    /// (z, y, x); slice count is z.
    pub dims: (usize, usize, usize),
    pub voxels: Voxels,
}

impl Volume {
    pub fn new(subject_id: String, label: Label, dims: (usize, usize, usize), voxels: Voxels) -> Result<Self> {
        let expect = dims
            .0
            .checked_mul(dims.1)
            .and_then(|v| v.checked_mul(dims.2))
            .ok_or_else(|| Error::Data(format!("volume dims {dims:?} overflow")))?;
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
            return Err(Error::Data(format!("volume dims {dims:?} must be positive")));
        }
        if voxels.len() != expect {
            return Err(Error::Data(format!(
                "volume {subject_id}: {} voxels, dims {dims:?} require {expect}",
                voxels.len()
            )));
        }
        Ok(Self { subject_id, label, dims, voxels })
    }

    /// `<subject_id>__<LABEL>.mvol`, the name `load_volume` parses back.
    pub fn standard_filename(&self) -> String {
        format!("{}__{}.mvol", self.subject_id, self.label)
    }

    /// One axial plane (y, x) at height z, widened to f32.
    pub fn plane_f32(&self, z: usize) -> Vec<f32> {
        let plane = self.dims.1 * self.dims.2;
        match &self.voxels {
            Voxels::U8(v) => v[z * plane..(z + 1) * plane].iter().map(|&b| b as f32).collect(),
            Voxels::F32(v) => v[z * plane..(z + 1) * plane].to_vec(),
        }
    }
}

const MAGIC: &[u8; 4] = b"MVOL";

pub fn save_volume(v: &Volume, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(MAGIC)?;
    let (z, y, x) = v.dims;
    for d in [z, y, x] {
        let d = u32::try_from(d)
            .map_err(|_| Error::Format { path: path.into(), msg: format!("dim {d} exceeds u32") })?;
        f.write_all(&d.to_le_bytes())?;
    }
    match &v.voxels {
        Voxels::U8(data) => {
            f.write_all(&0u32.to_le_bytes())?;
            f.write_all(data)?;
        }
        Voxels::F32(data) => {
            f.write_all(&1u32.to_le_bytes())?;
            let mut buf = Vec::with_capacity(data.len() * 4);
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            f.write_all(&buf)?;
        }
    }
    Ok(())
}

/// Parse `<subject_id>__<LABEL>` out of a file stem.
pub fn identity_from_path(path: &Path) -> Result<(String, Label)> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Format { path: path.into(), msg: "unreadable file name".into() })?;
    let (id, label) = stem.rsplit_once("__").ok_or_else(|| Error::Format {
        path: path.into(),
        msg: format!("file stem {stem:?} is not <subject_id>__<LABEL>"),
    })?;
    Ok((id.to_string(), Label::parse(label)?))
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let (subject_id, label) = identity_from_path(path)?;
    let mut f = fs::File::open(path)?;
    let mut head = [0u8; 4 + 4 * 4];
    f.read_exact(&mut head)
        .map_err(|_| Error::Format { path: path.into(), msg: "truncated header".into() })?;
    if &head[0..4] != MAGIC {
        return Err(Error::Format { path: path.into(), msg: "bad magic, not an MVOL file".into() });
    }
    let word = |i: usize| u32::from_le_bytes(head[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (z, y, x, dtype) = (word(0), word(1), word(2), word(3));
    let count = z
        .checked_mul(y)
        .and_then(|v| v.checked_mul(x))
        .ok_or_else(|| Error::Format { path: path.into(), msg: format!("dims {z}x{y}x{x} overflow") })?;

    let mut body = Vec::new();
    f.read_to_end(&mut body)?;
    let elem = match dtype {
        0 => 1,
        1 => 4,
        other => {
            return Err(Error::Format { path: path.into(), msg: format!("unknown dtype {other}") })
        }
    };
    if body.len() != count * elem {
        return Err(Error::Format {
            path: path.into(),
            msg: format!("dims {z}x{y}x{x} require {} bytes of voxels, found {}", count * elem, body.len()),
        });
    }
    let voxels = match dtype {
        0 => Voxels::U8(body),
        _ => Voxels::F32(
            body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
    };
    Volume::new(subject_id, label, (z, y, x), voxels)
}
