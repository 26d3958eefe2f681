//! The dataset manifest: one CSV row per selected slice.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::volume::Label;

pub const MANIFEST_HEADER: &str = "subject_id,label,slice_index,entropy_bits,path";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub subject_id: String,
    pub label: Label,
    pub slice_index: usize,
    pub entropy_bits: f64,
    pub path: String,
}

pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<()> {
    for row in rows {
        for (field, what) in [(&row.subject_id, "subject_id"), (&row.path, "path")] {
            if field.contains(',') || field.contains('\n') {
                return Err(Error::Data(format!("manifest {what} {field:?} contains a delimiter")));
            }
        }
    }
    let mut f = fs::File::create(path)?;
    writeln!(f, "{MANIFEST_HEADER}")?;
    for row in rows {
        // Float Display is shortest-round-trip, so read_manifest recovers
        // the exact entropy value.
        writeln!(
            f,
            "{},{},{},{},{}",
            row.subject_id, row.label, row.slice_index, row.entropy_bits, row.path
        )?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path)?;
    let bad = |line: usize, msg: String| Error::Format {
        path: path.into(),
        msg: format!("line {}: {msg}", line + 1),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, head)) if head == MANIFEST_HEADER => {}
        _ => return Err(bad(0, format!("expected header {MANIFEST_HEADER:?}"))),
    }
    let mut rows = Vec::new();
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad(ln, format!("expected 5 fields, got {}", fields.len())));
        }
        rows.push(ManifestRow {
            subject_id: fields[0].to_string(),
            label: Label::parse(fields[1])?,
            slice_index: fields[2].parse().map_err(|e| bad(ln, format!("slice_index: {e}")))?,
            entropy_bits: fields[3].parse().map_err(|e| bad(ln, format!("entropy_bits: {e}")))?,
            path: fields[4].to_string(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            ManifestRow {
                subject_id: "s001".into(),
                label: Label::Ad,
                slice_index: 23,
                entropy_bits: 1.5,
                path: "slices/s001_023.pgm".into(),
            },
            ManifestRow {
                subject_id: "s002".into(),
                label: Label::Nc,
                slice_index: 7,
                entropy_bits: 4.837162517364,
                path: "slices/s002_007.pgm".into(),
            },
        ];
        let path = dir.path().join("manifest.csv");
        write_manifest(&rows, &path).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), rows);
    }

    #[test]
    fn header_and_field_count_are_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "wrong,header\n").unwrap();
        assert!(read_manifest(&path).is_err());
        std::fs::write(&path, format!("{MANIFEST_HEADER}\na,AD,1\n")).unwrap();
        assert!(read_manifest(&path).is_err());
    }

    #[test]
    fn delimiter_in_fields_is_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![ManifestRow {
            subject_id: "s,1".into(),
            label: Label::Ad,
            slice_index: 0,
            entropy_bits: 0.0,
            path: "p".into(),
        }];
        assert!(write_manifest(&rows, &dir.path().join("m.csv")).is_err());
    }
}
