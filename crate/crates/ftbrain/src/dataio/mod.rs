//! Volume storage, slice extraction and preprocessing, synthetic data,
//! fold planning, and image/manifest export.

pub mod folds;
pub mod image_io;
pub mod manifest;
pub mod slices;
pub mod synth;
pub mod volume;

pub use folds::{kfold_subject_split, FoldPlan};
pub use image_io::{read_pgm, write_pgm, write_ppm};
pub use manifest::{read_manifest, write_manifest, ManifestRow};
pub use slices::{extract_axial, normalize, resize_bilinear, Plane, SliceRecord};
pub use synth::synth_generate;
pub use volume::{identity_from_path, load_volume, save_volume, Label, Volume, Voxels};
