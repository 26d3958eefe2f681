//! Rank one subject's axial slices by histogram entropy.
//!
//! Slices near the volume edges are mostly background and carry little
//! information; central slices cut through structure and score higher.
//! The example prints the full ranking and the indices the selector would
//! keep at k = 8.
//!
//! ```bash
//! cargo run --example entropy_selection
//! ```

use ftbrain::dataio::{extract_axial, normalize};
use ftbrain::entropy::{image_entropy, rank_slices, select_top_k};
use ftbrain::train::synth_cohort;

fn main() -> ftbrain::Result<()> {
    let cohort = synth_cohort(1, (24, 48, 48), 5)?;
    let volume = &cohort[0];
    println!("subject {} ({:?}), {} axial slices", volume.subject_id, volume.label, volume.dims.0);

    let mut slices = extract_axial(volume);
    for rec in slices.iter_mut() {
        normalize(rec);
    }
    let ranking = rank_slices(&mut slices)?;

    println!("rank  slice  entropy_bits");
    for (rank, (index, bits)) in ranking.entries.iter().enumerate() {
        println!("{:>4}  {:>5}  {:>12.4}", rank + 1, index, bits);
    }

    let kept = select_top_k(&ranking, 8)?;
    let kept: Vec<usize> = kept.into_iter().collect();
    println!("top 8 by entropy: {kept:?}");

    // A flat slice has a one-bin histogram, so zero bits.
    let flat = vec![0.5f32; 16];
    println!("blank slice entropy: {} bits", image_entropy(&flat)?);
    Ok(())
}
