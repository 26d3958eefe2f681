//! Histogram entropy scoring and informative-slice selection.
//!
//! Slices are scored by the Shannon entropy of their 256-bin intensity
//! histogram, measured in bits. Near-empty planes score near zero and
//! anatomy-rich planes score high, so keeping the top-k slices of each
//! volume filters the training set down to its informative core.

use std::collections::BTreeSet;

use crate::dataio::SliceRecord;
use crate::error::{Error, Result};

/// Bin count, matching 8-bit source intensities.
pub const HISTOGRAM_BINS: usize = 256;

/// Per-subject slice ranking, entropy descending. Ties are ordered by
/// ascending slice index so the ranking is a pure function of the pixel
/// data.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyRanking {
    pub subject_id: String,
    /// (slice_index, entropy_bits), non-increasing in entropy.
    pub entries: Vec<(usize, f64)>,
}

/// Counts pixels into 256 equal-width bins on [0,1]. The last bin is
/// right-inclusive; out-of-range values clamp into the end bins.
pub fn histogram(pixels: &[f32]) -> [u32; HISTOGRAM_BINS] {
    let mut counts = [0u32; HISTOGRAM_BINS];
    for &p in pixels {
        let bin = (p as f64 * HISTOGRAM_BINS as f64).floor() as isize;
        let bin = bin.clamp(0, HISTOGRAM_BINS as isize - 1) as usize;
        counts[bin] += 1;
    }
    counts
}

/// Shannon entropy of the slice's intensity histogram, in bits.
/// Empty bins contribute nothing (0 log 0 = 0).
pub fn image_entropy(pixels: &[f32]) -> Result<f64> {
    if pixels.is_empty() {
        return Err(Error::Data("image_entropy on empty slice".into()));
    }
    let counts = histogram(pixels);
    let total = pixels.len() as f64;
    let mut acc = 0.0f64;
    for &count in counts.iter() {
        if count > 0 {
            let p = count as f64 / total;
            acc += p * p.log2();
        }
    }
    // 0.0 - acc instead of -acc: a single-bin histogram gives acc = +0.0,
    // and negation alone would return -0.0.
    Ok(0.0 - acc)
}

/// Scores every slice of one subject's volume and returns them entropy
/// descending. Also writes each computed entropy back into its record so
/// downstream manifests carry the value.
pub fn rank_slices(slices: &mut [SliceRecord]) -> Result<EntropyRanking> {
    let first = slices
        .first()
        .ok_or_else(|| Error::Data("rank_slices needs at least one slice".into()))?;
    let subject_id = first.subject_id.clone();

    let mut entries = Vec::with_capacity(slices.len());
    let mut seen = BTreeSet::new();
    for rec in slices.iter_mut() {
        if rec.subject_id != subject_id {
            return Err(Error::Data(format!(
                "rank_slices got slices from both {subject_id} and {}",
                rec.subject_id
            )));
        }
        if !seen.insert(rec.slice_index) {
            return Err(Error::Data(format!(
                "duplicate slice index {} for subject {subject_id}",
                rec.slice_index
            )));
        }
        let h = image_entropy(&rec.pixels.data)?;
        rec.entropy_bits = h;
        entries.push((rec.slice_index, h));
    }
    // Entropies are finite by construction, so total_cmp is a plain
    // numeric order here.
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(EntropyRanking { subject_id, entries })
}

/// Indices of the first min(k, n) ranking entries.
pub fn select_top_k(ranking: &EntropyRanking, k: usize) -> Result<BTreeSet<usize>> {
    if k == 0 {
        return Err(Error::Config("select_top_k requires k >= 1".into()));
    }
    Ok(ranking.entries.iter().take(k).map(|&(idx, _)| idx).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{extract_axial, normalize, synth_generate, Label, Plane};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(subject: &str, index: usize, pixels: Vec<f32>) -> SliceRecord {
        let n = pixels.len();
        SliceRecord {
            subject_id: subject.into(),
            label: Label::Nc,
            slice_index: index,
            entropy_bits: 0.0,
            pixels: Plane::new(1, n, pixels).unwrap(),
            raw_u8: false,
        }
    }

    #[test]
    fn histogram_hand_binning() {
        let counts = histogram(&[0.0, 0.0, 0.5, 1.0]);
        assert_eq!(counts[0], 2);
        assert_eq!(counts[128], 1);
        assert_eq!(counts[255], 1);
        assert_eq!(counts.iter().sum::<u32>(), 4);

        let zeros = histogram(&[0.0; 37]);
        assert_eq!(zeros[0], 37);
        assert_eq!(zeros.iter().sum::<u32>(), 37);
    }

    #[test]
    fn entropy_hand_values() {
        // Single symbol, fair coin, and the {1/2, 1/4, 1/4} distribution.
        assert_eq!(image_entropy(&[0.25; 64]).unwrap(), 0.0);
        assert!(image_entropy(&[0.25; 64]).unwrap().is_sign_positive());
        assert_eq!(image_entropy(&[0.0, 1.0, 0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(image_entropy(&[0.0, 0.0, 0.5, 1.0]).unwrap(), 1.5);
        assert!(image_entropy(&[]).is_err());
    }

    #[test]
    fn entropy_peaks_at_eight_bits_for_uniform_histogram() {
        let pixels: Vec<f32> = (0..256).map(|i| (i as f32 + 0.5) / 256.0).collect();
        assert_eq!(image_entropy(&pixels).unwrap(), 8.0);
    }

    #[test]
    fn ranking_singleton_and_tie_rule() {
        let mut one = vec![record("s", 5, vec![0.1, 0.9])];
        let ranking = rank_slices(&mut one).unwrap();
        assert_eq!(ranking.entries, vec![(5, 1.0)]);
        assert_eq!(one[0].entropy_bits, 1.0);

        // Identical slices tie everywhere; order must be ascending index
        // even when the input arrives shuffled.
        let mut same: Vec<SliceRecord> =
            [3usize, 0, 2, 1].iter().map(|&i| record("s", i, vec![0.2, 0.8])).collect();
        let ranking = rank_slices(&mut same).unwrap();
        let order: Vec<usize> = ranking.entries.iter().map(|e| e.0).collect();
        assert_eq!(order, vec![0, 1, 2, 3]);
    }

    #[test]
    fn ranking_rejects_mixed_subjects_and_duplicate_indices() {
        let mut mixed = vec![record("a", 0, vec![0.5]), record("b", 1, vec![0.5])];
        assert!(rank_slices(&mut mixed).is_err());
        let mut dup = vec![record("a", 0, vec![0.5]), record("a", 0, vec![0.6])];
        assert!(rank_slices(&mut dup).is_err());
        assert!(rank_slices(&mut []).is_err());
    }

    #[test]
    fn ranking_matches_sort_oracle_on_synthetic_volumes() {
        // Independent oracle: compute entropies separately, then stable-sort
        // indices on (descending entropy, ascending index).
        let mut rng = ChaCha8Rng::seed_from_u64(901);
        for vol in 0..100 {
            let label = Label::ALL[vol % 3];
            let volume = synth_generate(label, rng.gen(), (24, 24, 24)).unwrap();
            let mut slices = extract_axial(&volume);
            for s in &mut slices {
                normalize(s);
            }

            let oracle_h: Vec<f64> =
                slices.iter().map(|s| image_entropy(&s.pixels.data).unwrap()).collect();
            let mut oracle_order: Vec<usize> = (0..slices.len()).collect();
            oracle_order.sort_by(|&a, &b| oracle_h[b].total_cmp(&oracle_h[a]).then(a.cmp(&b)));

            let ranking = rank_slices(&mut slices).unwrap();
            let got: Vec<(usize, f64)> = ranking.entries.clone();
            let want: Vec<(usize, f64)> =
                oracle_order.iter().map(|&i| (i, oracle_h[i])).collect();
            assert_eq!(got, want, "volume {vol} ranking diverged from oracle");
        }
    }

    #[test]
    fn top_k_selection_contract() {
        let mut slices: Vec<SliceRecord> = (0..6)
            .map(|i| {
                let v = i as f32 / 10.0;
                record("s", i, vec![0.0, v, v * 2.0, 1.0])
            })
            .collect();
        let ranking = rank_slices(&mut slices).unwrap();
        assert!(select_top_k(&ranking, 0).is_err());
        assert_eq!(select_top_k(&ranking, 3).unwrap().len(), 3);
        let all = select_top_k(&ranking, 100).unwrap();
        assert_eq!(all, (0..6).collect::<BTreeSet<_>>());
    }

    #[test]
    fn top_8_skips_empty_boundary_slices() {
        let volume = synth_generate(Label::Ad, 77, (32, 48, 48)).unwrap();
        let mut slices = extract_axial(&volume);
        for s in &mut slices {
            normalize(s);
        }
        let ranking = rank_slices(&mut slices).unwrap();
        let top = select_top_k(&ranking, 8).unwrap();
        assert!(!top.contains(&0));
        assert!(!top.contains(&31));
        // Boundary planes are all background, so their entropy is zero and
        // anything selected over them is strictly more informative.
        for &idx in &top {
            let h = ranking.entries.iter().find(|e| e.0 == idx).unwrap().1;
            assert!(h > 0.0);
        }
    }

    proptest! {
        #[test]
        fn entropy_bounded_and_permutation_invariant(
            pixels in proptest::collection::vec(0.0f32..=1.0, 1..300),
            seed in 0u64..1000,
        ) {
            let h = image_entropy(&pixels).unwrap();
            prop_assert!(h >= 0.0);
            prop_assert!(h <= 8.0);

            let mut shuffled = pixels.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.gen_range(0..=i));
            }
            let h2 = image_entropy(&shuffled).unwrap();
            prop_assert!(h.to_bits() == h2.to_bits());
        }

        #[test]
        fn top_k_selections_nest(
            planes in proptest::collection::vec(
                proptest::collection::vec(0.0f32..=1.0, 16),
                1..20,
            ),
            k1 in 1usize..25,
            k2 in 1usize..25,
        ) {
            let (k1, k2) = (k1.min(k2), k1.max(k2));
            let mut slices: Vec<SliceRecord> = planes
                .into_iter()
                .enumerate()
                .map(|(i, p)| record("s", i, p))
                .collect();
            let ranking = rank_slices(&mut slices).unwrap();
            let small = select_top_k(&ranking, k1).unwrap();
            let large = select_top_k(&ranking, k2).unwrap();
            prop_assert!(small.is_subset(&large));
        }
    }
}
