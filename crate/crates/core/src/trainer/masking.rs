use rand::Rng;

use crate::tokenizer::{PaddedBatch, Specials};

pub const MASK_RATIO: f64 = 0.15;

/// Masked-model inputs and targets for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBatch {
    pub input: PaddedBatch,
    /// Flat positions `row·cols + t` that were masked, in order.
    pub positions: Vec<usize>,
    /// Per-position target id, `pad` where the position is not scored.
    pub targets: Vec<usize>,
}

/// Masks each non-special position independently with probability `ratio`,
/// replacing it by `<mask>`. An utterance that draws no mask has one maskable
/// position forced. Special tokens and padding are never masked.
pub fn mask_batch(batch: &PaddedBatch, ratio: f64, specials: &Specials, rng: &mut impl Rng) -> MaskedBatch {
    let mut input = batch.clone();
    let mut positions = Vec::new();
    let mut targets = vec![specials.pad as usize; batch.ids.len()];
    for r in 0..batch.rows {
        let base = r * batch.cols;
        let maskable: Vec<usize> = (0..batch.lengths[r])
            .filter(|&t| !specials.is_special(batch.ids[base + t]))
            .collect();
        let mut chosen: Vec<usize> = maskable.iter().copied().filter(|_| rng.gen::<f64>() < ratio).collect();
        if chosen.is_empty() && !maskable.is_empty() {
            chosen.push(maskable[rng.gen_range(0..maskable.len())]);
        }
        for t in chosen {
            let i = base + t;
            targets[i] = batch.ids[i] as usize;
            input.ids[i] = specials.mask;
            positions.push(i);
        }
    }
    MaskedBatch {
        input,
        positions,
        targets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::pad_batch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_ratio_forces_one_mask_per_utterance() {
        let b = pad_batch(&[vec![0, 5, 6, 7, 1], vec![0, 8, 1]], 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = mask_batch(&b, 0.0, &Specials::standard(), &mut rng);
        assert_eq!(m.positions.len(), 2);
        assert!(m.positions[0] < 5 && m.positions[1] == 5 + 1);
    }

    #[test]
    fn specials_and_pads_are_never_targets() {
        let b = pad_batch(&[vec![0, 5, 2, 7, 1], vec![0, 8, 1]], 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let m = mask_batch(&b, 0.9, &Specials::standard(), &mut rng);
            for &p in &m.positions {
                assert!(b.ids[p] >= 5);
            }
        }
    }
}
