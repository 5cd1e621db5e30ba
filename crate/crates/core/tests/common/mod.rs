#![allow(dead_code)]

use patclass::corpus::{Vocabulary, MASK_TOKEN, PAD_TOKEN};
use patclass::history::HistoryNode;
use patclass::synth::synthetic_taxonomy;
use patclass::{Example, ModelConfig, Taxonomy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Three-level 2/4/8 taxonomy.
pub fn mini_taxonomy() -> Taxonomy {
    synthetic_taxonomy(&[2, 4, 8]).unwrap()
}

/// 20 entries including MASK and PAD.
pub fn mini_vocab() -> Vocabulary {
    let mut words = vec![MASK_TOKEN.to_string(), PAD_TOKEN.to_string()];
    words.extend((0..18).map(|i| format!("w{i}")));
    Vocabulary::from_words(words).unwrap()
}

/// T=4, F=3, N=5, D=4, s=2, I=2, no dropout.
pub fn mini_config() -> ModelConfig {
    ModelConfig {
        word_dim: 4,
        hidden: 3,
        max_words: 5,
        history_len: 4,
        window: 2,
        gcn_layers: 2,
        level: 3,
        batch_size: 4,
        dropout: 0.0,
        seed: 11,
        min_count: 1,
        ..ModelConfig::default()
    }
}

/// Random examples over `codes` labels with histories of varying length
/// (including an empty one).
pub fn mini_examples(n: usize, codes: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        let len = rng.random_range(1..=5);
        (0..len)
            .map(|_| match rng.random_range(0..20) {
                1 => 2,
                w => w,
            })
            .collect()
    };
    let labels = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        let mut l: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(0..codes)).collect();
        l.sort_unstable();
        l.dedup();
        l
    };
    (0..n)
        .map(|i| Example {
            id: format!("e{i}"),
            words: words(&mut rng),
            history: (0..(i % 5).min(4))
                .map(|_| HistoryNode {
                    words: words(&mut rng),
                    labels: labels(&mut rng),
                })
                .collect(),
            labels: labels(&mut rng),
        })
        .collect()
}
