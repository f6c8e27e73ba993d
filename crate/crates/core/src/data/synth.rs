//! Synthetic caption corpora with a known image/text dependency.
//!
//! The grammar has `B = min(feature_dim, vocab_words)` branches. Word `j`
//! belongs to branch `j % B`, and word `b` is the head word of branch `b`.
//! Image `i` is assigned branch `i % B`: its features are uniform in
//! `[-1, 1]` except coordinate `b`, which is set to 1.5, so the branch is
//! the argmax of the first `B` coordinates. Each caption starts with the
//! branch head word and continues with words drawn uniformly from the
//! branch's pool.

use super::{CaptionDataset, Record, MAX_CAPTIONS};
use crate::numerics::Rng;
use crate::{Error, Result};

const WORD_LIST: [&str; 40] = [
    "dog", "cat", "man", "woman", "horse", "bird", "boat", "car", "tree", "ball", "grass", "water",
    "street", "table", "pizza", "train", "bike", "kite", "beach", "snow", "sits", "runs", "jumps",
    "holds", "eats", "rides", "flies", "stands", "red", "small", "large", "white", "green", "old",
    "wooden", "near", "under", "over", "behind", "field",
];

const DESIGNATED_VALUE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_images: usize,
    pub feature_dim: usize,
    pub vocab_words: usize,
    /// Inclusive word-count range per caption.
    pub sentence_len: (usize, usize),
    /// Inclusive caption-count range per image, within 1..=5.
    pub captions_per_image: (usize, usize),
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let positive = self.num_images > 0 && self.feature_dim > 0 && self.vocab_words > 0;
        let (lmin, lmax) = self.sentence_len;
        let (cmin, cmax) = self.captions_per_image;
        if !positive || lmin == 0 || lmin > lmax || cmin == 0 || cmin > cmax || cmax > MAX_CAPTIONS
        {
            return Err(Error::InvalidConfig(format!(
                "invalid synthetic dataset config {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthGrammar {
    words: Vec<String>,
    branches: usize,
}

impl SynthGrammar {
    pub fn new(feature_dim: usize, vocab_words: usize) -> Self {
        let words = (0..vocab_words)
            .map(|j| match WORD_LIST.get(j) {
                Some(w) => w.to_string(),
                None => format!("w{j}"),
            })
            .collect();
        SynthGrammar {
            words,
            branches: feature_dim.min(vocab_words).max(1),
        }
    }

    pub fn num_branches(&self) -> usize {
        self.branches
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Branch encoded by a feature vector: argmax over the first
    /// `num_branches` coordinates, lowest index on ties.
    pub fn branch_of(&self, features: &[f64]) -> usize {
        let mut best = 0;
        for (b, &v) in features.iter().enumerate().take(self.branches) {
            if v > features[best] {
                best = b;
            }
        }
        best
    }

    pub fn pool(&self, branch: usize) -> Vec<&str> {
        self.words
            .iter()
            .enumerate()
            .filter(|(j, _)| j % self.branches == branch)
            .map(|(_, w)| w.as_str())
            .collect()
    }

    pub fn caption(&self, branch: usize, len: usize, rng: &mut Rng) -> String {
        let pool = self.pool(branch);
        let mut words = vec![pool[0]];
        for _ in 1..len {
            words.push(pool[rng.below(pool.len())]);
        }
        words.join(" ")
    }
}

pub fn synth_dataset(config: &SynthConfig, rng: &mut Rng) -> Result<CaptionDataset> {
    config.validate()?;
    let grammar = SynthGrammar::new(config.feature_dim, config.vocab_words);
    let range = |(lo, hi): (usize, usize), rng: &mut Rng| lo + rng.below(hi - lo + 1);
    let records = (0..config.num_images)
        .map(|i| {
            let branch = i % grammar.num_branches();
            let mut features: Vec<f64> = (0..config.feature_dim)
                .map(|_| rng.uniform(-1.0, 1.0))
                .collect();
            features[branch] = DESIGNATED_VALUE;
            let count = range(config.captions_per_image, rng);
            let captions = (0..count)
                .map(|_| {
                    let len = range(config.sentence_len, rng);
                    grammar.caption(branch, len, rng)
                })
                .collect();
            Record {
                image_id: format!("img{i:04}"),
                features,
                captions,
            }
        })
        .collect();
    Ok(CaptionDataset {
        feature_dim: config.feature_dim,
        records,
    })
}
