//! Text handling and dataset files.

mod dataset;
mod synth;
mod tokenize;
mod vocab;

pub use dataset::{
    load_dataset, load_feature_records, parse_records, write_dataset, CaptionDataset, Record,
    MAX_CAPTIONS,
};
pub use synth::{synth_dataset, SynthConfig, SynthGrammar};
pub use tokenize::{tokenize, PUNCTUATION};
pub use vocab::{Vocabulary, DEFAULT_MIN_COUNT, RESERVED, START, STOP, UNK};
