use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::model::TokenId;
use crate::{Error, Result};

pub const START: TokenId = 0;
pub const STOP: TokenId = 1;
pub const UNK: TokenId = 2;

/// Surface forms of the reserved ids, in id order.
pub const RESERVED: [&str; 3] = ["<start>", "<stop>", "<unk>"];

pub const DEFAULT_MIN_COUNT: usize = 5;

/// Token/id map. Ids 0..3 are START, STOP and UNK; corpus tokens follow.
///
/// The content hash is the SHA-256 of the vocabulary file body (one
/// non-reserved token per line, each terminated by `\n`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    hash: String,
}

impl Vocabulary {
    /// Keep tokens seen at least `min_count` times, ordered by descending
    /// frequency then lexicographically.
    pub fn build(corpus: &[Vec<String>], min_count: usize) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::InvalidConfig("min_count must be at least 1".into()));
        }
        if corpus.iter().all(|s| s.is_empty()) {
            return Err(Error::InvalidInput(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for token in corpus.iter().flatten() {
            if !RESERVED.contains(&token.as_str()) {
                *counts.entry(token.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Vocabulary::from_words(kept.into_iter().map(|(t, _)| t.to_string()).collect())
    }

    /// Vocabulary whose non-reserved entries are `words`, in order.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index = HashMap::new();
        for word in words {
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return Err(Error::InvalidInput(format!(
                    "invalid vocabulary entry {word:?}"
                )));
            }
            if RESERVED.contains(&word.as_str()) {
                return Err(Error::InvalidInput(format!("'{word}' is a reserved token")));
            }
            if index.insert(word.clone(), tokens.len()).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate vocabulary entry '{word}'"
                )));
            }
            tokens.push(word);
        }
        let hash = hex::encode(Sha256::digest(
            file_body(&tokens[RESERVED.len()..]).as_bytes(),
        ));
        Ok(Vocabulary {
            tokens,
            index,
            hash,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::from_words(text.lines().map(str::to_string).collect())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, file_body(self.words())).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Non-reserved entries in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    /// Id of a corpus token. Reserved surface forms are not corpus tokens.
    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn is_reserved(id: TokenId) -> bool {
        id < RESERVED.len()
    }

    /// `[START] ++ ids ++ [STOP]`, unknown tokens mapped to UNK.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(START);
        ids.extend(tokens.iter().map(|t| self.id(t.as_ref()).unwrap_or(UNK)));
        ids.push(STOP);
        ids
    }

    /// Surface tokens with one leading START and one trailing STOP removed.
    /// A missing STOP (truncated output) is fine; interior sentinels are
    /// rendered by their reserved surface form.
    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        if let Some(bad) = ids.iter().find(|&&id| id >= self.len()) {
            return Err(Error::InvalidToken(format!(
                "id {bad} out of range for vocabulary of {}",
                self.len()
            )));
        }
        let mut body = ids;
        if body.first() == Some(&START) {
            body = &body[1..];
        }
        if body.last() == Some(&STOP) {
            body = &body[..body.len() - 1];
        }
        Ok(body.iter().map(|&id| self.tokens[id].clone()).collect())
    }
}

fn file_body(words: &[String]) -> String {
    words.iter().map(|w| format!("{w}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sentence(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn min_count_boundary() {
        let mut corpus = vec![sentence("cat"); 5];
        corpus.extend(vec![sentence("dog"); 4]);
        let v = Vocabulary::build(&corpus, 5).unwrap();
        assert!(v.id("cat").is_some());
        assert!(v.id("dog").is_none());
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn min_count_one_keeps_everything() {
        let corpus = vec![sentence("a b c"), sentence("c d")];
        let v = Vocabulary::build(&corpus, 1).unwrap();
        assert_eq!(v.words(), ["c", "a", "b", "d"]);
    }

    #[test]
    fn equal_frequency_breaks_lexicographically() {
        let corpus = vec![sentence("zebra apple")];
        let v = Vocabulary::build(&corpus, 1).unwrap();
        assert!(v.id("apple").unwrap() < v.id("zebra").unwrap());
        assert_eq!(v.id("apple"), Some(3));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(Vocabulary::build(&[], 1).is_err());
        assert!(Vocabulary::build(&[vec![]], 1).is_err());
        assert!(matches!(
            Vocabulary::build(&[sentence("a")], 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn reserved_forms_never_collide() {
        let corpus = vec![sentence("<start> <unk> cat")];
        let v = Vocabulary::build(&corpus, 1).unwrap();
        assert_eq!(v.words(), ["cat"]);
        assert_eq!(
            v.encode(&sentence("<start> cat")),
            vec![START, UNK, 3, STOP]
        );
    }

    #[test]
    fn encode_frames_and_maps_unknowns() {
        let v = Vocabulary::build(&[sentence("a b")], 1).unwrap();
        assert_eq!(v.encode::<String>(&[]), vec![START, STOP]);
        let ids = v.encode(&sentence("a zzz b"));
        assert_eq!(ids, vec![START, 3, UNK, 4, STOP]);
    }

    #[test]
    fn decode_strips_sentinels() {
        let v = Vocabulary::build(&[sentence("a b")], 1).unwrap();
        assert!(v.decode(&[START, STOP]).unwrap().is_empty());
        assert_eq!(v.decode(&[START, 3, 4]).unwrap(), ["a", "b"]);
        assert_eq!(
            v.decode(&[START, 3, STOP, 4, STOP]).unwrap(),
            ["a", "<stop>", "b"]
        );
        assert!(matches!(
            v.decode(&[START, 99]),
            Err(Error::InvalidToken(_))
        ));
    }

    #[test]
    fn file_round_trip_preserves_hash() {
        let v = Vocabulary::build(&[sentence("the cat sat on the mat")], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vocab");
        v.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "the\ncat\nmat\non\nsat\n");
        let back = Vocabulary::read(&path).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
    }

    #[test]
    fn rebuild_is_stable() {
        let corpus = vec![sentence("b a c a b a"), sentence("c d e")];
        assert_eq!(
            Vocabulary::build(&corpus, 1).unwrap(),
            Vocabulary::build(&corpus, 1).unwrap()
        );
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(words in prop::collection::vec("[a-e]{1,3}", 0..12)) {
            let v = Vocabulary::build(&[words.clone(), vec!["x".into()]], 1).unwrap();
            let ids = v.encode(&words);
            prop_assert!(ids.iter().all(|&id| id < v.len()));
            prop_assert_eq!(v.decode(&ids).unwrap(), words);
        }

        #[test]
        fn min_count_excludes_exactly_rare_tokens(counts in prop::collection::vec(1usize..9, 1..8)) {
            let corpus: Vec<Vec<String>> = counts
                .iter()
                .enumerate()
                .flat_map(|(i, &c)| std::iter::repeat_n(vec![format!("t{i}")], c))
                .collect();
            let v = Vocabulary::build(&corpus, 5).unwrap_or_else(|_| unreachable!());
            for (i, &c) in counts.iter().enumerate() {
                prop_assert_eq!(v.id(&format!("t{i}")).is_some(), c >= 5);
            }
        }
    }
}
