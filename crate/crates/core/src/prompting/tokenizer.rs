use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

/// Tokenizer contract used by rendering, training and generation.
///
/// `decode` drops BOS/EOS/PAD so that decoding a target span yields its text.
pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Vec<u32>;
    fn decode(&self, ids: &[u32]) -> String;
    fn vocab_size(&self) -> usize;
    fn bos(&self) -> u32;
    fn eos(&self) -> u32;
    fn pad(&self) -> u32;
}

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

/// Lowercased word/punctuation tokenizer with a corpus-built vocabulary.
///
/// Runs of alphanumeric characters form one token; every other
/// non-whitespace character is a token of its own.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct WordTokenizer {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    vocab: Vec<String>,
}

impl From<VocabFile> for WordTokenizer {
    fn from(v: VocabFile) -> Self {
        Self::from_vocab(v.vocab)
    }
}

impl From<WordTokenizer> for VocabFile {
    fn from(t: WordTokenizer) -> Self {
        VocabFile { vocab: t.vocab }
    }
}

pub fn pieces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

impl WordTokenizer {
    pub const PAD_ID: u32 = 0;
    pub const BOS_ID: u32 = 1;
    pub const EOS_ID: u32 = 2;
    pub const UNK_ID: u32 = 3;

    /// Builds a vocabulary from every piece in `texts`, sorted for determinism.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts.into_iter().flat_map(pieces).collect();
        let vocab = [PAD, BOS, EOS, UNK]
            .into_iter()
            .map(str::to_string)
            .chain(
                words
                    .into_iter()
                    .filter(|w| ![PAD, BOS, EOS, UNK].contains(&w.as_str())),
            )
            .collect();
        Self::from_vocab(vocab)
    }

    /// `vocab` must start with the four special tokens in PAD, BOS, EOS, UNK order.
    pub fn from_vocab(vocab: Vec<String>) -> Self {
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Self { vocab, index }
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }
}

impl Tokenizer for WordTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        pieces(text)
            .into_iter()
            .map(|p| self.index.get(&p).copied().unwrap_or(Self::UNK_ID))
            .collect()
    }

    fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| !matches!(id, Self::PAD_ID | Self::BOS_ID | Self::EOS_ID))
            .map(|&id| self.token(id).unwrap_or(UNK))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn bos(&self) -> u32 {
        Self::BOS_ID
    }

    fn eos(&self) -> u32 {
        Self::EOS_ID
    }

    fn pad(&self) -> u32 {
        Self::PAD_ID
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_words_and_punctuation() {
        assert_eq!(
            pieces("The V-22, in 2002."),
            ["the", "v", "-", "22", ",", "in", "2002", "."]
        );
        assert!(pieces("  \n ").is_empty());
    }

    #[test]
    fn specials_come_first_and_unknowns_map_to_unk() {
        let tok = WordTokenizer::build(["b a", "c"]);
        assert_eq!(&tok.vocab()[..4], [PAD, BOS, EOS, UNK]);
        assert_eq!(tok.encode("a zebra"), [4, WordTokenizer::UNK_ID]);
        assert_eq!(tok.decode(&[1, 4, 5, 2, 0]), "a b");
    }

    #[test]
    fn vocab_serializes_as_list() {
        let tok = WordTokenizer::build(["x y"]);
        let json = serde_json::to_string(&tok).unwrap();
        assert_eq!(json, r#"{"vocab":["<pad>","<bos>","<eos>","<unk>","x","y"]}"#);
        let back: WordTokenizer = serde_json::from_str(&json).unwrap();
        assert_eq!(back, tok);
    }

    proptest! {
        #[test]
        fn encode_decode_is_identity_up_to_spacing(text in "[A-Za-z0-9 ,.?!-]{0,40}") {
            let tok = WordTokenizer::build([text.as_str()]);
            let ids = tok.encode(&text);
            prop_assert!(!ids.contains(&WordTokenizer::UNK_ID));
            prop_assert!(!ids.contains(&tok.pad()));
            let decoded = tok.decode(&ids);
            prop_assert_eq!(tok.encode(&decoded), ids);
            prop_assert_eq!(pieces(&decoded), pieces(&text));
        }
    }
}
