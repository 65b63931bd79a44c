//! Lower-cased word/punctuation tokenizer over a fixed vocabulary file.
//! Real-VLM backends bring their own tokenizer behind the same interface;
//! this one exists so prompts and spans are reproducible in-repo.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::{Error, Result};

const VOCAB_TEXT: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/vocab.txt"));

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

#[derive(Debug)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_lines(lines: impl Iterator<Item = String>) -> Result<Self> {
        let words: Vec<String> = lines.filter(|l| !l.is_empty()).collect();
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i as u32).is_some() {
                return Err(Error::Msg(format!("duplicate vocab entry {w}")));
            }
        }
        for special in [PAD, UNK] {
            if !index.contains_key(special) {
                return Err(Error::Msg(format!("vocab lacks {special}")));
            }
        }
        Ok(Self { words, index })
    }

    /// The vocabulary shipped in the repository (2048 entries).
    pub fn builtin() -> &'static Vocab {
        static VOCAB: OnceLock<Vocab> = OnceLock::new();
        VOCAB.get_or_init(|| {
            Vocab::from_lines(VOCAB_TEXT.lines().map(|l| l.trim().to_string()))
                .expect("builtin vocab is well formed")
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn unk_id(&self) -> u32 {
        self.index[UNK]
    }

    pub fn pad_id(&self) -> u32 {
        self.index[PAD]
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    /// Lower-cases, then splits into alphanumeric runs and single punctuation
    /// characters; whitespace separates. Unknown pieces map to `<unk>`.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let lower = text.to_lowercase();
        let mut out = Vec::new();
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut Vec<u32>| {
            if !word.is_empty() {
                out.push(self.id(word).unwrap_or_else(|| self.unk_id()));
                word.clear();
            }
        };
        for ch in lower.chars() {
            if ch.is_alphanumeric() {
                word.push(ch);
            } else {
                flush(&mut word, &mut out);
                if !ch.is_whitespace() {
                    let mut s = String::new();
                    s.push(ch);
                    out.push(self.id(&s).unwrap_or_else(|| self.unk_id()));
                }
            }
        }
        flush(&mut word, &mut out);
        out
    }

    /// Inverse of `tokenize` up to case: words joined by spaces, with the
    /// usual tightening around punctuation and joiners.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        const NO_SPACE_BEFORE: &str = ".,:;!?)'\"-/";
        const NO_SPACE_AFTER: &str = "('\"-/";
        let mut out = String::new();
        let mut suppress_space = true;
        for &id in ids {
            let w = self.word(id);
            let single = w.chars().count() == 1;
            let c = w.chars().next().unwrap_or(' ');
            let tight = single && NO_SPACE_BEFORE.contains(c);
            if !out.is_empty() && !suppress_space && !tight {
                out.push(' ');
            }
            out.push_str(w);
            suppress_space = single && NO_SPACE_AFTER.contains(c);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_vocab_loads_with_specials() {
        let v = Vocab::builtin();
        assert_eq!(v.len(), 2048);
        assert_eq!(v.word(v.pad_id()), PAD);
        assert_eq!(v.word(v.unk_id()), UNK);
    }

    #[test]
    fn round_trips_simple_sentences_lowercased() {
        let v = Vocab::builtin();
        for text in [
            "A person lifts the small box and holds it up high.",
            "The man pushes the large table down to the floor.",
            "Pull the small lamp closer, then set it back.",
            "Kick the large cylinder away and watch it slide.",
            "Rotate the small box on the spot.",
        ] {
            let ids = v.tokenize(text);
            assert!(ids.iter().all(|&i| i != v.unk_id()), "oov in {text:?}");
            assert_eq!(v.detokenize(&ids), text.to_lowercase());
        }
    }

    #[test]
    fn hyphens_and_apostrophes_join_tightly() {
        let v = Vocab::builtin();
        let ids = v.tokenize("text-to-HOI motion; the object's shape");
        assert_eq!(v.detokenize(&ids), "text-to-hoi motion; the object's shape");
    }

    #[test]
    fn unknown_words_become_unk() {
        let v = Vocab::builtin();
        let ids = v.tokenize("qwertyuiopasdf box");
        assert_eq!(ids[0], v.unk_id());
        assert_ne!(ids[1], v.unk_id());
    }

    #[test]
    fn duplicate_entries_are_rejected() {
        let lines = ["<pad>", "<unk>", "box", "box"].iter().map(|s| s.to_string());
        assert!(Vocab::from_lines(lines).is_err());
    }
}
