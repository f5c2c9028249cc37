use std::collections::HashSet;
use std::path::Path;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Word-start marker used by subword vocabularies.
pub const WORD_START: char = '\u{2581}';

/// Text to token-list function used by BLEU.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum Tokenizer {
    /// Whitespace split, with every punctuation character as its own token.
    #[default]
    WhitespacePunct,
    /// Greedy longest-match subword segmentation against a vocabulary.
    Vocab(VocabTokenizer),
}

impl Tokenizer {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::WhitespacePunct => whitespace_punct(text),
            Tokenizer::Vocab(v) => v.tokenize(text),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Tokenizer::WhitespacePunct => "whitespace+punct".to_string(),
            Tokenizer::Vocab(v) => format!("vocab:{}", v.source),
        }
    }
}

impl Serialize for Tokenizer {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

pub fn whitespace_punct(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for c in word.chars() {
            if c.is_alphanumeric() || c == '\'' && !current.is_empty() {
                current.push(c);
            } else {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.push(c.to_string());
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabTokenizer {
    source: String,
    pieces: HashSet<String>,
    max_piece_chars: usize,
}

impl VocabTokenizer {
    /// Builds from vocabulary lines; only the first tab-separated column is
    /// used, so SentencePiece `.vocab` files load directly.
    pub fn from_lines<'a>(source: &str, lines: impl IntoIterator<Item = &'a str>) -> Self {
        let pieces: HashSet<String> = lines
            .into_iter()
            .filter_map(|l| l.split('\t').next())
            .map(str::trim_end)
            .filter(|p| !p.is_empty())
            .map(str::to_string)
            .collect();
        let max_piece_chars = pieces.iter().map(|p| p.chars().count()).max().unwrap_or(1);
        VocabTokenizer {
            source: source.to_string(),
            pieces,
            max_piece_chars,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_lines(&path.display().to_string(), text.lines()))
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let chars: Vec<char> = std::iter::once(WORD_START).chain(word.chars()).collect();
            let mut i = 0;
            while i < chars.len() {
                let longest = (1..=self.max_piece_chars.min(chars.len() - i))
                    .rev()
                    .find(|&len| {
                        let piece: String = chars[i..i + len].iter().collect();
                        self.pieces.contains(&piece)
                    })
                    .unwrap_or(1);
                out.push(chars[i..i + longest].iter().collect());
                i += longest;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_splits() {
        assert_eq!(
            whitespace_punct("Hello, world! It's fine."),
            vec!["Hello", ",", "world", "!", "It's", "fine", "."]
        );
    }

    #[test]
    fn vocab_greedy_longest_match() {
        let v = VocabTokenizer::from_lines("test", ["\u{2581}the\t-1.0", "\u{2581}ca", "t", "s"]);
        assert_eq!(v.tokenize("the cats"), vec!["\u{2581}the", "\u{2581}ca", "t", "s"]);
        // unknown characters fall back to single characters
        assert_eq!(v.tokenize("xy"), vec!["\u{2581}", "x", "y"]);
    }
}
