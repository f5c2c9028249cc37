//! Character n-gram language identification using rank-order
//! ("out-of-place") distance between n-gram frequency rankings.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::LangTag;

pub const MAX_NGRAM: usize = 3;
pub const PROFILE_SIZE: usize = 300;

/// Texts with fewer letters than this are flagged indeterminate.
const MIN_LETTERS: usize = 3;

const BUILTIN: &[(&str, &str)] = &[
    ("de", include_str!("../../data/langid/de.txt")),
    ("en", include_str!("../../data/langid/en.txt")),
    ("es", include_str!("../../data/langid/es.txt")),
    ("fr", include_str!("../../data/langid/fr.txt")),
    ("ru", include_str!("../../data/langid/ru.txt")),
    ("zh", include_str!("../../data/langid/zh.txt")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ProfileRecord", into = "ProfileRecord")]
pub struct LangProfile {
    pub lang: LangTag,
    /// Top n-grams by descending frequency.
    pub ngrams: Vec<(String, u64)>,
    ranks: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct ProfileRecord {
    lang: LangTag,
    ngrams: Vec<(String, u64)>,
}

impl From<ProfileRecord> for LangProfile {
    fn from(r: ProfileRecord) -> Self {
        LangProfile::from_ranking(r.lang, r.ngrams)
    }
}

impl From<LangProfile> for ProfileRecord {
    fn from(p: LangProfile) -> Self {
        ProfileRecord {
            lang: p.lang,
            ngrams: p.ngrams,
        }
    }
}

impl LangProfile {
    pub fn from_text(lang: LangTag, seed_corpus: &str) -> Result<Self> {
        let ngrams = ngram_ranking(seed_corpus, PROFILE_SIZE);
        if ngrams.is_empty() {
            return Err(Error::invalid(
                "language profile",
                format!("seed corpus for {lang} has no letters"),
            ));
        }
        Ok(Self::from_ranking(lang, ngrams))
    }

    pub fn from_ranking(lang: LangTag, ngrams: Vec<(String, u64)>) -> Self {
        let ranks = ngrams
            .iter()
            .enumerate()
            .map(|(i, (g, _))| (g.clone(), i))
            .collect();
        LangProfile {
            lang,
            ngrams,
            ranks,
        }
    }

    pub fn load(lang: LangTag, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(lang, &text)
    }

    fn rank(&self, gram: &str) -> Option<usize> {
        self.ranks.get(gram).copied()
    }

    /// Out-of-place distance from a text ranking to this profile.
    pub fn distance(&self, ranking: &[(String, u64)]) -> u64 {
        let max_penalty = PROFILE_SIZE as u64;
        ranking
            .iter()
            .enumerate()
            .map(|(i, (g, _))| match self.rank(g) {
                Some(j) => (i as i64 - j as i64).unsigned_abs(),
                None => max_penalty,
            })
            .sum()
    }
}

/// Counts n-grams (n = 1..=3) of `_word_` over lowercase letter runs and
/// returns the `limit` most frequent, ties broken lexicographically.
pub fn ngram_ranking(text: &str, limit: usize) -> Vec<(String, u64)> {
    let lower = text.to_lowercase();
    let mut counts: HashMap<String, u64> = HashMap::new();
    for word in lower.split(|c: char| !c.is_alphabetic()).filter(|w| !w.is_empty()) {
        let chars: Vec<char> = std::iter::once('_')
            .chain(word.chars())
            .chain(std::iter::once('_'))
            .collect();
        for n in 1..=MAX_NGRAM {
            for w in chars.windows(n) {
                if w.iter().all(|c| *c == '_') {
                    continue;
                }
                *counts.entry(w.iter().collect()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(limit);
    ranked
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub lang: LangTag,
    /// `(second_best - best) / second_best`; 1 with a single profile.
    pub confidence: f64,
    pub distance: u64,
    /// Set for texts too short to classify reliably.
    pub indeterminate: bool,
}

pub fn detect_language(text: &str, profiles: &[LangProfile]) -> Result<Detection> {
    if profiles.is_empty() {
        return Err(Error::invalid("language detection", "no profiles supplied"));
    }
    if text.trim().is_empty() {
        return Err(Error::invalid("language detection", "empty text"));
    }
    let indeterminate = text.chars().filter(|c| c.is_alphabetic()).count() < MIN_LETTERS;
    let ranking = ngram_ranking(text, PROFILE_SIZE);
    let mut scored: Vec<(u64, usize)> = profiles
        .iter()
        .enumerate()
        .map(|(i, p)| (p.distance(&ranking), i))
        .collect();
    scored.sort();
    let (best, best_idx) = scored[0];
    let confidence = if indeterminate && scored.len() > 1 {
        0.0
    } else {
        match scored.get(1) {
            None => 1.0,
            Some(&(second, _)) if second > 0 => (second - best) as f64 / second as f64,
            Some(_) => 0.0,
        }
    };
    Ok(Detection {
        lang: profiles[best_idx].lang.clone(),
        confidence,
        distance: best,
        indeterminate,
    })
}

/// Profile built from the bundled seed corpus for `lang`.
pub fn builtin_profile(lang: &LangTag) -> Result<LangProfile> {
    let (_, text) = BUILTIN
        .iter()
        .find(|(code, _)| *code == lang.code)
        .ok_or_else(|| {
            Error::invalid("language profile", format!("no bundled corpus for {lang}"))
        })?;
    LangProfile::from_text(lang.clone(), text)
}

pub fn builtin_profiles() -> Vec<LangProfile> {
    BUILTIN
        .iter()
        .map(|(code, text)| {
            let lang = LangTag::from_code(code).expect("bundled code is known");
            LangProfile::from_text(lang, text).expect("bundled corpus is non-empty")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tag(code: &str) -> LangTag {
        LangTag::from_code(code).unwrap()
    }

    fn three() -> Vec<LangProfile> {
        ["en", "ru", "zh"]
            .iter()
            .map(|c| builtin_profile(&tag(c)).unwrap())
            .collect()
    }

    #[test]
    fn ranking_is_sorted_and_padded() {
        let r = ngram_ranking("ab ab", 10);
        assert_eq!(r[0].1, 2);
        assert!(r.iter().any(|(g, _)| g == "_ab"));
        assert!(r.iter().any(|(g, _)| g == "ab_"));
        assert!(r.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn seed_corpus_matches_itself() {
        let profiles = builtin_profiles();
        for (code, text) in BUILTIN {
            let d = detect_language(text, &profiles).unwrap();
            assert_eq!(d.lang.code, *code);
            assert_eq!(d.distance, 0);
            assert_eq!(d.confidence, 1.0);
        }
    }

    #[test]
    fn english_pangram() {
        let d = detect_language("the quick brown fox jumps over the lazy dog", &three()).unwrap();
        assert_eq!(d.lang, tag("en"));
        assert!(d.confidence > 0.0);
    }

    #[test]
    fn short_text_is_indeterminate() {
        let d = detect_language("ok", &three()).unwrap();
        assert!(d.indeterminate);
        assert_eq!(d.confidence, 0.0);
    }

    #[test]
    fn single_profile_always_wins() {
        let p = vec![builtin_profile(&tag("ru")).unwrap()];
        let d = detect_language("the quick brown fox", &p).unwrap();
        assert_eq!(d.lang, tag("ru"));
        assert_eq!(d.confidence, 1.0);
    }

    #[test]
    fn errors() {
        assert!(detect_language("hello", &[]).is_err());
        assert!(detect_language("  ", &three()).is_err());
        assert!(LangProfile::from_text(tag("en"), "123 456").is_err());
    }

    #[test]
    fn distinguishes_related_languages() {
        let p = builtin_profiles();
        let cases = [
            ("the children read books in the quiet library", "en"),
            ("los niños leen libros en la biblioteca tranquila", "es"),
            ("les enfants lisent des livres dans la bibliothèque", "fr"),
            ("die Kinder lesen Bücher in der ruhigen Bibliothek", "de"),
        ];
        for (text, code) in cases {
            assert_eq!(detect_language(text, &p).unwrap().lang.code, code, "{text}");
        }
    }
}
