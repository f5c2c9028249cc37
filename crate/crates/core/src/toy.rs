//! A small synthetic multilingual world for tests, demos and benchmarks.
//!
//! English is the hub. Spanish words come from a hand-written lexicon;
//! "Russian" and "Chinese" words are letter-by-letter transliterations of
//! the English word into Cyrillic and CJK characters, which is enough to give
//! each language its own script and its own n-gram profile.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{fnv1a, Lexicon, MockEmbedder, MockInfillSpec};
use crate::error::{Error, Result};
use crate::prompt::LangTag;
use crate::scoring::LangProfile;

const SPANISH_ENGLISH: &[(&str, &str)] = &[
    ("el", "the"),
    ("perro", "dog"),
    ("gato", "cat"),
    ("azul", "blue"),
    ("rojo", "red"),
    ("verde", "green"),
    ("casa", "house"),
    ("arbol", "tree"),
    ("grande", "big"),
    ("pequeno", "small"),
    ("come", "eats"),
    ("bebe", "drinks"),
    ("agua", "water"),
    ("leche", "milk"),
    ("sol", "sun"),
    ("luna", "moon"),
    ("cielo", "sky"),
    ("mar", "sea"),
    ("rio", "river"),
    ("montana", "mountain"),
    ("ciudad", "city"),
    ("calle", "street"),
    ("libro", "book"),
    ("mesa", "table"),
    ("silla", "chair"),
    ("ventana", "window"),
    ("puerta", "door"),
    ("nino", "child"),
    ("mujer", "woman"),
    ("hombre", "man"),
    ("amigo", "friend"),
    ("madre", "mother"),
    ("padre", "father"),
    ("hermano", "brother"),
    ("escuela", "school"),
    ("trabajo", "work"),
    ("tiempo", "time"),
    ("dia", "day"),
    ("noche", "night"),
    ("manana", "morning"),
    ("tarde", "evening"),
    ("feliz", "happy"),
    ("triste", "sad"),
    ("rapido", "fast"),
    ("lento", "slow"),
    ("nuevo", "new"),
    ("viejo", "old"),
    ("bonito", "pretty"),
    ("frio", "cold"),
    ("caliente", "hot"),
    ("corre", "runs"),
    ("canta", "sings"),
    ("lee", "reads"),
    ("escribe", "writes"),
    ("duerme", "sleeps"),
    ("habla", "speaks"),
    ("mira", "watches"),
    ("tiene", "has"),
    ("quiere", "wants"),
    ("y", "and"),
    ("con", "with"),
    ("sin", "without"),
    ("sobre", "on"),
    ("muy", "very"),
    ("siempre", "always"),
    ("nunca", "never"),
    ("hoy", "today"),
];

const CYRILLIC: [char; 26] = [
    'а', 'б', 'ц', 'д', 'е', 'ф', 'г', 'х', 'и', 'ж', 'к', 'л', 'м', 'н', 'о', 'п', 'я', 'р', 'с',
    'т', 'у', 'в', 'ш', 'щ', 'ы', 'з',
];

const HANZI: [char; 26] = [
    '的', '一', '是', '不', '了', '人', '我', '在', '有', '他', '这', '中', '大', '来', '上', '国',
    '个', '到', '说', '们', '为', '子', '和', '你', '地', '出',
];

fn transliterate(word: &str, table: &[char; 26]) -> String {
    word.chars()
        .map(|c| {
            if c.is_ascii_lowercase() {
                table[(c as u8 - b'a') as usize]
            } else {
                c
            }
        })
        .collect()
}

/// The four toy languages and the word maps between them.
#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub english: LangTag,
    pub spanish: LangTag,
    pub russian: LangTag,
    pub chinese: LangTag,
    /// English word -> word in each language, keyed by language code.
    words: BTreeMap<String, BTreeMap<String, String>>,
    english_words: Vec<String>,
}

impl Default for ToyWorld {
    fn default() -> Self {
        Self::new()
    }
}

impl ToyWorld {
    pub fn new() -> Self {
        let tag = |c: &str| LangTag::from_code(c).expect("known language code");
        let mut words: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut english_words = Vec::new();
        for (es, en) in SPANISH_ENGLISH {
            english_words.push(en.to_string());
            let forms = BTreeMap::from([
                ("en".to_string(), en.to_string()),
                ("es".to_string(), es.to_string()),
                ("ru".to_string(), transliterate(en, &CYRILLIC)),
                ("zh".to_string(), transliterate(en, &HANZI)),
            ]);
            words.insert(en.to_string(), forms);
        }
        ToyWorld {
            english: tag("en"),
            spanish: tag("es"),
            russian: tag("ru"),
            chinese: tag("zh"),
            words,
            english_words,
        }
    }

    pub fn languages(&self) -> [&LangTag; 4] {
        [&self.english, &self.spanish, &self.russian, &self.chinese]
    }

    pub fn vocabulary_size(&self) -> usize {
        self.english_words.len()
    }

    fn check(&self, lang: &LangTag) -> Result<()> {
        if self.languages().contains(&lang) {
            Ok(())
        } else {
            Err(Error::invalid("toy language", format!("{lang} is not a toy language")))
        }
    }

    /// Word-for-word map from `from` to `to`.
    pub fn lexicon(&self, from: &LangTag, to: &LangTag) -> Result<Lexicon> {
        self.check(from)?;
        self.check(to)?;
        Ok(self
            .words
            .values()
            .map(|forms| (forms[&from.code].clone(), forms[&to.code].clone()))
            .collect())
    }

    /// Every non-English word mapped to its English form.
    pub fn canonical(&self) -> Lexicon {
        let mut out = Lexicon::new();
        for (en, forms) in &self.words {
            for (code, w) in forms {
                if code != "en" {
                    out.insert(w.clone(), en.clone());
                }
            }
        }
        out
    }

    /// Exact word-for-word translation; unknown words pass through.
    pub fn translate(&self, text: &str, from: &LangTag, to: &LangTag) -> Result<String> {
        let lex = self.lexicon(from, to)?;
        Ok(text
            .split_whitespace()
            .map(|w| lex.get(w).map(String::as_str).unwrap_or(w))
            .collect::<Vec<_>>()
            .join(" "))
    }

    /// `n` sentences of 1 to `max_len` words in `lang`. The same seed gives
    /// the same corpus; different languages draw different sentences.
    pub fn corpus(&self, lang: &LangTag, n: usize, max_len: usize, seed: u64) -> Result<Vec<String>> {
        self.check(lang)?;
        if max_len == 0 {
            return Err(Error::invalid("toy corpus", "max_len must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(lang.code.as_bytes()));
        Ok((0..n)
            .map(|_| {
                let len = rng.random_range(1..=max_len);
                (0..len)
                    .map(|_| {
                        let en = self.english_words.choose(&mut rng).expect("non-empty");
                        self.words[en][&lang.code].as_str()
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect())
    }

    /// A mock infill spec that translates between any two toy languages.
    pub fn mock_spec(&self, span_budget: usize) -> MockInfillSpec {
        let mut spec = MockInfillSpec::new(Lexicon::new(), span_budget);
        for to in self.languages() {
            let mut lex = Lexicon::new();
            for from in self.languages() {
                if from != to {
                    lex.extend(self.lexicon(from, to).expect("toy languages"));
                }
            }
            if to == &self.english {
                spec.lexicon = lex.clone();
            }
            spec.target_lexicons.insert(to.display_name.clone(), lex);
        }
        spec
    }

    pub fn embedder(&self) -> MockEmbedder {
        MockEmbedder::with_canonical(self.canonical())
    }

    /// Language profiles trained on generated text of each toy language.
    pub fn profiles(&self) -> Vec<LangProfile> {
        self.languages()
            .into_iter()
            .map(|lang| {
                let text = self.corpus(lang, 400, 12, 7).expect("toy language").join("\n");
                LangProfile::from_text(lang.clone(), &text).expect("non-empty seed text")
            })
            .collect()
    }
}
