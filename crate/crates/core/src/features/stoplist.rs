use std::collections::HashSet;
use std::path::Path;

use crate::error::read_to_string;
use crate::Result;

/// Case-folded stop word set.
#[derive(Debug, Clone, Default)]
pub struct Stoplist {
    words: HashSet<String>,
}

macro_rules! bundled {
    ($($iso:literal),*) => {
        fn bundled_text(language: &str) -> Option<&'static str> {
            match language {
                $($iso => Some(include_str!(concat!("../../stoplists/", $iso, ".txt"))),)*
                _ => None,
            }
        }
    };
}

bundled!("deu", "eng", "eus", "fas", "fra", "nld", "por", "rus", "spa", "tur", "zho");

impl Stoplist {
    /// Parses one word per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Stoplist { words }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(Self::parse(&read_to_string(path)?))
    }

    /// The bundled list for an ISO 639-3 code, or an empty list.
    pub fn for_language(language: &str) -> Self {
        match bundled_text(language) {
            Some(text) => Self::parse(text),
            None => {
                log::warn!("no bundled stoplist for {language:?}; lexical overlap counts every word");
                Stoplist::default()
            }
        }
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Stoplist {
            words: words.into_iter().map(|w| w.as_ref().to_lowercase()).collect(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}
