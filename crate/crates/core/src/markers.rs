//! The discourse-marker lexicon and token-sequence matching.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::text::tokenize;

pub const LEXICON_VERSION: u32 = 1;

/// Embedded default lexicon, one marker per line.
pub const DEFAULT_MARKERS: &str = "\
because
therefore
however
although
though
nevertheless
nonetheless
thus
hence
consequently
for this reason
due to
in particular
particularly
specifically
in fact
actually
but
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerClass {
    Causal,
    Contrast,
    Elaboration,
}

impl MarkerClass {
    pub const ALL: [MarkerClass; 3] = [MarkerClass::Causal, MarkerClass::Contrast, MarkerClass::Elaboration];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Class of one of the 18 default markers; `None` for anything else.
    pub fn of(marker: &str) -> Option<MarkerClass> {
        match marker {
            "because" | "due to" | "consequently" | "for this reason" | "therefore" | "thus"
            | "hence" => Some(MarkerClass::Causal),
            "however" | "although" | "though" | "nevertheless" | "nonetheless" | "but" => {
                Some(MarkerClass::Contrast)
            }
            "in particular" | "particularly" | "specifically" | "in fact" | "actually" => {
                Some(MarkerClass::Elaboration)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkerLexicon {
    markers: Vec<String>,
    sequences: Vec<Vec<String>>,
}

impl Default for MarkerLexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_MARKERS)
    }
}

impl MarkerLexicon {
    /// Parse a one-marker-per-line list. Blank lines and `#` comments are skipped.
    pub fn parse(source: &str) -> Self {
        let mut markers: Vec<String> = Vec::new();
        for line in source.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let normalized = tokenize(line).join(" ");
            if !normalized.is_empty() && !markers.contains(&normalized) {
                markers.push(normalized);
            }
        }
        let sequences = markers
            .iter()
            .map(|m| m.split(' ').map(str::to_string).collect())
            .collect();
        Self { markers, sequences }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn markers(&self) -> &[String] {
        &self.markers
    }

    pub fn len(&self) -> usize {
        self.markers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markers.is_empty()
    }

    /// Markers occurring in `text` as whole-token sequences, case-insensitively.
    pub fn match_text(&self, text: &str) -> BTreeSet<String> {
        self.match_tokens(&tokenize(text))
    }

    pub fn match_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> BTreeSet<String> {
        let mut found = BTreeSet::new();
        for (marker, seq) in self.markers.iter().zip(&self.sequences) {
            if tokens.len() < seq.len() {
                continue;
            }
            let hit = tokens
                .windows(seq.len())
                .any(|w| w.iter().zip(seq).all(|(a, b)| a.as_ref() == b));
            if hit {
                found.insert(marker.clone());
            }
        }
        found
    }

    pub fn contains_marker(&self, text: &str) -> bool {
        !self.match_text(text).is_empty()
    }
}
