use std::collections::BTreeMap;
use std::fmt;

use argrel::corpus::{distance_histogram, relation_density, validate, window_coverage, Corpus, Profile, RelationLabel};
use argrel::markers::MarkerLexicon;
use argrel::text::token_count;
use argrel::windowing::{build_examples, WindowConfig, WindowMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerCounts {
    pub heads: usize,
    pub tails: usize,
    pub elsewhere: usize,
}

/// Per-marker counts of matching propositions, split by the proposition's
/// role. A proposition that is a tail counts as a tail even when it is also
/// a head. Every marker of the lexicon appears, zeros included.
pub fn marker_breakdown(corpus: &Corpus, lexicon: &MarkerLexicon) -> BTreeMap<String, MarkerCounts> {
    let mut out: BTreeMap<String, MarkerCounts> =
        lexicon.markers().iter().map(|m| (m.clone(), MarkerCounts::default())).collect();
    for doc in &corpus.documents {
        for p in &doc.propositions {
            for m in lexicon.match_text(&p.text) {
                let c = out.entry(m).or_default();
                if doc.is_tail(p.id) {
                    c.tails += 1;
                } else if doc.is_head(p.id) {
                    c.heads += 1;
                } else {
                    c.elsewhere += 1;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub documents: usize,
    pub propositions: usize,
    pub relations: usize,
    pub supports: usize,
    pub attacks: usize,
    pub density: f64,
    pub distances: BTreeMap<i64, usize>,
    pub window: usize,
    pub coverage: f64,
    /// Share of positive pairs among end-to-end in-window pairs.
    pub positive_ratio: f64,
    pub validation_errors: usize,
    pub markers: BTreeMap<String, MarkerCounts>,
}

pub fn corpus_stats(corpus: &Corpus, window: usize, lexicon: &MarkerLexicon) -> anyhow::Result<StatsReport> {
    let count = |label| corpus.documents.iter().flat_map(|d| &d.relations).filter(|r| r.label == label).count();
    let cfg = WindowConfig { window, max_tokens: 1 << 40, mode: WindowMode::EndToEnd };
    let (mut pairs, mut positive) = (0usize, 0usize);
    for doc in &corpus.documents {
        for ex in build_examples(doc, &cfg, &token_count) {
            pairs += 1;
            positive += usize::from(ex.label.is_positive());
        }
    }
    let profile = if corpus.uses_ampere_types() { Profile::Ampere } else { Profile::Basic };
    Ok(StatsReport {
        documents: corpus.documents.len(),
        propositions: corpus.num_propositions(),
        relations: corpus.num_relations(),
        supports: count(RelationLabel::Support),
        attacks: count(RelationLabel::Attack),
        density: relation_density(corpus)?,
        distances: distance_histogram(corpus),
        window,
        coverage: window_coverage(corpus, window)?,
        positive_ratio: if pairs == 0 { 0.0 } else { positive as f64 / pairs as f64 },
        validation_errors: validate(corpus, profile).errors.len(),
        markers: marker_breakdown(corpus, lexicon),
    })
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "documents     {}", self.documents)?;
        writeln!(f, "propositions  {}", self.propositions)?;
        writeln!(f, "relations     {} (support {}, attack {})", self.relations, self.supports, self.attacks)?;
        writeln!(f, "density       {}", self.density)?;
        writeln!(f, "coverage L={}  {}", self.window, self.coverage)?;
        writeln!(f, "positive pair ratio  {:.4}", self.positive_ratio)?;
        writeln!(f, "validation errors    {}", self.validation_errors)?;
        let hist: Vec<String> = self.distances.iter().map(|(d, n)| format!("{d:+}:{n}")).collect();
        writeln!(f, "distances     {{{}}}", hist.join(", "))?;
        writeln!(f, "marker                 heads  tails  elsewhere")?;
        for (m, c) in &self.markers {
            writeln!(f, "{m:<22} {:>5}  {:>5}  {:>9}", c.heads, c.tails, c.elsewhere)?;
        }
        Ok(())
    }
}
