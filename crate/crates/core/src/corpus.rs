//! Argument-annotated documents: data model, line-delimited JSON I/O,
//! annotation-constraint validation, corpus statistics and a synthetic
//! corpus generator.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markers::MarkerLexicon;
use crate::rng;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate doc_id `{0}`")]
    DuplicateDocId(String),
    #[error("undefined input: {0}")]
    UndefinedInput(&'static str),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Proposition type. The vocabulary is the union of the common annotation
/// schemes plus `unknown`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropType {
    Evaluation,
    Request,
    Fact,
    Reference,
    Quote,
    NonArg,
    Claim,
    Premise,
    MajorClaim,
    Policy,
    Value,
    Testimony,
    Unknown,
}

impl PropType {
    pub fn is_factual(self) -> bool {
        matches!(self, PropType::Fact | PropType::Reference | PropType::Quote)
    }

    pub fn is_subjective(self) -> bool {
        matches!(self, PropType::Evaluation | PropType::Request)
    }

    /// Belongs to the review-annotation taxonomy the `ampere` profile checks.
    pub fn is_ampere(self) -> bool {
        matches!(
            self,
            PropType::Evaluation
                | PropType::Request
                | PropType::Fact
                | PropType::Reference
                | PropType::Quote
                | PropType::NonArg
        )
    }

    pub fn parse(s: &str) -> Option<PropType> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationLabel {
    Support,
    Attack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposition {
    pub id: usize,
    pub text: String,
    #[serde(rename = "type")]
    pub ptype: PropType,
}

/// A directed link: `tail` supports or attacks `head`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub head: usize,
    pub tail: usize,
    pub label: RelationLabel,
}

impl Relation {
    /// Signed distance `tail - head`; positive when the tail follows the head.
    pub fn distance(&self) -> i64 {
        self.tail as i64 - self.head as i64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub propositions: Vec<Proposition>,
    pub relations: Vec<Relation>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.propositions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.propositions.is_empty()
    }

    /// Gold label of the pair, if any relation links `tail` to `head`.
    pub fn gold_label(&self, head: usize, tail: usize) -> Option<RelationLabel> {
        self.relations
            .iter()
            .find(|r| r.head == head && r.tail == tail)
            .map(|r| r.label)
    }

    /// Propositions that head at least one relation, ascending.
    pub fn heads(&self) -> Vec<usize> {
        let mut heads: Vec<usize> = self.relations.iter().map(|r| r.head).collect();
        heads.sort_unstable();
        heads.dedup();
        heads
    }

    pub fn is_head(&self, id: usize) -> bool {
        self.relations.iter().any(|r| r.head == id)
    }

    pub fn is_tail(&self, id: usize) -> bool {
        self.relations.iter().any(|r| r.tail == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    Unlabeled,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub split: Split,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, split: Split) -> Self {
        Self { documents, split }
    }

    pub fn num_propositions(&self) -> usize {
        self.documents.iter().map(Document::len).sum()
    }

    pub fn num_relations(&self) -> usize {
        self.documents.iter().map(|d| d.relations.len()).sum()
    }

    pub fn has_attack(&self) -> bool {
        self.documents
            .iter()
            .flat_map(|d| &d.relations)
            .any(|r| r.label == RelationLabel::Attack)
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    /// True when every proposition type belongs to the review taxonomy.
    pub fn uses_ampere_types(&self) -> bool {
        self.documents
            .iter()
            .flat_map(|d| &d.propositions)
            .all(|p| p.ptype.is_ampere())
    }
}

// ---------------------------------------------------------------------------
// I/O

#[derive(Deserialize)]
struct RawProposition {
    id: i64,
    text: String,
    #[serde(rename = "type")]
    ptype: String,
}

#[derive(Deserialize)]
struct RawRelation {
    head: i64,
    tail: i64,
    label: RelationLabel,
}

const DOC_FIELDS: [&str; 3] = ["doc_id", "propositions", "relations"];

/// Parse one document record. `line` is 1-based and only used in messages.
pub fn parse_document(record: &str, line: usize) -> Result<(Document, Vec<String>), CorpusError> {
    let err = |message: String| CorpusError::Parse { line, message };
    let value: serde_json::Value =
        serde_json::from_str(record).map_err(|e| err(format!("malformed record: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| err("record is not an object".into()))?;
    let mut warnings = Vec::new();
    for key in obj.keys() {
        if !DOC_FIELDS.contains(&key.as_str()) {
            warnings.push(format!("line {line}: unknown field `{key}` ignored"));
        }
    }
    let doc_id = obj
        .get("doc_id")
        .and_then(|v| v.as_str())
        .ok_or_else(|| err("missing string field `doc_id`".into()))?
        .to_string();
    let raw_props: Vec<RawProposition> = serde_json::from_value(
        obj.get("propositions")
            .cloned()
            .ok_or_else(|| err("missing field `propositions`".into()))?,
    )
    .map_err(|e| err(format!("bad propositions: {e}")))?;
    let raw_rels: Vec<RawRelation> = match obj.get("relations") {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| err(format!("bad relations: {e}")))?,
        None => Vec::new(),
    };

    // Normalize ids to positional order.
    let mut order: Vec<usize> = (0..raw_props.len()).collect();
    order.sort_by_key(|&i| raw_props[i].id);
    let mut id_to_pos = BTreeMap::new();
    let mut propositions = Vec::with_capacity(raw_props.len());
    for (pos, &i) in order.iter().enumerate() {
        let raw = &raw_props[i];
        if id_to_pos.insert(raw.id, pos).is_some() {
            return Err(err(format!("duplicate proposition id {}", raw.id)));
        }
        let ptype = PropType::parse(&raw.ptype).unwrap_or_else(|| {
            warnings.push(format!("line {line}: unknown proposition type `{}`", raw.ptype));
            PropType::Unknown
        });
        propositions.push(Proposition { id: pos, text: raw.text.clone(), ptype });
    }
    let mut relations = Vec::with_capacity(raw_rels.len());
    for r in raw_rels {
        let lookup = |id: i64, role: &str| {
            id_to_pos.get(&id).copied().ok_or_else(|| {
                err(format!(
                    "relation {role}={id} out of range for {} propositions",
                    propositions.len()
                ))
            })
        };
        let head = lookup(r.head, "head")?;
        let tail = lookup(r.tail, "tail")?;
        relations.push(Relation { head, tail, label: r.label });
    }
    Ok((Document { doc_id, propositions, relations }, warnings))
}

/// Parse line-delimited documents; blank lines are skipped.
pub fn parse_corpus(text: &str, split: Split) -> Result<(Corpus, Vec<String>), CorpusError> {
    let mut documents = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (doc, w) = parse_document(line, i + 1)?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(CorpusError::DuplicateDocId(doc.doc_id));
        }
        warnings.extend(w);
        documents.push(doc);
    }
    Ok((Corpus::new(documents, split), warnings))
}

pub fn load_corpus(path: &Path, split: Split) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    let (corpus, warnings) = parse_corpus(&text, split)?;
    for w in warnings {
        tracing::warn!("{}: {w}", path.display());
    }
    Ok(corpus)
}

pub fn document_to_line(doc: &Document) -> String {
    serde_json::to_string(doc).expect("documents always serialize")
}

pub fn corpus_to_string(corpus: &Corpus) -> String {
    let mut out = String::new();
    for doc in &corpus.documents {
        out.push_str(&document_to_line(doc));
        out.push('\n');
    }
    out
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(corpus_to_string(corpus).as_bytes())?;
    file.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Basic,
    Ampere,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub doc_id: String,
    pub rule: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Finding>,
    pub warnings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

pub mod rules {
    pub const RANGE: &str = "range";
    pub const SELF_LOOP: &str = "self-loop";
    pub const EMPTY_TEXT: &str = "empty-text";
    pub const ID_ORDER: &str = "id-order";
    pub const DUPLICATE_DOC: &str = "duplicate-doc-id";
    pub const SINGLE_OUTGOING: &str = "single-outgoing";
    pub const FACTUAL_HEAD: &str = "factual-head";
    pub const NON_AMPERE_TYPE: &str = "non-ampere-type";
}

pub fn validate(corpus: &Corpus, profile: Profile) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = HashSet::new();
    for doc in &corpus.documents {
        if !seen.insert(doc.doc_id.as_str()) {
            report.errors.push(finding(doc, rules::DUPLICATE_DOC, "doc_id repeated in split".into()));
        }
        validate_document_into(doc, profile, &mut report);
    }
    report
}

pub fn validate_document(doc: &Document, profile: Profile) -> ValidationReport {
    let mut report = ValidationReport::default();
    validate_document_into(doc, profile, &mut report);
    report
}

fn finding(doc: &Document, rule: &str, message: String) -> Finding {
    Finding { doc_id: doc.doc_id.clone(), rule: rule.to_string(), message }
}

fn validate_document_into(doc: &Document, profile: Profile, report: &mut ValidationReport) {
    let n = doc.len();
    for (pos, p) in doc.propositions.iter().enumerate() {
        if p.id != pos {
            report
                .errors
                .push(finding(doc, rules::ID_ORDER, format!("proposition at {pos} has id {}", p.id)));
        }
        if p.text.trim().is_empty() {
            report
                .errors
                .push(finding(doc, rules::EMPTY_TEXT, format!("proposition {pos} has empty text")));
        }
    }
    let mut in_range = Vec::with_capacity(doc.relations.len());
    for r in &doc.relations {
        if r.head >= n || r.tail >= n {
            report.errors.push(finding(
                doc,
                rules::RANGE,
                format!("relation {}<-{} outside {n} propositions", r.head, r.tail),
            ));
            continue;
        }
        if r.head == r.tail {
            report
                .errors
                .push(finding(doc, rules::SELF_LOOP, format!("proposition {} links to itself", r.head)));
            continue;
        }
        in_range.push(*r);
    }
    if profile == Profile::Basic {
        return;
    }

    let mut outgoing: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for r in &in_range {
        outgoing.entry(r.tail).or_default().push(r.head);
    }
    for (tail, heads) in outgoing {
        if heads.len() > 1 {
            report.errors.push(finding(
                doc,
                rules::SINGLE_OUTGOING,
                format!("proposition {tail} supports or attacks {} propositions {heads:?}", heads.len()),
            ));
        }
    }
    for r in &in_range {
        let head = doc.propositions[r.head].ptype;
        let tail = doc.propositions[r.tail].ptype;
        if head.is_factual() && tail.is_subjective() {
            report.errors.push(finding(
                doc,
                rules::FACTUAL_HEAD,
                format!("factual proposition {} linked from subjective proposition {}", r.head, r.tail),
            ));
        }
    }
    for p in &doc.propositions {
        if !p.ptype.is_ampere() {
            report.warnings.push(finding(
                doc,
                rules::NON_AMPERE_TYPE,
                format!("proposition {} has type {:?} outside the review taxonomy", p.id, p.ptype),
            ));
        }
    }
}

// ---------------------------------------------------------------------------
// Statistics

/// Fraction of propositions that head at least one relation.
pub fn relation_density(corpus: &Corpus) -> Result<f64, CorpusError> {
    let total = corpus.num_propositions();
    if total == 0 {
        return Err(CorpusError::UndefinedInput("corpus has no propositions"));
    }
    let heads: usize = corpus.documents.iter().map(|d| d.heads().len()).sum();
    Ok(heads as f64 / total as f64)
}

/// Histogram of signed `tail - head` distances over all relations.
pub fn distance_histogram(corpus: &Corpus) -> BTreeMap<i64, usize> {
    let mut hist = BTreeMap::new();
    for r in corpus.documents.iter().flat_map(|d| &d.relations) {
        *hist.entry(r.distance()).or_insert(0) += 1;
    }
    hist
}

/// Fraction of relations whose endpoints lie within `window` propositions.
/// A corpus without relations is fully covered.
pub fn window_coverage(corpus: &Corpus, window: usize) -> Result<f64, CorpusError> {
    if window == 0 {
        return Err(CorpusError::Precondition("window size must be at least 1".into()));
    }
    let total = corpus.num_relations();
    if total == 0 {
        return Ok(1.0);
    }
    let covered = corpus
        .documents
        .iter()
        .flat_map(|d| &d.relations)
        .filter(|r| r.distance().unsigned_abs() as usize <= window)
        .count();
    Ok(covered as f64 / total as f64)
}

// ---------------------------------------------------------------------------
// Synthetic corpora

/// Largest planted head-tail distance.
pub const MAX_SYNTH_DISTANCE: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_docs: usize,
    pub props_per_doc: usize,
    /// Probability that a proposition is the tail of a planted relation.
    pub relation_rate: f64,
    /// Geometric parameter of |distance|; larger keeps links closer.
    pub distance_skew: f64,
    pub marker_plant_prob: f64,
    pub vocab_size: usize,
    /// Probability a planted relation is an attack rather than a support.
    pub attack_rate: f64,
    /// Probability a tail repeats one content word of its head.
    pub shared_word_prob: f64,
    /// Offset into the synthetic word list, so two corpora can use disjoint vocabularies.
    pub vocab_offset: usize,
    pub doc_prefix: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_docs: 100,
            props_per_doc: 8,
            relation_rate: 0.5,
            distance_skew: 0.6,
            marker_plant_prob: 0.5,
            vocab_size: 200,
            attack_rate: 0.0,
            shared_word_prob: 0.5,
            vocab_offset: 0,
            doc_prefix: "synth".into(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn check(&self) -> Result<(), CorpusError> {
        if self.n_docs == 0 || self.props_per_doc == 0 || self.vocab_size == 0 {
            return Err(CorpusError::Precondition("counts must be at least 1".into()));
        }
        for (name, p) in [
            ("relation_rate", self.relation_rate),
            ("distance_skew", self.distance_skew),
            ("marker_plant_prob", self.marker_plant_prob),
            ("attack_rate", self.attack_rate),
            ("shared_word_prob", self.shared_word_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CorpusError::Precondition(format!("{name} must lie in [0,1]")));
            }
        }
        Ok(())
    }
}

/// Pronounceable pseudo-word for an index; never collides with a marker.
pub fn synth_word(index: usize) -> String {
    const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let syllables = CONSONANTS.len() * VOWELS.len();
    let syllable = |k: usize| {
        let c = CONSONANTS[k % CONSONANTS.len()] as char;
        let v = VOWELS[k / CONSONANTS.len()] as char;
        format!("{c}{v}")
    };
    let mut word = String::new();
    let mut rest = index;
    loop {
        word.push_str(&syllable(rest % syllables));
        rest /= syllables;
        if rest == 0 && word.len() >= 4 {
            break;
        }
        if rest == 0 {
            word.push_str(&syllable(0));
            break;
        }
    }
    word
}

const AMPERE_TYPES: [(PropType, f64); 5] = [
    (PropType::Evaluation, 0.4),
    (PropType::Request, 0.15),
    (PropType::Fact, 0.3),
    (PropType::Reference, 0.1),
    (PropType::Quote, 0.05),
];

/// Generate a corpus with planted relations. Deterministic per seed.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Corpus, CorpusError> {
    cfg.check()?;
    let lexicon = MarkerLexicon::default();
    let words: Vec<String> = (0..cfg.vocab_size).map(|i| synth_word(i + cfg.vocab_offset)).collect();
    // Zipf-like word frequencies.
    let mut cumulative = Vec::with_capacity(words.len());
    let mut acc = 0.0;
    for rank in 0..words.len() {
        acc += 1.0 / (rank as f64 + 2.0);
        cumulative.push(acc);
    }
    let mut rng = rng::substream(cfg.seed, "synth");
    let mut documents = Vec::with_capacity(cfg.n_docs);
    for d in 0..cfg.n_docs {
        let n = cfg.props_per_doc;
        let mut bodies: Vec<Vec<String>> = (0..n)
            .map(|_| {
                let len = rng.random_range(4..=8);
                (0..len)
                    .map(|_| {
                        let u = rng.random::<f64>() * acc;
                        let idx = cumulative.partition_point(|&c| c < u).min(words.len() - 1);
                        words[idx].clone()
                    })
                    .collect()
            })
            .collect();

        let mut relations = Vec::new();
        for tail in 0..n {
            if n < 2 || rng.random::<f64>() >= cfg.relation_rate {
                continue;
            }
            let max_k = MAX_SYNTH_DISTANCE.min(n - 1);
            let mut k = 1;
            while k < max_k && rng.random::<f64>() >= cfg.distance_skew {
                k += 1;
            }
            let before = rng.random::<f64>() < 0.7;
            let head = match (before, tail >= k, tail + k < n) {
                (true, true, _) | (false, true, false) => tail - k,
                (false, _, true) | (true, false, true) => tail + k,
                _ => {
                    // Neither side fits k; fall back to the nearest neighbour.
                    if tail > 0 { tail - 1 } else { tail + 1 }
                }
            };
            let label = if rng.random::<f64>() < cfg.attack_rate {
                RelationLabel::Attack
            } else {
                RelationLabel::Support
            };
            relations.push(Relation { head, tail, label });
        }

        for r in &relations {
            if rng.random::<f64>() < cfg.shared_word_prob {
                let shared = bodies[r.head].choose(&mut rng).cloned();
                if let Some(word) = shared {
                    let at = rng.random_range(0..=bodies[r.tail].len());
                    bodies[r.tail].insert(at, word);
                }
            }
        }
        let mut planted = vec![None; n];
        for r in &relations {
            if rng.random::<f64>() < cfg.marker_plant_prob {
                planted[r.tail] = Some(lexicon.markers().choose(&mut rng).unwrap().clone());
            }
        }

        let mut types: Vec<PropType> = (0..n)
            .map(|_| {
                let u = rng.random::<f64>();
                let mut acc = 0.0;
                for (t, p) in AMPERE_TYPES {
                    acc += p;
                    if u < acc {
                        return t;
                    }
                }
                PropType::Evaluation
            })
            .collect();
        // A subjective tail under a factual head becomes a fact; repeat to a fixpoint.
        loop {
            let mut changed = false;
            for r in &relations {
                if types[r.head].is_factual() && types[r.tail].is_subjective() {
                    types[r.tail] = PropType::Fact;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let propositions = (0..n)
            .map(|i| {
                let mut text = String::new();
                if let Some(marker) = &planted[i] {
                    text.push_str(&capitalize(marker));
                    text.push(' ');
                    text.push_str(&bodies[i].join(" "));
                } else {
                    text.push_str(&capitalize(&bodies[i].join(" ")));
                }
                text.push('.');
                Proposition { id: i, text, ptype: types[i] }
            })
            .collect();
        documents.push(Document {
            doc_id: format!("{}-{d:05}", cfg.doc_prefix),
            propositions,
            relations,
        });
    }
    Ok(Corpus::new(documents, Split::Train))
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn prop(id: usize, text: &str, ptype: PropType) -> Proposition {
        Proposition { id, text: text.into(), ptype }
    }

    pub fn doc(doc_id: &str, n: usize, rels: &[(usize, usize, RelationLabel)]) -> Document {
        Document {
            doc_id: doc_id.into(),
            propositions: (0..n)
                .map(|i| prop(i, &format!("proposition number {i}"), PropType::Evaluation))
                .collect(),
            relations: rels
                .iter()
                .map(|&(head, tail, label)| Relation { head, tail, label })
                .collect(),
        }
    }
}
