//! Labeled pairs with write-ahead persistence: every accepted submission is
//! appended (and synced) to `labels.jsonl` before it is applied; a snapshot
//! of the applied state is rewritten every few entries to shorten replay.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use argrel::windowing::PairLabel;
use serde::{Deserialize, Serialize};

const LOG_FILE: &str = "labels.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Support,
    Attack,
    None,
}

impl From<Decision> for PairLabel {
    fn from(d: Decision) -> Self {
        match d {
            Decision::Support => PairLabel::Support,
            Decision::Attack => PairLabel::Attack,
            Decision::None => PairLabel::NoRel,
        }
    }
}

impl Decision {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TailDecision {
    pub tail: usize,
    pub decision: Decision,
}

/// One accepted submission. `primary` marks the submission whose decisions
/// entered the store; later overlapping ones only feed agreement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub task_id: String,
    pub doc_id: String,
    pub head: usize,
    pub decisions: Vec<TailDecision>,
    pub annotator: String,
    pub timestamp: String,
    pub iteration: usize,
    pub primary: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Snapshot", from = "Snapshot")]
pub struct LabeledStore {
    pairs: BTreeMap<String, BTreeMap<(usize, usize), Decision>>,
    /// Outgoing link of each tail: (doc_id, tail) → head.
    outgoing: BTreeMap<(String, usize), usize>,
    pub annotator_counts: BTreeMap<String, usize>,
    pub last_seq: u64,
}

impl LabeledStore {
    pub fn get(&self, doc_id: &str, head: usize, tail: usize) -> Option<Decision> {
        self.pairs.get(doc_id).and_then(|m| m.get(&(head, tail))).copied()
    }

    pub fn outgoing(&self, doc_id: &str, tail: usize) -> Option<usize> {
        self.outgoing.get(&(doc_id.to_string(), tail)).copied()
    }

    pub fn len(&self) -> usize {
        self.pairs.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Labeled pairs of one document as (head, tail, decision).
    pub fn document_pairs(&self, doc_id: &str) -> Vec<(usize, usize, Decision)> {
        self.pairs.get(doc_id).map(|m| m.iter().map(|(&(h, t), &d)| (h, t, d)).collect()).unwrap_or_default()
    }

    pub fn documents(&self) -> impl Iterator<Item = &str> {
        self.pairs.keys().map(String::as_str)
    }

    pub fn apply(&mut self, entry: &LogEntry) {
        *self.annotator_counts.entry(entry.annotator.clone()).or_default() += 1;
        self.last_seq = self.last_seq.max(entry.seq);
        if !entry.primary {
            return;
        }
        let doc = self.pairs.entry(entry.doc_id.clone()).or_default();
        for d in &entry.decisions {
            doc.insert((entry.head, d.tail), d.decision);
            if d.decision != Decision::None {
                self.outgoing.insert((entry.doc_id.clone(), d.tail), entry.head);
            }
        }
    }

    fn reindex(&mut self) {
        self.outgoing.clear();
        for (doc, m) in &self.pairs {
            for (&(h, t), &d) in m {
                if d != Decision::None {
                    self.outgoing.insert((doc.clone(), t), h);
                }
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    last_seq: u64,
    annotator_counts: BTreeMap<String, usize>,
    pairs: Vec<(String, usize, usize, Decision)>,
}

impl From<LabeledStore> for Snapshot {
    fn from(s: LabeledStore) -> Self {
        let pairs = s
            .pairs
            .into_iter()
            .flat_map(|(doc, m)| m.into_iter().map(move |((h, t), d)| (doc.clone(), h, t, d)))
            .collect();
        Self { last_seq: s.last_seq, annotator_counts: s.annotator_counts, pairs }
    }
}

impl From<Snapshot> for LabeledStore {
    fn from(s: Snapshot) -> Self {
        let mut store =
            LabeledStore { last_seq: s.last_seq, annotator_counts: s.annotator_counts, ..Default::default() };
        for (doc, h, t, d) in s.pairs {
            store.pairs.entry(doc).or_default().insert((h, t), d);
        }
        store.reindex();
        store
    }
}

#[derive(Debug)]
pub struct Persistence {
    dir: PathBuf,
    log: File,
    snapshot_every: u64,
    since_snapshot: u64,
}

impl Persistence {
    /// Open (creating if needed) the data directory and recover the store
    /// from the snapshot plus the log entries after it.
    pub fn open(dir: &Path, snapshot_every: u64) -> std::io::Result<(Self, LabeledStore)> {
        fs::create_dir_all(dir)?;
        let mut store = match fs::read(dir.join(SNAPSHOT_FILE)) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(std::io::Error::other)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => LabeledStore::default(),
            Err(e) => return Err(e),
        };
        let log_path = dir.join(LOG_FILE);
        let mut replayed = 0;
        if log_path.exists() {
            for (i, line) in BufReader::new(File::open(&log_path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: LogEntry = match serde_json::from_str(&line) {
                    Ok(e) => e,
                    Err(e) => {
                        // A torn final line from a crash mid-append; anything earlier is corruption.
                        tracing::warn!(line = i + 1, error = %e, "skipping unreadable log line");
                        continue;
                    }
                };
                if entry.seq > store.last_seq {
                    store.apply(&entry);
                    replayed += 1;
                }
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        tracing::info!(pairs = store.len(), replayed, "labeled store recovered");
        Ok((Self { dir: dir.to_path_buf(), log, snapshot_every: snapshot_every.max(1), since_snapshot: replayed }, store))
    }

    pub fn append(&mut self, entry: &LogEntry) -> std::io::Result<()> {
        let mut line = serde_json::to_string(entry).map_err(std::io::Error::other)?;
        line.push('\n');
        self.log.write_all(line.as_bytes())?;
        self.log.sync_data()?;
        self.since_snapshot += 1;
        Ok(())
    }

    pub fn maybe_snapshot(&mut self, store: &LabeledStore) -> std::io::Result<()> {
        if self.since_snapshot < self.snapshot_every {
            return Ok(());
        }
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec(store).map_err(std::io::Error::other)?)?;
        File::open(&tmp)?.sync_all()?;
        fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        self.since_snapshot = 0;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(seq: u64, head: usize, tail: usize, d: Decision) -> LogEntry {
        LogEntry {
            seq,
            task_id: format!("t{seq}"),
            doc_id: "d".into(),
            head,
            decisions: vec![TailDecision { tail, decision: d }],
            annotator: "a".into(),
            timestamp: String::new(),
            iteration: 1,
            primary: true,
        }
    }

    #[test]
    fn recovery_replays_log_after_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let mut expected = LabeledStore::default();
        {
            let (mut p, mut store) = Persistence::open(dir.path(), 2).unwrap();
            for (i, (h, t)) in [(0, 1), (2, 3), (4, 5)].into_iter().enumerate() {
                let e = entry(i as u64 + 1, h, t, Decision::Support);
                p.append(&e).unwrap();
                store.apply(&e);
                expected.apply(&e);
                p.maybe_snapshot(&store).unwrap();
            }
        }
        let (_, store) = Persistence::open(dir.path(), 2).unwrap();
        assert_eq!(store.document_pairs("d"), expected.document_pairs("d"));
        assert_eq!(store.outgoing("d", 5), Some(4));
        assert_eq!(store.last_seq, 3);
    }

    #[test]
    fn torn_last_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        {
            let (mut p, _) = Persistence::open(dir.path(), 100).unwrap();
            p.append(&entry(1, 0, 1, Decision::Attack)).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(dir.path().join(LOG_FILE)).unwrap();
        f.write_all(b"{\"seq\":2,\"task").unwrap();
        let (_, store) = Persistence::open(dir.path(), 100).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.get("d", 0, 1), Some(Decision::Attack));
    }
}
