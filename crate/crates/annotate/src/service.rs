//! Shared labeling state. Handlers and the active-learning thread go through
//! one mutex, so every mutation of the labeled store is serialized.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use argrel::acquire::{window_candidates, AcquisitionScore, Strategy};
use argrel::alloop::{LabelRequest, Oracle, OracleError, RevealedPair};
use argrel::corpus::{rules, Document, PropType};
use argrel::eval::{fleiss_kappa, RatingTable};
use argrel::windowing::WindowConfig;
use serde::{Deserialize, Serialize};

use crate::store::{Decision, LabeledStore, LogEntry, Persistence, TailDecision};
use crate::ApiError;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: Option<PathBuf>,
    /// Every task is labeled by two annotators, for agreement.
    pub overlap: bool,
    pub lease: Duration,
    pub snapshot_every: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { data_dir: None, overlap: false, lease: Duration::from_secs(600), snapshot_every: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Pending,
    Labeled,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowProp {
    pub id: usize,
    pub text: String,
    #[serde(rename = "type")]
    pub ptype: PropType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub doc_id: String,
    pub head: usize,
    pub candidates: Vec<usize>,
    /// Head and candidates in document order.
    pub window: Vec<WindowProp>,
    pub score: f64,
    pub status: TaskStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub task_id: String,
    pub annotator: String,
    #[serde(default)]
    pub decisions: Vec<TailDecision>,
    #[serde(default)]
    pub timestamp: Option<String>,
    #[serde(default)]
    pub skip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitAck {
    pub task_id: String,
    pub status: TaskStatus,
    pub batch_complete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Selecting,
    Labeling,
    Training,
    Suspended,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub run_id: String,
    pub strategy: Strategy,
    pub iterations: usize,
    pub budget: usize,
    pub window: WindowConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunView {
    pub active: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub info: Option<RunInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<RunStatus>,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub active: bool,
    pub iteration: usize,
    /// Propositions whose tasks are done, across iterations.
    pub labeled: usize,
    pub pending: usize,
    pub per_annotator: BTreeMap<String, usize>,
    /// Fleiss' kappa over doubly annotated decisions, when there are any.
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRelation {
    pub head: usize,
    pub tail: usize,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocView {
    pub doc_id: String,
    pub propositions: Vec<WindowProp>,
    pub labeled: Vec<StoredRelation>,
}

#[derive(Debug)]
struct Task {
    public: AnnotationTask,
    doc: usize,
    lease: Option<(String, Instant)>,
    submissions: Vec<(String, Vec<TailDecision>)>,
}

#[derive(Debug)]
struct Run {
    info: RunInfo,
    docs: Arc<Vec<Document>>,
    doc_index: HashMap<String, usize>,
    ampere: bool,
    status: RunStatus,
    iteration: usize,
    tasks: Vec<Task>,
    by_id: HashMap<String, usize>,
    retired: HashSet<String>,
    labeled_props: usize,
}

impl Run {
    fn batch_complete(&self) -> bool {
        self.status == RunStatus::Labeling && self.tasks.iter().all(|t| t.public.status != TaskStatus::Pending)
    }
}

#[derive(Debug)]
struct Inner {
    cfg: ServiceConfig,
    store: LabeledStore,
    persistence: Option<Persistence>,
    run: Option<Run>,
}

#[derive(Debug)]
pub struct Service {
    inner: Mutex<Inner>,
    changed: Condvar,
}

fn now_string() -> String {
    let d = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    format!("{}.{:03}", d.as_secs(), d.subsec_millis())
}

impl Service {
    pub fn new(cfg: ServiceConfig) -> std::io::Result<Arc<Self>> {
        let (persistence, store) = match &cfg.data_dir {
            Some(dir) => {
                let (p, s) = Persistence::open(dir, cfg.snapshot_every)?;
                (Some(p), s)
            }
            None => (None, LabeledStore::default()),
        };
        Ok(Arc::new(Self { inner: Mutex::new(Inner { cfg, store, persistence, run: None }), changed: Condvar::new() }))
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// A copy of the labeled store.
    pub fn store(&self) -> LabeledStore {
        self.lock().store.clone()
    }

    pub fn start_run(&self, info: RunInfo, docs: Arc<Vec<Document>>) {
        let doc_index = docs.iter().enumerate().map(|(i, d)| (d.doc_id.clone(), i)).collect();
        let ampere = docs.iter().flat_map(|d| &d.propositions).all(|p| p.ptype.is_ampere());
        let mut inner = self.lock();
        inner.run = Some(Run {
            info,
            docs,
            doc_index,
            ampere,
            status: RunStatus::Selecting,
            iteration: 0,
            tasks: Vec::new(),
            by_id: HashMap::new(),
            retired: HashSet::new(),
            labeled_props: 0,
        });
        self.changed.notify_all();
    }

    pub fn set_status(&self, status: RunStatus) {
        if let Some(run) = self.lock().run.as_mut() {
            run.status = status;
        }
        self.changed.notify_all();
    }

    /// Drop the active run; later queue requests conflict.
    pub fn end_run(&self) {
        self.lock().run = None;
        self.changed.notify_all();
    }

    /// Open the tasks of one iteration, one per selected proposition. A
    /// batch already open for the same iteration is kept as is, so a resumed
    /// run picks up partially labeled work.
    pub fn publish(&self, iteration: usize, selected: &[AcquisitionScore]) {
        let mut guard = self.lock();
        let inner = &mut *guard;
        let Some(run) = inner.run.as_mut() else { return };
        if run.iteration == iteration && !run.tasks.is_empty() {
            run.status = RunStatus::Labeling;
            return;
        }
        let old: Vec<String> = run.tasks.drain(..).map(|t| t.public.task_id).collect();
        run.retired.extend(old);
        run.by_id.clear();
        run.iteration = iteration;
        run.status = RunStatus::Labeling;
        for (n, s) in selected.iter().enumerate() {
            let doc = &run.docs[s.prop.doc];
            let head = s.prop.prop;
            let candidates: Vec<usize> = window_candidates(doc, head, &run.info.window)
                .into_iter()
                .filter(|&t| inner.store.get(&doc.doc_id, head, t).is_none())
                .collect();
            let mut shown: Vec<usize> = candidates.clone();
            shown.push(head);
            shown.sort_unstable();
            let window = shown
                .iter()
                .map(|&i| WindowProp { id: i, text: doc.propositions[i].text.clone(), ptype: doc.propositions[i].ptype })
                .collect();
            let status = if candidates.is_empty() { TaskStatus::Labeled } else { TaskStatus::Pending };
            if status == TaskStatus::Labeled {
                run.labeled_props += 1;
            }
            let task_id = format!("{}-i{iteration}-{n}", run.info.run_id);
            run.by_id.insert(task_id.clone(), run.tasks.len());
            run.tasks.push(Task {
                public: AnnotationTask { task_id, doc_id: doc.doc_id.clone(), head, candidates, window, score: s.score, status },
                doc: s.prop.doc,
                lease: None,
                submissions: Vec::new(),
            });
        }
        self.changed.notify_all();
    }

    /// Block until every task of the open batch is done, then return the
    /// labeled pairs. `None` on timeout or when the run went away.
    pub fn wait_batch(&self, timeout: Duration) -> Option<Vec<RevealedPair>> {
        let deadline = Instant::now() + timeout;
        let mut inner = self.lock();
        loop {
            let run = inner.run.as_ref()?;
            if run.batch_complete() {
                break;
            }
            let left = deadline.checked_duration_since(Instant::now())?;
            inner = self.changed.wait_timeout(inner, left).unwrap_or_else(|e| e.into_inner()).0;
        }
        let run = inner.run.as_mut().expect("checked above");
        run.status = RunStatus::Training;
        let mut out = Vec::new();
        for t in &run.tasks {
            if let Some((_, decisions)) = t.submissions.first() {
                for d in decisions {
                    out.push(RevealedPair { doc: t.doc, head: t.public.head, tail: d.tail, label: d.decision.into() });
                }
            }
        }
        Some(out)
    }

    pub fn queue(&self, limit: usize, annotator: Option<&str>) -> Result<Vec<AnnotationTask>, ApiError> {
        let mut inner = self.lock();
        let overlap = inner.cfg.overlap;
        let lease = inner.cfg.lease;
        let run = inner.run.as_mut().ok_or_else(ApiError::no_run)?;
        let now = Instant::now();
        let mut open: Vec<&mut Task> = run
            .tasks
            .iter_mut()
            .filter(|t| t.public.status == TaskStatus::Pending)
            .filter(|t| match annotator {
                Some(a) => !t.submissions.iter().any(|(who, _)| who == a),
                None => true,
            })
            .filter(|t| {
                overlap
                    || match (&t.lease, annotator) {
                        (Some((holder, at)), a) => now.duration_since(*at) >= lease || Some(holder.as_str()) == a,
                        (None, _) => true,
                    }
            })
            .collect();
        open.sort_by(|a, b| b.public.score.total_cmp(&a.public.score));
        open.truncate(limit);
        if let (Some(a), false) = (annotator, overlap) {
            for t in open.iter_mut() {
                t.lease = Some((a.to_string(), now));
            }
        }
        Ok(open.into_iter().map(|t| t.public.clone()).collect())
    }

    pub fn submit(&self, sub: LabelSubmission) -> Result<SubmitAck, ApiError> {
        let mut guard = self.lock();
        let inner = &mut *guard;
        let required = if inner.cfg.overlap { 2 } else { 1 };
        let lease = inner.cfg.lease;
        let run = inner.run.as_mut().ok_or_else(ApiError::no_run)?;
        let Some(&idx) = run.by_id.get(&sub.task_id) else {
            return Err(if run.retired.contains(&sub.task_id) {
                ApiError::conflict("stale_task", format!("task {} belongs to a finished iteration", sub.task_id))
            } else {
                ApiError::not_found("unknown_task", format!("no task {}", sub.task_id))
            });
        };
        if sub.annotator.trim().is_empty() {
            return Err(ApiError::invalid("annotator", "annotator id is required".into()));
        }
        let docs = Arc::clone(&run.docs);
        let doc = &docs[run.tasks[idx].doc];
        let task = &run.tasks[idx];
        if task.public.status != TaskStatus::Pending || task.submissions.iter().any(|(a, _)| *a == sub.annotator) {
            return Err(ApiError::conflict("duplicate_submission", format!("task {} already labeled", sub.task_id)));
        }
        if required == 1 {
            if let Some((holder, at)) = &task.lease {
                if *holder != sub.annotator && at.elapsed() < lease {
                    return Err(ApiError::conflict("leased", format!("task {} is leased by {holder}", sub.task_id)));
                }
            }
        }
        let head = task.public.head;
        let mut decisions = sub.decisions.clone();
        if sub.skip {
            decisions.clear();
        } else {
            decisions.sort_by_key(|d| d.tail);
            let tails: Vec<usize> = decisions.iter().map(|d| d.tail).collect();
            if tails != task.public.candidates {
                return Err(ApiError::invalid(
                    "coverage",
                    format!("decisions must cover exactly the candidates {:?}", task.public.candidates),
                ));
            }
            for d in decisions.iter().filter(|d| d.decision != Decision::None) {
                if let Some(other) = inner.store.outgoing(&doc.doc_id, d.tail).filter(|&h| h != head) {
                    return Err(ApiError::invalid(
                        rules::SINGLE_OUTGOING,
                        format!("proposition {} already has an outgoing relation to {other}", d.tail),
                    ));
                }
                if run.ampere && doc.propositions[head].ptype.is_factual() && doc.propositions[d.tail].ptype.is_subjective() {
                    return Err(ApiError::invalid(
                        rules::FACTUAL_HEAD,
                        format!("subjective proposition {} cannot link to factual head {head}", d.tail),
                    ));
                }
            }
        }
        let primary = task.submissions.is_empty() && !sub.skip;
        let entry = LogEntry {
            seq: inner.store.last_seq + 1,
            task_id: sub.task_id.clone(),
            doc_id: doc.doc_id.clone(),
            head,
            decisions: decisions.clone(),
            annotator: sub.annotator.clone(),
            timestamp: sub.timestamp.clone().unwrap_or_else(now_string),
            iteration: run.iteration,
            primary,
        };
        if let Some(p) = inner.persistence.as_mut() {
            p.append(&entry).map_err(ApiError::storage)?;
        }
        inner.store.apply(&entry);
        if let Some(p) = inner.persistence.as_mut() {
            if let Err(e) = p.maybe_snapshot(&inner.store) {
                tracing::warn!(error = %e, "snapshot failed; the log still holds every entry");
            }
        }
        let task = &mut run.tasks[idx];
        task.submissions.push((sub.annotator, decisions));
        if sub.skip {
            task.public.status = TaskStatus::Skipped;
        } else if task.submissions.len() >= required {
            task.public.status = TaskStatus::Labeled;
        }
        if task.public.status != TaskStatus::Pending {
            run.labeled_props += 1;
        }
        let status = task.public.status;
        let batch_complete = run.batch_complete();
        drop(guard);
        self.changed.notify_all();
        Ok(SubmitAck { task_id: sub.task_id, status, batch_complete })
    }

    pub fn progress(&self) -> Progress {
        let inner = self.lock();
        let per_annotator = inner.store.annotator_counts.clone();
        let Some(run) = inner.run.as_ref() else {
            return Progress { active: false, iteration: 0, labeled: 0, pending: 0, per_annotator, kappa: None };
        };
        let mut rows = Vec::new();
        for t in run.tasks.iter().filter(|t| t.submissions.len() >= 2) {
            let (a, b) = (&t.submissions[0].1, &t.submissions[1].1);
            for (x, y) in a.iter().zip(b) {
                let mut row = vec![0u64; 3];
                row[x.decision.index()] += 1;
                row[y.decision.index()] += 1;
                rows.push(row);
            }
        }
        let kappa = RatingTable::new(rows).ok().and_then(|t| fleiss_kappa(&t).ok());
        Progress {
            active: true,
            iteration: run.iteration,
            labeled: run.labeled_props,
            pending: run.tasks.iter().filter(|t| t.public.status == TaskStatus::Pending).count(),
            per_annotator,
            kappa,
        }
    }

    pub fn run_view(&self) -> RunView {
        let inner = self.lock();
        match inner.run.as_ref() {
            Some(r) => RunView { active: true, info: Some(r.info.clone()), status: Some(r.status), iteration: r.iteration },
            None => RunView { active: false, info: None, status: None, iteration: 0 },
        }
    }

    pub fn document(&self, doc_id: &str) -> Result<DocView, ApiError> {
        let inner = self.lock();
        let run = inner.run.as_ref().ok_or_else(ApiError::no_run)?;
        let &i = run.doc_index.get(doc_id).ok_or_else(|| ApiError::not_found("unknown_doc", format!("no document {doc_id}")))?;
        let doc = &run.docs[i];
        Ok(DocView {
            doc_id: doc.doc_id.clone(),
            propositions: doc
                .propositions
                .iter()
                .map(|p| WindowProp { id: p.id, text: p.text.clone(), ptype: p.ptype })
                .collect(),
            labeled: inner
                .store
                .document_pairs(doc_id)
                .into_iter()
                .map(|(head, tail, decision)| StoredRelation { head, tail, decision })
                .collect(),
        })
    }
}

/// Oracle backed by the service: publishes the selection as tasks and waits
/// for annotators to finish them.
pub struct ExternalOracle {
    pub service: Arc<Service>,
    pub timeout: Duration,
}

impl Oracle for ExternalOracle {
    fn label(&mut self, request: &LabelRequest) -> Result<Vec<RevealedPair>, OracleError> {
        self.service.publish(request.iteration, request.selected);
        match self.service.wait_batch(self.timeout) {
            Some(pairs) => Ok(pairs),
            None => {
                self.service.set_status(RunStatus::Suspended);
                Err(OracleError::Timeout)
            }
        }
    }
}
