use super::FuzzError;
use crate::mutation::Strategy;
use crate::scenario::ConcreteScenario;
use crate::sem::TestRecord;
use crate::sim::{EventLog, MisbehaviorKind, RunLimits, Trace};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const REPORT_FILE: &str = "report.json";

/// One executed scenario of the test history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    /// Position in the campaign's execution order.
    pub index: usize,
    /// Seed selection this execution belongs to.
    pub selection: usize,
    pub seed_id: u32,
    pub cycle: usize,
    pub strategy: Strategy,
    /// Evaluation-model generation that filtered this mutant; 0 means unfiltered.
    pub sem_generation: u64,
    pub run_seed: u64,
    pub record: TestRecord,
    pub kinds: Vec<MisbehaviorKind>,
    pub sim_time_s: f64,
    pub error_id: Option<String>,
}

/// Every state change of a campaign, appended to `records.jsonl` before it takes effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "line", rename_all = "snake_case")]
pub enum JournalLine {
    Select { selection: usize, seed: u32, from_queue: bool },
    Exec(Box<ExecutionRecord>),
    /// A mutant that could not run: overlapping spawns or an agent fault.
    Skipped {
        selection: usize,
        cycle: usize,
        scenario_hash: String,
        agent_fault: bool,
        reason: String,
    },
    Requeue { seed: u32 },
    Retrain {
        generation: u64,
        after_executions: usize,
        history: usize,
        validation_accuracy: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub id: String,
    pub execution: usize,
    pub seed_id: u32,
    pub scenario_hash: String,
    pub kinds: Vec<MisbehaviorKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TimelineEvent {
    Error {
        execution: usize,
        sim_time_s: f64,
        id: String,
        kinds: Vec<MisbehaviorKind>,
    },
    Retrain {
        execution: usize,
        generation: u64,
        validation_accuracy: f64,
    },
}

/// Campaign state, reconstructible by folding the journal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CampaignState {
    pub queue: VecDeque<u32>,
    /// Selections per seed.
    pub frequency: BTreeMap<u32, usize>,
    /// Test history T.
    pub records: Vec<ExecutionRecord>,
    /// Error library S_error.
    pub errors: Vec<ErrorEntry>,
    pub selections: usize,
    pub skipped: usize,
    pub agent_faults: usize,
    pub sem_generation: u64,
    pub sim_time_s: f64,
    pub timeline: Vec<TimelineEvent>,
}

impl CampaignState {
    pub fn apply(&mut self, line: &JournalLine) {
        match line {
            JournalLine::Select { seed, from_queue, .. } => {
                if *from_queue {
                    let front = self.queue.pop_front();
                    debug_assert_eq!(front, Some(*seed));
                }
                *self.frequency.entry(*seed).or_default() += 1;
                self.selections += 1;
            }
            JournalLine::Exec(r) => {
                self.sim_time_s += r.sim_time_s;
                if let Some(id) = &r.error_id {
                    self.errors.push(ErrorEntry {
                        id: id.clone(),
                        execution: r.index,
                        seed_id: r.seed_id,
                        scenario_hash: r.record.scenario.hash(),
                        kinds: r.kinds.clone(),
                    });
                    self.timeline.push(TimelineEvent::Error {
                        execution: r.index,
                        sim_time_s: self.sim_time_s,
                        id: id.clone(),
                        kinds: r.kinds.clone(),
                    });
                }
                self.records.push((**r).clone());
            }
            JournalLine::Skipped { agent_fault, .. } => {
                self.skipped += 1;
                if *agent_fault {
                    self.agent_faults += 1;
                }
            }
            JournalLine::Requeue { seed } => self.queue.push_back(*seed),
            JournalLine::Retrain {
                generation,
                after_executions,
                validation_accuracy,
                ..
            } => {
                self.sem_generation = *generation;
                self.timeline.push(TimelineEvent::Retrain {
                    execution: *after_executions,
                    generation: *generation,
                    validation_accuracy: *validation_accuracy,
                });
            }
        }
    }

    pub fn from_journal(lines: &[JournalLine]) -> Self {
        let mut s = CampaignState::default();
        for l in lines {
            s.apply(l);
        }
        s
    }

    pub fn executions(&self) -> usize {
        self.records.len()
    }
}

/// Read a journal. A torn final line (interrupted write) is dropped; corruption
/// anywhere else is an error.
pub fn load_journal(path: &Path) -> Result<Vec<JournalLine>, FuzzError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(FuzzError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let raw: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|source| FuzzError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let mut out = Vec::with_capacity(raw.len());
    for (i, text) in raw.iter().enumerate() {
        if text.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(text) {
            Ok(l) => out.push(l),
            Err(_) if i + 1 == raw.len() => {
                log::warn!("{}: dropping torn final line {}", path.display(), i + 1);
            }
            Err(e) => {
                return Err(FuzzError::Journal {
                    line: i + 1,
                    why: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Contents of `errors/<id>/events.json`: the event log plus what replay needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorArtifact {
    pub id: String,
    pub execution: usize,
    pub seed_id: u32,
    pub map: String,
    pub agent: String,
    pub agent_version: String,
    pub run_seed: u64,
    pub limits: RunLimits,
    pub kinds: Vec<MisbehaviorKind>,
    pub log: EventLog,
}

/// Layout of a campaign state directory.
#[derive(Debug, Clone)]
pub struct StateStore {
    pub root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FuzzError + '_ {
    move |source| FuzzError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write through a temporary file and rename, so readers never see partial content.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FuzzError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

impl StateStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        StateStore { root: root.into() }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn records_path(&self) -> PathBuf {
        self.root.join(RECORDS_FILE)
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join(REPORT_FILE)
    }

    pub fn errors_dir(&self) -> PathBuf {
        self.root.join("errors")
    }

    pub fn error_dir(&self, id: &str) -> PathBuf {
        self.errors_dir().join(id)
    }

    pub fn sem_checkpoint(&self, generation: u64) -> PathBuf {
        self.root.join("sem").join(format!("{generation}.ckpt"))
    }

    pub fn create(&self) -> Result<(), FuzzError> {
        for d in [self.root.clone(), self.errors_dir(), self.root.join("sem")] {
            fs::create_dir_all(&d).map_err(io_err(&d))?;
        }
        Ok(())
    }

    pub fn journal(&self) -> Result<Vec<JournalLine>, FuzzError> {
        load_journal(&self.records_path())
    }

    /// Rewrite the journal to exactly `lines`, dropping any torn tail.
    pub fn rewrite_journal(&self, lines: &[JournalLine]) -> Result<(), FuzzError> {
        let mut buf = Vec::new();
        for l in lines {
            serde_json::to_writer(&mut buf, l).expect("journal line serializes");
            buf.push(b'\n');
        }
        write_atomic(&self.records_path(), &buf)
    }

    pub fn append(&self, line: &JournalLine) -> Result<(), FuzzError> {
        let path = self.records_path();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let mut text = serde_json::to_string(line).expect("journal line serializes");
        text.push('\n');
        f.write_all(text.as_bytes()).map_err(io_err(&path))?;
        f.sync_data().map_err(io_err(&path))
    }

    pub fn has_error_artifacts(&self, id: &str) -> bool {
        let d = self.error_dir(id);
        ["scenario.json", "trace.jsonl", "events.json"].iter().all(|f| d.join(f).is_file())
    }

    /// Write the three artifact files into a scratch directory, then move it into place.
    pub fn write_error(
        &self,
        scenario: &ConcreteScenario,
        trace: &Trace,
        artifact: &ErrorArtifact,
    ) -> Result<PathBuf, FuzzError> {
        let dir = self.error_dir(&artifact.id);
        let tmp = self.errors_dir().join(format!(".{}.tmp", artifact.id));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
        }
        fs::create_dir_all(&tmp).map_err(io_err(&tmp))?;
        let put = |name: &str, bytes: &[u8]| {
            let p = tmp.join(name);
            fs::write(&p, bytes).map_err(io_err(&p))
        };
        put("scenario.json", scenario.to_json_pretty().as_bytes())?;
        put("trace.jsonl", trace.to_jsonl().as_bytes())?;
        put(
            "events.json",
            serde_json::to_string_pretty(artifact).expect("artifact serializes").as_bytes(),
        )?;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::rename(&tmp, &dir).map_err(io_err(&dir))?;
        Ok(dir)
    }

    pub fn read_error(&self, id: &str) -> Result<(ConcreteScenario, Trace, ErrorArtifact), FuzzError> {
        let dir = self.error_dir(id);
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(io_err(&p))
        };
        let bad = |why: String| FuzzError::Journal { line: 0, why };
        let scenario = ConcreteScenario::from_json(&read("scenario.json")?).map_err(|e| bad(e.to_string()))?;
        let trace = Trace::read_jsonl(read("trace.jsonl")?.as_bytes()).map_err(|e| bad(e.to_string()))?;
        let artifact = serde_json::from_str(&read("events.json")?).map_err(|e| bad(e.to_string()))?;
        Ok((scenario, trace, artifact))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Direction;
    use crate::scenario::{EgoMission, WeatherParams, SCENARIO_SCHEMA_VERSION};

    fn exec(index: usize, kinds: Vec<MisbehaviorKind>) -> JournalLine {
        let label = !kinds.is_empty();
        JournalLine::Exec(Box::new(ExecutionRecord {
            index,
            selection: 0,
            seed_id: 1,
            cycle: 0,
            strategy: Strategy::Random,
            sem_generation: 0,
            run_seed: 7,
            record: TestRecord {
                scenario: ConcreteScenario {
                    schema_version: SCENARIO_SCHEMA_VERSION,
                    seed_id: 1,
                    map: "m".into(),
                    mission: EgoMission {
                        start: 0,
                        path: vec![0, 1],
                        seed_path: 0,
                        direction: Direction::Straight,
                    },
                    objects: vec![],
                    puddles: vec![],
                    weather: WeatherParams::default(),
                    attributes: vec![],
                },
                label,
                system: "weak".into(),
                score: (!label).then_some(80.0),
            },
            kinds,
            sim_time_s: 2.5,
            error_id: label.then(|| format!("{index:05}-x")),
        }))
    }

    #[test]
    fn error_outcome_grows_the_library() {
        let mut s = CampaignState::default();
        s.apply(&exec(0, vec![MisbehaviorKind::Crash]));
        assert_eq!((s.records.len(), s.errors.len()), (1, 1));
        s.apply(&exec(1, vec![]));
        assert_eq!((s.records.len(), s.errors.len()), (2, 1));
        assert_eq!(s.sim_time_s, 5.0);
    }

    #[test]
    fn queue_and_frequency() {
        let mut s = CampaignState::default();
        s.apply(&JournalLine::Select {
            selection: 0,
            seed: 4,
            from_queue: false,
        });
        s.apply(&JournalLine::Requeue { seed: 4 });
        s.apply(&JournalLine::Select {
            selection: 1,
            seed: 4,
            from_queue: true,
        });
        assert!(s.queue.is_empty());
        assert_eq!(s.frequency[&4], 2);
        assert_eq!(s.selections, 2);
    }

    #[test]
    fn torn_tail_is_dropped_but_corruption_is_not() {
        let dir = tempfile::tempdir().unwrap();
        let store = StateStore::new(dir.path());
        store.append(&exec(0, vec![])).unwrap();
        store.append(&JournalLine::Requeue { seed: 2 }).unwrap();
        let mut text = fs::read_to_string(store.records_path()).unwrap();
        text.push_str("{\"line\":\"requ");
        fs::write(store.records_path(), &text).unwrap();
        assert_eq!(store.journal().unwrap().len(), 2);
        let broken = text.replacen("{\"line\"", "{\"lin", 1);
        fs::write(store.records_path(), broken).unwrap();
        assert!(matches!(store.journal(), Err(FuzzError::Journal { line: 1, .. })));
        assert!(load_journal(&dir.path().join("missing.jsonl")).unwrap().is_empty());
    }
}
