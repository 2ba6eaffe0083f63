//! Pair queue and label log shared by the orchestrator and the feedback service.
//!
//! Three append-only JSONL files are the source of truth:
//! `pairs.jsonl` (issued tickets), `preferences.jsonl` (labels) and
//! `skipped.jsonl` (pairs discarded without a label). Ticket states are
//! rebuilt from them, so a restart loses nothing.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::pref::{Labeler, Mu, PreferenceRecord};
use crate::{Error, Result};

pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const PREFERENCES_FILE: &str = "preferences.jsonl";
pub const SKIPPED_FILE: &str = "skipped.jsonl";

/// Appends one JSON line with a single write.
pub fn append_jsonl<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(&line).map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}

/// Reads every complete line; a missing file is empty and a torn final line is ignored.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TicketState {
    Open,
    Labeled,
    Skipped,
}

/// One orbit frame the UI can request for each side of a pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub azimuth: f64,
    pub elevation: f64,
    pub left_url: String,
    pub right_url: String,
}

/// One capture of a trajectory, in capture order, for the viewpoint-order overlay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewpointStop {
    /// 1-based viewpoint index.
    pub action: usize,
    /// Degrees.
    pub azimuth: f64,
    pub elevation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameManifest {
    pub count: usize,
    pub zoom: f64,
    pub frames: Vec<ManifestFrame>,
    #[serde(default)]
    pub left_order: Vec<ViewpointStop>,
    #[serde(default)]
    pub right_order: Vec<ViewpointStop>,
}

impl FrameManifest {
    /// Turntable at one elevation (degrees), `count` azimuths from 0.
    pub fn turntable(left: &str, right: &str, count: usize, elevation_deg: f64) -> Self {
        let url = |id: &str, az: f64| format!("/api/reconstructions/{id}/frames?azimuth={az}&elevation={elevation_deg}&zoom=1");
        let frames = (0..count)
            .map(|k| {
                let az = 360.0 * k as f64 / count as f64;
                ManifestFrame {
                    azimuth: az,
                    elevation: elevation_deg,
                    left_url: url(left, az),
                    right_url: url(right, az),
                }
            })
            .collect();
        Self {
            count,
            zoom: 1.0,
            frames,
            left_order: Vec::new(),
            right_order: Vec::new(),
        }
    }

    pub fn with_order(mut self, left: Vec<ViewpointStop>, right: Vec<ViewpointStop>) -> Self {
        self.left_order = left;
        self.right_order = right;
        self
    }
}

/// A pair awaiting (or past) judgement. Serialized without `state` in `pairs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTicket {
    pub pair_id: String,
    pub iteration: usize,
    /// Segment ids; each segment's reconstruction shares its id.
    pub left: String,
    pub right: String,
    /// Who is expected to label this pair.
    pub labeler: Labeler,
    pub manifest: FrameManifest,
    pub issued_at: u64,
    #[serde(default = "open_state")]
    pub state: TicketState,
}

fn open_state() -> TicketState {
    TicketState::Open
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub pair_id: String,
    pub ts: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub issued: usize,
    pub open: usize,
    pub labeled: usize,
    pub skipped: usize,
}

/// In-memory view of the three label files of one experiment directory.
#[derive(Debug)]
pub struct LabelStore {
    dir: PathBuf,
    tickets: Vec<PairTicket>,
    index: HashMap<String, usize>,
    records: Vec<PreferenceRecord>,
}

impl LabelStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let mut store = Self {
            dir: dir.to_path_buf(),
            tickets: Vec::new(),
            index: HashMap::new(),
            records: Vec::new(),
        };
        store.refresh()?;
        Ok(store)
    }

    /// Rebuilds tickets and states from disk, picking up writes from other processes.
    pub fn refresh(&mut self) -> Result<()> {
        let mut tickets: Vec<PairTicket> = read_jsonl(&self.dir.join(PAIRS_FILE))?;
        let mut index = HashMap::with_capacity(tickets.len());
        for (i, t) in tickets.iter_mut().enumerate() {
            t.state = TicketState::Open;
            if index.insert(t.pair_id.clone(), i).is_some() {
                return Err(Error::Data(format!("pair id {} issued twice", t.pair_id)));
            }
        }
        let records: Vec<PreferenceRecord> = read_jsonl(&self.dir.join(PREFERENCES_FILE))?;
        for r in &records {
            let i = *index
                .get(&r.pair_id)
                .ok_or_else(|| Error::Data(format!("label for unknown pair {}", r.pair_id)))?;
            if tickets[i].state != TicketState::Open {
                return Err(Error::Data(format!("pair {} labeled twice", r.pair_id)));
            }
            tickets[i].state = TicketState::Labeled;
        }
        let skips: Vec<SkipRecord> = read_jsonl(&self.dir.join(SKIPPED_FILE))?;
        for s in &skips {
            let i = *index
                .get(&s.pair_id)
                .ok_or_else(|| Error::Data(format!("skip for unknown pair {}", s.pair_id)))?;
            if tickets[i].state != TicketState::Open {
                return Err(Error::Data(format!("pair {} closed twice", s.pair_id)));
            }
            tickets[i].state = TicketState::Skipped;
        }
        self.tickets = tickets;
        self.index = index;
        self.records = records;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn tickets(&self) -> &[PairTicket] {
        &self.tickets
    }

    pub fn ticket(&self, pair_id: &str) -> Option<&PairTicket> {
        self.index.get(pair_id).map(|&i| &self.tickets[i])
    }

    pub fn records(&self) -> &[PreferenceRecord] {
        &self.records
    }

    /// Appends new open tickets in order.
    pub fn issue(&mut self, ticket: PairTicket) -> Result<()> {
        if self.index.contains_key(&ticket.pair_id) {
            return Err(Error::Conflict(format!("pair {} already issued", ticket.pair_id)));
        }
        let ticket = PairTicket {
            state: TicketState::Open,
            ..ticket
        };
        #[derive(Serialize)]
        struct Line<'a> {
            pair_id: &'a str,
            iteration: usize,
            left: &'a str,
            right: &'a str,
            labeler: Labeler,
            manifest: &'a FrameManifest,
            issued_at: u64,
        }
        append_jsonl(
            &self.dir.join(PAIRS_FILE),
            &Line {
                pair_id: &ticket.pair_id,
                iteration: ticket.iteration,
                left: &ticket.left,
                right: &ticket.right,
                labeler: ticket.labeler,
                manifest: &ticket.manifest,
                issued_at: ticket.issued_at,
            },
        )?;
        self.index.insert(ticket.pair_id.clone(), self.tickets.len());
        self.tickets.push(ticket);
        Ok(())
    }

    /// Oldest open ticket assigned to `labeler`.
    pub fn next_open(&self, labeler: Labeler) -> Option<&PairTicket> {
        self.tickets
            .iter()
            .find(|t| t.state == TicketState::Open && t.labeler == labeler)
    }

    fn open_index(&self, pair_id: &str) -> Result<usize> {
        let i = *self
            .index
            .get(pair_id)
            .ok_or_else(|| Error::NotFound(format!("pair {pair_id}")))?;
        match self.tickets[i].state {
            TicketState::Open => Ok(i),
            TicketState::Labeled => Err(Error::Conflict(format!("pair {pair_id} is already labeled"))),
            TicketState::Skipped => Err(Error::Conflict(format!("pair {pair_id} was skipped"))),
        }
    }

    /// Records a label given as the raw wire value of `mu`.
    pub fn label(&mut self, pair_id: &str, mu: i64, labeler: Labeler) -> Result<PreferenceRecord> {
        let i = self.open_index(pair_id)?;
        let mu = u8::try_from(mu)
            .ok()
            .and_then(|m| Mu::try_from(m).ok())
            .ok_or_else(|| Error::Validation(format!("mu must be 1 or 2, got {mu}")))?;
        let t = &self.tickets[i];
        let record = PreferenceRecord {
            pair_id: t.pair_id.clone(),
            left: t.left.clone(),
            right: t.right.clone(),
            mu,
            labeler,
            ts: now_millis(),
        };
        append_jsonl(&self.dir.join(PREFERENCES_FILE), &record)?;
        self.tickets[i].state = TicketState::Labeled;
        self.records.push(record.clone());
        Ok(record)
    }

    pub fn skip(&mut self, pair_id: &str) -> Result<()> {
        let i = self.open_index(pair_id)?;
        append_jsonl(
            &self.dir.join(SKIPPED_FILE),
            &SkipRecord {
                pair_id: pair_id.to_string(),
                ts: now_millis(),
            },
        )?;
        self.tickets[i].state = TicketState::Skipped;
        Ok(())
    }

    pub fn counts(&self) -> LabelCounts {
        let mut c = LabelCounts {
            issued: self.tickets.len(),
            ..Default::default()
        };
        for t in &self.tickets {
            match t.state {
                TicketState::Open => c.open += 1,
                TicketState::Labeled => c.labeled += 1,
                TicketState::Skipped => c.skipped += 1,
            }
        }
        c
    }

    /// Counts restricted to one iteration's tickets.
    pub fn iteration_counts(&self, iteration: usize) -> LabelCounts {
        let mut c = LabelCounts::default();
        for t in self.tickets.iter().filter(|t| t.iteration == iteration) {
            c.issued += 1;
            match t.state {
                TicketState::Open => c.open += 1,
                TicketState::Labeled => c.labeled += 1,
                TicketState::Skipped => c.skipped += 1,
            }
        }
        c
    }
}

/// A label store behind a single-writer lock with change notification.
#[derive(Debug)]
pub struct SharedLabels {
    store: Mutex<LabelStore>,
    changed: Condvar,
}

impl SharedLabels {
    pub fn new(store: LabelStore) -> Self {
        Self {
            store: Mutex::new(store),
            changed: Condvar::new(),
        }
    }

    pub fn lock(&self) -> MutexGuard<'_, LabelStore> {
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Wakes every waiter; call after any mutation.
    pub fn notify(&self) {
        self.changed.notify_all();
    }

    pub fn label(&self, pair_id: &str, mu: i64, labeler: Labeler) -> Result<PreferenceRecord> {
        let rec = {
            let mut s = self.lock();
            s.refresh()?;
            s.label(pair_id, mu, labeler)?
        };
        self.notify();
        Ok(rec)
    }

    /// Blocks until `done` holds for the store or `timeout` elapses.
    ///
    /// Wakes on in-process notifications and re-reads the files every
    /// `poll` so labels written by another process are seen too.
    pub fn wait_until(&self, timeout: Duration, poll: Duration, mut done: impl FnMut(&LabelStore) -> bool) -> Result<bool> {
        let deadline = Instant::now() + timeout;
        let mut guard = self.lock();
        loop {
            guard.refresh()?;
            if done(&guard) {
                return Ok(true);
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(false);
            }
            let wait = poll.min(deadline - now);
            guard = self
                .changed
                .wait_timeout(guard, wait)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }
}
