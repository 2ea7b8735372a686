//! Resumable loop execution in a run directory.
//!
//! The directory holds `state.json` (full state, rewritten after every
//! round), `history.json` (round records only) and, at the end, `summary.json`.
//! `run.lock` exists while a loop is active.

use std::fs::{File, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use samdsk_core::model::ReferenceTrainer;
use samdsk_core::orchestrator::{heldout_dice, run_loop, DatasetState, StopReason};
use samdsk_core::synth::Pool;
use serde_json::{json, Value};

use crate::error::{IoError, Result};
use crate::json;
use crate::source::DatasetSource;
use crate::state::{load_state, save_history, save_state, RunConfig};

pub const STATE_FILE: &str = "state.json";
pub const HISTORY_FILE: &str = "history.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const LOCK_FILE: &str = "run.lock";

/// Exclusive claim on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
    _file: File,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        let mut file = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == ErrorKind::AlreadyExists => return Err(IoError::Locked(path)),
            Err(e) => return Err(IoError::io(path, e)),
        };
        writeln!(file, "{}", std::process::id()).map_err(|e| IoError::io(&path, e))?;
        Ok(Self { path, _file: file })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub stop: StopReason,
    pub rounds: usize,
    pub rounds_this_call: usize,
    pub resumed: bool,
    pub labeled: usize,
    pub unlabeled: usize,
    pub baseline_dice: Option<f64>,
    pub final_dice: Option<f64>,
}

impl RunSummary {
    pub fn to_value(&self) -> Value {
        json!({
            "stop": match self.stop {
                StopReason::NoAdmissions => "no-admissions",
                StopReason::MaxRounds => "max-rounds",
            },
            "rounds": self.rounds,
            "labeled": self.labeled,
            "unlabeled": self.unlabeled,
            "baseline_dice": self.baseline_dice,
            "final_dice": self.final_dice,
        })
    }
}

/// Runs (or resumes) the loop over `source` in `dir`.
pub fn run_in_dir(source: &DatasetSource, dir: &Path, config: &RunConfig) -> Result<RunSummary> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let _lock = RunLock::acquire(dir)?;
    let state_path = dir.join(STATE_FILE);
    let classes = source.manifest.classes;

    let (mut state, resumed) = if state_path.exists() {
        let (state, persisted) = load_state(&state_path)?;
        config.check_resumable(&persisted)?;
        let listed = source.manifest.images.iter().filter(|e| e.pool != Pool::Test).count();
        if state.classes() != classes || state.total_len() != listed {
            return Err(IoError::StateMismatch(format!(
                "{} tracks {} images of {} classes, the manifest lists {listed} of {classes}",
                state_path.display(),
                state.total_len(),
                state.classes()
            )));
        }
        (state, true)
    } else {
        let state = DatasetState::new(
            classes,
            source.manifest.ids(Pool::Labeled),
            source.manifest.ids(Pool::Unlabeled),
        )?;
        (state, false)
    };

    let test_ids = source.manifest.ids(Pool::Test);
    let trainer = ReferenceTrainer::new(classes).with_temperature(config.temperature);
    let mut persist_err = None;
    let outcome = run_loop(
        &mut state,
        &trainer,
        source,
        &config.schedule,
        |model| {
            if test_ids.is_empty() {
                Ok(None)
            } else {
                heldout_dice(model, source, &test_ids).map(Some)
            }
        },
        |s, _| {
            let r = save_state(&state_path, s, config)
                .and_then(|_| save_history(&dir.join(HISTORY_FILE), s.history()));
            match r {
                Ok(()) => Ok(()),
                Err(e) => {
                    let msg = e.to_string();
                    persist_err = Some(e);
                    Err(samdsk_core::Error::PreconditionUnmet(msg))
                }
            }
        },
    );
    let outcome = match (outcome, persist_err) {
        (_, Some(e)) => return Err(e),
        (o, None) => o?,
    };
    if outcome.rounds_run == 0 {
        // nothing new; make sure the files exist for a fresh directory
        save_state(&state_path, &state, config)?;
        save_history(&dir.join(HISTORY_FILE), state.history())?;
    }

    let history = state.history();
    let summary = RunSummary {
        stop: outcome.stop,
        rounds: history.len(),
        rounds_this_call: outcome.rounds_run,
        resumed,
        labeled: state.labeled_len(),
        unlabeled: state.unlabeled().len(),
        baseline_dice: history.first().and_then(|r| r.heldout_dice),
        final_dice: history.last().and_then(|r| r.heldout_dice),
    };
    json::write_atomic(
        &dir.join(SUMMARY_FILE),
        json::canonical(&summary.to_value()).as_bytes(),
    )?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(IoError::Locked(_))));
        drop(a);
        RunLock::acquire(dir.path()).unwrap();
    }
}
