//! Persisted loop state (`state.json`) and round history (`history.json`).

use std::collections::BTreeMap;
use std::path::Path;

use samdsk_core::orchestrator::{DatasetState, MachineLabel, RoundBounds, RoundRecord, RoundSchedule};
use samdsk_core::Metric;
use serde_json::{json, Map, Value};

use crate::annotation::{assignment_value, masks_value, read_assignment, read_masks};
use crate::error::{IoError, Result};
use crate::json::{self, dims_value, each, optional, required, Field, Kind};

/// Everything that shapes a run's results. A resumed run must present the
/// same configuration, except for the round cap.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub schedule: RoundSchedule,
    pub temperature: f64,
}

impl RunConfig {
    pub fn to_value(&self) -> Value {
        let s = &self.schedule;
        let entries: Vec<Value> = s
            .entries
            .iter()
            .map(|e| json!({"v_lower": e.v_lower, "v_upper": e.v_upper}))
            .collect();
        json!({
            "entries": entries,
            "max_rounds": s.max_rounds,
            "lambda": s.lambda,
            "beta_star": s.beta_star,
            "exact_budget": s.exact_budget,
            "metric": s.metric.name(),
            "seed": s.seed,
            "readmit": s.readmit,
            "temperature": self.temperature,
        })
    }

    fn from_field(f: Field<'_>) -> Result<Self> {
        f.only_keys(&[
            "entries",
            "max_rounds",
            "lambda",
            "beta_star",
            "exact_budget",
            "metric",
            "seed",
            "readmit",
            "temperature",
        ])?;
        let entries = required(&f, "entries", |l| {
            each(&l, |_, e| {
                e.only_keys(&["v_lower", "v_upper"])?;
                Ok(RoundBounds {
                    v_lower: required(&e, "v_lower", |x| each(&x, |_, n| n.usize()))?,
                    v_upper: required(&e, "v_upper", |x| each(&x, |_, n| n.usize()))?,
                })
            })
        })?;
        let mut schedule = RoundSchedule::new(entries, required(&f, "max_rounds", |x| x.usize())?)
            .map_err(|e| f.error(e.to_string()))?;
        schedule.lambda = required(&f, "lambda", |x| x.f64())?;
        schedule.beta_star = required(&f, "beta_star", |x| x.f64())?;
        schedule.exact_budget = required(&f, "exact_budget", |x| x.u64())?;
        schedule.metric = required(&f, "metric", |x| {
            let s = x.str()?;
            Metric::parse(s).ok_or_else(|| x.error(format!("unknown metric {s:?}")))
        })?;
        schedule.seed = required(&f, "seed", |x| x.u64())?;
        schedule.readmit = required(&f, "readmit", |x| x.bool())?;
        schedule.validate().map_err(|e| f.error(e.to_string()))?;
        Ok(Self {
            schedule,
            temperature: required(&f, "temperature", |x| x.f64())?,
        })
    }

    /// Differences that forbid resuming under `self`.
    pub fn check_resumable(&self, persisted: &RunConfig) -> Result<()> {
        let mut a = persisted.clone();
        a.schedule.max_rounds = self.schedule.max_rounds;
        if a != *self {
            return Err(IoError::StateMismatch(format!(
                "persisted configuration {} differs from the requested {}",
                persisted.to_value(),
                self.to_value()
            )));
        }
        Ok(())
    }
}

pub fn record_value(r: &RoundRecord) -> Value {
    json!({
        "round": r.round,
        "v_lower": r.v_lower,
        "v_upper": r.v_upper,
        "matched": r.matched,
        "added": r.added,
        "admitted": r.admitted,
        "infeasible": r.infeasible,
        "relabeled": r.relabeled,
        "human": r.human,
        "machine": r.machine,
        "unlabeled": r.unlabeled,
        "mean_beta_added": r.mean_beta_added,
        "mean_beta_all": r.mean_beta_all,
        "heldout_dice": r.heldout_dice,
    })
}

fn read_record(f: Field<'_>) -> Result<RoundRecord> {
    f.only_keys(&[
        "round",
        "v_lower",
        "v_upper",
        "matched",
        "added",
        "admitted",
        "infeasible",
        "relabeled",
        "human",
        "machine",
        "unlabeled",
        "mean_beta_added",
        "mean_beta_all",
        "heldout_dice",
    ])?;
    let n = |key: &str| required(&f, key, |x| x.usize());
    let x = |key: &str| optional(&f, key, |x| x.f64());
    let admitted = required(&f, "admitted", |l| each(&l, |_, s| Ok(s.str()?.to_string())))?;
    let added = n("added")?;
    if added != admitted.len() {
        return Err(f.error(format!("added = {added} but {} ids admitted", admitted.len())));
    }
    Ok(RoundRecord {
        round: n("round")?,
        v_lower: required(&f, "v_lower", |l| each(&l, |_, v| v.usize()))?,
        v_upper: required(&f, "v_upper", |l| each(&l, |_, v| v.usize()))?,
        matched: n("matched")?,
        added,
        admitted,
        infeasible: n("infeasible")?,
        relabeled: n("relabeled")?,
        human: n("human")?,
        machine: n("machine")?,
        unlabeled: n("unlabeled")?,
        mean_beta_added: x("mean_beta_added")?,
        mean_beta_all: x("mean_beta_all")?,
        heldout_dice: x("heldout_dice")?,
    })
}

pub fn history_value(history: &[RoundRecord]) -> Value {
    json!({"rounds": history.iter().map(record_value).collect::<Vec<_>>()})
}

pub fn history_from_value(v: &Value) -> Result<Vec<RoundRecord>> {
    let root = json::root(v, Kind::History);
    root.only_keys(&["rounds"])?;
    required(&root, "rounds", |l| each(&l, |_, r| read_record(r)))
}

pub fn load_history(path: &Path) -> Result<Vec<RoundRecord>> {
    history_from_value(&json::parse(&json::read_text(path)?)?).map_err(|e| e.in_file(path))
}

pub fn state_value(state: &DatasetState, config: &RunConfig) -> Value {
    let machine: Map<String, Value> = state
        .machine()
        .iter()
        .map(|(id, m)| {
            let v = json!({
                "size": dims_value(m.annotation.dims()),
                "masks": masks_value(&m.annotation),
                "assignment": assignment_value(&m.assignment),
                "beta": m.beta,
                "round_added": m.round_added,
            });
            (id.clone(), v)
        })
        .collect();
    json!({
        "classes": state.classes(),
        "config": config.to_value(),
        "human": state.human().iter().collect::<Vec<_>>(),
        "unlabeled": state.unlabeled().iter().collect::<Vec<_>>(),
        "machine": machine,
        "history": state.history().iter().map(record_value).collect::<Vec<_>>(),
    })
}

pub fn state_from_value(v: &Value) -> Result<(DatasetState, RunConfig)> {
    let root = json::root(v, Kind::State);
    root.only_keys(&["classes", "config", "human", "unlabeled", "machine", "history"])?;
    let classes = required(&root, "classes", |f| f.usize())?;
    let config = required(&root, "config", RunConfig::from_field)?;
    let ids = |f: Field<'_>| each(&f, |_, s| Ok(s.str()?.to_string()));
    let human = required(&root, "human", ids)?;
    let unlabeled = required(&root, "unlabeled", ids)?;
    let machine = required(&root, "machine", |f| {
        let mut out = BTreeMap::new();
        for (id, entry) in f.object()? {
            let owned = f.child_path(id);
            let e = f.at(entry, &owned);
            e.only_keys(&["size", "masks", "assignment", "beta", "round_added"])?;
            let dims = required(&e, "size", json::dims)?;
            let assignment = required(&e, "assignment", read_assignment)?;
            let annotation = required(&e, "masks", |m| read_masks(m, dims))?
                .with_provenance(id.clone(), assignment.clone());
            out.insert(
                id.clone(),
                MachineLabel {
                    annotation,
                    assignment,
                    beta: required(&e, "beta", |x| x.f64())?,
                    round_added: required(&e, "round_added", |x| x.usize())?,
                },
            );
        }
        Ok(out)
    })?;
    let history = required(&root, "history", |l| each(&l, |_, r| read_record(r)))?;
    let state = DatasetState::from_parts(classes, human, machine, unlabeled, history)
        .map_err(|e| root.error(e.to_string()))?;
    state
        .check_invariants(config.schedule.beta_star)
        .map_err(|e| root.error(e.to_string()))?;
    Ok((state, config))
}

pub fn save_state(path: &Path, state: &DatasetState, config: &RunConfig) -> Result<()> {
    json::write_atomic(path, json::canonical(&state_value(state, config)).as_bytes())
}

pub fn load_state(path: &Path) -> Result<(DatasetState, RunConfig)> {
    state_from_value(&json::parse(&json::read_text(path)?)?).map_err(|e| e.in_file(path))
}

pub fn save_history(path: &Path, history: &[RoundRecord]) -> Result<()> {
    json::write_atomic(path, json::canonical(&history_value(history)).as_bytes())
}
