//! Multi-round label-set expansion: train, predict, match, select, expand.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::annotation::{build_annotation, AnnotationMap};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, RleMask};
use crate::matching::{
    solve_matching, Assignment, MatchConstraints, DEFAULT_BETA_STAR, DEFAULT_EXACT_BUDGET,
};
use crate::metric::{binary_overlap, Metric};
use crate::model::{Predictor, SegmentationModel, TrainingSample};
use crate::raster::FeatureRaster;

/// Read access to per-image data. Every error must name the image id.
pub trait ImageSource {
    fn features(&self, id: &str) -> Result<FeatureRaster>;
    fn proposals(&self, id: &str) -> Result<Vec<BinaryMask>>;
    fn ground_truth(&self, id: &str) -> Result<AnnotationMap>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineLabel {
    pub annotation: AnnotationMap,
    pub assignment: Assignment,
    pub beta: f64,
    pub round_added: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub v_lower: Vec<usize>,
    pub v_upper: Vec<usize>,
    /// Images matched this round (unlabeled plus re-matched machine labels).
    pub matched: usize,
    pub added: usize,
    pub admitted: Vec<String>,
    /// Images skipped because no assignment satisfies the bounds.
    pub infeasible: usize,
    /// Machine labels replaced by a re-match (readmit mode only).
    pub relabeled: usize,
    pub human: usize,
    pub machine: usize,
    pub unlabeled: usize,
    pub mean_beta_added: Option<f64>,
    pub mean_beta_all: Option<f64>,
    /// Score of this round's model on held-out data, when evaluated.
    pub heldout_dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetState {
    classes: usize,
    human: BTreeSet<String>,
    machine: BTreeMap<String, MachineLabel>,
    unlabeled: BTreeSet<String>,
    history: Vec<RoundRecord>,
}

impl DatasetState {
    /// Fresh state; ids must be unique across both pools.
    pub fn new<H, U>(classes: usize, human: H, unlabeled: U) -> Result<Self>
    where
        H: IntoIterator<Item = String>,
        U: IntoIterator<Item = String>,
    {
        Self::from_parts(classes, human, BTreeMap::new(), unlabeled, Vec::new())
    }

    /// Rebuilds a persisted state, checking pool disjointness.
    pub fn from_parts<H, U>(
        classes: usize,
        human: H,
        machine: BTreeMap<String, MachineLabel>,
        unlabeled: U,
        history: Vec<RoundRecord>,
    ) -> Result<Self>
    where
        H: IntoIterator<Item = String>,
        U: IntoIterator<Item = String>,
    {
        if classes < 2 {
            return Err(Error::InvalidShape(format!("need at least 2 classes, got {classes}")));
        }
        let mut seen: BTreeSet<String> = machine.keys().cloned().collect();
        let mut take = |id: String| -> Result<String> {
            if !seen.insert(id.clone()) {
                return Err(Error::UnknownImage(id));
            }
            Ok(id)
        };
        let human = human.into_iter().map(&mut take).collect::<Result<BTreeSet<_>>>()?;
        let unlabeled = unlabeled.into_iter().map(&mut take).collect::<Result<BTreeSet<_>>>()?;
        for (id, label) in &machine {
            if label.annotation.foreground() != classes - 1 {
                return Err(Error::InvalidShape(format!(
                    "machine label for {id} has {} foreground classes, expected {}",
                    label.annotation.foreground(),
                    classes - 1
                )));
            }
        }
        Ok(Self {
            classes,
            human,
            machine,
            unlabeled,
            history,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn human(&self) -> &BTreeSet<String> {
        &self.human
    }

    pub fn machine(&self) -> &BTreeMap<String, MachineLabel> {
        &self.machine
    }

    pub fn unlabeled(&self) -> &BTreeSet<String> {
        &self.unlabeled
    }

    pub fn history(&self) -> &[RoundRecord] {
        &self.history
    }

    /// Completed rounds.
    pub fn round(&self) -> usize {
        self.history.len()
    }

    pub fn labeled_len(&self) -> usize {
        self.human.len() + self.machine.len()
    }

    pub fn total_len(&self) -> usize {
        self.labeled_len() + self.unlabeled.len()
    }

    /// Whether the last completed round admitted nothing.
    pub fn is_converged(&self) -> bool {
        self.history.last().is_some_and(|r| r.added == 0)
    }

    /// Moves every candidate with `beta ≥ beta_star` from the unlabeled pool
    /// to the machine-labeled pool. All ids are checked before anything
    /// moves, so an error leaves the state untouched.
    pub fn expand_labeled_set(
        &mut self,
        candidates: Vec<Candidate>,
        beta_star: f64,
        round: usize,
    ) -> Result<Vec<String>> {
        let mut seen = BTreeSet::new();
        for c in &candidates {
            if !self.unlabeled.contains(&c.image_id) || !seen.insert(c.image_id.as_str()) {
                return Err(Error::UnknownImage(c.image_id.clone()));
            }
        }
        let mut admitted = Vec::new();
        for c in candidates {
            if c.assignment.beta >= beta_star {
                self.unlabeled.remove(&c.image_id);
                admitted.push(c.image_id.clone());
                self.machine.insert(
                    c.image_id,
                    MachineLabel {
                        beta: c.assignment.beta,
                        annotation: c.annotation,
                        assignment: c.assignment,
                        round_added: round,
                    },
                );
            }
        }
        Ok(admitted)
    }

    /// Pool disjointness, machine-label admission scores and history
    /// consistency.
    pub fn check_invariants(&self, beta_star: f64) -> Result<()> {
        let broken = |what: String| Err(Error::PreconditionUnmet(what));
        for id in &self.human {
            if self.unlabeled.contains(id) || self.machine.contains_key(id) {
                return broken(format!("{id} is in more than one pool"));
            }
        }
        for id in self.machine.keys() {
            if self.unlabeled.contains(id) {
                return broken(format!("{id} is in more than one pool"));
            }
        }
        for (id, m) in &self.machine {
            if m.beta < beta_star {
                return broken(format!("{id} was admitted with beta {} < {beta_star}", m.beta));
            }
            if m.round_added == 0 || m.round_added > self.history.len() {
                return broken(format!("{id} claims admission in round {}", m.round_added));
            }
        }
        let total = self.total_len();
        let mut labeled = 0;
        for (i, r) in self.history.iter().enumerate() {
            if r.round != i + 1 {
                return broken(format!("history entry {i} is numbered {}", r.round));
            }
            if r.human + r.machine + r.unlabeled != total {
                return broken(format!("round {} does not conserve the pool size", r.round));
            }
            if r.human + r.machine < labeled {
                return broken(format!("labeled set shrank in round {}", r.round));
            }
            labeled = r.human + r.machine;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub image_id: String,
    pub assignment: Assignment,
    pub annotation: AnnotationMap,
}

/// Count bounds for one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundBounds {
    pub v_lower: Vec<usize>,
    pub v_upper: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundSchedule {
    /// Bounds per round; the last entry repeats.
    pub entries: Vec<RoundBounds>,
    pub max_rounds: usize,
    /// Training weight of machine labels.
    pub lambda: f64,
    pub beta_star: f64,
    pub exact_budget: u64,
    pub metric: Metric,
    pub seed: u64,
    /// Re-match machine-labeled images each round instead of freezing them.
    pub readmit: bool,
}

impl RoundSchedule {
    pub fn new(entries: Vec<RoundBounds>, max_rounds: usize) -> Result<Self> {
        let s = Self {
            entries,
            max_rounds,
            lambda: 1.0,
            beta_star: DEFAULT_BETA_STAR,
            exact_budget: DEFAULT_EXACT_BUDGET,
            metric: Metric::default(),
            seed: 0,
            readmit: false,
        };
        s.validate()?;
        Ok(s)
    }

    /// `v_lower = 1` and `v_upper = uppers[r]` for every foreground class.
    pub fn widening(foreground: usize, uppers: &[usize], max_rounds: usize) -> Result<Self> {
        let entries = uppers
            .iter()
            .map(|&u| RoundBounds {
                v_lower: vec![1; foreground],
                v_upper: vec![u; foreground],
            })
            .collect();
        Self::new(entries, max_rounds)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.entries.first() else {
            return Err(Error::InvalidConstraints("schedule has no entries".into()));
        };
        for e in &self.entries {
            if e.v_lower.len() != first.v_lower.len() {
                return Err(Error::InvalidConstraints(
                    "schedule entries disagree on the class count".into(),
                ));
            }
            MatchConstraints::new(e.v_lower.clone(), e.v_upper.clone())?;
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConstraints(format!("lambda {} is negative", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.beta_star) {
            return Err(Error::InvalidConstraints(format!(
                "beta_star {} outside [0, 1]",
                self.beta_star
            )));
        }
        Ok(())
    }

    /// Bounds for 0-based round index `r`.
    pub fn bounds(&self, r: usize) -> &RoundBounds {
        &self.entries[r.min(self.entries.len() - 1)]
    }

    pub fn constraints(&self, r: usize) -> Result<MatchConstraints> {
        let b = self.bounds(r);
        Ok(MatchConstraints::new(b.v_lower.clone(), b.v_upper.clone())?
            .with_beta_star(self.beta_star)
            .with_exact_budget(self.exact_budget)
            .with_metric(self.metric))
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Trains on the current pools from scratch.
pub fn train_on_state<M: SegmentationModel, S: ImageSource + ?Sized>(
    state: &DatasetState,
    model: &M,
    source: &S,
    sched: &RoundSchedule,
) -> Result<M::Trained> {
    if state.human.is_empty() {
        return Err(Error::NoLabeledData);
    }
    let mut human = Vec::with_capacity(state.human.len());
    for id in &state.human {
        let gt = source.ground_truth(id)?;
        if gt.foreground() != state.classes - 1 {
            return Err(Error::MissingData {
                image_id: id.clone(),
                reason: format!(
                    "ground truth has {} foreground classes, expected {}",
                    gt.foreground(),
                    state.classes - 1
                ),
            });
        }
        human.push((source.features(id)?, gt.label_map()));
    }
    let mut machine = Vec::with_capacity(state.machine.len());
    for (id, m) in &state.machine {
        machine.push((source.features(id)?, m.annotation.label_map()));
    }
    model.train(&samples(&human), &samples(&machine), sched.lambda, sched.seed)
}

fn samples(v: &[(FeatureRaster, Vec<u16>)]) -> Vec<TrainingSample<'_>> {
    v.iter()
        .map(|(f, l)| TrainingSample {
            features: f,
            labels: l,
        })
        .collect()
}

/// Predicts and matches one image.
pub fn match_image<P: Predictor + ?Sized, S: ImageSource + ?Sized>(
    id: &str,
    predictor: &P,
    source: &S,
    cons: &MatchConstraints,
) -> Result<Candidate> {
    let features = source.features(id)?;
    let probs = predictor.predict(&features)?;
    let proposals = source.proposals(id)?;
    let tag = |e: Error| match e {
        Error::DimensionMismatch { expected, found } => Error::MissingData {
            image_id: id.to_string(),
            reason: format!("proposal dims {found:?} do not match image dims {expected:?}"),
        },
        other => other,
    };
    let assignment = solve_matching(&proposals, &probs, cons).map_err(tag)?;
    let annotation = build_annotation(&proposals, &assignment, probs.dims())
        .map_err(tag)?
        .with_provenance(id, assignment.clone());
    Ok(Candidate {
        image_id: id.to_string(),
        assignment,
        annotation,
    })
}

/// One round: train, predict and match every unlabeled image, admit those
/// reaching `beta_star`. `evaluate` scores the trained model for the record.
pub fn run_round<M, S, E>(
    state: &mut DatasetState,
    model: &M,
    source: &S,
    sched: &RoundSchedule,
    mut evaluate: E,
) -> Result<(RoundRecord, M::Trained)>
where
    M: SegmentationModel,
    S: ImageSource + ?Sized,
    E: FnMut(&M::Trained) -> Result<Option<f64>>,
{
    sched.validate()?;
    let r = state.round();
    let cons = sched.constraints(r)?;
    if cons.foreground() != state.classes - 1 {
        return Err(Error::InvalidConstraints(format!(
            "schedule has {} foreground classes, dataset has {}",
            cons.foreground(),
            state.classes - 1
        )));
    }
    let trained = train_on_state(state, model, source, sched)?;

    let mut betas = Vec::new();
    let mut infeasible = 0;
    let mut candidates = Vec::new();
    for id in &state.unlabeled {
        match match_image(id, &trained, source, &cons) {
            Ok(c) => {
                betas.push(c.assignment.beta);
                candidates.push(c);
            }
            Err(Error::InfeasibleConstraints(_)) => infeasible += 1,
            Err(e) => return Err(e),
        }
    }
    let mut relabels = Vec::new();
    if sched.readmit {
        for (id, old) in &state.machine {
            match match_image(id, &trained, source, &cons) {
                Ok(c) => {
                    betas.push(c.assignment.beta);
                    if c.assignment.beta >= sched.beta_star && c.annotation != old.annotation {
                        relabels.push(c);
                    }
                }
                Err(Error::InfeasibleConstraints(_)) => infeasible += 1,
                Err(e) => return Err(e),
            }
        }
    }
    let matched = betas.len() + infeasible;

    let round = r + 1;
    let added_betas: Vec<f64> = candidates
        .iter()
        .filter(|c| c.assignment.beta >= sched.beta_star)
        .map(|c| c.assignment.beta)
        .collect();
    let admitted = state.expand_labeled_set(candidates, sched.beta_star, round)?;
    let relabeled = relabels.len();
    for c in relabels {
        let entry = state.machine.get_mut(&c.image_id).expect("re-matched from the pool");
        entry.beta = c.assignment.beta;
        entry.annotation = c.annotation;
        entry.assignment = c.assignment;
    }

    let bounds = sched.bounds(r).clone();
    let record = RoundRecord {
        round,
        v_lower: bounds.v_lower,
        v_upper: bounds.v_upper,
        matched,
        added: admitted.len(),
        admitted,
        infeasible,
        relabeled,
        human: state.human.len(),
        machine: state.machine.len(),
        unlabeled: state.unlabeled.len(),
        mean_beta_added: mean(&added_betas),
        mean_beta_all: mean(&betas),
        heldout_dice: evaluate(&trained)?,
    };
    state.history.push(record.clone());
    Ok((record, trained))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// A round admitted no new image.
    NoAdmissions,
    MaxRounds,
}

#[derive(Debug)]
pub struct LoopOutcome<T> {
    pub stop: StopReason,
    /// Rounds executed by this call (earlier rounds of a resumed state excluded).
    pub rounds_run: usize,
    /// Model of the last executed round.
    pub model: Option<T>,
}

/// Repeats [`run_round`] until a round admits nothing or `max_rounds` rounds
/// exist in the history. Resumes from whatever history `state` carries;
/// `after_round` runs once per completed round, e.g. to persist the state.
pub fn run_loop<M, S, E, A>(
    state: &mut DatasetState,
    model: &M,
    source: &S,
    sched: &RoundSchedule,
    mut evaluate: E,
    mut after_round: A,
) -> Result<LoopOutcome<M::Trained>>
where
    M: SegmentationModel,
    S: ImageSource + ?Sized,
    E: FnMut(&M::Trained) -> Result<Option<f64>>,
    A: FnMut(&DatasetState, &RoundRecord) -> Result<()>,
{
    sched.validate()?;
    let mut rounds_run = 0;
    let mut last = None;
    loop {
        if state.is_converged() {
            return Ok(LoopOutcome {
                stop: StopReason::NoAdmissions,
                rounds_run,
                model: last,
            });
        }
        if state.round() >= sched.max_rounds {
            return Ok(LoopOutcome {
                stop: StopReason::MaxRounds,
                rounds_run,
                model: last,
            });
        }
        let (record, trained) = run_round(state, model, source, sched, &mut evaluate)?;
        after_round(state, &record)?;
        rounds_run += 1;
        last = Some(trained);
    }
}

/// Mean over images and foreground classes of the Dice overlap between the
/// argmax prediction and the ground truth.
pub fn heldout_dice<P: Predictor + ?Sized, S: ImageSource + ?Sized>(
    predictor: &P,
    source: &S,
    ids: &[String],
) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for id in ids {
        let gt = source.ground_truth(id)?;
        let probs = predictor.predict(&source.features(id)?)?;
        if probs.dims() != gt.dims() || probs.classes() != gt.foreground() + 1 {
            return Err(Error::MissingData {
                image_id: id.clone(),
                reason: "prediction shape does not match ground truth".into(),
            });
        }
        let labels = probs.argmax();
        let (h, w) = gt.dims();
        for c in 0..gt.foreground() {
            let pred = BinaryMask::from_fn(h, w, |r, col| labels[r * w + col] as usize == c)?;
            total += binary_overlap(&pred, gt.class_mask(c), Metric::Dice)?;
            n += 1;
        }
    }
    Ok(total / n as f64)
}

/// Column-major run lengths of each foreground class, for persistence.
pub fn annotation_rles(a: &AnnotationMap) -> Vec<RleMask> {
    a.class_masks().iter().map(crate::mask::rle_encode).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ReferenceTrainer;
    use crate::raster::ProbStack;
    use crate::synth::{gen_synthetic_dataset, DatasetParams, Pool, SyntheticImage};
    use std::collections::BTreeMap as Map;

    struct Images(Map<String, SyntheticImage>);

    impl Images {
        fn new(images: Vec<SyntheticImage>) -> Self {
            Self(images.into_iter().map(|i| (i.id.clone(), i)).collect())
        }

        fn get(&self, id: &str) -> Result<&SyntheticImage> {
            self.0.get(id).ok_or_else(|| Error::MissingData {
                image_id: id.to_string(),
                reason: "not in dataset".into(),
            })
        }

        fn ids(&self, pool: Pool) -> Vec<String> {
            self.0.values().filter(|i| i.pool == pool).map(|i| i.id.clone()).collect()
        }

        fn state(&self) -> DatasetState {
            DatasetState::new(2, self.ids(Pool::Labeled), self.ids(Pool::Unlabeled)).unwrap()
        }
    }

    impl ImageSource for Images {
        fn features(&self, id: &str) -> Result<FeatureRaster> {
            Ok(self.get(id)?.features.clone())
        }
        fn proposals(&self, id: &str) -> Result<Vec<BinaryMask>> {
            Ok(self.get(id)?.proposals.clone())
        }
        fn ground_truth(&self, id: &str) -> Result<AnnotationMap> {
            Ok(self.get(id)?.gt.clone())
        }
    }

    fn small(fidelity: f64, unlabeled: usize) -> Images {
        let mut p = DatasetParams::benchmark();
        p.geometry.height = 24;
        p.geometry.width = 24;
        p.human = 4;
        p.unlabeled = unlabeled;
        p.test = 3;
        p.feature_fidelity = (fidelity, fidelity);
        p.human_drift = (0.0, 0.0);
        p.pool_drift = (0.0, 0.0);
        Images::new(gen_synthetic_dataset(11, &p).unwrap())
    }

    /// Cover sizes can reach blobs × fragments, so allow that many.
    fn wide(max_rounds: usize) -> RoundSchedule {
        RoundSchedule::widening(1, &[6], max_rounds).unwrap()
    }

    struct Uniform;
    struct UniformModel;

    impl Predictor for UniformModel {
        fn predict(&self, f: &FeatureRaster) -> Result<ProbStack> {
            ProbStack::uniform(f.height(), f.width(), 2)
        }
    }

    impl SegmentationModel for Uniform {
        type Trained = UniformModel;
        fn classes(&self) -> usize {
            2
        }
        fn train(
            &self,
            _: &[TrainingSample<'_>],
            _: &[TrainingSample<'_>],
            _: f64,
            _: u64,
        ) -> Result<UniformModel> {
            Ok(UniformModel)
        }
    }

    fn candidate(id: &str, beta: f64) -> Candidate {
        let m = BinaryMask::new(2, 2).unwrap();
        Candidate {
            image_id: id.to_string(),
            assignment: Assignment {
                z: vec![vec![]],
                per_class_iou: vec![beta],
                beta,
                exact: true,
            },
            annotation: AnnotationMap::from_class_masks((2, 2), vec![m]).unwrap(),
        }
    }

    fn abc_state() -> DatasetState {
        DatasetState::new(
            2,
            ["h".to_string()],
            ["a", "b", "c"].map(String::from),
        )
        .unwrap()
    }

    #[test]
    fn admits_at_or_above_threshold() {
        let mut s = abc_state();
        let admitted = s
            .expand_labeled_set(
                vec![candidate("a", 0.95), candidate("b", 0.89), candidate("c", 0.91)],
                0.9,
                1,
            )
            .unwrap();
        assert_eq!(admitted, vec!["a", "c"]);
        assert_eq!(s.unlabeled().iter().collect::<Vec<_>>(), vec!["b"]);
        assert_eq!(s.machine()["c"].round_added, 1);
    }

    #[test]
    fn threshold_is_inclusive() {
        let mut s = abc_state();
        assert_eq!(s.expand_labeled_set(vec![candidate("a", 0.9)], 0.9, 1).unwrap(), vec!["a"]);
    }

    #[test]
    fn empty_candidates() {
        let mut s = abc_state();
        assert!(s.expand_labeled_set(vec![], 0.9, 1).unwrap().is_empty());
    }

    #[test]
    fn duplicate_or_unknown_ids_leave_state_untouched() {
        let mut s = abc_state();
        let before = s.clone();
        let err = s
            .expand_labeled_set(vec![candidate("a", 0.95), candidate("a", 0.95)], 0.9, 1)
            .unwrap_err();
        assert_eq!(err, Error::UnknownImage("a".into()));
        assert_eq!(s, before);
        let err = s
            .expand_labeled_set(vec![candidate("a", 0.95), candidate("h", 0.95)], 0.9, 1)
            .unwrap_err();
        assert_eq!(err, Error::UnknownImage("h".into()));
        assert_eq!(s, before);
    }

    #[test]
    fn pools_must_be_disjoint() {
        assert_eq!(
            DatasetState::new(2, ["x".to_string()], ["x".to_string()]).unwrap_err(),
            Error::UnknownImage("x".into())
        );
    }

    #[test]
    fn schedule_repeats_last_entry() {
        let s = RoundSchedule::widening(1, &[1, 2, 3], 10).unwrap();
        assert_eq!(s.bounds(0).v_upper, vec![1]);
        assert_eq!(s.bounds(2).v_upper, vec![3]);
        assert_eq!(s.bounds(7).v_upper, vec![3]);
        assert!(RoundSchedule::new(vec![], 3).is_err());
    }

    #[test]
    fn perfect_fidelity_admits_everything_in_round_one() {
        let data = small(1.0, 8);
        let mut state = data.state();
        let (record, _) =
            run_round(&mut state, &ReferenceTrainer::new(2), &data, &wide(5), |_| Ok(None)).unwrap();
        assert_eq!(record.added, 8);
        assert_eq!(state.unlabeled().len(), 0);
        assert_eq!(state.machine().len(), 8);
        state.check_invariants(0.9).unwrap();
    }

    #[test]
    fn perfect_fidelity_loop_stops_after_round_two() {
        let data = small(1.0, 8);
        let mut state = data.state();
        let out = run_loop(
            &mut state,
            &ReferenceTrainer::new(2),
            &data,
            &wide(10),
            |_| Ok(None),
            |_, _| Ok(()),
        )
        .unwrap();
        assert_eq!(out.stop, StopReason::NoAdmissions);
        assert_eq!(out.rounds_run, 2);
        let adds: Vec<usize> = state.history().iter().map(|r| r.added).collect();
        assert_eq!(adds, vec![8, 0]);
    }

    #[test]
    fn uniform_model_admits_nothing() {
        let data = small(1.0, 6);
        let mut state = data.state();
        let (record, _) = run_round(&mut state, &Uniform, &data, &wide(5), |_| Ok(None)).unwrap();
        assert_eq!(record.added, 0);
        assert_eq!(record.matched, 6);
        assert!(record.mean_beta_all.unwrap() < 0.9);
    }

    #[test]
    fn empty_unlabeled_pool_is_a_valid_round() {
        let data = small(1.0, 0);
        let mut state = data.state();
        let (record, _) =
            run_round(&mut state, &ReferenceTrainer::new(2), &data, &wide(5), |_| Ok(None)).unwrap();
        assert_eq!(record.added, 0);
        assert_eq!(record.mean_beta_all, None);
        assert_eq!(state.round(), 1);
    }

    #[test]
    fn no_human_labels() {
        let data = small(1.0, 2);
        let mut state = DatasetState::new(2, [], data.ids(Pool::Unlabeled)).unwrap();
        assert_eq!(
            run_round(&mut state, &ReferenceTrainer::new(2), &data, &wide(5), |_| Ok(None))
                .unwrap_err(),
            Error::NoLabeledData
        );
    }

    #[test]
    fn missing_proposals_name_the_image() {
        let data = small(1.0, 2);
        let mut state =
            DatasetState::new(2, data.ids(Pool::Labeled), ["ghost".to_string()]).unwrap();
        let err = run_round(&mut state, &ReferenceTrainer::new(2), &data, &wide(5), |_| Ok(None))
            .unwrap_err();
        assert!(matches!(err, Error::MissingData { ref image_id, .. } if image_id == "ghost"));
    }

    #[test]
    fn max_rounds_caps_the_loop() {
        let data = small(0.3, 6);
        let mut state = data.state();
        let mut sched = wide(3);
        // no admissions would stop early, so admit everything
        sched.beta_star = 0.0;
        sched.max_rounds = 1;
        let out = run_loop(
            &mut state,
            &Uniform,
            &data,
            &sched,
            |_| Ok(None),
            |_, _| Ok(()),
        )
        .unwrap();
        assert_eq!(out.stop, StopReason::MaxRounds);
        assert_eq!(state.history().len(), 1);
    }

    #[test]
    fn slow_admissions_run_exactly_max_rounds() {
        // admit one image per round by hand
        let data = small(1.0, 6);
        let mut state = data.state();
        let sched = wide(3);
        let mut rounds = 0;
        while state.round() < sched.max_rounds {
            let next = state.unlabeled().iter().next().cloned().unwrap();
            let c = candidate(&next, 1.0);
            let round = state.round() + 1;
            let admitted = state.expand_labeled_set(vec![c], sched.beta_star, round).unwrap();
            state.history.push(RoundRecord {
                round,
                v_lower: vec![1],
                v_upper: vec![6],
                matched: 1,
                added: admitted.len(),
                admitted,
                infeasible: 0,
                relabeled: 0,
                human: state.human.len(),
                machine: state.machine.len(),
                unlabeled: state.unlabeled.len(),
                mean_beta_added: Some(1.0),
                mean_beta_all: Some(1.0),
                heldout_dice: None,
            });
            rounds += 1;
        }
        assert_eq!(rounds, 3);
        let out = run_loop(
            &mut state,
            &ReferenceTrainer::new(2),
            &data,
            &sched,
            |_| Ok(None),
            |_, _| Ok(()),
        )
        .unwrap();
        assert_eq!(out.stop, StopReason::MaxRounds);
        assert_eq!(out.rounds_run, 0);
        assert_eq!(state.history().len(), 3);
    }

    #[test]
    fn resume_continues_from_history() {
        let data = small(1.0, 8);
        let sched = wide(10);
        let mut full = data.state();
        run_loop(&mut full, &ReferenceTrainer::new(2), &data, &sched, |_| Ok(None), |_, _| Ok(()))
            .unwrap();

        let mut partial = data.state();
        run_round(&mut partial, &ReferenceTrainer::new(2), &data, &sched, |_| Ok(None)).unwrap();
        let out = run_loop(
            &mut partial,
            &ReferenceTrainer::new(2),
            &data,
            &sched,
            |_| Ok(None),
            |_, _| Ok(()),
        )
        .unwrap();
        assert_eq!(out.rounds_run, 1);
        assert_eq!(partial, full);
    }

    #[test]
    fn heldout_dice_of_a_perfect_model() {
        let data = small(1.0, 0);
        let state = data.state();
        let model = train_on_state(&state, &ReferenceTrainer::new(2), &data, &wide(1)).unwrap();
        let d = heldout_dice(&model, &data, &data.ids(Pool::Test)).unwrap();
        assert_eq!(d, 1.0);
        assert!(heldout_dice(&UniformModel, &data, &[]).is_err());
    }

    #[test]
    fn readmit_keeps_pools_monotone() {
        let data = small(0.7, 10);
        let mut state = data.state();
        let mut sched = RoundSchedule::widening(1, &[1, 2, 3], 4).unwrap();
        sched.readmit = true;
        run_loop(
            &mut state,
            &ReferenceTrainer::new(2),
            &data,
            &sched,
            |_| Ok(None),
            |_, _| Ok(()),
        )
        .unwrap();
        state.check_invariants(sched.beta_star).unwrap();
    }
}
