use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use samdsk_core::model::{ReferenceTrainer, SegmentationModel};
use samdsk_core::orchestrator::{
    match_image, run_loop, run_round, train_on_state, DatasetState, ImageSource, RoundSchedule,
    StopReason,
};
use samdsk_core::synth::{gen_synthetic_dataset, DatasetParams, Pool, SyntheticImage, SynthParams};
use samdsk_core::{AnnotationMap, BinaryMask, Error, FeatureRaster, Result};

struct Memory(BTreeMap<String, SyntheticImage>);

impl Memory {
    fn get(&self, id: &str) -> Result<&SyntheticImage> {
        self.0.get(id).ok_or_else(|| Error::MissingData {
            image_id: id.into(),
            reason: "unknown".into(),
        })
    }
}

impl ImageSource for Memory {
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

fn small(classes: usize, fidelity: (f64, f64), drift: (f64, f64)) -> DatasetParams {
    DatasetParams {
        geometry: SynthParams {
            height: 24,
            width: 24,
            classes,
            ..SynthParams::default()
        },
        human: 6,
        unlabeled: 24,
        test: 0,
        feature_fidelity: fidelity,
        human_drift: (0.0, 0.2),
        pool_drift: drift,
        drift_scale: 1.0,
    }
}

fn setup(seed: u64, params: &DatasetParams) -> (Memory, DatasetState) {
    let images = gen_synthetic_dataset(seed, params).unwrap();
    let ids = |p: Pool| -> Vec<String> {
        images.iter().filter(|i| i.pool == p).map(|i| i.id.clone()).collect()
    };
    let state = DatasetState::new(params.geometry.classes, ids(Pool::Labeled), ids(Pool::Unlabeled))
        .unwrap();
    let source = Memory(images.into_iter().map(|i| (i.id.clone(), i)).collect());
    (source, state)
}

fn labeled(s: &DatasetState) -> BTreeSet<String> {
    s.human().iter().chain(s.machine().keys()).cloned().collect()
}

#[test]
fn perfect_features_admit_the_whole_pool_in_round_one() {
    let params = small(2, (1.0, 1.0), (0.0, 0.0));
    let (source, mut state) = setup(4, &params);
    let sched = RoundSchedule::widening(1, &[6], 5).unwrap();
    let trainer = ReferenceTrainer::new(2);
    let out = run_loop(&mut state, &trainer, &source, &sched, |_| Ok(None), |_, _| Ok(())).unwrap();
    let adds: Vec<usize> = state.history().iter().map(|r| r.added).collect();
    assert_eq!(adds, vec![24, 0]);
    assert_eq!(out.stop, StopReason::NoAdmissions);
    assert!(state.unlabeled().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn loop_preserves_pools_and_only_grows_the_labeled_set(
        seed in any::<u64>(),
        classes in 2usize..=3,
        readmit in any::<bool>(),
    ) {
        let params = small(classes, (0.5, 0.9), (0.0, 1.0));
        let (source, mut state) = setup(seed, &params);
        let total = state.total_len();
        let human0 = state.human().clone();
        let mut sched = RoundSchedule::widening(classes - 1, &[1, 2, 3], 6).unwrap();
        sched.readmit = readmit;
        let trainer = ReferenceTrainer::new(classes);

        let mut prev = labeled(&state);
        loop {
            if state.is_converged() || state.round() >= sched.max_rounds {
                break;
            }
            let (rec, _) = run_round(&mut state, &trainer, &source, &sched, |_| Ok(None)).unwrap();
            let now = labeled(&state);
            prop_assert!(prev.is_subset(&now));
            prop_assert_eq!(now.len() - prev.len(), rec.added);
            prop_assert_eq!(state.human(), &human0);
            prop_assert_eq!(rec.human + rec.machine + rec.unlabeled, total);
            prop_assert!(state.unlabeled().is_disjoint(&now));
            state.check_invariants(sched.beta_star).unwrap();
            for id in &rec.admitted {
                let m = &state.machine()[id];
                prop_assert_eq!(m.round_added, rec.round);
                let cons = sched.constraints(rec.round - 1).unwrap();
                prop_assert!(m.assignment.is_feasible(&cons, source.get(id).unwrap().proposals.len()));
                prop_assert!(m.beta >= sched.beta_star);
            }
            prev = now;
        }
        prop_assert!(state.round() <= sched.max_rounds);
    }

    #[test]
    fn a_wider_round_never_lowers_an_image_score(seed in any::<u64>()) {
        let params = small(2, (0.5, 0.9), (0.0, 1.0));
        let (source, state) = setup(seed, &params);
        let sched = RoundSchedule::widening(1, &[1, 2, 3], 3).unwrap();
        let trainer = ReferenceTrainer::new(2);
        prop_assert_eq!(trainer.classes(), 2);
        let model = train_on_state(&state, &trainer, &source, &sched).unwrap();
        for id in state.unlabeled() {
            let mut last = f64::NEG_INFINITY;
            for r in 0..3 {
                let cons = sched.constraints(r).unwrap();
                let c = match_image(id, &model, &source, &cons).unwrap();
                prop_assert!(c.assignment.beta >= last - 1e-12, "{} round {}", id, r + 1);
                last = c.assignment.beta;
            }
        }
    }
}
