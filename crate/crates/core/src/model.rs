//! Segmentation model contract and the built-in nearest-prototype model.
//!
//! A model is trained on human-labeled and machine-labeled samples; machine
//! samples enter the objective with weight `lambda`. The reference model
//! realizes that weighting directly: each class prototype is the weighted mean
//! of its pixels' feature vectors (weight 1 for human pixels, `lambda` for
//! machine pixels), and prediction is a softmax over negative squared
//! distances to the prototypes.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::raster::{FeatureRaster, ProbStack};

/// Features plus a per-pixel label map (`classes − 1` is background).
#[derive(Debug, Clone, Copy)]
pub struct TrainingSample<'a> {
    pub features: &'a FeatureRaster,
    pub labels: &'a [u16],
}

pub trait Predictor {
    /// Per-class probabilities; must pass [`crate::validate_prob_stack`].
    fn predict(&self, features: &FeatureRaster) -> Result<ProbStack>;
}

pub trait SegmentationModel {
    type Trained: Predictor;

    /// Total classes including background.
    fn classes(&self) -> usize;

    /// Trains from scratch. Must be deterministic for a given seed.
    fn train(
        &self,
        human: &[TrainingSample<'_>],
        machine: &[TrainingSample<'_>],
        lambda: f64,
        seed: u64,
    ) -> Result<Self::Trained>;
}

pub const DEFAULT_TEMPERATURE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceTrainer {
    pub classes: usize,
    pub temperature: f64,
}

impl ReferenceTrainer {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    /// One feature-space prototype per class.
    pub prototypes: Vec<Vec<f64>>,
    pub temperature: f64,
}

impl SegmentationModel for ReferenceTrainer {
    type Trained = ReferenceModel;

    fn classes(&self) -> usize {
        self.classes
    }

    fn train(
        &self,
        human: &[TrainingSample<'_>],
        machine: &[TrainingSample<'_>],
        lambda: f64,
        seed: u64,
    ) -> Result<ReferenceModel> {
        train_reference(self, human, machine, lambda, seed)
    }
}

impl Predictor for ReferenceModel {
    fn predict(&self, features: &FeatureRaster) -> Result<ProbStack> {
        predict_reference(self, features)
    }
}

/// λ-weighted per-class feature means. The seed is accepted for the contract;
/// the computation is deterministic without it.
pub fn train_reference(
    trainer: &ReferenceTrainer,
    human: &[TrainingSample<'_>],
    machine: &[TrainingSample<'_>],
    lambda: f64,
    _seed: u64,
) -> Result<ReferenceModel> {
    if !(trainer.temperature > 0.0) {
        return Err(Error::Model("temperature must be positive".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Model("lambda must be non-negative".into()));
    }
    let classes = trainer.classes;
    let dim = human
        .iter()
        .chain(machine)
        .map(|s| s.features.channels())
        .next()
        .ok_or(Error::NoLabeledData)?;
    let mut sums = vec![vec![0.0f64; dim]; classes];
    let mut weights = vec![0.0f64; classes];
    for (samples, w) in [(human, 1.0), (machine, lambda)] {
        if w == 0.0 {
            continue;
        }
        for s in samples {
            let f = s.features;
            if f.channels() != dim {
                return Err(Error::Model(alloc::format!(
                    "feature rasters disagree on channels: {dim} vs {}",
                    f.channels()
                )));
            }
            if s.labels.len() != f.height() * f.width() {
                return Err(Error::DimensionMismatch {
                    expected: f.dims(),
                    found: (s.labels.len(), 1),
                });
            }
            for (i, &l) in s.labels.iter().enumerate() {
                let l = l as usize;
                if l >= classes {
                    return Err(Error::Model(alloc::format!("label {l} out of range")));
                }
                weights[l] += w;
                for (d, acc) in sums[l].iter_mut().enumerate() {
                    *acc += w * f.value(d, i) as f64;
                }
            }
        }
    }
    let mut prototypes = Vec::with_capacity(classes);
    for (c, (sum, w)) in sums.into_iter().zip(&weights).enumerate() {
        if *w <= 0.0 {
            return Err(Error::DegenerateClass { class: c });
        }
        prototypes.push(sum.into_iter().map(|x| x / w).collect());
    }
    Ok(ReferenceModel {
        prototypes,
        temperature: trainer.temperature,
    })
}

/// `p_c ∝ exp(−‖f − proto_c‖² / T)`, normalized across classes.
pub fn predict_reference(model: &ReferenceModel, features: &FeatureRaster) -> Result<ProbStack> {
    let classes = model.prototypes.len();
    let dim = model.prototypes[0].len();
    if features.channels() != dim {
        return Err(Error::Model(alloc::format!(
            "model expects {dim} feature channels, got {}",
            features.channels()
        )));
    }
    let n = features.height() * features.width();
    let mut data = vec![0.0f32; classes * n];
    let mut logits = vec![0.0f64; classes];
    for i in 0..n {
        for (c, proto) in model.prototypes.iter().enumerate() {
            let d2: f64 = proto
                .iter()
                .enumerate()
                .map(|(d, &p)| {
                    let x = features.value(d, i) as f64 - p;
                    x * x
                })
                .sum();
            logits[c] = -d2 / model.temperature;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = libm::exp(*l - max);
            total += *l;
        }
        for c in 0..classes {
            data[c * n + i] = (logits[c] / total) as f32;
        }
    }
    Ok(ProbStack::new(features.height(), features.width(), classes, data)?.with_normalized(true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::validate_prob_stack;

    /// Two pixel populations around (0, 0) and (1, 1) with small offsets.
    fn separable(offset: f32) -> (FeatureRaster, Vec<u16>) {
        let n = 16;
        let mut data = vec![0.0f32; 2 * n];
        let mut labels = vec![0u16; n];
        for i in 0..n {
            let fg = i % 2 == 0;
            let jitter = (i as f32 * 0.37).sin() * 0.1 + offset;
            let base = if fg { 1.0 } else { 0.0 };
            data[i] = base + jitter;
            data[n + i] = base - jitter;
            labels[i] = if fg { 0 } else { 1 };
        }
        (FeatureRaster::new(2, 4, 4, data).unwrap(), labels)
    }

    #[test]
    fn separable_classes_are_recovered() {
        let (f, l) = separable(0.0);
        let trainer = ReferenceTrainer::new(2);
        let model = trainer
            .train(&[TrainingSample { features: &f, labels: &l }], &[], 1.0, 0)
            .unwrap();
        let (held_out, truth) = separable(0.05);
        let probs = model.predict(&held_out).unwrap();
        assert!(validate_prob_stack(&probs).is_ok());
        assert_eq!(probs.argmax(), truth);
    }

    #[test]
    fn zero_lambda_ignores_machine_samples() {
        let (f, l) = separable(0.0);
        let (g, m) = separable(0.5);
        let trainer = ReferenceTrainer::new(2);
        let human = [TrainingSample { features: &f, labels: &l }];
        let machine = [TrainingSample { features: &g, labels: &m }];
        let only = trainer.train(&human, &[], 1.0, 0).unwrap();
        let ignored = trainer.train(&human, &machine, 0.0, 0).unwrap();
        assert_eq!(only, ignored);
        let weighted = trainer.train(&human, &machine, 1.0, 0).unwrap();
        assert_ne!(only, weighted);
        // equal weights put the prototype halfway between both offsets
        assert!((weighted.prototypes[0][0] - (only.prototypes[0][0] + 0.25)).abs() < 1e-6);
    }

    #[test]
    fn missing_class_is_degenerate() {
        let (f, _) = separable(0.0);
        let all_bg = vec![1u16; 16];
        let err = ReferenceTrainer::new(2)
            .train(&[TrainingSample { features: &f, labels: &all_bg }], &[], 1.0, 0)
            .unwrap_err();
        assert_eq!(err, Error::DegenerateClass { class: 0 });
    }

    #[test]
    fn no_samples() {
        assert_eq!(
            ReferenceTrainer::new(2).train(&[], &[], 1.0, 0).unwrap_err(),
            Error::NoLabeledData
        );
    }

    #[test]
    fn training_is_deterministic() {
        let (f, l) = separable(0.1);
        let t = ReferenceTrainer::new(2);
        let s = [TrainingSample { features: &f, labels: &l }];
        assert_eq!(t.train(&s, &[], 1.0, 1).unwrap(), t.train(&s, &[], 1.0, 1).unwrap());
    }
}
