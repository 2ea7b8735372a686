//! Seeded batches of randomized checks: solver against the exhaustive oracle,
//! the Case-2 agreement bound, monotonicity under widened bounds, and the
//! fidelity sweep behind the selection-quality report.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::annotation::{build_annotation, AnnotationMap};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::matching::{solve_matching, CaseLabel, MatchConstraints};
use crate::oracle::{brute_force_solve, check_case2_bound, SelectionSample};
use crate::raster::ProbStack;
use crate::synth::{gaussian, gen_synthetic_instance, rng_from_seed, SeedSequence, SynthParams};

/// A random matching problem.
#[derive(Debug, Clone)]
pub struct MatchInstance {
    pub proposals: Vec<BinaryMask>,
    pub probs: ProbStack,
    pub cons: MatchConstraints,
}

/// Up to 10 rectangular proposals (some duplicated, some empty), 2 to 4
/// classes, count bounds up to 3 and dims up to 32×32. Probabilities are a
/// softmax of noisy per-class rectangular bumps.
pub fn random_match_instance(seed: u64) -> MatchInstance {
    let mut rng = rng_from_seed(seed);
    let h = rng.random_range(4..=32usize);
    let w = rng.random_range(4..=32usize);
    let classes = rng.random_range(2..=4usize);
    let fg = classes - 1;
    let k = rng.random_range(1..=10usize);

    let rect = |rng: &mut rand_chacha::ChaCha8Rng| {
        let (r0, c0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (r1, c1) = (rng.random_range(r0..h), rng.random_range(c0..w));
        BinaryMask::from_fn(h, w, |r, c| (r0..=r1).contains(&r) && (c0..=c1).contains(&c))
            .expect("positive dims")
    };
    let mut proposals: Vec<BinaryMask> = Vec::with_capacity(k);
    for _ in 0..k {
        let roll = rng.random::<f64>();
        let s = if roll < 0.1 && !proposals.is_empty() {
            proposals[rng.random_range(0..proposals.len())].clone()
        } else if roll < 0.15 {
            BinaryMask::new(h, w).expect("positive dims")
        } else {
            rect(&mut rng)
        };
        proposals.push(s);
    }

    let n = h * w;
    let mut logits = vec![0.0f64; classes * n];
    for c in 0..fg {
        let bump = rect(&mut rng);
        let gain = rng.random_range(1.0..4.0);
        for (i, l) in logits[c * n..(c + 1) * n].iter_mut().enumerate() {
            *l = if bump.get_index(i) { gain } else { 0.0 } + 0.7 * gaussian(&mut rng);
        }
    }
    for l in logits[fg * n..].iter_mut() {
        *l = 1.0 + 0.7 * gaussian(&mut rng);
    }
    let mut data = vec![0.0f32; classes * n];
    for i in 0..n {
        let max = (0..classes).map(|c| logits[c * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = (0..classes).map(|c| libm::exp(logits[c * n + i] - max)).sum();
        for c in 0..classes {
            data[c * n + i] = (libm::exp(logits[c * n + i] - max) / total) as f32;
        }
    }
    let probs = ProbStack::new(h, w, classes, data)
        .expect("shape by construction")
        .with_normalized(true);

    let mut v_upper: Vec<usize> = (0..fg).map(|_| rng.random_range(1..=3usize)).collect();
    let mut v_lower: Vec<usize> = v_upper.iter().map(|&u| rng.random_range(0..=u.min(1))).collect();
    // keep the lower bounds satisfiable
    while v_lower.iter().sum::<usize>() > k {
        let c = v_lower.iter().position(|&l| l > 0).expect("positive sum");
        v_lower[c] -= 1;
    }
    for (u, l) in v_upper.iter_mut().zip(&v_lower) {
        *u = (*u).max(*l);
    }
    let cons = MatchConstraints::new(v_lower, v_upper).expect("bounds by construction");
    MatchInstance {
        proposals,
        probs,
        cons,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EquivalenceOutcome {
    pub trials: usize,
    /// Trial indices whose assignment or objective differs from the oracle.
    pub mismatches: Vec<u64>,
    /// Trial indices where a returned assignment breaks disjointness or bounds.
    pub infeasible: Vec<u64>,
    /// Trials the exact solver did not certify.
    pub heuristic: Vec<u64>,
    pub max_objective_gap: f64,
}

impl EquivalenceOutcome {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.infeasible.is_empty() && self.heuristic.is_empty()
    }
}

/// Runs `trials` random instances through the solver and the oracle.
pub fn equivalence_trials(seed: u64, trials: usize) -> Result<EquivalenceOutcome> {
    let seeds = SeedSequence::new(seed);
    let mut out = EquivalenceOutcome {
        trials,
        ..Default::default()
    };
    for t in 0..trials as u64 {
        let inst = random_match_instance(seeds.seed(t));
        let k = inst.proposals.len();
        let fast = solve_matching(&inst.proposals, &inst.probs, &inst.cons)?;
        let slow = brute_force_solve(&inst.proposals, &inst.probs, &inst.cons)?;
        let gap = (fast.objective() - slow.objective()).abs();
        out.max_objective_gap = out.max_objective_gap.max(gap);
        if gap > 1e-9 || fast.z != slow.z {
            out.mismatches.push(t);
        }
        if !fast.is_feasible(&inst.cons, k) || !slow.is_feasible(&inst.cons, k) {
            out.infeasible.push(t);
        }
        if !fast.exact {
            out.heuristic.push(t);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundOutcome {
    pub case2: usize,
    pub case1: usize,
    /// Draws discarded because generation or the cover precondition failed.
    pub skipped: usize,
    pub violations: Vec<u64>,
    /// Largest `soft_iou(gt_c, p_c) − (β* + ε)` over witnessed classes.
    pub max_excess: f64,
}

impl BoundOutcome {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Geometry and corruption for the bound trials: one or two foreground
/// classes, fidelity drawn uniformly.
fn bound_params<R: Rng>(rng: &mut R) -> SynthParams {
    SynthParams {
        classes: rng.random_range(2..=3usize),
        fidelity: rng.random::<f64>(),
        ..SynthParams::default()
    }
}

/// Draws synthetic instances until `case2` Case-2 instances satisfying the
/// cover precondition have been checked (or `20 × case2` draws).
pub fn bound_trials(seed: u64, case2: usize, beta_star: f64) -> Result<BoundOutcome> {
    let seeds = SeedSequence::new(seed);
    let mut out = BoundOutcome {
        max_excess: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut t = 0u64;
    while out.case2 < case2 && t < 20 * case2 as u64 {
        let s = seeds.seed(t);
        t += 1;
        let params = bound_params(&mut rng_from_seed(s));
        let inst = match gen_synthetic_instance(s, &params) {
            Ok(i) => i,
            Err(Error::GenerationFailed { .. }) => {
                out.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let hi = inst.cover.iter().map(Vec::len).max().unwrap_or(1).max(1);
        let cons = MatchConstraints::uniform(params.classes - 1, 1, hi)?.with_beta_star(beta_star);
        let report = match check_case2_bound(&inst, &cons) {
            Ok(r) => r,
            Err(Error::PreconditionUnmet(_)) => {
                out.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        match report.case {
            CaseLabel::Case1 => out.case1 += 1,
            CaseLabel::Case2 => {
                out.case2 += 1;
                for &c in &report.witnessed {
                    out.max_excess = out.max_excess.max(report.iou_gt_pred[c] - report.bound);
                }
                if report.violated {
                    out.violations.push(t - 1);
                }
            }
        }
    }
    if out.case2 < case2 {
        return Err(Error::PreconditionUnmet(alloc::format!(
            "only {} Case-2 instances in {t} draws",
            out.case2
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MonotonicityOutcome {
    pub trials: usize,
    /// Trial indices where widening an upper bound lowered the optimum.
    pub decreases: Vec<u64>,
    pub heuristic: Vec<u64>,
}

impl MonotonicityOutcome {
    pub fn passed(&self) -> bool {
        self.decreases.is_empty() && self.heuristic.is_empty()
    }
}

/// Compares the exact optimum before and after raising every upper bound by
/// one, and after raising a single class's bound by one.
pub fn monotonicity_trials(seed: u64, trials: usize) -> Result<MonotonicityOutcome> {
    let seeds = SeedSequence::new(seed);
    let mut out = MonotonicityOutcome {
        trials,
        ..Default::default()
    };
    for t in 0..trials as u64 {
        let s = seeds.seed(t);
        let inst = random_match_instance(s);
        let base = solve_matching(&inst.proposals, &inst.probs, &inst.cons)?;
        let single = (s % inst.cons.foreground() as u64) as usize;
        let mut all = inst.cons.clone();
        all.v_upper.iter_mut().for_each(|u| *u += 1);
        let mut one = inst.cons.clone();
        one.v_upper[single] += 1;
        let mut exact = base.exact;
        for wider in [all, one] {
            let a = solve_matching(&inst.proposals, &inst.probs, &wider)?;
            exact &= a.exact;
            if a.objective() < base.objective() {
                out.decreases.push(t);
                break;
            }
        }
        if !exact {
            out.heuristic.push(t);
        }
    }
    Ok(out)
}

/// Argmax labeling of a probability stack as an annotation.
pub fn argmax_annotation(probs: &ProbStack) -> AnnotationMap {
    let labels = probs.argmax();
    let (h, w) = probs.dims();
    let masks = (0..probs.classes() - 1)
        .map(|c| {
            BinaryMask::from_fn(h, w, |r, col| labels[r * w + col] as usize == c)
                .expect("positive dims")
        })
        .collect();
    AnnotationMap::from_class_masks((h, w), masks).expect("shape from stack")
}

/// `n` binary-task instances with fidelity spread evenly over `[0, 1]`,
/// each matched with `v_lower = 1` and `v_upper` equal to its cover size.
pub fn fidelity_sweep(seed: u64, n: usize, beta_star: f64) -> Result<Vec<SelectionSample>> {
    let seeds = SeedSequence::new(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let fidelity = if n > 1 { i as f64 / (n - 1) as f64 } else { 1.0 };
        let params = SynthParams {
            fidelity,
            ..SynthParams::default()
        };
        let inst = gen_synthetic_instance(seeds.seed(i as u64), &params)?;
        let hi = inst.cover.iter().map(Vec::len).max().unwrap_or(1).max(1);
        let cons = MatchConstraints::uniform(1, 1, hi)?.with_beta_star(beta_star);
        let a = solve_matching(&inst.proposals, &inst.probs, &cons)?;
        let annotation = build_annotation(&inst.proposals, &a, inst.dims())?;
        out.push(SelectionSample {
            beta: a.beta,
            prediction: Some(argmax_annotation(&inst.probs)),
            gt: inst.gt,
            annotation,
        });
    }
    Ok(out)
}
