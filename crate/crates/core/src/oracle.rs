//! Independent checks of the matching engine and of the guarantees it carries.
//!
//! [`brute_force_solve`] enumerates every labeling of every proposal and shares
//! no search code with [`crate::solve_matching`]; it rasterizes unions pixel by
//! pixel and scores them with the direct `Σ min / Σ max` definition.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::annotation::{build_annotation, AnnotationMap};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::matching::{classify_case, solve_matching, Assignment, CaseLabel, MatchConstraints, TIE_EPS};
use crate::metric::{binary_overlap, ruzicka, score_raster, Metric};
use crate::raster::ProbStack;
use crate::synth::SyntheticInstance;

/// Largest proposal count the exhaustive oracle accepts.
pub const BRUTE_FORCE_CAP: usize = 16;

/// Slack on the bound `soft_iou(gt_c, p_c) ≤ β* + ε`.
pub const BOUND_SLACK: f64 = 1e-9;

struct Enumerator<'a> {
    proposals: &'a [BinaryMask],
    probs: &'a ProbStack,
    cons: &'a MatchConstraints,
    /// (class, subset bitmask) → score
    cache: BTreeMap<(usize, u32), f64>,
    labels: Vec<usize>,
    counts: Vec<usize>,
    best: Option<(f64, Vec<Vec<usize>>)>,
}

impl Enumerator<'_> {
    fn class_score(&mut self, class: usize, subset: u32) -> Result<f64> {
        if let Some(&s) = self.cache.get(&(class, subset)) {
            return Ok(s);
        }
        let (h, w) = self.probs.dims();
        let proposals = self.proposals;
        let union = BinaryMask::from_fn(h, w, |r, c| {
            (0..proposals.len()).any(|k| subset >> k & 1 == 1 && proposals[k].get(r, c))
        })?;
        let s = score_raster(self.probs.channel(class), &union, self.cons.metric)?;
        self.cache.insert((class, subset), s);
        Ok(s)
    }

    /// Labels proposal `k` as unassigned (`fg`) or one of the foreground classes.
    fn visit(&mut self, k: usize) -> Result<()> {
        let fg = self.cons.foreground();
        let remaining = self.proposals.len() - k;
        let deficit: usize = (0..fg)
            .map(|c| self.cons.v_lower[c].saturating_sub(self.counts[c]))
            .sum();
        if deficit > remaining {
            return Ok(());
        }
        if k == self.proposals.len() {
            return self.leaf();
        }
        for label in 0..=fg {
            if label < fg {
                if self.counts[label] == self.cons.v_upper[label] {
                    continue;
                }
                self.counts[label] += 1;
            }
            self.labels[k] = label;
            self.visit(k + 1)?;
            if label < fg {
                self.counts[label] -= 1;
            }
        }
        Ok(())
    }

    fn leaf(&mut self) -> Result<()> {
        let fg = self.cons.foreground();
        let mut z = vec![Vec::new(); fg];
        for (k, &l) in self.labels.iter().enumerate() {
            if l < fg {
                z[l].push(k);
            }
        }
        let mut total = 0.0;
        for (c, set) in z.iter().enumerate() {
            let mask = set.iter().fold(0u32, |m, &k| m | 1 << k);
            total += self.class_score(c, mask)?;
        }
        let replace = match &self.best {
            None => true,
            Some((best, key)) => {
                total > best + TIE_EPS || ((total - best).abs() <= TIE_EPS && z < *key)
            }
        };
        if replace {
            self.best = Some((total, z));
        }
        Ok(())
    }
}

/// Exhaustive optimum over all class labelings, with the same tie-break as
/// the main solver (lexicographically smallest `(z_1, z_2, …)`).
pub fn brute_force_solve(
    proposals: &[BinaryMask],
    probs: &ProbStack,
    cons: &MatchConstraints,
) -> Result<Assignment> {
    if proposals.len() > BRUTE_FORCE_CAP {
        return Err(Error::TooLarge {
            proposals: proposals.len(),
            cap: BRUTE_FORCE_CAP,
        });
    }
    cons.validate()?;
    if probs.classes() != cons.foreground() + 1 {
        return Err(Error::InvalidConstraints(format!(
            "constraints cover {} foreground classes but the probability stack has {} classes",
            cons.foreground(),
            probs.classes()
        )));
    }
    for s in proposals {
        if s.dims() != probs.dims() {
            return Err(Error::DimensionMismatch {
                expected: probs.dims(),
                found: s.dims(),
            });
        }
    }
    let mut e = Enumerator {
        proposals,
        probs,
        cons,
        cache: BTreeMap::new(),
        labels: vec![0; proposals.len()],
        counts: vec![0; cons.foreground()],
        best: None,
    };
    e.visit(0)?;
    let (_, z) = e.best.ok_or_else(|| {
        Error::InfeasibleConstraints("no labeling satisfies the count bounds".into())
    })?;
    Assignment::from_selection(proposals, probs, cons.metric, z, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverReport {
    pub holds: bool,
    /// Best-matching proposal subset per foreground class.
    pub best_cover: Vec<Vec<usize>>,
    pub cover_iou: Vec<f64>,
}

/// Matches the proposals against the ground truth itself (as a 0/1 stack) and
/// reports whether every class is covered to within `epsilon`.
pub fn check_cover(
    proposals: &[BinaryMask],
    gt: &AnnotationMap,
    cons: &MatchConstraints,
    epsilon: f64,
) -> Result<CoverReport> {
    let probs = gt.to_prob_stack();
    let cons = cons.clone().with_metric(Metric::SoftIou);
    let a = solve_matching(proposals, &probs, &cons)?;
    let ann = build_annotation(proposals, &a, gt.dims())?;
    let cover_iou = (0..gt.foreground())
        .map(|c| binary_overlap(ann.class_mask(c), gt.class_mask(c), Metric::BinaryIou))
        .collect::<Result<Vec<_>>>()?;
    let holds = cover_iou.iter().all(|&iou| iou >= 1.0 - epsilon);
    Ok(CoverReport {
        holds,
        best_cover: a.z,
        cover_iou,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub case: CaseLabel,
    pub beta: f64,
    /// `soft_iou(gt_c, p_c)` per foreground class.
    pub iou_gt_pred: Vec<f64>,
    /// Score of each class's probability map against the cover's union.
    pub cover_pred_iou: Vec<f64>,
    /// Classes whose cover scores below β*; the bound applies to these.
    pub witnessed: Vec<usize>,
    pub bound: f64,
    pub violated: bool,
}

/// Checks that a Case-2 instance cannot have a probability map that agrees
/// with the ground truth: for every class whose cover scores below β*
/// against `p_c`, `soft_iou(gt_c, p_c) ≤ β* + ε`.
///
/// The bound follows from the triangle inequality of `1 − soft_iou`; in a
/// Case-2 instance at least one class is witnessed because the cover is a
/// feasible assignment whose mean score is at most β.
pub fn check_case2_bound(inst: &SyntheticInstance, cons: &MatchConstraints) -> Result<BoundReport> {
    if cons.metric != Metric::SoftIou {
        return Err(Error::PreconditionUnmet(
            "the bound only holds for the soft-iou metric".into(),
        ));
    }
    let eps = inst.epsilon_target;
    let cover = check_cover(&inst.proposals, &inst.gt, cons, eps)?;
    if !cover.holds {
        return Err(Error::PreconditionUnmet(format!(
            "no feasible cover within epsilon {eps} (cover IoUs {:?})",
            cover.cover_iou
        )));
    }
    let a = solve_matching(&inst.proposals, &inst.probs, cons)?;
    if !a.exact {
        return Err(Error::PreconditionUnmet(
            "matching fell back to the heuristic solver".into(),
        ));
    }
    let case = classify_case(&a, cons);
    let fg = inst.gt.foreground();
    let gt_probs = inst.gt.to_prob_stack();
    let iou_gt_pred: Vec<f64> = (0..fg)
        .map(|c| ruzicka(gt_probs.channel(c), inst.probs.channel(c)))
        .collect();
    let ann = build_annotation(&inst.proposals, &Assignment { z: cover.best_cover, ..a.clone() }, inst.dims())?;
    let cover_pred_iou = (0..fg)
        .map(|c| score_raster(inst.probs.channel(c), ann.class_mask(c), Metric::SoftIou))
        .collect::<Result<Vec<_>>>()?;
    let bound = cons.beta_star + eps;
    let witnessed: Vec<usize> = if case == CaseLabel::Case2 {
        (0..fg).filter(|&c| cover_pred_iou[c] < cons.beta_star).collect()
    } else {
        Vec::new()
    };
    let violated = case == CaseLabel::Case2
        && (witnessed.is_empty()
            || witnessed.iter().any(|&c| iou_gt_pred[c] > bound + BOUND_SLACK));
    Ok(BoundReport {
        case,
        beta: a.beta,
        iou_gt_pred,
        cover_pred_iou,
        witnessed,
        bound,
        violated,
    })
}

/// Dice of the annotation constructed by matching proposals against the
/// ground truth, per foreground class.
pub fn oracle_coverage(
    proposals: &[BinaryMask],
    gt: &AnnotationMap,
    cons: &MatchConstraints,
) -> Result<Vec<f64>> {
    let probs = gt.to_prob_stack();
    let a = solve_matching(proposals, &probs, cons)?;
    let ann = build_annotation(proposals, &a, gt.dims())?;
    (0..gt.foreground())
        .map(|c| binary_overlap(ann.class_mask(c), gt.class_mask(c), Metric::Dice))
        .collect()
}

/// One image's contribution to the selection-quality report.
#[derive(Debug, Clone)]
pub struct SelectionSample {
    pub beta: f64,
    pub gt: AnnotationMap,
    pub annotation: AnnotationMap,
    pub prediction: Option<AnnotationMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionBucket {
    /// Percentile range of the β ranking, `[0, 10)` being the top decile.
    pub percentile: (f64, f64),
    pub count: usize,
    pub mean_beta: f64,
    pub mean_iou_annotation: f64,
    pub mean_iou_prediction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub buckets: Vec<SelectionBucket>,
    pub case1_mean_iou: Option<f64>,
    pub case2_mean_iou: Option<f64>,
    /// `case1_mean_iou − case2_mean_iou` when both exist.
    pub case_gap: Option<f64>,
    /// Rank correlation between bucket quality rank (top = highest) and the
    /// bucket's annotation mIoU.
    pub spearman: f64,
}

/// Mean binary IoU over foreground classes.
pub fn mean_iou(a: &AnnotationMap, b: &AnnotationMap) -> Result<f64> {
    if a.foreground() != b.foreground() {
        return Err(Error::InvalidShape(format!(
            "{} vs {} foreground classes",
            a.foreground(),
            b.foreground()
        )));
    }
    let mut sum = 0.0;
    for c in 0..a.foreground() {
        sum += binary_overlap(a.class_mask(c), b.class_mask(c), Metric::BinaryIou)?;
    }
    Ok(sum / a.foreground() as f64)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Average ranks (1-based) with ties sharing their mean rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / libm::sqrt(sxx * syy)
    }
}

/// Sorts samples by β (descending), splits them into `buckets` percentile
/// groups and reports the mean IoU against ground truth per group.
pub fn selection_quality_report(
    samples: &[SelectionSample],
    buckets: usize,
    beta_star: f64,
) -> Result<SelectionReport> {
    if samples.is_empty() || buckets == 0 {
        return Err(Error::EmptyInput);
    }
    let mut scored = Vec::with_capacity(samples.len());
    for s in samples {
        let ann = mean_iou(&s.annotation, &s.gt)?;
        let pred = s.prediction.as_ref().map(|p| mean_iou(p, &s.gt)).transpose()?;
        scored.push((s.beta, ann, pred));
    }
    // stable sort keeps input order among equal betas
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let n = scored.len();
    let b = buckets.min(n);
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let (lo, hi) = (i * n / b, (i + 1) * n / b);
        let group = &scored[lo..hi];
        out.push(SelectionBucket {
            percentile: (100.0 * i as f64 / b as f64, 100.0 * (i + 1) as f64 / b as f64),
            count: group.len(),
            mean_beta: mean(group.iter().map(|g| g.0)).unwrap_or(0.0),
            mean_iou_annotation: mean(group.iter().map(|g| g.1)).unwrap_or(0.0),
            mean_iou_prediction: if group.iter().all(|g| g.2.is_some()) {
                mean(group.iter().filter_map(|g| g.2))
            } else {
                None
            },
        });
    }
    let case1 = mean(scored.iter().filter(|s| s.0 >= beta_star).map(|s| s.1));
    let case2 = mean(scored.iter().filter(|s| s.0 < beta_star).map(|s| s.1));
    let quality_rank: Vec<f64> = (0..b).map(|i| (b - i) as f64).collect();
    let means: Vec<f64> = out.iter().map(|x| x.mean_iou_annotation).collect();
    Ok(SelectionReport {
        spearman: spearman(&quality_rank, &means),
        buckets: out,
        case1_mean_iou: case1,
        case2_mean_iou: case2,
        case_gap: case1.zip(case2).map(|(a, b)| a - b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::tests_support::four_by_four;
    use crate::synth::{gen_synthetic_instance, SynthParams};

    #[test]
    fn worked_example() {
        let (props, probs) = four_by_four();
        let cons = MatchConstraints::uniform(1, 1, 2).unwrap();
        let a = brute_force_solve(&props, &probs, &cons).unwrap();
        assert_eq!(a.z, vec![vec![0, 1]]);
        assert_eq!(a.objective(), 1.0);
        let one = MatchConstraints::uniform(1, 1, 1).unwrap();
        assert_eq!(brute_force_solve(&props, &probs, &one).unwrap().z, vec![vec![0]]);
    }

    #[test]
    fn single_proposal_agrees_with_solver() {
        let (props, probs) = four_by_four();
        let props = vec![props[1].clone()];
        let cons = MatchConstraints::uniform(1, 1, 1).unwrap();
        assert_eq!(
            brute_force_solve(&props, &probs, &cons).unwrap(),
            solve_matching(&props, &probs, &cons).unwrap()
        );
    }

    #[test]
    fn too_many_proposals() {
        let (_, probs) = four_by_four();
        let props = vec![BinaryMask::new(4, 4).unwrap(); 17];
        let cons = MatchConstraints::uniform(1, 0, 1).unwrap();
        assert!(matches!(
            brute_force_solve(&props, &probs, &cons),
            Err(Error::TooLarge { proposals: 17, .. })
        ));
    }

    #[test]
    fn infeasible_bounds() {
        let (props, probs) = four_by_four();
        let cons = MatchConstraints::uniform(1, 4, 4).unwrap();
        assert!(matches!(
            brute_force_solve(&props, &probs, &cons),
            Err(Error::InfeasibleConstraints(_))
        ));
    }

    fn gt_left_half() -> AnnotationMap {
        AnnotationMap::from_class_masks(
            (4, 4),
            vec![BinaryMask::from_fn(4, 4, |_, c| c < 2).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn cover_exact_fragments() {
        let (props, _) = four_by_four();
        let cons = MatchConstraints::uniform(1, 1, 2).unwrap();
        let r = check_cover(&props, &gt_left_half(), &cons, 0.02).unwrap();
        assert!(r.holds);
        assert_eq!(r.cover_iou, vec![1.0]);
        assert_eq!(r.best_cover, vec![vec![0, 1]]);
    }

    #[test]
    fn cover_fails_for_background_proposals() {
        let bg = BinaryMask::from_fn(4, 4, |_, c| c >= 2).unwrap();
        let cons = MatchConstraints::uniform(1, 1, 1).unwrap();
        let r = check_cover(&[bg], &gt_left_half(), &cons, 0.02).unwrap();
        assert!(!r.holds);
        assert_eq!(r.cover_iou, vec![0.0]);
    }

    #[test]
    fn coverage_examples() {
        let (props, _) = four_by_four();
        let cons = MatchConstraints::uniform(1, 1, 2).unwrap();
        assert_eq!(oracle_coverage(&props, &gt_left_half(), &cons).unwrap(), vec![1.0]);
        // a proposal covering exactly half of the ground truth
        let half = vec![props[0].clone()];
        let dice = oracle_coverage(&half, &gt_left_half(), &cons).unwrap()[0];
        assert!((dice - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_instance_is_case1() {
        let p = SynthParams {
            boundary_noise: 0.0,
            ..SynthParams::default()
        };
        let inst = gen_synthetic_instance(4, &p).unwrap();
        let hi = inst.cover.iter().map(Vec::len).max().unwrap();
        let cons = MatchConstraints::uniform(1, 1, hi).unwrap();
        let r = check_case2_bound(&inst, &cons).unwrap();
        assert_eq!(r.case, CaseLabel::Case1);
        assert!(!r.violated);
        assert!(r.witnessed.is_empty());
    }

    #[test]
    fn cover_too_large_for_bounds() {
        let p = SynthParams {
            boundary_noise: 0.0,
            blobs_per_class: (2, 2),
            fragments_per_blob: (2, 2),
            ..SynthParams::default()
        };
        let inst = gen_synthetic_instance(9, &p).unwrap();
        assert!(inst.cover[0].len() > 1);
        let cons = MatchConstraints::uniform(1, 1, 1).unwrap();
        assert!(matches!(
            check_case2_bound(&inst, &cons),
            Err(Error::PreconditionUnmet(_))
        ));
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), 0.0);
        assert_eq!(ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn report_on_perfect_samples() {
        let gt = gt_left_half();
        let samples: Vec<SelectionSample> = (0..20)
            .map(|_| SelectionSample {
                beta: 1.0,
                gt: gt.clone(),
                annotation: gt.clone(),
                prediction: None,
            })
            .collect();
        let r = selection_quality_report(&samples, 10, 0.9).unwrap();
        assert_eq!(r.buckets.len(), 10);
        assert!(r.buckets.iter().all(|b| b.mean_iou_annotation == 1.0 && b.count == 2));
        assert_eq!(r.case2_mean_iou, None);
        assert!(matches!(
            selection_quality_report(&[], 10, 0.9),
            Err(Error::EmptyInput)
        ));
    }
}
