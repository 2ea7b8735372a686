//! Constrained matching of segmentation proposals to class probability maps.
//!
//! Each foreground class `c` receives a set `z_c` of proposal indices; sets are
//! pairwise disjoint and `v_lower[c] ≤ |z_c| ≤ v_upper[c]`. The objective is
//! the sum over foreground classes of the score between `p_c` and the union of
//! the class's proposals.
//!
//! The exact solver enumerates every index subset once, then runs a two-phase
//! depth-first search over per-class choices: the first phase visits
//! candidates best-score-first to find the optimal value quickly, the second
//! walks candidates in lexicographic order and stops at the first assignment
//! within [`TIE_EPS`] of that value. That assignment is the lexicographically
//! smallest optimum over `(z_1, z_2, …)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mask::{clip_union, BinaryMask};
use crate::metric::{score_raster, Metric, RasterScorer};
use crate::raster::ProbStack;

/// Objective values closer than this are ties.
pub const TIE_EPS: f64 = 1e-12;

pub const DEFAULT_BETA_STAR: f64 = 0.9;
pub const DEFAULT_EXACT_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchConstraints {
    /// Per foreground class, minimum number of selected proposals.
    pub v_lower: Vec<usize>,
    /// Per foreground class, maximum number of selected proposals.
    pub v_upper: Vec<usize>,
    pub beta_star: f64,
    /// Largest number of candidate subsets the exact solver will enumerate.
    pub exact_budget: u64,
    pub metric: Metric,
}

impl MatchConstraints {
    pub fn new(v_lower: Vec<usize>, v_upper: Vec<usize>) -> Result<Self> {
        let cons = Self {
            v_lower,
            v_upper,
            beta_star: DEFAULT_BETA_STAR,
            exact_budget: DEFAULT_EXACT_BUDGET,
            metric: Metric::default(),
        };
        cons.validate()?;
        Ok(cons)
    }

    /// Same bounds for every one of `foreground` classes.
    pub fn uniform(foreground: usize, lower: usize, upper: usize) -> Result<Self> {
        Self::new(vec![lower; foreground], vec![upper; foreground])
    }

    pub fn with_beta_star(mut self, beta_star: f64) -> Self {
        self.beta_star = beta_star;
        self
    }

    pub fn with_exact_budget(mut self, budget: u64) -> Self {
        self.exact_budget = budget;
        self
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    /// Number of foreground classes (`C − 1`).
    pub fn foreground(&self) -> usize {
        self.v_lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.v_lower.is_empty() {
            return Err(Error::InvalidConstraints(
                "at least one foreground class is required".into(),
            ));
        }
        if self.v_lower.len() != self.v_upper.len() {
            return Err(Error::InvalidConstraints(format!(
                "{} lower bounds but {} upper bounds",
                self.v_lower.len(),
                self.v_upper.len()
            )));
        }
        for (c, (&lo, &hi)) in self.v_lower.iter().zip(&self.v_upper).enumerate() {
            if lo > hi {
                return Err(Error::InvalidConstraints(format!(
                    "class {}: v_lower {lo} exceeds v_upper {hi}",
                    c + 1
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.beta_star) {
            return Err(Error::InvalidConstraints(format!(
                "beta_star {} outside [0, 1]",
                self.beta_star
            )));
        }
        Ok(())
    }

    fn check_against(&self, probs: &ProbStack, proposals: &[BinaryMask]) -> Result<()> {
        self.validate()?;
        if probs.classes() != self.foreground() + 1 {
            return Err(Error::InvalidConstraints(format!(
                "constraints cover {} foreground classes but the probability stack has {} classes",
                self.foreground(),
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
        let need: usize = self.v_lower.iter().sum();
        if need > proposals.len() {
            return Err(Error::InfeasibleConstraints(format!(
                "lower bounds require {need} proposals, only {} available",
                proposals.len()
            )));
        }
        Ok(())
    }

    /// Number of candidate subsets the exact solver would enumerate
    /// (`Σ_c Σ_{s=lo..hi} C(K, s)`), saturating.
    pub fn candidate_count(&self, proposals: usize) -> u64 {
        self.v_lower
            .iter()
            .zip(&self.v_upper)
            .map(|(&lo, &hi)| {
                (lo..=hi.min(proposals))
                    .map(|s| binomial(proposals as u64, s as u64))
                    .fold(0u64, u64::saturating_add)
            })
            .fold(0u64, u64::saturating_add)
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Sorted proposal indices per foreground class.
    pub z: Vec<Vec<usize>>,
    pub per_class_iou: Vec<f64>,
    pub beta: f64,
    /// True when the result is certified optimal.
    pub exact: bool,
}

impl Assignment {
    /// Builds an assignment from index sets, scoring each class against `probs`.
    pub fn from_selection(
        proposals: &[BinaryMask],
        probs: &ProbStack,
        metric: Metric,
        mut z: Vec<Vec<usize>>,
        exact: bool,
    ) -> Result<Self> {
        let mut per_class_iou = Vec::with_capacity(z.len());
        for (c, set) in z.iter_mut().enumerate() {
            set.sort_unstable();
            let union = clip_union(probs.dims(), proposals, set)?;
            per_class_iou.push(score_raster(probs.channel(c), &union, metric)?);
        }
        let beta = mean(&per_class_iou);
        Ok(Self {
            z,
            per_class_iou,
            beta,
            exact,
        })
    }

    pub fn objective(&self) -> f64 {
        self.per_class_iou.iter().sum()
    }

    /// Index-disjointness across classes and per-class cardinality bounds.
    pub fn is_feasible(&self, cons: &MatchConstraints, proposals: usize) -> bool {
        if self.z.len() != cons.foreground() {
            return false;
        }
        let mut seen = vec![false; proposals];
        for (c, set) in self.z.iter().enumerate() {
            if set.len() < cons.v_lower[c] || set.len() > cons.v_upper[c] {
                return false;
            }
            for &k in set {
                if k >= proposals || seen[k] {
                    return false;
                }
                seen[k] = true;
            }
        }
        true
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Mean per-class score over the foreground classes.
pub fn beta_score(a: &Assignment) -> f64 {
    mean(&a.per_class_iou)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseLabel {
    /// Matching score reached the acceptance threshold.
    Case1,
    Case2,
}

/// `Case1` iff `beta ≥ beta_star` (inclusive).
pub fn classify_case(a: &Assignment, cons: &MatchConstraints) -> CaseLabel {
    if a.beta >= cons.beta_star {
        CaseLabel::Case1
    } else {
        CaseLabel::Case2
    }
}

/// Exact solver with greedy fallback when the candidate count exceeds
/// `cons.exact_budget`.
pub fn solve_matching(
    proposals: &[BinaryMask],
    probs: &ProbStack,
    cons: &MatchConstraints,
) -> Result<Assignment> {
    cons.check_against(probs, proposals)?;
    if cons.candidate_count(proposals.len()) > cons.exact_budget {
        return greedy(proposals, probs, cons);
    }
    let z = ExactSearch::new(proposals, probs, cons).solve()?;
    Assignment::from_selection(proposals, probs, cons.metric, z, true)
}

/// A small fixed-width bitset over proposal indices.
#[derive(Debug, Clone, PartialEq, Eq)]
struct IndexBits(Vec<u64>);

impl IndexBits {
    fn new(k: usize) -> Self {
        Self(vec![0; k.div_ceil(64).max(1)])
    }

    fn insert(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn overlaps(&self, other: &Self) -> bool {
        self.0.iter().zip(&other.0).any(|(a, b)| a & b != 0)
    }

    fn or_assign(&mut self, other: &Self) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= *b;
        }
    }

    fn remove_all(&mut self, other: &Self) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a &= !*b;
        }
    }
}

struct Subset {
    indices: Vec<usize>,
    bits: IndexBits,
    /// Score of the union against each foreground class.
    scores: Vec<f64>,
}

struct ExactSearch<'a> {
    cons: &'a MatchConstraints,
    /// All subsets with size ≤ max upper bound, lexicographic order.
    subsets: Vec<Subset>,
    /// Per class, indices into `subsets` of admissible sizes (lexicographic).
    lex: Vec<Vec<usize>>,
    /// Per class, the same candidates sorted by descending score.
    by_score: Vec<Vec<usize>>,
    /// `suffix_bound[c]` bounds the best total of classes `c..`.
    suffix_bound: Vec<f64>,
}

impl<'a> ExactSearch<'a> {
    fn new(proposals: &[BinaryMask], probs: &ProbStack, cons: &'a MatchConstraints) -> Self {
        let k = proposals.len();
        let fg = cons.foreground();
        let scorers: Vec<RasterScorer> = (0..fg)
            .map(|c| RasterScorer::new(probs.channel(c), cons.metric))
            .collect();
        let max_size = cons.v_upper.iter().map(|&u| u.min(k)).max().unwrap_or(0);

        let mut subsets = Vec::new();
        let empty = BinaryMask::new(probs.height(), probs.width()).expect("probs dims are valid");
        let mut stack_idx = Vec::new();
        enumerate_subsets(
            proposals,
            &scorers,
            max_size,
            0,
            &mut stack_idx,
            &empty,
            &mut subsets,
        );

        let mut lex = Vec::with_capacity(fg);
        let mut by_score = Vec::with_capacity(fg);
        let mut suffix_bound = vec![0.0; fg + 1];
        for c in 0..fg {
            let (lo, hi) = (cons.v_lower[c], cons.v_upper[c]);
            let cands: Vec<usize> = (0..subsets.len())
                .filter(|&i| (lo..=hi).contains(&subsets[i].indices.len()))
                .collect();
            let mut sorted = cands.clone();
            // stable: equal scores keep lexicographic order
            sorted.sort_by(|&a, &b| subsets[b].scores[c].total_cmp(&subsets[a].scores[c]));
            lex.push(cands);
            by_score.push(sorted);
        }
        for c in (0..fg).rev() {
            let best = by_score[c]
                .first()
                .map(|&i| subsets[i].scores[c])
                .unwrap_or(f64::NEG_INFINITY);
            suffix_bound[c] = suffix_bound[c + 1] + best;
        }
        Self {
            cons,
            subsets,
            lex,
            by_score,
            suffix_bound,
        }
    }

    fn solve(&self) -> Result<Vec<Vec<usize>>> {
        let fg = self.cons.foreground();
        let k_words = self.subsets[0].bits.0.len();
        let mut used = IndexBits(vec![0; k_words]);
        let mut choice = vec![0usize; fg];

        let mut best = f64::NEG_INFINITY;
        self.find_best(0, 0.0, &mut used, &mut choice, &mut best);
        if best == f64::NEG_INFINITY {
            return Err(Error::InfeasibleConstraints(
                "no disjoint selection satisfies the count bounds".into(),
            ));
        }
        let target = best - TIE_EPS;
        let mut used = IndexBits(vec![0; k_words]);
        if !self.find_first(0, 0.0, target, &mut used, &mut choice) {
            // unreachable in exact arithmetic; the optimum itself qualifies
            return Err(Error::InfeasibleConstraints(
                "lexicographic pass found no optimum".into(),
            ));
        }
        Ok(choice
            .iter()
            .map(|&i| self.subsets[i].indices.clone())
            .collect())
    }

    fn find_best(
        &self,
        c: usize,
        acc: f64,
        used: &mut IndexBits,
        choice: &mut [usize],
        best: &mut f64,
    ) {
        if c == self.cons.foreground() {
            if acc > *best {
                *best = acc;
            }
            return;
        }
        for &i in &self.by_score[c] {
            let s = &self.subsets[i];
            let total = acc + s.scores[c];
            // candidates are score-sorted: nothing later can do better
            if total + self.suffix_bound[c + 1] <= *best {
                break;
            }
            if s.bits.overlaps(used) {
                continue;
            }
            used.or_assign(&s.bits);
            choice[c] = i;
            self.find_best(c + 1, total, used, choice, best);
            used.remove_all(&s.bits);
        }
    }

    fn find_first(
        &self,
        c: usize,
        acc: f64,
        target: f64,
        used: &mut IndexBits,
        choice: &mut [usize],
    ) -> bool {
        if c == self.cons.foreground() {
            return acc >= target;
        }
        for &i in &self.lex[c] {
            let s = &self.subsets[i];
            let total = acc + s.scores[c];
            if total + self.suffix_bound[c + 1] < target || s.bits.overlaps(used) {
                continue;
            }
            used.or_assign(&s.bits);
            choice[c] = i;
            if self.find_first(c + 1, total, target, used, choice) {
                return true;
            }
            used.remove_all(&s.bits);
        }
        false
    }
}

fn enumerate_subsets(
    proposals: &[BinaryMask],
    scorers: &[RasterScorer],
    max_size: usize,
    start: usize,
    indices: &mut Vec<usize>,
    union: &BinaryMask,
    out: &mut Vec<Subset>,
) {
    let mut bits = IndexBits::new(proposals.len());
    for &i in indices.iter() {
        bits.insert(i);
    }
    out.push(Subset {
        indices: indices.clone(),
        bits,
        scores: scorers.iter().map(|s| s.score(union)).collect(),
    });
    if indices.len() == max_size {
        return;
    }
    for k in start..proposals.len() {
        let mut next = union.clone();
        next.union_with(&proposals[k]).expect("dims checked");
        indices.push(k);
        enumerate_subsets(proposals, scorers, max_size, k + 1, indices, &next, out);
        indices.pop();
    }
}

/// Greedy construction plus one pass of local moves. Never certified optimal.
pub fn solve_matching_greedy(
    proposals: &[BinaryMask],
    probs: &ProbStack,
    cons: &MatchConstraints,
) -> Result<Assignment> {
    cons.check_against(probs, proposals)?;
    greedy(proposals, probs, cons)
}

struct ClassState {
    set: Vec<usize>,
    union: BinaryMask,
    score: f64,
}

fn greedy(
    proposals: &[BinaryMask],
    probs: &ProbStack,
    cons: &MatchConstraints,
) -> Result<Assignment> {
    let k = proposals.len();
    let fg = cons.foreground();
    let dims = probs.dims();
    let scorers: Vec<RasterScorer> = (0..fg)
        .map(|c| RasterScorer::new(probs.channel(c), cons.metric))
        .collect();
    let union_of = |set: &[usize]| clip_union(dims, proposals, set);
    let score_set = |c: usize, set: &[usize]| -> Result<f64> { Ok(scorers[c].score(&union_of(set)?)) };

    // classes with the strongest single-proposal match go first
    let mut order: Vec<(usize, f64)> = (0..fg)
        .map(|c| {
            let best = proposals
                .iter()
                .map(|s| scorers[c].score(s))
                .fold(f64::NEG_INFINITY, f64::max);
            (c, best)
        })
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1));

    let empty = BinaryMask::new(dims.0, dims.1)?;
    let mut states: Vec<ClassState> = (0..fg)
        .map(|c| ClassState {
            set: Vec::new(),
            union: empty.clone(),
            score: scorers[c].score(&empty),
        })
        .collect();
    let mut used = vec![false; k];
    let mut free = k;

    for (pos, &(c, _)) in order.iter().enumerate() {
        let reserved: usize = order[pos + 1..].iter().map(|&(d, _)| cons.v_lower[d]).sum();
        let (lo, hi) = (cons.v_lower[c], cons.v_upper[c]);
        let mut forcing = false;
        loop {
            let st = &states[c];
            if st.set.len() >= hi || free <= reserved {
                break;
            }
            if forcing && st.set.len() >= lo {
                break;
            }
            let mut best: Option<(usize, f64, BinaryMask)> = None;
            for j in (0..k).filter(|&j| !used[j]) {
                let mut u = st.union.clone();
                u.union_with(&proposals[j])?;
                let s = scorers[c].score(&u);
                if best.as_ref().is_none_or(|b| s > b.1 + TIE_EPS) {
                    best = Some((j, s, u));
                }
            }
            let Some((j, s, u)) = best else { break };
            if !forcing && s - st.score <= TIE_EPS {
                forcing = true;
                continue;
            }
            let st = &mut states[c];
            st.set.push(j);
            st.union = u;
            st.score = s;
            used[j] = true;
            free -= 1;
        }
        if states[c].set.len() < lo {
            return Err(Error::InfeasibleConstraints(format!(
                "class {} cannot reach its lower bound {lo}",
                c + 1
            )));
        }
    }

    // one pass of local improvement over every selected proposal
    for c in 0..fg {
        let snapshot = states[c].set.clone();
        for &k_sel in &snapshot {
            let without: Vec<usize> = states[c].set.iter().copied().filter(|&x| x != k_sel).collect();
            let base_c = states[c].score;
            let score_without = score_set(c, &without)?;
            // (gain, kind): kind 0 = swap with free j, 1 = move to class d, 2 = drop
            let mut best: Option<(f64, usize, usize)> = None;
            let mut consider = |gain: f64, kind: usize, arg: usize| {
                if gain > TIE_EPS && best.is_none_or(|b| gain > b.0 + TIE_EPS) {
                    best = Some((gain, kind, arg));
                }
            };
            for j in (0..k).filter(|&j| !used[j]) {
                let mut set = without.clone();
                set.push(j);
                consider(score_set(c, &set)? - base_c, 0, j);
            }
            if without.len() >= cons.v_lower[c] {
                for d in (0..fg).filter(|&d| d != c && states[d].set.len() < cons.v_upper[d]) {
                    let mut set = states[d].set.clone();
                    set.push(k_sel);
                    let gain = score_without - base_c + score_set(d, &set)? - states[d].score;
                    consider(gain, 1, d);
                }
                consider(score_without - base_c, 2, 0);
            }
            let Some((_, kind, arg)) = best else { continue };
            states[c].set.retain(|&x| x != k_sel);
            match kind {
                0 => {
                    states[c].set.push(arg);
                    used[arg] = true;
                    used[k_sel] = false;
                }
                1 => states[arg].set.push(k_sel),
                _ => used[k_sel] = false,
            }
            let touched: &[usize] = if kind == 1 { &[c, arg] } else { &[c] };
            for &d in touched {
                states[d].union = union_of(&states[d].set)?;
                states[d].score = scorers[d].score(&states[d].union);
            }
        }
    }

    let z = states.into_iter().map(|s| s.set).collect();
    Assignment::from_selection(proposals, probs, cons.metric, z, false)
}
