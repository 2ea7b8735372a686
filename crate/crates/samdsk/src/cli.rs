//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use samdsk_core::matching::DEFAULT_EXACT_BUDGET;
use samdsk_core::model::DEFAULT_TEMPERATURE;
use samdsk_core::oracle::{oracle_coverage, selection_quality_report, SelectionReport};
use samdsk_core::orchestrator::{RoundBounds, RoundSchedule};
use samdsk_core::synth::DatasetParams;
use samdsk_core::trials::{bound_trials, equivalence_trials, fidelity_sweep, monotonicity_trials};
use samdsk_core::{
    build_annotation, classify_case, solve_matching, CaseLabel, MatchConstraints, Metric,
};
use serde_json::{json, Value};

use crate::annotation::{annotation_value, assignment_value};
use crate::error::IoError;
use crate::export::export_synthetic;
use crate::json;
use crate::proposals::ProposalFile;
use crate::raster::load_prob_stack;
use crate::run::run_in_dir;
use crate::source::DatasetSource;
use crate::state::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "samdsk", version, about = "Match segmentation proposals to model predictions and grow a labeled set")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Match one image's proposals against its probability maps.
    Match(MatchArgs),
    /// Run the multi-round label-expansion loop over a manifest.
    Run(RunArgs),
    /// Write a seeded synthetic dataset and manifest.
    GenSynth(GenArgs),
    /// Dice of annotations built by matching proposals to the ground truth.
    Coverage(CoverageArgs),
    /// Annotation quality per beta percentile over a synthetic fidelity sweep.
    ReportSelection(ReportArgs),
    /// Randomized checks of the solver against the exhaustive oracle and of the Case-2 bound.
    Verify(VerifyArgs),
}

/// Comma-separated per-class counts.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Counts(Vec<usize>);

fn parse_counts(s: &str) -> Result<Counts, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()
        .map(Counts)
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    Metric::parse(s).ok_or_else(|| format!("unknown metric {s:?} (soft-iou, binary-iou, dice)"))
}

/// `lo,hi` or a single value for both.
fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match *parts.as_slice() {
        [x] => Ok((x, x)),
        [lo, hi] => Ok((lo, hi)),
        _ => Err("expected `value` or `lo,hi`".into()),
    }
}

#[derive(Debug, Args)]
struct MatchOpts {
    /// Acceptance threshold on the mean per-class score.
    #[arg(long, default_value_t = 0.9)]
    beta_star: f64,
    /// Largest number of candidate subsets searched exactly before falling back to greedy.
    #[arg(long, default_value_t = DEFAULT_EXACT_BUDGET)]
    exact_budget: u64,
    #[arg(long, default_value = "soft-iou", value_parser = parse_metric)]
    metric: Metric,
}

#[derive(Debug, Args)]
struct MatchArgs {
    #[arg(long)]
    proposals: PathBuf,
    /// RAST probability stack (background last).
    #[arg(long)]
    probs: PathBuf,
    /// Per-class minimum proposal count, comma-separated (one value applies to all classes).
    #[arg(long = "v-lower", value_parser = parse_counts, default_value = "1")]
    v_lower: Counts,
    /// Per-class maximum proposal count, comma-separated.
    #[arg(long = "v-upper", value_parser = parse_counts, default_value = "1")]
    v_upper: Counts,
    #[command(flatten)]
    opts: MatchOpts,
    /// Directory for assignment.json and annotation.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Holds state.json, history.json and summary.json; an existing state is resumed.
    #[arg(long)]
    run_dir: PathBuf,
    /// Lower bounds per class; repeat once per round (the last repeats).
    #[arg(long = "v-lower", value_parser = parse_counts)]
    v_lower: Vec<Counts>,
    /// Upper bounds per class; repeat once per round (the last repeats). Default: 1, 2, 3.
    #[arg(long = "v-upper", value_parser = parse_counts)]
    v_upper: Vec<Counts>,
    #[command(flatten)]
    opts: MatchOpts,
    /// Training weight of machine labels.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    max_rounds: usize,
    /// Re-match machine-labeled images every round instead of freezing them.
    #[arg(long)]
    readmit: bool,
    /// Softmax temperature of the reference model.
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    human: usize,
    #[arg(long, default_value_t = 180)]
    unlabeled: usize,
    #[arg(long, default_value_t = 50)]
    test: usize,
    /// Image side length.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Total classes including background.
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Feature fidelity range `lo,hi` in [0, 1].
    #[arg(long, value_parser = parse_range, default_value = "0.6,0.8")]
    fidelity: (f64, f64),
    /// Illumination drift range of labeled images.
    #[arg(long, value_parser = parse_range, default_value = "0,0.2")]
    human_drift: (f64, f64),
    /// Illumination drift range of unlabeled and test images.
    #[arg(long, value_parser = parse_range, default_value = "0,1")]
    drift: (f64, f64),
    #[arg(long, default_value_t = 1.0)]
    drift_scale: f64,
}

#[derive(Debug, Args)]
struct CoverageArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long = "v-lower", value_parser = parse_counts, default_value = "1")]
    v_lower: Counts,
    #[arg(long = "v-upper", value_parser = parse_counts, default_value = "3")]
    v_upper: Counts,
    #[arg(long, default_value_t = DEFAULT_EXACT_BUDGET)]
    exact_budget: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    instances: usize,
    #[arg(long, default_value_t = 10)]
    buckets: usize,
    #[arg(long, default_value_t = 0.9)]
    beta_star: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Oracle-equivalence trials and Case-2 bound instances (monotonicity uses a fifth).
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.9)]
    beta_star: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(IoError),
    Verify(String),
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Data(e)
    }
}

impl From<samdsk_core::Error> for Failure {
    fn from(e: samdsk_core::Error) -> Self {
        Failure::Data(e.into())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Reports go to stdout, diagnostics to stderr.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
        }
    };
    let result = match cli.command {
        Command::Match(a) => cmd_match(a),
        Command::Run(a) => cmd_run(a),
        Command::GenSynth(a) => cmd_gen(a),
        Command::Coverage(a) => cmd_coverage(a),
        Command::ReportSelection(a) => cmd_report(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
        Err(Failure::Verify(msg)) => {
            eprintln!("verification failed: {msg}");
            EXIT_VERIFY
        }
    }
}

/// Broadcasts a single value to every foreground class.
fn per_class(c: &Counts, fg: usize, flag: &str) -> CliResult<Vec<usize>> {
    match c.0.len() {
        1 => Ok(vec![c.0[0]; fg]),
        n if n == fg => Ok(c.0.clone()),
        n => Err(Failure::Usage(format!(
            "--{flag} lists {n} values but the data has {fg} foreground classes"
        ))),
    }
}

fn constraints(lo: &Counts, hi: &Counts, fg: usize, opts: &MatchOpts) -> CliResult<MatchConstraints> {
    let cons = MatchConstraints::new(per_class(lo, fg, "v-lower")?, per_class(hi, fg, "v-upper")?)
        .map_err(|e| Failure::Usage(e.to_string()))?
        .with_beta_star(opts.beta_star)
        .with_exact_budget(opts.exact_budget)
        .with_metric(opts.metric);
    cons.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cons)
}

fn emit(doc: &Value, out: Option<&Path>) -> CliResult {
    let text = json::canonical(doc);
    if let Some(path) = out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
        }
        json::write_atomic(path, text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

fn case_name(c: CaseLabel) -> &'static str {
    match c {
        CaseLabel::Case1 => "case1",
        CaseLabel::Case2 => "case2",
    }
}

fn cmd_match(a: MatchArgs) -> CliResult {
    let pf = ProposalFile::load(&a.proposals)?;
    let probs = load_prob_stack(&a.probs)?;
    if pf.dims() != probs.dims() {
        return Err(IoError::Core(samdsk_core::Error::DimensionMismatch {
            expected: probs.dims(),
            found: pf.dims(),
        })
        .in_file(&a.proposals)
        .into());
    }
    let masks = pf.masks().map_err(|e| e.in_file(&a.proposals))?;
    let cons = constraints(&a.v_lower, &a.v_upper, probs.classes() - 1, &a.opts)?;
    let asg = solve_matching(&masks, &probs, &cons)?;
    let ann = build_annotation(&masks, &asg, probs.dims())?.with_provenance(&pf.image_id, asg.clone());
    let mut doc = assignment_value(&asg);
    doc["image_id"] = json!(pf.image_id);
    doc["case"] = json!(case_name(classify_case(&asg, &cons)));
    doc["beta_star"] = json!(cons.beta_star);
    doc["metric"] = json!(cons.metric.name());
    doc["v_lower"] = json!(cons.v_lower);
    doc["v_upper"] = json!(cons.v_upper);
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
        json::write_atomic(
            &dir.join("annotation.json"),
            json::canonical(&annotation_value(&pf.image_id, &ann)).as_bytes(),
        )?;
    }
    emit(&doc, a.out.as_ref().map(|d| d.join("assignment.json")).as_deref())
}

fn schedule_entries(lower: &[Counts], upper: &[Counts], fg: usize) -> CliResult<Vec<RoundBounds>> {
    let default_upper = [Counts(vec![1]), Counts(vec![2]), Counts(vec![3])];
    let default_lower = [Counts(vec![1])];
    let upper = if upper.is_empty() { &default_upper[..] } else { upper };
    let lower = if lower.is_empty() { &default_lower[..] } else { lower };
    let n = upper.len().max(lower.len());
    (0..n)
        .map(|r| {
            Ok(RoundBounds {
                v_lower: per_class(&lower[r.min(lower.len() - 1)], fg, "v-lower")?,
                v_upper: per_class(&upper[r.min(upper.len() - 1)], fg, "v-upper")?,
            })
        })
        .collect()
}

fn cmd_run(a: RunArgs) -> CliResult {
    let source = DatasetSource::open(&a.manifest)?;
    let fg = source.manifest.classes - 1;
    let entries = schedule_entries(&a.v_lower, &a.v_upper, fg)?;
    let mut schedule =
        RoundSchedule::new(entries, a.max_rounds).map_err(|e| Failure::Usage(e.to_string()))?;
    schedule.lambda = a.lambda;
    schedule.beta_star = a.opts.beta_star;
    schedule.exact_budget = a.opts.exact_budget;
    schedule.metric = a.opts.metric;
    schedule.seed = a.seed;
    schedule.readmit = a.readmit;
    schedule.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if !(a.temperature > 0.0) {
        return Err(Failure::Usage("--temperature must be positive".into()));
    }
    let config = RunConfig {
        schedule,
        temperature: a.temperature,
    };
    let summary = run_in_dir(&source, &a.run_dir, &config)?;
    emit(&summary.to_value(), None)
}

fn cmd_gen(a: GenArgs) -> CliResult {
    let mut p = DatasetParams::benchmark();
    p.geometry.height = a.size;
    p.geometry.width = a.size;
    p.geometry.classes = a.classes;
    p.human = a.human;
    p.unlabeled = a.unlabeled;
    p.test = a.test;
    p.feature_fidelity = a.fidelity;
    p.human_drift = a.human_drift;
    p.pool_drift = a.drift;
    p.drift_scale = a.drift_scale;
    std::fs::create_dir_all(&a.out).map_err(|e| IoError::io(&a.out, e))?;
    let manifest = export_synthetic(&a.out, a.seed, &p).map_err(|e| match e {
        IoError::Core(samdsk_core::Error::InvalidShape(msg)) => Failure::Usage(msg),
        other => Failure::Data(other),
    })?;
    emit(
        &json!({
            "manifest": manifest.to_string_lossy(),
            "images": a.human + a.unlabeled + a.test,
        }),
        None,
    )
}

fn cmd_coverage(a: CoverageArgs) -> CliResult {
    let source = DatasetSource::open(&a.manifest)?;
    let fg = source.manifest.classes - 1;
    let opts = MatchOpts {
        beta_star: 0.9,
        exact_budget: a.exact_budget,
        metric: Metric::SoftIou,
    };
    let cons = constraints(&a.v_lower, &a.v_upper, fg, &opts)?;
    let mut rows = Vec::new();
    let mut infeasible = Vec::new();
    let mut sums = vec![0.0; fg];
    for e in source.manifest.images.iter().filter(|e| e.gt.is_some()) {
        let img = source.image(&e.id)?;
        let gt = img.gt.as_ref().expect("filtered on gt");
        match oracle_coverage(&img.proposals, gt, &cons) {
            Ok(d) => {
                for (s, x) in sums.iter_mut().zip(&d) {
                    *s += x;
                }
                rows.push(json!({"id": e.id, "dice": d}));
            }
            Err(samdsk_core::Error::InfeasibleConstraints(_)) => infeasible.push(e.id.clone()),
            Err(err) => return Err(err.into()),
        }
    }
    let n = rows.len();
    let per_class: Vec<Option<f64>> =
        sums.iter().map(|s| (n > 0).then(|| s / n as f64)).collect();
    let mean = (n > 0).then(|| sums.iter().sum::<f64>() / (n * fg) as f64);
    emit(
        &json!({
            "images": rows,
            "infeasible": infeasible,
            "mean_dice": mean,
            "per_class_mean_dice": per_class,
            "v_lower": cons.v_lower,
            "v_upper": cons.v_upper,
        }),
        a.out.as_deref(),
    )
}

pub fn selection_value(r: &SelectionReport) -> Value {
    let buckets: Vec<Value> = r
        .buckets
        .iter()
        .map(|b| {
            json!({
                "percentile": [b.percentile.0, b.percentile.1],
                "count": b.count,
                "mean_beta": b.mean_beta,
                "mean_iou_annotation": b.mean_iou_annotation,
                "mean_iou_prediction": b.mean_iou_prediction,
            })
        })
        .collect();
    json!({
        "buckets": buckets,
        "case1_mean_iou": r.case1_mean_iou,
        "case2_mean_iou": r.case2_mean_iou,
        "case_gap": r.case_gap,
        "spearman": r.spearman,
    })
}

fn cmd_report(a: ReportArgs) -> CliResult {
    if a.instances == 0 || a.buckets == 0 {
        return Err(Failure::Usage("--instances and --buckets must be positive".into()));
    }
    let samples = fidelity_sweep(a.seed, a.instances, a.beta_star)?;
    let report = selection_quality_report(&samples, a.buckets, a.beta_star)?;
    let mut doc = selection_value(&report);
    doc["seed"] = json!(a.seed);
    doc["instances"] = json!(a.instances);
    emit(&doc, a.out.as_deref())
}

fn cmd_verify(a: VerifyArgs) -> CliResult {
    if a.trials == 0 {
        return Err(Failure::Usage("--trials must be positive".into()));
    }
    let eq = equivalence_trials(a.seed, a.trials)?;
    let bound = bound_trials(a.seed, a.trials, a.beta_star)?;
    let mono = monotonicity_trials(a.seed, (a.trials / 5).max(1))?;
    let passed = eq.passed() && bound.passed() && mono.passed();
    let doc = json!({
        "seed": a.seed,
        "trials": a.trials,
        "beta_star": a.beta_star,
        "equivalence": {
            "trials": eq.trials,
            "mismatches": eq.mismatches,
            "infeasible": eq.infeasible,
            "heuristic": eq.heuristic,
            "max_objective_gap": eq.max_objective_gap,
        },
        "bound": {
            "case2": bound.case2,
            "case1": bound.case1,
            "skipped": bound.skipped,
            "violations": bound.violations,
            "max_excess": bound.max_excess,
        },
        "monotonicity": {
            "trials": mono.trials,
            "decreases": mono.decreases,
            "heuristic": mono.heuristic,
        },
        "passed": passed,
    });
    emit(&doc, a.out.as_deref())?;
    if !passed {
        return Err(Failure::Verify(format!(
            "{} oracle mismatches, {} bound violations, {} monotonicity failures",
            eq.mismatches.len() + eq.infeasible.len() + eq.heuristic.len(),
            bound.violations.len(),
            mono.decreases.len() + mono.heuristic.len()
        )));
    }
    Ok(())
}
