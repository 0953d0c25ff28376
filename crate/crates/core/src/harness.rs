//! Batch experiment runner.
//!
//! Sweeps instances, comparison kinds, and target percentages over one or
//! more predictors, always running a plain-y arm and a relevance arm on
//! identical instances with identical seeds. Reports group statistics per
//! arm plus the paired relative differences in iterations-to-recourse and
//! cost, signed so that negative means "the relevance arm was quicker /
//! cheaper". Output files: `report.json`, `runs.csv`, `boxplot_iters.csv`,
//! `boxplot_dist.csv`.
//!
//! Per-run seeds are derived from the plan seed and a stable hash of the
//! run coordinates, so a report is byte-identical for any worker count and
//! every row can be regenerated in isolation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesopt::BoConfig;
use crate::engine::{generate_recourse, RecourseRequest, RelevanceSource};
use crate::objectives::Mode;
use crate::predictor::{fit_knn, load_dataset, AnalyticFn, PredictorError, PredictorHandle};
use crate::relevance::Extreme;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment plan: {0}")]
    InvalidPlan(String),
    #[error(
        "experiment degraded: {failed} of {total} runs failed in arm `{arm}`; \
         the report was still written, flagged"
    )]
    ExperimentDegraded {
        arm: String,
        failed: usize,
        total: usize,
    },
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("report serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// One predictor entry of a plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PredictorPlan {
    /// Built-in analytic function by name.
    Analytic { name: String },
    /// CSV dataset with a fitted k-NN regressor.
    Dataset {
        path: PathBuf,
        target_col: String,
        #[serde(default = "default_k")]
        k: usize,
    },
}

fn default_k() -> usize {
    5
}

/// Which pair of objectives a run compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    /// `max-y` vs `max-rel` with tight bounds and auto relevance.
    Max,
    /// `target-y` vs `target-rel` with wide bounds and target-local
    /// relevance, one pair per target percentage.
    Target,
}

impl Comparison {
    fn tag(self) -> &'static str {
        match self {
            Comparison::Max => "max",
            Comparison::Target => "target",
        }
    }
}

/// The two arms of a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Y,
    Relevance,
}

impl Arm {
    pub fn mode(self, comparison: Comparison) -> Mode {
        match (comparison, self) {
            (Comparison::Max, Arm::Y) => Mode::MaxY,
            (Comparison::Max, Arm::Relevance) => Mode::MaxRel,
            (Comparison::Target, Arm::Y) => Mode::TargetY,
            (Comparison::Target, Arm::Relevance) => Mode::TargetRel,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Arm::Y => "y",
            Arm::Relevance => "relevance",
        }
    }
}

/// A full experiment description. Deserializable from a JSON config file;
/// the effective plan is echoed into the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub predictors: Vec<PredictorPlan>,
    /// Instances sampled per predictor.
    pub instances: usize,
    /// Base seed; per-run seeds are derived from it.
    pub seed: u64,
    pub comparisons: Vec<Comparison>,
    pub target_pcts: Vec<f64>,
    pub bounds_pct_max: f64,
    pub bounds_pct_target: f64,
    pub bo: BoConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            predictors: vec![
                PredictorPlan::Analytic { name: "identity".into() },
                PredictorPlan::Analytic { name: "additive".into() },
                PredictorPlan::Analytic { name: "interaction".into() },
            ],
            instances: 20,
            seed: 42,
            comparisons: vec![Comparison::Max, Comparison::Target],
            target_pcts: vec![10.0, 20.0, 50.0, 100.0],
            bounds_pct_max: 5.0,
            bounds_pct_target: 100.0,
            bo: BoConfig::default(),
        }
    }
}

impl ExperimentPlan {
    /// The built-in synthetic suite: three analytic predictors, both
    /// comparison kinds, the standard target-percentage grid.
    pub fn builtin_synthetic() -> Self {
        Self::default()
    }
}

/// Outcome of a single run, one row of `runs.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub dataset: String,
    pub instance: usize,
    pub arm: Arm,
    pub mode: Mode,
    pub target_pct: Option<f64>,
    pub delta_y_pct: Option<f64>,
    pub phi: Option<f64>,
    pub cost: Option<f64>,
    pub iters: Option<usize>,
    pub seed: u64,
    pub error: Option<String>,
}

impl RunRecord {
    fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

/// Mean/SD statistics for one (predictor, mode, target-pct) cell.
#[derive(Debug, Clone, Serialize)]
pub struct GroupStats {
    pub dataset: String,
    pub arm: Arm,
    pub mode: Mode,
    pub target_pct: Option<f64>,
    pub n: usize,
    pub delta_y_pct_mean: f64,
    pub delta_y_pct_sd: f64,
    pub phi_mean: Option<f64>,
    pub phi_sd: Option<f64>,
    pub cost_mean: f64,
    pub iters_mean: f64,
}

/// Paired relative differences between the arms of one comparison cell.
/// Negative values mean the relevance arm needed fewer iterations /
/// smaller feature changes.
#[derive(Debug, Clone, Serialize)]
pub struct PairedDelta {
    pub dataset: String,
    pub comparison: Comparison,
    pub target_pct: Option<f64>,
    pub n_pairs: usize,
    /// `100 * (mean iters_rel - mean iters_y) / mean iters_y`.
    pub delta_iters_pct: Option<f64>,
    /// `100 * (mean cost_rel - mean cost_y) / mean cost_y`.
    pub delta_cost_pct: Option<f64>,
}

/// Everything the batch produces.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateReport {
    pub plan: ExperimentPlan,
    pub groups: Vec<GroupStats>,
    pub paired: Vec<PairedDelta>,
    pub runs: Vec<RunRecord>,
    pub degraded: bool,
    pub flags: Vec<String>,
}

/// FNV-1a over the run coordinates, xored into the base seed.
fn run_seed(
    base: u64,
    dataset: &str,
    instance: usize,
    comparison: Comparison,
    arm: Option<Arm>,
    target_pct: Option<f64>,
) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(PRIME);
        }
    };
    eat(dataset.as_bytes());
    eat(&(instance as u64).to_le_bytes());
    eat(comparison.tag().as_bytes());
    if let Some(arm) = arm {
        eat(arm.tag().as_bytes());
    }
    eat(&target_pct.unwrap_or(f64::NAN).to_bits().to_le_bytes());
    base ^ hash
}

/// A predictor resolved from its plan entry, with the context every run
/// on it shares.
struct ResolvedPredictor {
    label: String,
    handle: Arc<PredictorHandle>,
    ranges: Vec<(f64, f64)>,
    train_targets: Vec<f64>,
    target_domain: (f64, f64),
    instances: Vec<Vec<f64>>,
}

/// Stand-in training targets for an analytic predictor: the function
/// sampled over the lower 80% sub-box of its feature ranges. Training
/// data never covers the whole searchable box, so counterfactual search
/// can move beyond the observed targets just as it can for a real model.
pub fn synthetic_train_targets(f: AnalyticFn, seed: u64) -> Vec<f64> {
    let ranges = f.ranges();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..512)
        .map(|_| {
            let x: Vec<f64> = ranges
                .iter()
                .map(|(lo, hi)| rng.random_range(*lo..=lo + 0.8 * (hi - lo)))
                .collect();
            f.eval(&x)
        })
        .collect()
}

fn resolve_predictor(
    plan: &ExperimentPlan,
    entry: &PredictorPlan,
) -> Result<ResolvedPredictor, HarnessError> {
    match entry {
        PredictorPlan::Analytic { name } => {
            let f = AnalyticFn::from_name(name)?;
            let ranges = f.ranges();
            let label = format!("analytic:{}", f.name());
            let context_seed = run_seed(plan.seed, &label, 0, Comparison::Max, None, None);
            let train_targets = synthetic_train_targets(f, context_seed);

            // Instances sit in the upper middle of each feature range:
            // high enough that the box bounds reach the whole target
            // domain, low enough that upward targets are meaningful.
            let mut rng = ChaCha8Rng::seed_from_u64(context_seed.wrapping_add(1));
            let instances = (0..plan.instances)
                .map(|_| {
                    ranges
                        .iter()
                        .map(|(lo, hi)| {
                            let width = hi - lo;
                            rng.random_range(lo + 0.5 * width..=lo + 0.7 * width)
                        })
                        .collect()
                })
                .collect();

            let target_domain = train_targets
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(*v), hi.max(*v))
                });

            Ok(ResolvedPredictor {
                label,
                handle: Arc::new(PredictorHandle::Analytic(f)),
                ranges,
                train_targets,
                target_domain,
                instances,
            })
        }
        PredictorPlan::Dataset { path, target_col, k } => {
            let dataset = load_dataset(path, target_col)?;
            let handle = fit_knn(&dataset, *k)?;
            let label = format!("{}:knn{k}", path.display());
            let (lo, hi) = dataset
                .target
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
                    (l.min(*v), h.max(*v))
                });

            // Instances are training rows, sampled without replacement
            // until the table is exhausted.
            let mut rng =
                ChaCha8Rng::seed_from_u64(run_seed(plan.seed, &label, 0, Comparison::Max, None, None));
            let n = dataset.n_rows();
            let mut order: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let instances = (0..plan.instances)
                .map(|i| dataset.features[order[i % n]].clone())
                .collect();

            Ok(ResolvedPredictor {
                label,
                handle: Arc::new(handle),
                ranges: dataset.ranges.clone(),
                train_targets: dataset.target.clone(),
                target_domain: (lo, hi),
                instances,
            })
        }
    }
}

struct RunSpec {
    predictor: Arc<PredictorHandle>,
    dataset: String,
    instance_idx: usize,
    x_orig: Vec<f64>,
    ranges: Vec<(f64, f64)>,
    relevance: RelevanceSource,
    comparison: Comparison,
    arm: Arm,
    target_pct: Option<f64>,
    bounds_pct: f64,
    seed: u64,
}

fn execute(spec: &RunSpec, bo: BoConfig) -> RunRecord {
    let mode = spec.arm.mode(spec.comparison);
    let request = RecourseRequest {
        x_orig: spec.x_orig.clone(),
        ranges: spec.ranges.clone(),
        mutable: vec![true; spec.x_orig.len()],
        mode,
        target_pct: spec.target_pct,
        bounds_pct: Some(spec.bounds_pct),
        bo: BoConfig {
            seed: spec.seed,
            ..bo
        },
        relevance: spec.relevance.clone(),
    };
    let mut record = RunRecord {
        dataset: spec.dataset.clone(),
        instance: spec.instance_idx,
        arm: spec.arm,
        mode,
        target_pct: spec.target_pct,
        delta_y_pct: None,
        phi: None,
        cost: None,
        iters: None,
        seed: spec.seed,
        error: None,
    };
    match generate_recourse(&spec.predictor, &request) {
        Ok(result) => {
            record.delta_y_pct = Some(result.delta_y_pct);
            record.phi = result.phi_cf;
            record.cost = Some(result.cost);
            record.iters = Some(result.iters_to_recourse);
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

/// Run a full experiment plan.
///
/// All output files are written to `out_dir` (when given) even if the
/// experiment degrades; a degraded experiment — more than half of the runs
/// failing in any arm — is returned as an error after writing.
pub fn run_experiment(
    plan: &ExperimentPlan,
    out_dir: Option<&Path>,
    workers: usize,
) -> Result<AggregateReport, HarnessError> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut specs: Vec<RunSpec> = Vec::new();
    for entry in &plan.predictors {
        let resolved = resolve_predictor(plan, entry)?;
        for &comparison in &plan.comparisons {
            let pcts: Vec<Option<f64>> = match comparison {
                Comparison::Max => vec![None],
                Comparison::Target => plan.target_pcts.iter().copied().map(Some).collect(),
            };
            for pct in pcts {
                for (instance_idx, x_orig) in resolved.instances.iter().enumerate() {
                    let relevance = match comparison {
                        Comparison::Max => RelevanceSource::Auto {
                            targets: resolved.train_targets.clone(),
                            extreme: Extreme::Right,
                        },
                        Comparison::Target => RelevanceSource::TargetLocal {
                            y_min: resolved.target_domain.0,
                            y_max: resolved.target_domain.1,
                        },
                    };
                    let bounds_pct = match comparison {
                        Comparison::Max => plan.bounds_pct_max,
                        Comparison::Target => plan.bounds_pct_target,
                    };
                    for arm in [Arm::Y, Arm::Relevance] {
                        let seed = run_seed(
                            plan.seed,
                            &resolved.label,
                            instance_idx,
                            comparison,
                            Some(arm),
                            pct,
                        );
                        specs.push(RunSpec {
                            predictor: Arc::clone(&resolved.handle),
                            dataset: resolved.label.clone(),
                            instance_idx,
                            x_orig: x_orig.clone(),
                            ranges: resolved.ranges.clone(),
                            relevance: relevance.clone(),
                            comparison,
                            arm,
                            target_pct: pct,
                            bounds_pct,
                            seed,
                        });
                    }
                }
            }
        }
    }

    let bo = plan.bo;
    let runs: Vec<RunRecord> = if workers == 1 {
        specs.iter().map(|s| execute(s, bo)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| HarnessError::InvalidPlan(format!("worker pool: {e}")))?;
        pool.install(|| specs.par_iter().map(|s| execute(s, bo)).collect())
    };

    let report = aggregate(plan, runs);
    if let Some(dir) = out_dir {
        write_report(&report, dir)?;
    }

    if report.degraded {
        let (arm, failed, total) = worst_arm(&report.runs);
        return Err(HarnessError::ExperimentDegraded { arm, failed, total });
    }
    Ok(report)
}

type CellKey = (String, &'static str, u64);

fn cell_key(record: &RunRecord) -> CellKey {
    (
        record.dataset.clone(),
        record.mode.as_str(),
        record.target_pct.unwrap_or(f64::NAN).to_bits(),
    )
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); a single observation
/// reports 0 and flags the cell.
fn sample_sd(values: &[f64], flags: &mut Vec<String>, what: &str) -> f64 {
    if values.len() < 2 {
        flags.push(format!("{what}: single observation, SD reported as 0"));
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Reduce per-run rows into group statistics and paired deltas.
pub fn aggregate(plan: &ExperimentPlan, runs: Vec<RunRecord>) -> AggregateReport {
    let mut flags: Vec<String> = Vec::new();

    let mut cells: BTreeMap<CellKey, Vec<&RunRecord>> = BTreeMap::new();
    for record in runs.iter().filter(|r| r.succeeded()) {
        cells.entry(cell_key(record)).or_default().push(record);
    }

    let mut groups = Vec::new();
    for ((dataset, mode_str, _), records) in &cells {
        let first = records[0];
        let label = format!("{dataset}/{mode_str}/{:?}", first.target_pct);
        let deltas: Vec<f64> = records.iter().filter_map(|r| r.delta_y_pct).collect();
        let phis: Vec<f64> = records.iter().filter_map(|r| r.phi).collect();
        let costs: Vec<f64> = records.iter().filter_map(|r| r.cost).collect();
        let iters: Vec<f64> = records
            .iter()
            .filter_map(|r| r.iters.map(|i| i as f64))
            .collect();
        groups.push(GroupStats {
            dataset: dataset.clone(),
            arm: first.arm,
            mode: first.mode,
            target_pct: first.target_pct,
            n: records.len(),
            delta_y_pct_mean: mean(&deltas),
            delta_y_pct_sd: sample_sd(&deltas, &mut flags, &label),
            phi_mean: (!phis.is_empty()).then(|| mean(&phis)),
            phi_sd: (!phis.is_empty()).then(|| sample_sd(&phis, &mut flags, &label)),
            cost_mean: mean(&costs),
            iters_mean: mean(&iters),
        });
    }

    // Pair the arms per (dataset, comparison, pct, instance); deltas are
    // computed only over instances where both arms succeeded.
    type PairKey = (String, Comparison, u64);
    let mut pairs: BTreeMap<PairKey, BTreeMap<usize, (Option<&RunRecord>, Option<&RunRecord>)>> =
        BTreeMap::new();
    for record in runs.iter().filter(|r| r.succeeded()) {
        let comparison = if record.mode.is_target() {
            Comparison::Target
        } else {
            Comparison::Max
        };
        let key = (
            record.dataset.clone(),
            comparison,
            record.target_pct.unwrap_or(f64::NAN).to_bits(),
        );
        let slot = pairs
            .entry(key)
            .or_default()
            .entry(record.instance)
            .or_insert((None, None));
        match record.arm {
            Arm::Y => slot.0 = Some(record),
            Arm::Relevance => slot.1 = Some(record),
        }
    }

    let mut paired = Vec::new();
    for ((dataset, comparison, _), by_instance) in &pairs {
        let complete: Vec<(&RunRecord, &RunRecord)> = by_instance
            .values()
            .filter_map(|(y, r)| Some(((*y)?, (*r)?)))
            .collect();
        if complete.is_empty() {
            continue;
        }
        let target_pct = complete[0].0.target_pct;
        let metric = |pick: fn(&RunRecord) -> Option<f64>, side: usize| -> f64 {
            mean(
                &complete
                    .iter()
                    .filter_map(|pair| pick(if side == 0 { pair.0 } else { pair.1 }))
                    .collect::<Vec<_>>(),
            )
        };
        let iters_y = metric(|r| r.iters.map(|i| i as f64), 0);
        let iters_r = metric(|r| r.iters.map(|i| i as f64), 1);
        let cost_y = metric(|r| r.cost, 0);
        let cost_r = metric(|r| r.cost, 1);
        let delta_iters_pct = (iters_y > 0.0).then(|| 100.0 * (iters_r - iters_y) / iters_y);
        let delta_cost_pct = if cost_y > 0.0 {
            Some(100.0 * (cost_r - cost_y) / cost_y)
        } else {
            flags.push(format!(
                "{dataset}/{}/{target_pct:?}: zero mean cost in the y arm, delta_cost omitted",
                comparison.tag()
            ));
            None
        };
        paired.push(PairedDelta {
            dataset: dataset.clone(),
            comparison: *comparison,
            target_pct,
            n_pairs: complete.len(),
            delta_iters_pct,
            delta_cost_pct,
        });
    }

    let degraded = {
        let mut arm_counts: BTreeMap<CellKey, (usize, usize)> = BTreeMap::new();
        for record in &runs {
            let counts = arm_counts.entry(cell_key(record)).or_insert((0, 0));
            counts.1 += 1;
            if !record.succeeded() {
                counts.0 += 1;
            }
        }
        arm_counts.values().any(|(failed, total)| 2 * failed > *total)
    };

    AggregateReport {
        plan: plan.clone(),
        groups,
        paired,
        runs,
        degraded,
        flags,
    }
}

fn worst_arm(runs: &[RunRecord]) -> (String, usize, usize) {
    let mut arm_counts: BTreeMap<CellKey, (usize, usize)> = BTreeMap::new();
    for record in runs {
        let counts = arm_counts.entry(cell_key(record)).or_insert((0, 0));
        counts.1 += 1;
        if !record.succeeded() {
            counts.0 += 1;
        }
    }
    arm_counts
        .into_iter()
        .max_by_key(|(_, (failed, total))| failed * 1000 / (*total).max(1))
        .map(|((dataset, mode, _), (failed, total))| (format!("{dataset}/{mode}"), failed, total))
        .unwrap_or(("<empty>".into(), 0, 0))
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|v| v.to_string()).unwrap_or_default()
}

/// Write `report.json`, `runs.csv`, and the two box-plot data files.
pub fn write_report(report: &AggregateReport, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;

    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    std::fs::write(dir.join("report.json"), json)?;

    let mut runs_csv = Vec::new();
    writeln!(
        runs_csv,
        "dataset,instance,arm,mode,target_pct,delta_y_pct,phi,cost,iters,seed"
    )?;
    for r in &report.runs {
        writeln!(
            runs_csv,
            "{},{},{},{},{},{},{},{},{},{}",
            r.dataset,
            r.instance,
            r.arm.tag(),
            r.mode,
            fmt_opt(&r.target_pct),
            fmt_opt(&r.delta_y_pct),
            fmt_opt(&r.phi),
            fmt_opt(&r.cost),
            fmt_opt(&r.iters),
            r.seed
        )?;
    }
    std::fs::write(dir.join("runs.csv"), runs_csv)?;

    // Per-pair percentage differences behind the box plots.
    let mut by_pair: BTreeMap<(String, u64, usize), (Option<&RunRecord>, Option<&RunRecord>)> =
        BTreeMap::new();
    for r in report.runs.iter().filter(|r| r.succeeded()) {
        let key = (
            r.dataset.clone(),
            r.target_pct.unwrap_or(f64::NAN).to_bits(),
            r.instance,
        );
        let slot = by_pair.entry(key).or_insert((None, None));
        match r.arm {
            Arm::Y => slot.0 = Some(r),
            Arm::Relevance => slot.1 = Some(r),
        }
    }
    let mut iters_csv = Vec::new();
    let mut dist_csv = Vec::new();
    writeln!(iters_csv, "dataset,instance,target_pct,diff_pct")?;
    writeln!(dist_csv, "dataset,instance,target_pct,diff_pct")?;
    for ((dataset, _, instance), (y, r)) in &by_pair {
        let (Some(y), Some(r)) = (y, r) else { continue };
        if let (Some(iy), Some(ir)) = (y.iters, r.iters) {
            let diff = 100.0 * (ir as f64 - iy as f64) / iy as f64;
            writeln!(
                iters_csv,
                "{dataset},{instance},{},{diff}",
                fmt_opt(&y.target_pct)
            )?;
        }
        if let (Some(cy), Some(cr)) = (y.cost, r.cost) {
            if cy > 0.0 {
                let diff = 100.0 * (cr - cy) / cy;
                writeln!(
                    dist_csv,
                    "{dataset},{instance},{},{diff}",
                    fmt_opt(&y.target_pct)
                )?;
            }
        }
    }
    std::fs::write(dir.join("boxplot_iters.csv"), iters_csv)?;
    std::fs::write(dir.join("boxplot_dist.csv"), dist_csv)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(
        dataset: &str,
        instance: usize,
        arm: Arm,
        mode: Mode,
        pct: Option<f64>,
        metrics: Option<(f64, f64, f64, usize)>,
    ) -> RunRecord {
        let ok = metrics.is_some();
        let (dy, phi, cost, iters) = metrics.unwrap_or((0.0, 0.0, 0.0, 0));
        RunRecord {
            dataset: dataset.into(),
            instance,
            arm,
            mode,
            target_pct: pct,
            delta_y_pct: ok.then_some(dy),
            phi: ok.then_some(phi),
            cost: ok.then_some(cost),
            iters: ok.then_some(iters),
            seed: 1,
            error: (!ok).then(|| "boom".into()),
        }
    }

    #[test]
    fn two_point_statistics_match_hand_arithmetic() {
        let runs = vec![
            record("d", 0, Arm::Y, Mode::TargetY, Some(10.0), Some((10.0, 0.9, 2.0, 40))),
            record("d", 1, Arm::Y, Mode::TargetY, Some(10.0), Some((20.0, 0.7, 2.0, 40))),
            record("d", 0, Arm::Relevance, Mode::TargetRel, Some(10.0), Some((12.0, 0.95, 1.9, 40))),
            record("d", 1, Arm::Relevance, Mode::TargetRel, Some(10.0), Some((18.0, 0.85, 1.8, 40))),
        ];
        let report = aggregate(&ExperimentPlan::default(), runs);

        let y_group = report
            .groups
            .iter()
            .find(|g| g.mode == Mode::TargetY)
            .unwrap();
        assert_eq!(y_group.delta_y_pct_mean, 15.0);
        assert!((y_group.delta_y_pct_sd - 7.0710678118654755).abs() < 1e-12);

        let pair = &report.paired[0];
        assert_eq!(pair.n_pairs, 2);
        // cost means 2.0 vs 1.85 -> -7.5%; iters equal -> 0 exactly.
        assert_eq!(pair.delta_iters_pct, Some(0.0));
        assert!((pair.delta_cost_pct.unwrap() - -7.5).abs() < 1e-12);
        assert!(!report.degraded);
    }

    #[test]
    fn identical_arms_give_zero_deltas_exactly() {
        let metrics = Some((10.0, 0.9, 2.0, 40));
        let runs = vec![
            record("d", 0, Arm::Y, Mode::TargetY, Some(10.0), metrics),
            record("d", 0, Arm::Relevance, Mode::TargetRel, Some(10.0), metrics),
        ];
        let report = aggregate(&ExperimentPlan::default(), runs);
        let pair = &report.paired[0];
        assert_eq!(pair.delta_iters_pct, Some(0.0));
        assert_eq!(pair.delta_cost_pct, Some(0.0));
    }

    #[test]
    fn deltas_are_paired_only_over_instances_present_in_both_arms() {
        let runs = vec![
            record("d", 0, Arm::Y, Mode::TargetY, Some(10.0), Some((10.0, 0.9, 2.0, 10))),
            record("d", 1, Arm::Y, Mode::TargetY, Some(10.0), Some((20.0, 0.9, 99.0, 99))),
            record("d", 0, Arm::Relevance, Mode::TargetRel, Some(10.0), Some((10.0, 0.9, 1.0, 5))),
            // instance 1 failed in the relevance arm
            record("d", 1, Arm::Relevance, Mode::TargetRel, Some(10.0), None),
        ];
        let report = aggregate(&ExperimentPlan::default(), runs);
        let pair = &report.paired[0];
        assert_eq!(pair.n_pairs, 1);
        assert_eq!(pair.delta_iters_pct, Some(-50.0));
        assert_eq!(pair.delta_cost_pct, Some(-50.0));
    }

    #[test]
    fn swapping_arm_labels_negates_deltas_up_to_the_denominator() {
        let y = (40.0_f64, 2.0_f64);
        let r = (30.0_f64, 1.5_f64);
        let forward = 100.0 * (r.0 - y.0) / y.0;
        let backward = 100.0 * (y.0 - r.0) / r.0;
        assert!((forward * (y.0 / r.0) + backward).abs() < 1e-12);
        let forward_d = 100.0 * (r.1 - y.1) / y.1;
        let backward_d = 100.0 * (y.1 - r.1) / r.1;
        assert!((forward_d * (y.1 / r.1) + backward_d).abs() < 1e-12);
    }

    #[test]
    fn majority_failures_degrade_the_experiment() {
        let runs = vec![
            record("d", 0, Arm::Y, Mode::TargetY, Some(10.0), None),
            record("d", 1, Arm::Y, Mode::TargetY, Some(10.0), None),
            record("d", 2, Arm::Y, Mode::TargetY, Some(10.0), Some((1.0, 0.5, 1.0, 1))),
            record("d", 0, Arm::Relevance, Mode::TargetRel, Some(10.0), Some((1.0, 0.5, 1.0, 1))),
        ];
        let report = aggregate(&ExperimentPlan::default(), runs);
        assert!(report.degraded);
    }

    #[test]
    fn empty_plan_produces_an_empty_report_without_error() {
        let plan = ExperimentPlan {
            instances: 0,
            ..ExperimentPlan::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&plan, Some(dir.path()), 1).unwrap();
        assert!(report.runs.is_empty());
        assert!(report.groups.is_empty());
        assert!(!report.degraded);
        for file in ["report.json", "runs.csv", "boxplot_iters.csv", "boxplot_dist.csv"] {
            assert!(dir.path().join(file).exists(), "{file} missing");
        }
    }

    #[test]
    fn small_experiment_is_reproducible_across_worker_counts() {
        let plan = ExperimentPlan {
            predictors: vec![PredictorPlan::Analytic { name: "identity".into() }],
            instances: 2,
            seed: 7,
            comparisons: vec![Comparison::Target],
            target_pcts: vec![20.0],
            bo: BoConfig {
                n_init: 4,
                n_iter: 6,
                n_candidates: 64,
                ..BoConfig::default()
            },
            ..ExperimentPlan::default()
        };
        let dir1 = tempfile::tempdir().unwrap();
        let dir4 = tempfile::tempdir().unwrap();
        run_experiment(&plan, Some(dir1.path()), 1).unwrap();
        run_experiment(&plan, Some(dir4.path()), 4).unwrap();
        for file in ["report.json", "runs.csv", "boxplot_iters.csv", "boxplot_dist.csv"] {
            let a = std::fs::read(dir1.path().join(file)).unwrap();
            let b = std::fs::read(dir4.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between worker counts");
        }
    }

    #[test]
    fn per_run_seeds_are_distinct_and_reproducible() {
        let plan = ExperimentPlan {
            predictors: vec![PredictorPlan::Analytic { name: "identity".into() }],
            instances: 2,
            comparisons: vec![Comparison::Target],
            target_pcts: vec![10.0, 20.0],
            bo: BoConfig {
                n_init: 2,
                n_iter: 1,
                n_candidates: 16,
                ..BoConfig::default()
            },
            ..ExperimentPlan::default()
        };
        let report = run_experiment(&plan, None, 1).unwrap();
        assert_eq!(report.runs.len(), 8);

        // Every run coordinate gets its own seed.
        let mut seeds: Vec<u64> = report.runs.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 8, "run seeds must be distinct");

        // Seeds are a pure function of the coordinates: re-running the
        // plan regenerates every row identically.
        let again = run_experiment(&plan, None, 1).unwrap();
        for (a, b) in report.runs.iter().zip(&again.runs) {
            assert_eq!(a.seed, b.seed);
            assert_eq!(a.delta_y_pct, b.delta_y_pct);
            assert_eq!(a.cost, b.cost);
            assert_eq!(a.iters, b.iters);
        }
    }
}
