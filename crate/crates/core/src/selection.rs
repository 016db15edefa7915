//! K-fold cross-validation over `(lambda, delta)` grids and the simulated
//! comparison of regularized discriminant variants.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{lw_lambda, pooled_covariance, shrink_toward, CovarianceConvention, ShrinkageTarget};
use crate::datamodel::{group_means, simulate, GroupMeans, GroupedDataset, SimulationConfig};
use crate::error::{Error, Result};
use crate::regmeans::{regularize_means, MeanRegKind};
use crate::rlda::{argmax, fit, PriorSpec, RldaConfig};

/// `{0, 0.05, ..., 1}`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "values", rename_all = "kebab-case")]
pub enum LambdaSelection {
    Grid(Vec<f64>),
    /// `lw_lambda` on each training fold.
    LedoitWolf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub lambda: LambdaSelection,
    /// `None` uses [`MeanRegKind::default_grid`] on the full-data means.
    pub delta_grid: Option<Vec<f64>>,
    pub seed: u64,
    pub stratified: bool,
}

impl CvConfig {
    pub fn new(seed: u64) -> Self {
        Self { folds: 5, lambda: LambdaSelection::Grid(default_lambda_grid()), delta_grid: None, seed, stratified: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidParameter(format!("folds = {} must be at least 2", self.folds)));
        }
        if let LambdaSelection::Grid(g) = &self.lambda {
            if g.is_empty() || g.iter().any(|l| !(0.0..=1.0).contains(l)) {
                return Err(Error::InvalidParameter("lambda grid must be non-empty and inside [0, 1]".into()));
            }
        }
        if self.delta_grid.as_ref().is_some_and(|g| g.is_empty() || g.iter().any(|d| !(d.is_finite() && *d >= 0.0))) {
            return Err(Error::InvalidParameter("delta grid must be non-empty and non-negative".into()));
        }
        Ok(())
    }
}

/// Fold index for every row. Stratified assignment shuffles each group and
/// deals its rows round-robin, continuing the deal across groups.
pub fn fold_assignment(data: &GroupedDataset, folds: usize, seed: u64, stratified: bool) -> Result<Vec<usize>> {
    if folds < 2 || folds > data.n() {
        return Err(Error::FoldInfeasible(format!("{folds} folds for {} observations", data.n())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; data.n()];
    let blocks: Vec<Vec<usize>> = if stratified {
        (0..data.k()).map(|k| data.group_rows(k)).collect()
    } else {
        vec![(0..data.n()).collect()]
    };
    let mut next = 0;
    for mut rows in blocks {
        if stratified && rows.len() < folds {
            return Err(Error::FoldInfeasible(format!("a group has {} observations for {folds} folds", rows.len())));
        }
        rows.shuffle(&mut rng);
        for i in rows {
            fold_of[i] = next % folds;
            next += 1;
        }
    }
    Ok(fold_of)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvCell {
    pub lambda: f64,
    pub delta: f64,
    /// `None` when the covariance could not be factorized on some fold.
    pub accuracy_mean: Option<f64>,
    pub accuracy_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub mean_reg: MeanRegKind,
    pub best_lambda: f64,
    pub best_delta: f64,
    pub accuracy_mean: f64,
    /// Standard deviation of the per-fold accuracies of the best cell.
    pub accuracy_sd: f64,
    pub fold_accuracies: Vec<f64>,
    /// Intensity used on each fold (differs across folds under Ledoit-Wolf).
    pub fold_lambdas: Vec<f64>,
    pub n_selected_variables: usize,
    pub table: Vec<CvCell>,
}

/// Per-fold correct counts for every `(lambda index, delta index)` and kind.
struct FoldOutcome {
    n_test: usize,
    lambdas: Vec<f64>,
    /// `[kind][lambda][delta]`, `None` if the factorization failed.
    correct: Vec<Vec<Vec<Option<usize>>>>,
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 { x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

fn evaluate_fold(
    data: &GroupedDataset,
    fold_of: &[usize],
    fold: usize,
    target: &ShrinkageTarget,
    kinds: &[(MeanRegKind, Vec<f64>)],
    lambda: &LambdaSelection,
) -> Result<FoldOutcome> {
    let (train_rows, test_rows): (Vec<usize>, Vec<usize>) = (0..data.n()).partition(|&i| fold_of[i] != fold);
    let train = data.subset(&train_rows).map_err(|e| match e {
        Error::EmptyGroup(k) => Error::FoldInfeasible(format!("group {k} is missing from training fold {fold}")),
        other => other,
    })?;
    let test = data.values().select_rows(&test_rows).transpose();
    let truth: Vec<usize> = test_rows.iter().map(|&i| data.labels()[i]).collect();

    let means = group_means(&train);
    let s = pooled_covariance(&train, &means, CovarianceConvention::WithinGroup)?;
    let t = target.materialize(&s.matrix)?;
    let log_priors: Vec<f64> = PriorSpec::Empirical.resolve(train.group_counts())?.iter().map(|p| p.ln()).collect();
    let lambdas = match lambda {
        LambdaSelection::Grid(g) => g.clone(),
        LambdaSelection::LedoitWolf => vec![lw_lambda(&train, target)?],
    };

    // Thresholded centres do not depend on lambda.
    let centres: Vec<Vec<Option<DMatrix<f64>>>> = kinds
        .iter()
        .map(|(kind, grid)| {
            grid.iter()
                .map(|&d| match kind {
                    MeanRegKind::Soft | MeanRegKind::Hard => {
                        regularize_means(&means, &kind.with_delta(d)).map(|r| Some(r.per_group.transpose()))
                    }
                    MeanRegKind::L2 => kind.with_delta(d).validate().map(|_| None),
                    MeanRegKind::None => Ok(None),
                })
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;

    let mut correct = vec![Vec::with_capacity(lambdas.len()); kinds.len()];
    for &lam in &lambdas {
        let cov = match shrink_toward(&s, &t, lam) {
            Ok(c) => c,
            Err(Error::NotPositiveDefinite(_)) => {
                for (slot, (_, grid)) in correct.iter_mut().zip(kinds) {
                    slot.push(vec![None; grid.len()]);
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        let u = cov.whiten_columns(&test);
        let w = cov.whiten_columns(&means.per_group.transpose());
        let wbar = cov.whiten(&means.pooled);
        for (ki, (kind, grid)) in kinds.iter().enumerate() {
            let row = grid
                .iter()
                .enumerate()
                .map(|(di, &d)| {
                    let c = match kind {
                        MeanRegKind::None => w.clone(),
                        MeanRegKind::L2 => {
                            let mut c = &w * (1.0 - d);
                            for mut col in c.column_iter_mut() {
                                col.axpy(d, &wbar, 1.0);
                            }
                            c
                        }
                        _ => cov.whiten_columns(centres[ki][di].as_ref().expect("thresholded centres")),
                    };
                    Some(count_correct(&c, &u, &log_priors, &truth))
                })
                .collect();
            correct[ki].push(row);
        }
    }
    Ok(FoldOutcome { n_test: test_rows.len(), lambdas, correct })
}

/// Number of test columns of `u` assigned to their true group, scoring
/// `c_k^T u - |c_k|^2 / 2 + log pi_k` in whitened coordinates.
fn count_correct(c: &DMatrix<f64>, u: &DMatrix<f64>, log_priors: &[f64], truth: &[usize]) -> usize {
    let cross = c.tr_mul(u);
    let offsets: Vec<f64> = c.column_iter().zip(log_priors).map(|(col, lp)| lp - 0.5 * col.norm_squared()).collect();
    cross
        .column_iter()
        .zip(truth)
        .filter(|(scores, &t)| argmax(scores.iter().zip(&offsets).map(|(s, o)| s + o)) == t)
        .count()
}

fn delta_grid(kind: MeanRegKind, cfg: &CvConfig, means: &GroupMeans) -> Vec<f64> {
    match (kind, &cfg.delta_grid) {
        (MeanRegKind::None, _) => vec![0.0],
        (_, Some(g)) => g.clone(),
        (_, None) => kind.default_grid(means),
    }
}

/// Cross-validates several mean regularizers at once, sharing one
/// factorization per fold and intensity.
pub fn cross_validate_many(
    data: &GroupedDataset,
    target: &ShrinkageTarget,
    kinds: &[MeanRegKind],
    cfg: &CvConfig,
) -> Result<Vec<CvResult>> {
    cfg.validate()?;
    let full_means = group_means(data);
    let kinds: Vec<(MeanRegKind, Vec<f64>)> = kinds.iter().map(|&k| (k, delta_grid(k, cfg, &full_means))).collect();
    let fold_of = fold_assignment(data, cfg.folds, cfg.seed, cfg.stratified)?;
    let outcomes: Vec<FoldOutcome> = (0..cfg.folds)
        .into_par_iter()
        .map(|f| evaluate_fold(data, &fold_of, f, target, &kinds, &cfg.lambda))
        .collect::<Result<_>>()?;

    kinds.iter().enumerate().map(|(ki, (kind, grid))| summarize(data, target, cfg, *kind, grid, ki, &outcomes)).collect()
}

fn summarize(
    data: &GroupedDataset,
    target: &ShrinkageTarget,
    cfg: &CvConfig,
    kind: MeanRegKind,
    grid: &[f64],
    ki: usize,
    outcomes: &[FoldOutcome],
) -> Result<CvResult> {
    let n_lambda = outcomes[0].lambdas.len();
    let mut table = Vec::new();
    let mut best: Option<(usize, usize, f64)> = None;
    for li in 0..n_lambda {
        for (di, &delta) in grid.iter().enumerate() {
            let accs: Option<Vec<f64>> = outcomes
                .iter()
                .map(|o| o.correct[ki][li][di].map(|c| c as f64 / o.n_test as f64))
                .collect();
            let stats = accs.as_deref().map(mean_sd);
            if let Some((mean, _)) = stats {
                // Later cells have larger lambda, then larger delta, so ">=" breaks ties toward them.
                let better = match best {
                    None => true,
                    Some((_, _, b)) => mean >= b - 1e-12,
                };
                if better {
                    best = Some((li, di, mean));
                }
            }
            table.push(CvCell {
                lambda: outcomes[0].lambdas[li],
                delta,
                accuracy_mean: stats.map(|s| s.0),
                accuracy_sd: stats.map(|s| s.1),
            });
        }
    }
    let (li, di, _) = best.ok_or(Error::NotPositiveDefinite("every grid cell failed to factorize"))?;
    let fold_accuracies: Vec<f64> =
        outcomes.iter().map(|o| o.correct[ki][li][di].expect("feasible cell") as f64 / o.n_test as f64).collect();
    let (accuracy_mean, accuracy_sd) = mean_sd(&fold_accuracies);
    let best_lambda = match cfg.lambda {
        LambdaSelection::Grid(_) => outcomes[0].lambdas[li],
        LambdaSelection::LedoitWolf => lw_lambda(data, target)?,
    };
    let best_delta = grid[di];
    let refit = fit(data, &RldaConfig::new(target.clone(), best_lambda, kind.with_delta(best_delta)))?;
    Ok(CvResult {
        mean_reg: kind,
        best_lambda,
        best_delta,
        accuracy_mean,
        accuracy_sd,
        fold_accuracies,
        fold_lambdas: outcomes.iter().map(|o| o.lambdas[li]).collect(),
        n_selected_variables: refit.active_variables(),
        table,
    })
}

/// Stratified (or plain) K-fold cross-validation of one mean regularizer.
/// Selects the best mean accuracy; ties go to the larger `lambda`, then the
/// larger `delta`. The variable count comes from a refit on all of `data`.
pub fn cross_validate(
    data: &GroupedDataset,
    target: &ShrinkageTarget,
    kind: MeanRegKind,
    cfg: &CvConfig,
) -> Result<CvResult> {
    Ok(cross_validate_many(data, target, &[kind], cfg)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub simulation: SimulationConfig,
    pub folds: usize,
    pub lambda_grid: Vec<f64>,
    pub equal_correlation: f64,
}

impl ExperimentConfig {
    /// The reference design with `T2 = I + 0.15 (11^T - I)`.
    pub fn reference(seed: u64) -> Self {
        Self {
            simulation: SimulationConfig::reference(seed),
            folds: 5,
            lambda_grid: default_lambda_grid(),
            equal_correlation: 0.15,
        }
    }

    fn targets(&self) -> [(&'static str, ShrinkageTarget); 2] {
        let variance = self.simulation.sigma.powi(2);
        [
            ("T1", ShrinkageTarget::Identity),
            ("T2", ShrinkageTarget::EqualCorrelation { variance: Some(variance), covariance: self.equal_correlation }),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub method: String,
    pub target: String,
    pub mean_reg: String,
    pub selection: String,
    pub accuracy: f64,
    /// Over folds.
    pub sd: f64,
    pub variables: usize,
    pub lambda: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub tool_version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub sd_over: String,
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentReport {
    pub fn row(&self, target: &str, mean_reg: &str, selection: &str) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| r.target == target && r.mean_reg == mean_reg && r.selection == selection)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("seed {}  (SD over {} folds)\n", self.seed, self.config.folds);
        let _ = writeln!(
            out,
            "{:<6} {:<6} {:<5} {:<9} {:>8} {:>7} {:>9} {:>7} {:>9}",
            "method", "target", "means", "selection", "accuracy", "(SD)", "variables", "lambda", "delta"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<6} {:<6} {:<5} {:<9} {:>8.3} {:>7} {:>9} {:>7.3} {:>9.4}",
                r.method,
                r.target,
                r.mean_reg,
                r.selection,
                r.accuracy,
                format!("({:.3})", r.sd),
                r.variables,
                r.lambda,
                r.delta
            );
        }
        out
    }
}

fn row_of(target: &str, selection: &str, r: &CvResult) -> ExperimentRow {
    ExperimentRow {
        method: "LDA".into(),
        target: target.into(),
        mean_reg: r.mean_reg.label().into(),
        selection: selection.into(),
        accuracy: r.accuracy_mean,
        sd: r.accuracy_sd,
        variables: r.n_selected_variables,
        lambda: r.best_lambda,
        delta: r.best_delta,
    }
}

/// Runs the ten-row comparison: for each target, plain LDA with `lambda`
/// chosen by CV and by Ledoit-Wolf, then `L2`, `L1` and hard-thresholded
/// means with CV.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let data = simulate(&config.simulation)?;
    let seed = config.simulation.seed;
    let grid_cfg = CvConfig { folds: config.folds, lambda: LambdaSelection::Grid(config.lambda_grid.clone()), delta_grid: None, seed, stratified: true };
    let lw_cfg = CvConfig { lambda: LambdaSelection::LedoitWolf, ..grid_cfg.clone() };
    let kinds = [MeanRegKind::None, MeanRegKind::L2, MeanRegKind::Soft, MeanRegKind::Hard];

    let mut plain = Vec::new();
    let mut regularized = Vec::new();
    for (name, target) in config.targets() {
        let cv = cross_validate_many(&data, &target, &kinds, &grid_cfg)?;
        let lw = cross_validate(&data, &target, MeanRegKind::None, &lw_cfg)?;
        plain.push(row_of(name, "CV", &cv[0]));
        plain.push(row_of(name, "LW", &lw));
        regularized.extend(cv[1..].iter().map(|r| row_of(name, "CV", r)));
    }
    // Table order: T1 regularized rows before T2 regularized rows.
    plain.extend(regularized);
    Ok(ExperimentReport {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config: config.clone(),
        sd_over: "folds".into(),
        rows: plain,
    })
}

pub fn run_simulated_experiment(seed: u64) -> Result<ExperimentReport> {
    run_experiment(&ExperimentConfig::reference(seed))
}
