use std::fs::File;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use rlda_core::bayes::{posterior_mean_conjugate_scalar, posterior_mean_general, GaussianPrior};
use rlda_core::covariance::lw_lambda;
use rlda_core::datamodel::{load_csv, load_features, load_matrix_csv, simulate, write_csv};
use rlda_core::persist::ModelDocument;
use rlda_core::quantization::{demo_quantization, QuantizationScenario};
use rlda_core::rlda::{fit, fit_svd_ridge, CholeskyClassifier};
use rlda_core::selection::{cross_validate, default_lambda_grid, run_experiment, ExperimentConfig};
use rlda_core::{
    CvConfig, DMatrix, DVector, GroupedDataset, LambdaSelection, MeanRegKind, MeanRegularizer, PriorSpec, RldaConfig,
    ShrinkageTarget, SimulationConfig, SvdMode,
};

use crate::args::*;
use crate::Failure;

#[derive(Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    tool: &'static str,
    tool_version: &'static str,
    command: &'a str,
    seed: u64,
    config: C,
    result: R,
}

/// Writes the JSON report to `out`, or to stdout when no path is given.
fn emit<C: Serialize, R: Serialize>(command: &str, seed: u64, config: C, result: R, out: Option<&Path>) -> Result<(), Failure> {
    let envelope = Envelope { tool: "rlda", tool_version: env!("CARGO_PKG_VERSION"), command, seed, config, result };
    let text = serde_json::to_string_pretty(&envelope).map_err(|e| Failure::Run(e.to_string()))? + "\n";
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Run(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let seed = cli.seed;
    match cli.command {
        Command::Simulate(a) => simulate_cmd(a, seed),
        Command::Fit(a) => fit_cmd(a, seed),
        Command::Predict(a) => predict_cmd(a, seed),
        Command::Cv(a) => cv_cmd(a, seed),
        Command::Experiment(a) => experiment_cmd(a, seed),
        Command::QuantizeDemo(a) => quantize_cmd(a, seed),
        Command::Bayes(a) => bayes_cmd(a, seed),
        Command::Bench(a) => bench_cmd(a, seed),
    }
}

fn simulate_cmd(a: SimulateArgs, seed: u64) -> Result<(), Failure> {
    let config = SimulationConfig::with_sparse_shift(a.n, a.m, a.p, a.sigma, a.c, a.shifted, a.shift, seed);
    let data = simulate(&config)?;
    let file = File::create(&a.out).map_err(|e| Failure::Run(format!("{}: {e}", a.out.display())))?;
    write_csv(&data, file, &a.label)?;
    let result = json!({ "out": a.out, "rows": data.n(), "columns": data.p(), "label": a.label });
    emit("simulate", seed, &config, result, None)
}

fn target_given(t: &TargetArgs) -> bool {
    t.target.is_some() || t.theta.is_some() || t.variance.is_some() || t.target_matrix.is_some()
}

fn resolve_target(t: &TargetArgs) -> Result<ShrinkageTarget, Failure> {
    let kind = t.target.unwrap_or(if t.target_matrix.is_some() { TargetKind::Custom } else { TargetKind::Identity });
    if kind != TargetKind::EqualCorrelation && (t.theta.is_some() || t.variance.is_some()) {
        return Err(usage("--theta and --variance require --target equal-correlation"));
    }
    if kind != TargetKind::Custom && t.target_matrix.is_some() {
        return Err(usage("--target-matrix requires --target custom"));
    }
    Ok(match kind {
        TargetKind::Identity => ShrinkageTarget::Identity,
        TargetKind::EqualCorrelation => {
            ShrinkageTarget::EqualCorrelation { variance: t.variance, covariance: t.theta.unwrap_or(0.15) }
        }
        TargetKind::Custom => {
            let path = t.target_matrix.as_ref().ok_or_else(|| usage("--target custom requires --target-matrix"))?;
            ShrinkageTarget::Custom(load_matrix_csv(path)?)
        }
    })
}

fn parse_priors(raw: &str) -> Result<PriorSpec, Failure> {
    match raw.trim() {
        "empirical" => Ok(PriorSpec::Empirical),
        "uniform" => Ok(PriorSpec::Uniform),
        list => list
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map(PriorSpec::Custom)
            .map_err(|_| usage(format!("--priors expects empirical, uniform or numbers, got '{raw}'"))),
    }
}

fn mean_kind(m: MeanRegArg) -> MeanRegKind {
    match m {
        MeanRegArg::None => MeanRegKind::None,
        MeanRegArg::L2 => MeanRegKind::L2,
        MeanRegArg::Soft => MeanRegKind::Soft,
        MeanRegArg::Hard => MeanRegKind::Hard,
    }
}

fn mean_regularizer(kind: MeanRegArg, delta: Option<f64>) -> Result<MeanRegularizer, Failure> {
    match (kind, delta) {
        (MeanRegArg::None, Some(_)) => Err(usage("--delta needs --mean-reg l2, soft or hard")),
        (MeanRegArg::None, None) => Ok(MeanRegularizer::None),
        (_, None) => Err(usage("--mean-reg l2, soft and hard need --delta")),
        (k, Some(d)) => Ok(mean_kind(k).with_delta(d)),
    }
}

fn fit_cmd(a: FitArgs, seed: u64) -> Result<(), Failure> {
    let data = load_csv(&a.data.data, &a.data.label)?;
    let priors = parse_priors(&a.priors)?;
    match a.algorithm {
        Algorithm::Chol => {
            if a.mode.is_some() {
                return Err(usage("--mode applies to --algorithm svd only"));
            }
            let target = resolve_target(&a.target)?;
            let lambda = match a.lambda.trim() {
                "lw" => lw_lambda(&data, &target)?,
                v => v.parse().map_err(|_| usage(format!("--lambda expects a number or lw, got '{v}'")))?,
            };
            let config = RldaConfig {
                target,
                lambda,
                mean_reg: mean_regularizer(a.mean_reg, a.delta)?,
                priors,
                standardize: a.standardize,
            };
            let model = fit(&data, &config)?;
            ModelDocument::from_cholesky(&model, data.feature_names().to_vec()).with_seed(seed).save(&a.out)?;
            let result = json!({
                "model": a.out,
                "groups": data.group_names(),
                "priors": model.priors(),
                "active_variables": model.active_variables(),
                "jitter": model.covariance().jitter(),
            });
            emit("fit", seed, json!({ "algorithm": "chol", "lambda_rule": a.lambda, "rlda": config }), result, None)
        }
        Algorithm::Svd => {
            if target_given(&a.target) {
                return Err(usage("--target, --theta, --variance and --target-matrix apply to --algorithm chol only"));
            }
            if a.standardize {
                return Err(usage("--standardize applies to --algorithm chol only"));
            }
            let delta = match mean_regularizer(a.mean_reg, a.delta)? {
                MeanRegularizer::None => 0.0,
                MeanRegularizer::L2(d) => d,
                _ => return Err(usage("--algorithm svd supports --mean-reg none or l2 only")),
            };
            let lambda: f64 = a
                .lambda
                .trim()
                .parse()
                .map_err(|_| usage(format!("--algorithm svd needs a numeric --lambda, got '{}'", a.lambda)))?;
            let mode = match a.mode.unwrap_or(ModeArg::Exact) {
                ModeArg::Exact => SvdMode::Exact,
                ModeArg::Paper => SvdMode::ColumnVariance,
            };
            let model = fit_svd_ridge(&data, lambda, mode)?;
            let resolved = priors.resolve(data.group_counts())?;
            ModelDocument::from_svd(&model, delta, resolved.clone(), data.group_names().to_vec(), data.feature_names().to_vec())
                .with_seed(seed)
                .save(&a.out)?;
            let config = json!({ "algorithm": "svd", "mode": mode, "lambda": lambda, "delta": delta, "priors": priors });
            let result = json!({ "model": a.out, "groups": data.group_names(), "priors": resolved, "rank": model.singular_values().len() });
            emit("fit", seed, config, result, None)
        }
    }
}

fn predict_cmd(a: PredictArgs, seed: u64) -> Result<(), Failure> {
    let doc = ModelDocument::load(&a.model)?;
    let table = load_features(&a.data, a.label.as_deref())?;
    if !doc.feature_names.is_empty() && doc.feature_names != table.feature_names {
        return Err(Failure::Run(format!(
            "feature columns {:?} do not match the model's {:?}",
            table.feature_names, doc.feature_names
        )));
    }
    let model = doc.restore()?;
    let labels = model.classify_rows(&table.values, &doc.priors)?;
    let predictions: Vec<&str> = labels.iter().map(|&k| doc.group_names[k].as_str()).collect();
    let accuracy = table.labels.as_ref().map(|truth| {
        predictions.iter().zip(truth).filter(|(p, t)| **p == t.as_str()).count() as f64 / truth.len() as f64
    });
    let config = json!({ "model": a.model, "data": a.data, "label": a.label });
    emit("predict", seed, config, json!({ "predictions": predictions, "accuracy": accuracy }), a.out.as_deref())
}

fn cv_cmd(a: CvArgs, seed: u64) -> Result<(), Failure> {
    let data = load_csv(&a.data.data, &a.data.label)?;
    let target = resolve_target(&a.target)?;
    let lambda = match (a.lambda.trim(), a.lambda_grid) {
        ("grid", grid) => LambdaSelection::Grid(grid.unwrap_or_else(default_lambda_grid)),
        ("lw", None) => LambdaSelection::LedoitWolf,
        ("lw", Some(_)) => return Err(usage("--lambda-grid conflicts with --lambda lw")),
        (other, _) => return Err(usage(format!("--lambda expects grid or lw, got '{other}'"))),
    };
    let kind = mean_kind(a.mean_reg);
    if kind == MeanRegKind::None && a.delta_grid.is_some() {
        return Err(usage("--delta-grid needs --mean-reg l2, soft or hard"));
    }
    let cfg = CvConfig { folds: a.folds, lambda, delta_grid: a.delta_grid, seed, stratified: !a.no_stratify };
    let result = cross_validate(&data, &target, kind, &cfg)?;
    eprintln!(
        "accuracy {:.3} (SD {:.3} over {} folds), lambda {}, delta {}, {} variables",
        result.accuracy_mean, result.accuracy_sd, cfg.folds, result.best_lambda, result.best_delta, result.n_selected_variables
    );
    let config = json!({ "data": a.data.data, "label": a.data.label, "target": target, "mean_reg": kind, "cv": cfg });
    emit("cv", seed, config, result, a.out.as_deref())
}

fn experiment_cmd(a: ExperimentArgs, seed: u64) -> Result<(), Failure> {
    let mut config = ExperimentConfig::reference(seed);
    config.simulation = SimulationConfig::with_sparse_shift(a.n, a.m, a.p, 1.0, 0.4, 5.min(a.p), 3.0, seed);
    config.folds = a.folds;
    if let Some(grid) = a.lambda_grid {
        config.lambda_grid = grid;
    }
    let report = run_experiment(&config)?;
    eprint!("{}", report.to_text());
    let result = json!({ "sd_over": report.sd_over, "rows": report.rows });
    emit("experiment", seed, &config, result, a.out.as_deref())
}

fn quantize_cmd(a: QuantizeArgs, seed: u64) -> Result<(), Failure> {
    let centre = DVector::from_element(a.p, a.mu);
    let scenario = match a.psi {
        Some(psi) => QuantizationScenario::random(centre, DMatrix::identity(a.p, a.p) * psi, a.sigma2, a.delta2, a.n),
        None => QuantizationScenario::fixed(centre, a.sigma2, a.delta2, a.n),
    };
    let mut report = demo_quantization(&scenario, a.replications, seed)?;
    if !a.keep_draws {
        report.tau_draws.clear();
    }
    eprintln!("mse naive {:.5}, mse posterior {:.5}", report.mse_naive, report.mse_posterior);
    let config = json!({
        "p": a.p, "n": a.n, "sigma2": a.sigma2, "delta2": a.delta2, "mu": a.mu, "psi": a.psi,
        "replications": a.replications, "keep_draws": a.keep_draws,
    });
    emit("quantize-demo", seed, config, report, a.out.as_deref())
}

fn bayes_cmd(a: BayesArgs, seed: u64) -> Result<(), Failure> {
    let p = a.xbar.len();
    let xbar = DVector::from_vec(a.xbar.clone());
    let theta = match &a.theta {
        Some(t) if t.len() != p => return Err(usage(format!("--theta has {} entries, --xbar has {p}", t.len()))),
        Some(t) => DVector::from_vec(t.clone()),
        None => DVector::zeros(p),
    };
    let summary = match a.c {
        Some(c) => posterior_mean_conjugate_scalar(&xbar, a.n, c, &theta)?,
        None => {
            let gamma2 = a.gamma2.unwrap_or(1.0);
            let prior = GaussianPrior::with_covariance(theta.clone(), DMatrix::identity(p, p) * gamma2);
            posterior_mean_general(&xbar, a.n, &(DMatrix::identity(p, p) * a.sigma2), &prior)?
        }
    };
    let config = json!({
        "xbar": a.xbar, "n": a.n, "sigma2": a.sigma2, "theta": theta.as_slice(),
        "gamma2": if a.c.is_none() { Some(a.gamma2.unwrap_or(1.0)) } else { None }, "c": a.c,
    });
    emit("bayes", seed, config, summary, a.out.as_deref())
}

fn parse_size(raw: &str) -> Result<(usize, usize), Failure> {
    let err = || usage(format!("--sizes expects n:p pairs, got '{raw}'"));
    let (n, p) = raw.trim().split_once(':').ok_or_else(err)?;
    let (n, p) = (n.parse().map_err(|_| err())?, p.parse().map_err(|_| err())?);
    if n < 4 || p == 0 {
        return Err(usage(format!("size {raw}: need n >= 4 and p >= 1")));
    }
    Ok((n, p))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Serialize)]
struct BenchRow {
    n: usize,
    p: usize,
    /// Sum of all simulated values; equal seeds give equal instances.
    instance_checksum: f64,
    cholesky_median_ms: f64,
    svd_median_ms: f64,
    svd_over_cholesky: f64,
}

fn time_ms(f: impl FnOnce() -> Result<(), Failure>) -> Result<f64, Failure> {
    let start = Instant::now();
    f()?;
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

fn bench_instance(n: usize, p: usize, seed: u64) -> Result<GroupedDataset, Failure> {
    Ok(simulate(&SimulationConfig::with_sparse_shift(n / 2, n - n / 2, p, 1.0, 0.4, 5.min(p), 3.0, seed))?)
}

fn bench_cmd(a: BenchArgs, seed: u64) -> Result<(), Failure> {
    if a.reps == 0 {
        return Err(usage("--reps must be positive"));
    }
    if !(a.lambda > 0.0 && a.lambda < 1.0) {
        return Err(usage("--lambda must lie in (0, 1)"));
    }
    let sizes = a.sizes.iter().map(|s| parse_size(s)).collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for &(n, p) in &sizes {
        let data = bench_instance(n, p, seed)?;
        let priors = PriorSpec::Empirical.resolve(data.group_counts())?;
        let (mut chol, mut svd) = (Vec::new(), Vec::new());
        for _ in 0..a.reps {
            chol.push(time_ms(|| {
                let c = CholeskyClassifier::fit(&data, &ShrinkageTarget::Identity, a.lambda, &MeanRegularizer::None, &priors)?;
                (0..data.n()).for_each(|i| {
                    std::hint::black_box(c.classify(&data.row(i)));
                });
                Ok(())
            })?);
            svd.push(time_ms(|| {
                let m = fit_svd_ridge(&data, 1.0 - a.lambda, SvdMode::Exact)?;
                for i in 0..data.n() {
                    std::hint::black_box(rlda_core::rlda::classify_alg2(&m, 0.0, &priors, &data.row(i))?);
                }
                Ok(())
            })?);
        }
        let (c, s) = (median(chol), median(svd));
        rows.push(BenchRow {
            n,
            p,
            instance_checksum: data.values().sum(),
            cholesky_median_ms: c,
            svd_median_ms: s,
            svd_over_cholesky: s / c,
        });
    }
    eprintln!("{:>6} {:>6} {:>12} {:>12} {:>8}", "n", "p", "chol ms", "svd ms", "ratio");
    for r in &rows {
        eprintln!(
            "{:>6} {:>6} {:>12.3} {:>12.3} {:>8.2}",
            r.n, r.p, r.cholesky_median_ms, r.svd_median_ms, r.svd_over_cholesky
        );
    }
    let config = json!({ "sizes": a.sizes, "reps": a.reps, "lambda": a.lambda });
    emit("bench", seed, config, rows, a.out.as_deref())
}

