use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::advantage::ModulationKind;
use crate::env::Dataset;
use crate::error::{AceError, Result};
use crate::metrics::{self, MetricsRecord};
use crate::policy::PolicyParams;
use crate::seeding::{self, Purpose};
use crate::theory::{self, Estimate, FaultInjection, GaussianModelConfig};
use crate::trainer::{self, Algorithm, TrainOutcome};

use super::artifacts::{write_json, write_text, RunManifest};
use super::run_config::RunConfig;

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const DEFAULT_ALPHAS: [f64; 6] = [0.0, 0.1, 0.5, 1.0, 2.0, 5.0];
pub const SWEEP_CSV_VERSION: &str = "# acelab-sweep v1";
pub const ABLATION_CSV_VERSION: &str = "# acelab-ablation v1";
pub const PASS_AT_K_CSV_VERSION: &str = "# acelab-pass-at-k v1";

/// Per-seed result written to `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub algorithm: String,
    pub alpha: f64,
    pub modulation: String,
    pub steps: usize,
    pub skipped_steps: usize,
    pub events: Vec<String>,
    #[serde(rename = "final")]
    pub final_metrics: Option<MetricsRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Spread {
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std: f64,
    pub values: Vec<f64>,
}

fn spread(metric: &str, values: Vec<f64>) -> Spread {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Spread {
        metric: metric.to_string(),
        mean,
        std,
        values,
    }
}

fn final_spreads(runs: &[RunSummary]) -> Vec<Spread> {
    let finals: Vec<&MetricsRecord> = runs
        .iter()
        .filter_map(|r| r.final_metrics.as_ref())
        .collect();
    if finals.is_empty() {
        return Vec::new();
    }
    let mut out = vec![
        spread(
            "mean_reward",
            finals.iter().map(|m| m.mean_reward).collect(),
        ),
        spread("oef", finals.iter().map(|m| m.oef).collect()),
        spread("entropy", finals.iter().map(|m| m.entropy).collect()),
        spread("kl", finals.iter().map(|m| m.kl_to_ref).collect()),
        spread(
            "distinct_correct",
            finals.iter().map(|m| m.distinct_correct as f64).collect(),
        ),
    ];
    for &k in finals[0].pass_at_k.keys() {
        out.push(spread(
            &format!("pass@{k}"),
            finals
                .iter()
                .map(|m| m.pass_at_k.get(&k).copied().unwrap_or(f64::NAN))
                .collect(),
        ));
    }
    out
}

fn initial_policy(dataset: &Dataset) -> Result<PolicyParams> {
    dataset.uniform_policy()
}

/// Trains one seed and writes `metrics.csv`, `checkpoint.bin`, `summary.json`
/// and `config.txt` into `dir`.
pub fn train_run(config: &RunConfig, dir: &Path) -> Result<(RunSummary, TrainOutcome)> {
    let dataset = config.dataset.build()?;
    let tc = &config.trainer;
    let outcome = trainer::train(tc, &dataset, initial_policy(&dataset)?)?;
    std::fs::create_dir_all(dir)?;
    write_text(&dir.join("config.txt"), &config.to_text())?;
    write_text(
        &dir.join("metrics.csv"),
        &metrics::metrics_csv(&outcome.metrics, &tc.sorted_ks()),
    )?;
    outcome.params.save(&dir.join("checkpoint.bin"))?;
    let summary = RunSummary {
        seed: tc.seed,
        algorithm: tc.algorithm.to_string(),
        alpha: tc.alpha,
        modulation: tc.modulation.to_string(),
        steps: tc.steps,
        skipped_steps: outcome.skipped_steps,
        events: outcome.events.clone(),
        final_metrics: outcome.metrics.last().cloned(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok((summary, outcome))
}

fn with_seed(config: &RunConfig, seed: u64) -> RunConfig {
    let mut c = config.clone();
    c.trainer.seed = seed;
    c
}

#[derive(Debug, Clone, Serialize)]
struct MultiSeedSummary {
    runs: Vec<RunSummary>,
    across_seeds: Vec<Spread>,
}

/// `train`: one run in `out`, or one subdirectory per seed when `seeds` is given.
pub fn cmd_train(config: &RunConfig, seeds: Option<&[u64]>, out: &Path) -> Result<Vec<RunSummary>> {
    config.trainer.validate()?;
    let seed_list = seeds.map_or_else(|| vec![config.trainer.seed], |s| s.to_vec());
    let manifest = RunManifest::new("train", out, seed_list.clone(), config.to_pairs());
    std::fs::create_dir_all(out)?;
    let runs = match seeds {
        None => vec![train_run(config, out)?.0],
        Some(seeds) => {
            let runs = seeds
                .par_iter()
                .map(|&s| {
                    train_run(&with_seed(config, s), &out.join(format!("seed-{s}"))).map(|r| r.0)
                })
                .collect::<Result<Vec<_>>>()?;
            write_json(
                &out.join("summary.json"),
                &MultiSeedSummary {
                    across_seeds: final_spreads(&runs),
                    runs: runs.clone(),
                },
            )?;
            runs
        }
    };
    manifest.finish(out)?;
    Ok(runs)
}

/// `eval`: pass@k of a saved checkpoint, one CSV row per k.
pub fn cmd_eval(
    checkpoint: &Path,
    dataset: &Dataset,
    n: usize,
    ks: &[usize],
    temperature: f64,
    seed: u64,
    out: &Path,
) -> Result<Vec<(usize, f64)>> {
    let max_k = ks.iter().copied().max().unwrap_or(0);
    if ks.is_empty() || n < max_k {
        return Err(AceError::config(
            "n",
            format!("need n >= max(ks) = {max_k}, got {n}"),
        ));
    }
    let params = PolicyParams::load(checkpoint)?;
    let manifest = RunManifest::new(
        "eval",
        out,
        vec![seed],
        vec![
            ("checkpoint".into(), checkpoint.display().to_string()),
            ("n".into(), n.to_string()),
            (
                "ks".into(),
                ks.iter()
                    .map(|k| k.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("temperature".into(), temperature.to_string()),
        ],
    );
    let mut rng = seeding::stream(seed, Purpose::Eval, 0, 0);
    let table = metrics::pass_at_k_eval(dataset, &params, n, ks, temperature, &mut rng)?;
    let mut csv = format!("{PASS_AT_K_CSV_VERSION}\nk,pass_at_k\n");
    for (k, v) in &table {
        csv.push_str(&format!("{k},{v}\n"));
    }
    std::fs::create_dir_all(out)?;
    write_text(&out.join("pass_at_k.csv"), &csv)?;
    manifest.finish(out)?;
    Ok(table.into_iter().collect())
}

fn pass_cols(m: Option<&MetricsRecord>) -> (String, String) {
    let get = |first: bool| {
        m.and_then(|m| {
            if first {
                m.pass_at_k.values().next()
            } else {
                m.pass_at_k.values().last()
            }
        })
        .map_or_else(|| "NA".to_string(), |v| v.to_string())
    };
    (get(true), get(false))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub seed: u64,
    pub summary: RunSummary,
}

/// `sweep-alpha`: one ACE run per (α, seed).
pub fn cmd_sweep_alpha(
    config: &RunConfig,
    alphas: &[f64],
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() {
        return Err(AceError::config("alphas", "need at least one alpha"));
    }
    if seeds.is_empty() {
        return Err(AceError::config("seeds", "need at least one seed"));
    }
    let algorithm = config.trainer.algorithm.with_ace();
    let manifest = RunManifest::new("sweep-alpha", out, seeds.to_vec(), config.to_pairs());
    let jobs: Vec<(f64, u64)> = alphas
        .iter()
        .flat_map(|&a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(alpha, seed)| {
            let mut c = with_seed(config, seed);
            c.trainer.alpha = alpha;
            c.trainer.algorithm = algorithm;
            let dir = out
                .join(format!("alpha-{alpha}"))
                .join(format!("seed-{seed}"));
            let (summary, _) = train_run(&c, &dir)?;
            Ok(SweepRow {
                alpha,
                seed,
                summary,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let kmax = config.trainer.sorted_ks().last().copied().unwrap_or(1);
    let mut csv = format!(
        "{SWEEP_CSV_VERSION}\nalpha,seed,mean_reward,pass@1,pass@{kmax},oef,entropy,distinct_correct\n"
    );
    for r in &rows {
        let m = r.summary.final_metrics.as_ref();
        let (p1, pk) = pass_cols(m);
        csv.push_str(&format!(
            "{},{},{},{p1},{pk},{},{},{}\n",
            r.alpha,
            r.seed,
            fmt_opt(m.map(|m| m.mean_reward)),
            fmt_opt(m.map(|m| m.oef)),
            fmt_opt(m.map(|m| m.entropy)),
            fmt_opt(m.map(|m| m.distinct_correct as f64)),
        ));
    }
    write_text(&out.join("sweep.csv"), &csv)?;
    let by_alpha: Vec<(f64, Vec<Spread>)> = alphas
        .iter()
        .map(|&a| {
            let runs: Vec<RunSummary> = rows
                .iter()
                .filter(|r| r.alpha == a)
                .map(|r| r.summary.clone())
                .collect();
            (a, final_spreads(&runs))
        })
        .collect();
    write_json(&out.join("summary.json"), &by_alpha)?;
    manifest.finish(out)?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub summary: RunSummary,
}

pub const ABLATION_VARIANTS: [&str; 3] = ["baseline", "softplus", "relu"];

/// `ablate-modulation`: baseline, softplus and ReLU runs under shared seeds.
pub fn cmd_ablate_modulation(
    config: &RunConfig,
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(AceError::config("seeds", "need at least one seed"));
    }
    let manifest = RunManifest::new("ablate-modulation", out, seeds.to_vec(), config.to_pairs());
    let base: Algorithm = config.trainer.algorithm.baseline();
    let jobs: Vec<(u64, &str)> = seeds
        .iter()
        .flat_map(|&s| ABLATION_VARIANTS.iter().map(move |&v| (s, v)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(seed, variant)| {
            let mut c = with_seed(config, seed);
            match variant {
                "baseline" => c.trainer.algorithm = base,
                "softplus" => {
                    c.trainer.algorithm = base.with_ace();
                    c.trainer.modulation = ModulationKind::Softplus;
                }
                _ => {
                    c.trainer.algorithm = base.with_ace();
                    c.trainer.modulation = ModulationKind::Relu;
                }
            }
            let dir = out.join(variant).join(format!("seed-{seed}"));
            let (summary, _) = train_run(&c, &dir)?;
            Ok(AblationRow {
                variant: variant.to_string(),
                seed,
                summary,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let kmax = config.trainer.sorted_ks().last().copied().unwrap_or(1);
    let mut csv = format!(
        "{ABLATION_CSV_VERSION}\nvariant,seed,mean_reward,pass@1,pass@{kmax},oef,mean_overconfidence,entropy,distinct_correct\n"
    );
    for r in &rows {
        let m = r.summary.final_metrics.as_ref();
        let (p1, pk) = pass_cols(m);
        csv.push_str(&format!(
            "{},{},{},{p1},{pk},{},{},{},{}\n",
            r.variant,
            r.seed,
            fmt_opt(m.map(|m| m.mean_reward)),
            fmt_opt(m.map(|m| m.oef)),
            fmt_opt(m.and_then(|m| m.mean_overconfidence)),
            fmt_opt(m.map(|m| m.entropy)),
            fmt_opt(m.map(|m| m.distinct_correct as f64)),
        ));
    }
    write_text(&out.join("ablation.csv"), &csv)?;
    let by_variant: Vec<(&str, Vec<Spread>)> = ABLATION_VARIANTS
        .iter()
        .map(|&v| {
            let runs: Vec<RunSummary> = rows
                .iter()
                .filter(|r| r.variant == v)
                .map(|r| r.summary.clone())
                .collect();
            (v, final_spreads(&runs))
        })
        .collect();
    write_json(&out.join("summary.json"), &by_variant)?;
    manifest.finish(out)?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub instances: usize,
    pub vocab_size: usize,
    pub length: usize,
    pub logit_scale: f64,
    pub gaussian_samples: usize,
    pub quality_alpha: f64,
    pub second_moment_alphas: Vec<f64>,
    pub score_dim: usize,
    /// Number of standard errors allowed between Monte Carlo and closed form.
    pub z_limit: f64,
    pub fault: FaultInjection,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 100,
            vocab_size: 3,
            length: 2,
            logit_scale: 1.0,
            gaussian_samples: 1_000_000,
            quality_alpha: 0.05,
            second_moment_alphas: vec![0.1, 1.0],
            score_dim: 8,
            z_limit: 3.0,
            fault: FaultInjection::None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionEntry {
    pub index: u64,
    pub alpha: f64,
    pub identity_defect: f64,
    pub regularizer_fd_rel_error: f64,
    pub residual_max_abs: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GaussianEntry {
    pub config: GaussianModelConfig,
    pub delta1: Estimate,
    pub cov_phi_u: Estimate,
    pub cov_phi_u2: Estimate,
    pub cov_ratio_mc: Option<f64>,
    pub q_std: Estimate,
    pub q_ace_mc: f64,
    pub gamma: Estimate,
    pub negative_phi_fraction: f64,
    /// Present only where `Q_std < 1`.
    pub quality_improved: Option<bool>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SecondMomentEntry {
    pub config: GaussianModelConfig,
    pub report: theory::SecondMomentReport,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub check: String,
    pub replay: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub options: VerifyOptions,
    pub decomposition: Vec<DecompositionEntry>,
    pub gaussian: Vec<GaussianEntry>,
    pub second_moment: Vec<SecondMomentEntry>,
    pub all_passed: bool,
}

const FD_STEP: f64 = 1e-5;
const FD_TOLERANCE: f64 = 1e-5;

fn decomposition_entry(opts: &VerifyOptions, index: u64) -> Result<DecompositionEntry> {
    let alpha = if index.is_multiple_of(2) { 0.5 } else { 1.0 };
    let (p, r, t) = theory::random_instance(
        opts.seed,
        index,
        opts.vocab_size,
        opts.length,
        opts.logit_scale,
    )?;
    let rep = theory::verify_decomposition_with_fault(&p, &r, &t, alpha, opts.fault)?;
    let a = theory::exact_negative_advantage(&p, &t)?;
    let fd = theory::finite_difference_gradient(&p, FD_STEP, |q| {
        theory::selective_regularizer_value_with(q, &r, &t, a)
    })?;
    let fd_err = theory::relative_error(&rep.reg_grad, &fd, 1e-12);
    Ok(DecompositionEntry {
        index,
        alpha,
        identity_defect: rep.identity_defect,
        regularizer_fd_rel_error: fd_err,
        residual_max_abs: rep.residual.max_abs(),
        passed: rep.passes() && fd_err <= FD_TOLERANCE,
    })
}

fn gaussian_entry(opts: &VerifyOptions, config: GaussianModelConfig) -> Result<GaussianEntry> {
    let rep = theory::gaussian_quality_report(&config)?;
    let quality_improved = if config.q_std_analytic() < 1.0 {
        Some(theory::quality_improvement_check(&config)?.improved)
    } else {
        None
    };
    let z = opts.z_limit;
    let ratio_ok = rep.cov_ratio_mc.is_some();
    let passed = rep.delta1.within(z)
        && rep.cov_phi_u.within(z)
        && rep.cov_phi_u2.within(z)
        && ratio_ok
        && quality_improved.unwrap_or(true);
    Ok(GaussianEntry {
        config,
        delta1: rep.delta1,
        cov_phi_u: rep.cov_phi_u,
        cov_phi_u2: rep.cov_phi_u2,
        cov_ratio_mc: rep.cov_ratio_mc,
        q_std: rep.q_std,
        q_ace_mc: rep.q_ace_mc,
        gamma: rep.gamma,
        negative_phi_fraction: rep.negative_phi_fraction,
        quality_improved,
        passed,
    })
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

/// Runs every theory check; the report bytes depend only on `opts`.
pub fn run_theory_checks(opts: &VerifyOptions) -> Result<(TheoryReport, Vec<Failure>)> {
    let decomposition = (0..opts.instances as u64)
        .into_par_iter()
        .map(|i| decomposition_entry(opts, i))
        .collect::<Result<Vec<_>>>()?;

    let base = GaussianModelConfig {
        a: 0.5,
        alpha: opts.quality_alpha,
        n_samples: opts.gaussian_samples,
        seed: opts.seed,
        ..GaussianModelConfig::default()
    };
    let grid: Vec<GaussianModelConfig> = theory::default_grid(&base)
        .into_iter()
        .enumerate()
        .map(|(i, c)| GaussianModelConfig {
            seed: opts.seed.wrapping_add(i as u64),
            ..c
        })
        .collect();
    let gaussian = grid
        .par_iter()
        .map(|&c| gaussian_entry(opts, c))
        .collect::<Result<Vec<_>>>()?;

    let moment_jobs: Vec<GaussianModelConfig> = opts
        .second_moment_alphas
        .iter()
        .flat_map(|&alpha| {
            grid.iter()
                .map(move |c| GaussianModelConfig { alpha, ..*c })
        })
        .collect();
    let second_moment = moment_jobs
        .par_iter()
        .map(|&c| {
            let report = theory::second_moment_check(&c, opts.score_dim)?;
            Ok(SecondMomentEntry {
                config: c,
                passed: report.ace_exceeds_std,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut failures = Vec::new();
    for d in decomposition.iter().filter(|d| !d.passed) {
        failures.push(Failure {
            check: "decomposition".into(),
            replay: serde_json::json!({
                "seed": opts.seed,
                "index": d.index,
                "alpha": d.alpha,
                "vocab_size": opts.vocab_size,
                "length": opts.length,
                "logit_scale": opts.logit_scale,
                "fault": to_value(&opts.fault),
                "identity_defect": d.identity_defect,
                "regularizer_fd_rel_error": d.regularizer_fd_rel_error,
            }),
        });
    }
    for g in gaussian.iter().filter(|g| !g.passed) {
        failures.push(Failure {
            check: "gaussian".into(),
            replay: to_value(g),
        });
    }
    for s in second_moment.iter().filter(|s| !s.passed) {
        failures.push(Failure {
            check: "second_moment".into(),
            replay: to_value(s),
        });
    }
    let report = TheoryReport {
        options: opts.clone(),
        all_passed: failures.is_empty(),
        decomposition,
        gaussian,
        second_moment,
    };
    Ok((report, failures))
}

/// `verify-theory`: writes `report.json`, `failures.json` and the manifest.
pub fn cmd_verify_theory(opts: &VerifyOptions, out: &Path) -> Result<TheoryReport> {
    let manifest = RunManifest::new(
        "verify-theory",
        out,
        vec![opts.seed],
        vec![(
            "options".into(),
            serde_json::to_string(opts).unwrap_or_default(),
        )],
    );
    let (report, failures) = run_theory_checks(opts)?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("report.json"), &report)?;
    write_json(&out.join("failures.json"), &failures)?;
    manifest.finish(out)?;
    Ok(report)
}

pub fn default_out(command: &str) -> PathBuf {
    let root = std::env::var_os("ACELAB_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(command)
}
