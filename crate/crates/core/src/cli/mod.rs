//! The `acelab` command-line experiment runner.
//!
//! Subcommands: `train`, `eval`, `sweep-alpha`, `ablate-modulation` and
//! `verify-theory`. Run commands accept `--config FILE`, one flag per config
//! key (`--group-size 8`, `--kl-coeff 0.001`, ...) and repeatable
//! `--set key=value`; flags override the file, which overrides defaults.
//! Output goes to `--out`, else `$ACELAB_OUT/<command>`, else `runs/<command>`.

mod artifacts;
mod commands;
mod run_config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};

pub use artifacts::{scan_artifacts, sha256_file, ArtifactRecord, RunManifest, MANIFEST_FILE};
pub use commands::{
    cmd_ablate_modulation, cmd_eval, cmd_sweep_alpha, cmd_train, cmd_verify_theory, default_out,
    run_theory_checks, train_run, AblationRow, DecompositionEntry, Failure, GaussianEntry,
    RunSummary, SecondMomentEntry, Spread, SweepRow, TheoryReport, VerifyOptions,
    ABLATION_CSV_VERSION, ABLATION_VARIANTS, DEFAULT_ALPHAS, DEFAULT_SEEDS, PASS_AT_K_CSV_VERSION,
    SWEEP_CSV_VERSION,
};
pub use run_config::{parse_pairs, DatasetConfig, RunConfig, DATASET_KEYS};

use crate::env::Dataset;
use crate::error::{AceError, Result};
use crate::theory::FaultInjection;
use crate::trainer::TRAINER_KEYS;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(i32)]
pub enum ExitStatus {
    Success = 0,
    Usage = 1,
    CheckFailed = 2,
    Io = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn for_error(err: &AceError) -> Self {
        match err {
            AceError::Io(_) | AceError::Format(_) => ExitStatus::Io,
            AceError::Degenerate(_) => ExitStatus::CheckFailed,
            _ => ExitStatus::Usage,
        }
    }
}

fn config_keys() -> impl Iterator<Item = &'static str> {
    TRAINER_KEYS.iter().chain(DATASET_KEYS).copied()
}

fn run_args(cmd: Command) -> Command {
    let cmd = cmd
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key = value config file"),
        )
        .arg(
            Arg::new("out")
                .long("out")
                .value_name("DIR")
                .help("output directory"),
        )
        .arg(
            Arg::new("seeds")
                .long("seeds")
                .value_name("LIST")
                .help("comma-separated seeds or a range such as 0..5"),
        )
        .arg(
            Arg::new("set")
                .long("set")
                .value_name("KEY=VALUE")
                .action(ArgAction::Append)
                .help("override any config key; applied after the per-key flags"),
        );
    config_keys().fold(cmd, |cmd, key| {
        let flag = key.replace('_', "-");
        let mut arg = Arg::new(key)
            .long(flag.clone())
            .value_name("VALUE")
            .hide_short_help(true)
            .allow_negative_numbers(true);
        if flag != key {
            arg = arg.alias(key);
        }
        cmd.arg(arg)
    })
}

fn build_cli() -> Command {
    Command::new("acelab")
        .about("Tabular RLVR laboratory for confidence-aware negative advantage shaping")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(run_args(
            Command::new("train").about("Train one policy per seed"),
        ))
        .subcommand(
            Command::new("eval")
                .about("Estimate pass@k of a saved checkpoint")
                .arg(
                    Arg::new("checkpoint")
                        .long("checkpoint")
                        .value_name("FILE")
                        .required(true),
                )
                .arg(Arg::new("config").long("config").value_name("FILE"))
                .arg(
                    Arg::new("tasks")
                        .long("tasks")
                        .value_name("FILE")
                        .help("task file"),
                )
                .arg(Arg::new("n").long("n").value_name("N").default_value("64"))
                .arg(
                    Arg::new("ks")
                        .long("ks")
                        .value_name("LIST")
                        .default_value("1,2,4,8,16,32"),
                )
                .arg(
                    Arg::new("temperature")
                        .long("temperature")
                        .default_value("1.0"),
                )
                .arg(Arg::new("seed").long("seed").default_value("0"))
                .arg(Arg::new("out").long("out").value_name("DIR"))
                .args(DATASET_KEYS[1..].iter().map(|k| {
                    Arg::new(*k)
                        .long(k.replace('_', "-"))
                        .alias(*k)
                        .value_name("VALUE")
                })),
        )
        .subcommand(
            run_args(
                Command::new("sweep-alpha").about("Train ACE runs across a grid of alpha values"),
            )
            .arg(
                Arg::new("alphas")
                    .long("alphas")
                    .value_name("LIST")
                    .help("comma-separated alphas [default: 0,0.1,0.5,1,2,5]"),
            ),
        )
        .subcommand(run_args(
            Command::new("ablate-modulation")
                .about("Compare baseline, softplus and ReLU modulation"),
        ))
        .subcommand(
            Command::new("verify-theory")
                .about("Check the gradient decomposition and Gaussian-model claims numerically")
                .arg(Arg::new("seed").long("seed").default_value("0"))
                .arg(Arg::new("instances").long("instances").default_value("100"))
                .arg(Arg::new("samples").long("samples").default_value("1000000"))
                .arg(Arg::new("score-dim").long("score-dim").default_value("8"))
                .arg(
                    Arg::new("inject-fault")
                        .long("inject-fault")
                        .value_parser(["none", "drop-residual"])
                        .default_value("none"),
                )
                .arg(Arg::new("out").long("out").value_name("DIR")),
        )
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| AceError::config(key, format!("cannot parse `{value}`")))
}

fn get<T: std::str::FromStr>(m: &ArgMatches, key: &str) -> Result<T> {
    let raw = m
        .get_one::<String>(key)
        .ok_or_else(|| AceError::config(key, "missing value"))?;
    parse_value(key, raw)
}

/// Parses `1,2,3` or `a..b` (half-open).
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = if let Some((a, b)) = value.split_once("..") {
        let (a, b): (u64, u64) = (parse_value("seeds", a)?, parse_value("seeds", b)?);
        (a..b).collect()
    } else {
        value
            .split(',')
            .map(|s| parse_value("seeds", s))
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(AceError::config("seeds", "empty seed list"));
    }
    Ok(seeds)
}

fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|s| parse_value(key, s)).collect()
}

/// Resolves defaults, the config file and flag overrides, in that order.
pub fn resolve_run_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(path) => RunConfig::load(&PathBuf::from(path))?,
        None => RunConfig::default(),
    };
    for key in config_keys() {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    if let Some(sets) = m.get_many::<String>("set") {
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| AceError::config("set", format!("expected KEY=VALUE, got `{s}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
    }
    cfg.trainer.validate()?;
    Ok(cfg)
}

fn out_dir(m: &ArgMatches, command: &str) -> PathBuf {
    m.get_one::<String>("out")
        .map_or_else(|| default_out(command), PathBuf::from)
}

fn seeds_arg(m: &ArgMatches) -> Result<Option<Vec<u64>>> {
    m.get_one::<String>("seeds")
        .map(|s| parse_seeds(s))
        .transpose()
}

fn dispatch(name: &str, m: &ArgMatches) -> Result<ExitStatus> {
    match name {
        "train" => {
            let cfg = resolve_run_config(m)?;
            let out = out_dir(m, "train");
            let runs = cmd_train(&cfg, seeds_arg(m)?.as_deref(), &out)?;
            for r in &runs {
                if let Some(f) = &r.final_metrics {
                    println!(
                        "seed {}: step {} mean_reward {:.4} oef {:.4} entropy {:.4}",
                        r.seed, f.step, f.mean_reward, f.oef, f.entropy
                    );
                }
            }
            println!("wrote {}", out.display());
            Ok(ExitStatus::Success)
        }
        "eval" => {
            let mut dataset_cfg = match m.get_one::<String>("config") {
                Some(path) => RunConfig::load(&PathBuf::from(path))?,
                None => RunConfig::default(),
            };
            for key in &DATASET_KEYS[1..] {
                if let Some(v) = m.get_one::<String>(key) {
                    dataset_cfg.set(key, v)?;
                }
            }
            if let Some(t) = m.get_one::<String>("tasks") {
                dataset_cfg.set("tasks_file", t)?;
            }
            let dataset: Dataset = dataset_cfg.dataset.build()?;
            let ks = crate::trainer::parse_usize_list(
                "ks",
                m.get_one::<String>("ks").map_or("", |s| s),
            )?;
            let out = out_dir(m, "eval");
            let table = cmd_eval(
                &PathBuf::from(m.get_one::<String>("checkpoint").map_or("", |s| s)),
                &dataset,
                get(m, "n")?,
                &ks,
                get(m, "temperature")?,
                get(m, "seed")?,
                &out,
            )?;
            for (k, v) in table {
                println!("pass@{k} = {v:.6}");
            }
            println!("wrote {}", out.display());
            Ok(ExitStatus::Success)
        }
        "sweep-alpha" => {
            let cfg = resolve_run_config(m)?;
            let alphas = match m.get_one::<String>("alphas") {
                Some(s) => parse_f64_list("alphas", s)?,
                None => DEFAULT_ALPHAS.to_vec(),
            };
            let seeds = seeds_arg(m)?.unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
            let out = out_dir(m, "sweep-alpha");
            let rows = cmd_sweep_alpha(&cfg, &alphas, &seeds, &out)?;
            println!("{} runs, wrote {}", rows.len(), out.display());
            Ok(ExitStatus::Success)
        }
        "ablate-modulation" => {
            let cfg = resolve_run_config(m)?;
            let seeds = seeds_arg(m)?.unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
            let out = out_dir(m, "ablate-modulation");
            let rows = cmd_ablate_modulation(&cfg, &seeds, &out)?;
            println!("{} runs, wrote {}", rows.len(), out.display());
            Ok(ExitStatus::Success)
        }
        "verify-theory" => {
            let opts = VerifyOptions {
                seed: get(m, "seed")?,
                instances: get(m, "instances")?,
                gaussian_samples: get(m, "samples")?,
                score_dim: get(m, "score-dim")?,
                fault: match m.get_one::<String>("inject-fault").map(String::as_str) {
                    Some("drop-residual") => FaultInjection::DropResidual,
                    _ => FaultInjection::None,
                },
                ..VerifyOptions::default()
            };
            let out = out_dir(m, "verify-theory");
            let report = cmd_verify_theory(&opts, &out)?;
            println!(
                "decomposition: {}/{} passed; gaussian grid: {}/{} passed; second moment: {}/{} passed",
                report.decomposition.iter().filter(|d| d.passed).count(),
                report.decomposition.len(),
                report.gaussian.iter().filter(|g| g.passed).count(),
                report.gaussian.len(),
                report.second_moment.iter().filter(|s| s.passed).count(),
                report.second_moment.len(),
            );
            println!("wrote {}", out.display());
            if report.all_passed {
                Ok(ExitStatus::Success)
            } else {
                eprintln!("verify-theory: checks failed, see failures.json");
                Ok(ExitStatus::CheckFailed)
            }
        }
        other => Err(AceError::input(format!("unknown command `{other}`"))),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitStatus
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match build_cli().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitStatus::Usage
            } else {
                ExitStatus::Success
            };
        }
    };
    let Some((name, sub)) = matches.subcommand() else {
        return ExitStatus::Usage;
    };
    match dispatch(name, sub) {
        Ok(status) => status,
        Err(err) => {
            eprintln!("error: {err}");
            ExitStatus::for_error(&err)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        build_cli().debug_assert();
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4,7").unwrap(), vec![4, 7]);
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("3..3").is_err());
    }

    #[test]
    fn flags_override_file_and_set_overrides_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "alpha = 0.3\nsteps = 7\ngroup_size = 4\n").unwrap();
        let m = build_cli()
            .try_get_matches_from([
                "acelab",
                "train",
                "--config",
                path.to_str().unwrap(),
                "--alpha",
                "0.9",
                "--group_size",
                "6",
                "--set",
                "group_size=5",
            ])
            .unwrap();
        let cfg = resolve_run_config(m.subcommand_matches("train").unwrap()).unwrap();
        assert_eq!(cfg.trainer.alpha, 0.9);
        assert_eq!(cfg.trainer.steps, 7);
        assert_eq!(cfg.trainer.group_size, 5);
        assert_eq!(cfg.trainer.kl_coeff, 0.001);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(
            run(["acelab", "train", "--no-such-flag"]),
            ExitStatus::Usage
        );
        assert_eq!(
            run(["acelab", "train", "--group-size", "x"]),
            ExitStatus::Usage
        );
        assert_eq!(run(["acelab", "--help"]), ExitStatus::Success);
    }
}
