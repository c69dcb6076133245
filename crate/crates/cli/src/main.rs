//! `oodshape`: command-line front end for the oodshape toolkit.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use oodshape_core::analysis::{
    gap_report, theory_seeds, verify_theory, DavisVariant, SyntheticSpec,
};
use oodshape_core::metrics::evaluate_suite;
use oodshape_core::pipeline::{
    execute, load_run_config, write_synthetic_suite, ScoreMethod, Suite,
};
use oodshape_core::scoring::ScoreSet;
use oodshape_core::shaping::{FittedPipeline, PipelineInput, ShapingConfig};
use oodshape_core::stats::{
    channel_entropy, channel_max, channel_mean, channel_median, channel_std,
};
use oodshape_core::tensorio::{
    load_manifest, load_split, read_tensor, write_tensor, ActivationBatch, LoadedSplit,
};

#[derive(Parser)]
#[command(
    name = "oodshape",
    version,
    about = "Post-hoc OOD detection with channel-statistic feature shaping"
)]
struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stat {
    Mean,
    Max,
    Std,
    Median,
    Entropy,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreArg {
    Energy,
    Msp,
    MspTemp,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifySuite {
    Theory,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    DavisM,
    DavisMuSigma,
}

#[derive(Subcommand)]
enum Command {
    /// Reduce an activation tensor (N×n×k×k) to one channel statistic (N×n).
    Stats {
        #[arg(long)]
        acts: PathBuf,
        #[arg(long, value_enum, default_value = "mean")]
        stat: Stat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a shaping pipeline on one split and write shaped features of another.
    Shape {
        /// JSON list of shaping stages.
        #[arg(long)]
        pipeline: PathBuf,
        /// Split manifest the pipeline is fitted on.
        #[arg(long)]
        fit: PathBuf,
        /// Split manifest to shape; the fit split when omitted.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Where to save fit artifacts (thresholds, DICE mask).
        #[arg(long)]
        fitted_out: Option<PathBuf>,
    },
    /// Score a split manifest, optionally through a saved fitted pipeline.
    Score {
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        fitted: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "energy")]
        method: ScoreArg,
        #[arg(long, default_value_t = 1000.0)]
        temperature: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate score files: one ID set against one or more OOD sets.
    Eval {
        #[arg(long)]
        id: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        ood: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        tpr: f64,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Separation gaps between ID and OOD activation tensors.
    Gaps {
        #[arg(long)]
        id: PathBuf,
        #[arg(long)]
        ood: PathBuf,
        /// Split manifest whose head is used.
        #[arg(long)]
        head_from: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run a config that carries a `sweep` section.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Monte-Carlo verification of the separation-gap checks; exits 2 on failure.
    Verify {
        #[arg(long, value_enum, default_value = "theory")]
        suite: VerifySuite,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        /// Synthetic spec JSON; the built-in spiky-ID spec when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "davis-m")]
        variant: Variant,
        #[arg(long, default_value_t = 3.0)]
        gamma: f64,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run a suite from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a synthetic suite (manifests and tensors) to a directory.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn split_input(split: &LoadedSplit) -> Result<PipelineInput<'_>> {
    match (&split.activations, &split.features) {
        (Some(a), _) => Ok(PipelineInput::Activations(a)),
        (None, Some(f)) => Ok(PipelineInput::Features(f)),
        (None, None) => bail!("split `{}` has no data", split.name),
    }
}

fn load(path: &Path) -> Result<LoadedSplit> {
    let m = load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))?;
    Ok(load_split(&m)?)
}

fn score_method(method: ScoreArg, temperature: f64) -> ScoreMethod {
    match method {
        ScoreArg::Energy => ScoreMethod::Energy,
        ScoreArg::Msp => ScoreMethod::Msp,
        ScoreArg::MspTemp => ScoreMethod::MspTemp { temperature },
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Stats { acts, stat, out } => {
            let a = ActivationBatch::from_tensor(read_tensor(&acts)?)?;
            let f = match stat {
                Stat::Mean => channel_mean(&a),
                Stat::Max => channel_max(&a),
                Stat::Std => channel_std(&a),
                Stat::Median => channel_median(&a),
                Stat::Entropy => channel_entropy(&a),
            };
            write_tensor(&f.to_tensor()?, &out)?;
        }
        Command::Shape {
            pipeline,
            fit,
            split,
            out,
            fitted_out,
        } => {
            let stages: Vec<ShapingConfig> = read_json(&pipeline)?;
            let fit_split = load(&fit)?;
            let fitted = FittedPipeline::fit(&stages, split_input(&fit_split)?, &fit_split.head)?;
            let target = split.as_deref().map(load).transpose()?;
            let target = target.as_ref().unwrap_or(&fit_split);
            write_tensor(&fitted.apply(split_input(target)?)?.to_tensor()?, &out)?;
            if let Some(p) = fitted_out {
                fitted.save(p)?;
            }
        }
        Command::Score {
            split,
            fitted,
            method,
            temperature,
            out,
        } => {
            let s = load(&split)?;
            let fitted = match fitted {
                Some(p) => FittedPipeline::load(p)?,
                None => FittedPipeline::from_stages(Vec::new()),
            };
            let l = fitted.logits(split_input(&s)?, &s.head)?;
            write_json(&score_method(method, temperature).score(&l, &s.name)?, &out)?;
        }
        Command::Eval {
            id,
            ood,
            tpr,
            report,
            csv,
        } => {
            let id: ScoreSet = read_json(&id)?;
            let ood = ood
                .iter()
                .map(|p| read_json(p))
                .collect::<Result<Vec<ScoreSet>>>()?;
            let ev = evaluate_suite(&id, &ood, tpr)?;
            write_json(&ev, &report)?;
            if let Some(p) = csv {
                fs::write(&p, ev.to_csv()).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Gaps {
            id,
            ood,
            head_from,
            gamma,
            report,
        } => {
            let head = load(&head_from)?.head;
            let a = ActivationBatch::from_tensor(read_tensor(&id)?)?;
            let b = ActivationBatch::from_tensor(read_tensor(&ood)?)?;
            write_json(&gap_report(&a, &b, &head, gamma)?, &report)?;
        }
        Command::Sweep { config, report } => {
            let (cfg, suite) = load_run_config(&config)?;
            if cfg.sweep.is_none() {
                bail!("{} has no `sweep` section", config.display());
            }
            let r = execute(&cfg, &Suite::load(suite)?)?;
            fs::write(&report, r.to_json())
                .with_context(|| format!("writing {}", report.display()))?;
        }
        Command::Verify {
            suite: VerifySuite::Theory,
            seeds,
            spec,
            variant,
            gamma,
            report,
        } => {
            let spec = match spec {
                Some(p) => read_json(&p)?,
                None => SyntheticSpec::spiky_maps(),
            };
            let variant = match variant {
                Variant::DavisM => DavisVariant::DavisM,
                Variant::DavisMuSigma => DavisVariant::DavisMuSigma { gamma },
            };
            let v = verify_theory(&spec, &theory_seeds(seeds), variant, gamma)?;
            write_json(&v, &report)?;
            log::info!(
                "{} of {} trials won (need {}), mean FPR95 improvement {}",
                v.wins,
                v.trials.len(),
                v.required_wins,
                v.mean_fpr95_improvement
            );
            if !v.passed {
                eprintln!(
                    "verification failed: identities_hold={} statistical_pass={}",
                    v.identities_hold, v.statistical_pass
                );
                return Ok(ExitCode::from(2));
            }
        }
        Command::Run {
            config,
            report,
            csv,
        } => {
            let (cfg, suite) = load_run_config(&config)?;
            let r = execute(&cfg, &Suite::load(suite)?)?;
            fs::write(&report, r.to_json())
                .with_context(|| format!("writing {}", report.display()))?;
            if let Some(p) = csv {
                fs::write(&p, r.evaluation.to_csv())
                    .with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Synth {
            spec,
            seed,
            samples,
            out,
        } => {
            let mut spec: SyntheticSpec = match spec {
                Some(p) => read_json(&p)?,
                None => SyntheticSpec::spiky_maps(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(n) = samples {
                spec.samples = n;
            }
            let path = write_synthetic_suite(&spec, &out)?;
            println!("{}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("error: could not size the thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
