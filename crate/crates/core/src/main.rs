use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use dapolicy::dataset::{synth_generate, write_feature_matrix, write_labels, SynthConfig};
use dapolicy::harness::{
    evaluate_checkpoint, run_baseline, run_pipeline, sweep, BaselineKind, DataSource,
    ExperimentConfig,
};

#[derive(Parser)]
#[command(
    name = "dapolicy",
    version,
    about = "Learn sampling policies for domain adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON). Defaults to the 5-class synthetic task.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_json_file(p)
                .with_context(|| format!("reading config {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = Some(o.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic source/target feature and label files.
    GenSynth {
        #[command(flatten)]
        common: Common,
    },
    /// Train a sampling policy and write trace.csv, summary.json and policy.dqnc.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score one baseline: source_only, random_policy or all_noisy.
    Baseline {
        #[arg(long)]
        kind: BaselineKind,
        #[command(flatten)]
        common: Common,
    },
    /// Greedy evaluation of a saved policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train once per seed in `a..b` (inclusive), in parallel.
    Sweep {
        #[arg(long)]
        seeds: String,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_range(s: &str) -> Result<Vec<u64>> {
    let (a, b) = s
        .split_once("..")
        .with_context(|| format!("seed range {s:?} is not of the form a..b"))?;
    let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
    if b < a {
        bail!("empty seed range {s}");
    }
    Ok((a..=b).collect())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::GenSynth { common } => {
            let cfg = common.load()?;
            let DataSource::Synthetic(synth) = &cfg.data else {
                bail!("gen-synth needs a synthetic data source");
            };
            let synth = SynthConfig {
                seed: common.seed.unwrap_or(synth.seed),
                ..synth.clone()
            };
            let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
            fs::create_dir_all(&out)?;
            let data = synth_generate(&synth)?;
            write_feature_matrix(&out.join("source.fvec"), &data.source)?;
            write_labels(&out.join("source.lbls"), data.source.labels().unwrap())?;
            write_feature_matrix(&out.join("target.fvec"), &data.target)?;
            let truth: Vec<usize> = data.target_truth.annotated().map(|(_, y)| y).collect();
            write_labels(&out.join("target.lbls"), &truth)?;
            info!(
                "wrote {} source and {} target samples (dim {}) to {}",
                data.source.len(),
                data.target.len(),
                data.source.dim(),
                out.display()
            );
        }
        Command::Train { common } => {
            let cfg = common.load()?;
            let m = run_pipeline(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&m.summary)?);
        }
        Command::Baseline { kind, common } => {
            let cfg = common.load()?;
            let acc = run_baseline(&cfg, kind)?;
            println!(
                "{}",
                serde_json::json!({ "kind": kind, "accuracy": acc, "seed": cfg.seed })
            );
        }
        Command::Eval { checkpoint, common } => {
            let cfg = common.load()?;
            let (eval, restricted) = evaluate_checkpoint(&cfg, &checkpoint)?;
            println!(
                "{}",
                serde_json::json!({
                    "accuracy": eval.accuracy,
                    "reward_accuracy": eval.reward_accuracy,
                    "positive_set_size": eval.positive_set_size,
                    "eval_restricted_to_reward_set": restricted,
                    "seed": cfg.seed,
                })
            );
        }
        Command::Sweep {
            seeds,
            workers,
            common,
        } => {
            let cfg = common.load()?;
            let seeds = parse_range(&seeds)?;
            let summaries = sweep(&cfg, &seeds, workers)?;
            println!("seed,learned_policy,source_only,random_policy,all_noisy");
            for s in &summaries {
                println!(
                    "{},{},{},{},{}",
                    s.seed,
                    s.learned_policy,
                    s.baselines.source_only,
                    s.baselines.random_policy,
                    s.baselines.all_noisy
                );
            }
            let n = summaries.len() as f64;
            let mean = |f: fn(&dapolicy::harness::Summary) -> f64| {
                summaries.iter().map(f).sum::<f64>() / n
            };
            println!(
                "mean,{},{},{},{}",
                mean(|s| s.learned_policy),
                mean(|s| s.baselines.source_only),
                mean(|s| s.baselines.random_policy),
                mean(|s| s.baselines.all_noisy)
            );
        }
    }
    Ok(())
}
