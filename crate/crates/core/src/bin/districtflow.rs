use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use districtflow::error::HarnessError;
use districtflow::harness::{run_experiment, ExperimentConfig, Method, RunControl, RunOutcome};
use districtflow::oracle::{analyze, enumerate_plans, EnumerationOptions, SamplerSpec};

/// Run districting plan samplers from a JSON experiment config.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// snf, snf-tempered, com-flow or d2d-flow.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint directory to resume from.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Enumerate the instance and print the exact kernel checks as JSON
    /// instead of sampling.
    #[arg(long)]
    oracle: bool,
}

fn load(args: &Args) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_path(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(m) = args.method {
        config.method = m;
    }
    if args.beta.is_some() {
        config.beta = args.beta;
    }
    if let Some(s) = args.steps {
        config.steps = s;
    }
    if let Some(c) = args.chains {
        config.chains = c;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(o) = &args.out {
        config.output_dir = o.clone();
    }
    if args.threads.is_some() {
        config.threads = args.threads;
    }
    config.validate()?;
    Ok(config)
}

fn oracle(config: &ExperimentConfig) -> Result<()> {
    let model = config.build_model()?;
    let space = enumerate_plans(&model, EnumerationOptions::default())?;
    let beta = config.beta();
    let sampler = match config.method {
        Method::Snf | Method::SnfTempered => SamplerSpec::Snf { beta },
        Method::ComFlow => SamplerSpec::ComFlow {
            beta,
            field: config.field.clone().context("com-flow requires a field")?,
        },
        Method::D2dFlow => SamplerSpec::D2dFlow {
            beta,
            variant: Default::default(),
        },
    };
    let sampler = if config.lazy().is_trivial() {
        sampler
    } else {
        SamplerSpec::Lazy {
            inner: Box::new(sampler),
            params: config.lazy(),
        }
    };
    let report = analyze(&space, &sampler)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run(args: &Args) -> Result<()> {
    let config = load(args)?;
    if args.oracle {
        return oracle(&config);
    }
    let control = RunControl {
        resume: args.resume.clone(),
        stop_after: None,
    };
    match run_experiment(&config, &control)? {
        RunOutcome::Completed(summary) => {
            for c in &summary.chains {
                let s = &c.summary;
                eprintln!(
                    "chain {}: {} steps, acceptance {:.4}, {} transitions, max |f-1/2| {:.4}",
                    s.chain, s.steps, s.acceptance_rate, s.transitions, s.max_f_deviation
                );
            }
            eprintln!("wrote {}", summary.output_dir.display());
        }
        RunOutcome::Interrupted { checkpoint_dir } => {
            eprintln!("stopped early; resume from {}", checkpoint_dir.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<HarnessError>() {
        Some(HarnessError::Config(_) | HarnessError::ConfigMismatch { .. }) => 2,
        Some(HarnessError::Graph(_) | HarnessError::Plan(_)) => 2,
        Some(HarnessError::Runtime { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
