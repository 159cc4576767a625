//! Operator-facing pipeline driver.
//!
//! Exit codes: 0 on success, 1 on runtime failure (FAILED marker left in
//! the output directory), 2 on usage or configuration errors.

mod commands;
mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_override, ConfigError, Resolved};
use runner::RunDir;

#[derive(Parser)]
#[command(name = "gamma", version, about = "Underwater-style translation and attentive detection pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Sectioned key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed (shorthand for run.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; every artifact of this run lands here.
    #[arg(long)]
    out: PathBuf,
    /// Trailing KEY=VALUE configuration overrides.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate seeded synthetic datasets (two-domain pairs or annotated detection sets).
    SynthData(Common),
    /// Train the two-generator translation model.
    TrainCyclegan(Common),
    /// Translate a manifest of images through a trained generator.
    Translate(Common),
    /// Draw the existing/augmented training mix into a new manifest.
    Mix(Common),
    /// Train the two-stage detector.
    TrainDetector {
        #[command(flatten)]
        common: Common,
        /// Disable the self-attention block (ablation arm).
        #[arg(long)]
        no_sea: bool,
    },
    /// Score a trained model: mAP report or distribution distance.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Evaluation task: detect | fid (shorthand for eval.task).
        #[arg(long)]
        task: Option<String>,
    },
    /// Export attention heatmaps for a trained detector.
    AttnMaps(Common),
}

fn resolve(common: &Common, extra: &[(String, String)]) -> Result<Resolved, ConfigError> {
    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(seed) = common.seed {
        overrides.push(("run.seed".into(), seed.to_string()));
    }
    overrides.extend(extra.iter().cloned());
    for arg in &common.overrides {
        overrides.push(parse_override(arg)?);
    }
    Resolved::build(common.config.as_deref(), &overrides)
}

fn execute(name: &str, common: &Common, extra: &[(String, String)]) -> ExitCode {
    let resolved = match resolve(common, extra) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("gamma {name}: {e}");
            return ExitCode::from(2);
        }
    };
    let seed = match resolved.get_u64("run.seed") {
        Ok(s) => s,
        Err(e) => {
            eprintln!("gamma {name}: {e}");
            return ExitCode::from(2);
        }
    };
    let run = match RunDir::prepare(&common.out, &resolved) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("gamma {name}: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    let body = || -> anyhow::Result<commands::CommandOutput> {
        match name {
            "synth-data" => commands::synth_data(&resolved, &run.path),
            "train-cyclegan" => commands::train_cyclegan_cmd(&resolved, &run.path),
            "translate" => commands::translate_cmd(&resolved, &run.path),
            "mix" => commands::mix_cmd(&resolved, &run.path),
            "train-detector" => commands::train_detector_cmd(&resolved, &run.path),
            "eval" => commands::eval_cmd(&resolved, &run.path),
            "attn-maps" => commands::attn_maps_cmd(&resolved, &run.path),
            other => unreachable!("unmapped subcommand {other}"),
        }
    };
    match body() {
        Ok(output) => {
            if let Err(e) = run
                .write_meta(name, seed, &output.fingerprints)
                .and_then(|()| run.finish_ok(name, output.summary))
            {
                eprintln!("gamma {name}: finalize failed: {e:#}");
                return ExitCode::FAILURE;
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let message = format!("{e:#}");
            eprintln!("gamma {name}: {message}");
            run.finish_err(name, &message);
            ExitCode::FAILURE
        }
    }
}

fn main() -> ExitCode {
    gamma_core::threads::init_from_env();
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::SynthData(c) => execute("synth-data", c, &[]),
        Cmd::TrainCyclegan(c) => execute("train-cyclegan", c, &[]),
        Cmd::Translate(c) => execute("translate", c, &[]),
        Cmd::Mix(c) => execute("mix", c, &[]),
        Cmd::TrainDetector { common, no_sea } => {
            let extra = if *no_sea {
                vec![("det.use_sea".to_string(), "false".to_string())]
            } else {
                Vec::new()
            };
            execute("train-detector", common, &extra)
        }
        Cmd::Eval { common, task } => {
            let extra = match task {
                Some(t) => vec![("eval.task".to_string(), t.clone())],
                None => Vec::new(),
            };
            execute("eval", common, &extra)
        }
        Cmd::AttnMaps(c) => execute("attn-maps", c, &[]),
    }
}
