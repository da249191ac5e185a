//! `oxyauth`: run the authentication pipeline stage by stage.
//!
//! Every stage reads the previous stage's files under `--out` and writes its
//! own, so any stage can be rerun from its inputs alone.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oxyauth::evaluation::Scheme;
use oxyauth::features::Modality;
use oxyauth::selection::SelectionMethod;
use oxyauth::stats::ComparisonMode;
use oxyauth::synth::ActivityProfile;

use config::{parse_param, RunConfig, SynthPreset};
use error::CliResult;

#[derive(Parser, Debug)]
#[command(
    name = "oxyauth",
    version,
    about = "Continuous authentication from SpO2 and heart-rate streams"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Output root; stages use data/, features/, models/ and reports/ below it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input directory of the stage, overriding its default under --out.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON object whose keys override the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Gap tolerance in seconds between consecutive samples of a window.
    #[arg(long, global = true)]
    gap_tolerance: Option<f64>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, value_parser = parse_modality)]
    modality: Option<Modality>,
    /// Algorithm (rf, knn, nb, svm_rbf, svm_poly, ocsvm_rbf, ocsvm_poly) or preset name.
    #[arg(long)]
    model: Option<String>,
    /// Hyperparameter override, repeatable.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, f64)>,
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
    /// none, pca, select_k_best or low_variance.
    #[arg(long, value_parser = parse_selection)]
    selection: Option<SelectionMethod>,
    /// Features kept by the second selection level.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    correlation_threshold: Option<f64>,
    /// Training fraction of each subject's stream.
    #[arg(long)]
    split: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort into data/raw.
    Synth {
        #[arg(long, value_enum)]
        preset: Option<SynthPreset>,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long, value_parser = parse_activity)]
        activity: Option<ActivityProfile>,
    },
    /// Clean raw subject files into data/clean and dump windows.
    Ingest,
    /// Build feature matrices into features/.
    Features {
        #[arg(long, value_parser = parse_modality)]
        modality: Option<Modality>,
    },
    /// Per-zone Welch t-test rejection rates.
    Ttest {
        #[arg(long)]
        alpha: Option<f64>,
        /// one_vs_rest or pairwise; both when omitted.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<ComparisonMode>,
    },
    /// Train one valid user's model into models/.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        valid_user: String,
        /// Pick hyperparameters by cross-validated grid search first.
        #[arg(long)]
        grid_search: bool,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Run the full per-user protocol and write a report.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Evaluate at several feature counts.
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated feature counts.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
    /// Tables, spider data and radar charts from every evaluation report.
    Report,
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    s.parse().map_err(|e: oxyauth::Error| e.to_string())
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    s.parse().map_err(|e: oxyauth::Error| e.to_string())
}

fn parse_selection(s: &str) -> Result<SelectionMethod, String> {
    s.parse().map_err(|e: oxyauth::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<ComparisonMode, String> {
    s.parse().map_err(|e: oxyauth::Error| e.to_string())
}

fn parse_activity(s: &str) -> Result<ActivityProfile, String> {
    s.parse().map_err(|e: oxyauth::Error| e.to_string())
}

fn apply_model_args(cfg: &mut RunConfig, m: ModelArgs) {
    if m.modality.is_some() {
        cfg.modality = m.modality;
    }
    if let Some(v) = m.model {
        cfg.model = v;
    }
    cfg.params.extend(m.params);
    if m.scheme.is_some() {
        cfg.scheme = m.scheme;
    }
    if m.selection.is_some() {
        cfg.selection = m.selection;
    }
    if m.k.is_some() {
        cfg.k = m.k;
    }
    if let Some(v) = m.correlation_threshold {
        cfg.correlation_threshold = v;
    }
    if let Some(v) = m.split {
        cfg.split = v;
    }
}

type Stage = fn(&RunConfig) -> CliResult<String>;

/// Flags into a config, then the `--config` file over it.
fn resolve(cli: Cli) -> CliResult<(Stage, RunConfig)> {
    let mut cfg = RunConfig::default();
    let c = cli.common;
    if let Some(v) = c.out {
        cfg.out_dir = v;
    }
    cfg.data_dir = c.data;
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.gap_tolerance {
        cfg.gap_tolerance = v;
    }
    let stage: Stage = match cli.command {
        Command::Synth {
            preset,
            subjects,
            duration,
            dropout,
            activity,
        } => {
            if let Some(v) = preset {
                cfg.preset = v;
            }
            if let Some(v) = subjects {
                cfg.subjects = v;
            }
            if let Some(v) = duration {
                cfg.duration_s = v;
            }
            cfg.dropout = dropout;
            cfg.activity = activity;
            commands::synth
        }
        Command::Ingest => commands::ingest,
        Command::Features { modality } => {
            cfg.modality = modality;
            commands::features
        }
        Command::Ttest { alpha, mode } => {
            if let Some(v) = alpha {
                cfg.alpha = v;
            }
            cfg.mode = mode;
            commands::ttest
        }
        Command::Train {
            model,
            valid_user,
            grid_search,
            folds,
        } => {
            apply_model_args(&mut cfg, model);
            cfg.valid_user = Some(valid_user);
            cfg.grid_search = grid_search;
            if let Some(v) = folds {
                cfg.folds = v;
            }
            commands::train
        }
        Command::Evaluate { model } => {
            apply_model_args(&mut cfg, model);
            commands::evaluate
        }
        Command::Sweep { model, counts } => {
            apply_model_args(&mut cfg, model);
            if let Some(v) = counts {
                cfg.counts = v;
            }
            commands::sweep
        }
        Command::Report => commands::report,
    };
    if let Some(path) = c.config {
        cfg = cfg.overlay_file(&path)?;
    }
    Ok((stage, cfg))
}

fn run(cli: Cli) -> CliResult<String> {
    let (stage, cfg) = resolve(cli)?;
    stage(&cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
