use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ocd_engine::io::{PipelineConfig, Strategy};
use ocd_engine::refine::RefinementConfig;
use ocd_engine::stages::{self, InferOptions};
use ocd_engine::Result;

#[derive(Parser)]
#[command(name = "ocd", version, about = "On-the-fly category discovery in embedding space")]
struct Cli {
    /// Root seed; overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark: support.emb and query.emb.
    Synth {
        /// Config holding the synthetic settings (same as --config).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Compose synthetic embeddings from cross-category support pairs.
    Compose {
        #[arg(long)]
        support: PathBuf,
        #[arg(long, default_value = "generated.emb")]
        out: PathBuf,
    },
    /// Drop composed embeddings too similar to the known centers.
    Refine {
        #[arg(long)]
        support: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        gamma: Option<f64>,
        #[arg(long, default_value = "refined.emb")]
        out: PathBuf,
        /// Also print the gamma-vs-retained table.
        #[arg(long)]
        table: bool,
    },
    /// Cluster support + refined rows and rectify the cluster labels.
    Encode {
        #[arg(long)]
        support: PathBuf,
        #[arg(long)]
        refined: PathBuf,
        #[arg(long, default_value = "agency.emb")]
        out: PathBuf,
    },
    /// Train the model on the agency set.
    Train {
        #[arg(long)]
        agency: PathBuf,
        #[arg(long, default_value = "model.ckpt")]
        out_model: PathBuf,
        #[arg(long, default_value = "leaders.ldr")]
        out_leaders: PathBuf,
    },
    /// Label a query stream online.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        leaders: Option<PathBuf>,
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long, default_value = "verdicts.jsonl")]
        out: PathBuf,
        /// Continue from a memory snapshot.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many stream items.
        #[arg(long)]
        limit: Option<usize>,
        /// Write the memory state after the run.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Score verdicts against the labels of the stream file.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        verdicts: PathBuf,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Run every stage, persisting all artifacts.
    Pipeline {
        #[arg(long, default_value = "pipeline_out")]
        out_dir: PathBuf,
    },
}

fn load_config(cli: &Cli, extra: Option<&PathBuf>) -> Result<PipelineConfig> {
    let mut cfg = match extra.or(cli.config.as_ref()) {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { spec, out_dir } => {
            let d = stages::synth_files(&load_config(cli, spec.as_ref())?, out_dir)?;
            println!("support={} query={}", d.support.len(), d.query.len());
        }
        Command::Compose { support, out } => {
            let g = stages::compose_files(&load_config(cli, None)?, support, out)?;
            println!("generated={}", g.len());
        }
        Command::Refine { support, generated, gamma, out, table } => {
            let cfg = load_config(cli, None)?;
            let gamma = gamma.unwrap_or(cfg.refinement.gamma);
            let s = stages::refine_files(support, generated, &RefinementConfig { gamma }, out)?;
            println!("retained={} removed={}", s.retained, s.removed);
            if *table {
                for (g, n) in &s.table {
                    println!("gamma={g:.2} retained={n}");
                }
            }
        }
        Command::Encode { support, refined, out } => {
            let a = stages::encode_files(&load_config(cli, None)?, support, refined, out)?;
            println!("agency={} labels={}", a.len(), a.present_labels().len());
        }
        Command::Train { agency, out_model, out_leaders } => {
            let o = stages::train_files(&load_config(cli, None)?, agency, out_model, out_leaders)?;
            println!("epochs={} leaders={} delta_max={}", o.history.len(), o.leaders.len(), o.leaders.delta_max);
        }
        Command::Infer { model, leaders, stream, strategy, out, resume, limit, snapshot } => {
            let opts = InferOptions {
                strategy: *strategy,
                resume: resume.clone(),
                limit: *limit,
                snapshot: snapshot.clone(),
            };
            let cfg = load_config(cli, None)?;
            let r = stages::infer_files(&cfg, model, leaders.as_deref(), stream, out, &opts)?;
            println!("verdicts={} new={}", r.len(), r.iter().filter(|v| v.new).count());
        }
        Command::Eval { truth, verdicts, out } => {
            let r = stages::eval_files(truth, verdicts, out)?;
            println!("{}distinct_predicted={}", r.acc.to_key_values(), r.distinct_predicted);
        }
        Command::Pipeline { out_dir } => {
            let (run, _) = stages::pipeline_files(&load_config(cli, None)?, out_dir)?;
            print!("{}", run.comparison.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::new().parse_filters(level).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
