use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dipgnn::config::Variant;
use dipgnn::experiment::{
    corruption_sweep, corruption_to_csv, grad_check, mask_sweep, mask_sweep_to_csv, prepare_data, run_pipeline,
    with_variant, write_text,
};
use dipgnn::finetune::{finetune, RunRecord};
use dipgnn::graph::{generate_sbm, save_graph, GraphFiles};
use dipgnn::pretrain::{make_checkpoint, pretrain, write_metrics};
use dipgnn::tensor::Checkpoint;
use dipgnn::{Error, Result, TrainConfig};

#[derive(Parser)]
#[command(name = "dipgnn", version, about = "Discriminative pre-training for graph neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file. `DIPGNN_<SECTION>_<KEY>` variables override its keys.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train; writes checkpoint.bin and metrics.csv.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Overrides `pretrain.variant`.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Fine-tune a checkpoint (or a fresh model with --scratch); writes results.json.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "scratch")]
        checkpoint: Option<PathBuf>,
        #[arg(long, conflicts_with = "checkpoint")]
        scratch: bool,
    },
    /// Pre-train and fine-tune per edge mask ratio, with and without the discriminator.
    AblateMaskSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.5,0.8")]
        ratios: Vec<f64>,
    },
    /// Fine-tune on graphs with edges dropped versus wrong edges added.
    AblateCorruption {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5")]
        fracs: Vec<f64>,
    },
    /// Pre-train one variant and fine-tune it.
    Variant {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: String,
    },
    /// Write the configured SBM graph as edges.tsv, features.csv and labels.txt.
    GenSbm {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of the joint loss on a 30-node graph.
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

fn load(common: &Common) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<&Path> {
    let dir = common.out_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(dir)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { common, variant } => {
            let mut cfg = load(&common)?;
            if let Some(v) = variant {
                cfg.pretrain.variant = Variant::parse(&v)?;
            }
            let data = prepare_data(&cfg)?;
            let out = pretrain(&cfg, &data.transfer.pretrain)?;
            let dir = out_dir(&common)?;
            let ck = make_checkpoint(&cfg, data.graph.feature_dim(), out.params);
            ck.save(&dir.join("checkpoint.bin"))?;
            write_metrics(&dir.join("metrics.csv"), &cfg.digest(), &out.metrics)?;
            if let Some(last) = out.metrics.last() {
                println!(
                    "step {}: total {:.4}, gen acc {:.3}, disc acc {:.3}",
                    last.step, last.total, last.gen_acc, last.disc_acc
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::Finetune {
            common,
            checkpoint,
            scratch,
        } => {
            let cfg = load(&common)?;
            let ck = match (&checkpoint, scratch) {
                (Some(p), false) => Some(Checkpoint::load(p)?),
                _ => None,
            };
            let data = prepare_data(&cfg)?;
            let outcome = finetune(&cfg, ck.as_ref(), &data.transfer.finetune, &data.local_split())?;
            let record = RunRecord::new(&cfg, ck.as_ref(), &outcome);
            let path = out_dir(&common)?.join("results.json");
            record.write(&path)?;
            println!(
                "{} {}: test {:.4} (valid {:.4} at step {})",
                record.backbone.as_str(),
                record.metric,
                record.test,
                record.best_valid,
                record.best_step
            );
            println!("wrote {}", path.display());
        }
        Command::AblateMaskSweep { common, ratios } => {
            let cfg = load(&common)?;
            let rows = mask_sweep(&cfg, &ratios)?;
            let path = out_dir(&common)?.join("mask_sweep.csv");
            write_text(&path, &mask_sweep_to_csv(&cfg.digest(), &rows))?;
            for r in &rows {
                println!(
                    "m={:.2}: full {:.4}, generator-only {:.4}, coverage {:.2} -> {:.2}",
                    r.ratio, r.dip_metric, r.gen_only_metric, r.cov_gen, r.cov_dis
                );
            }
            println!("wrote {}", path.display());
        }
        Command::AblateCorruption { common, fracs } => {
            let cfg = load(&common)?;
            let rows = corruption_sweep(&cfg, &fracs)?;
            let path = out_dir(&common)?.join("corruption.csv");
            write_text(&path, &corruption_to_csv(&cfg.digest(), &rows))?;
            for r in &rows {
                println!("frac={:.2}: dropped {:.4}, added {:.4}", r.frac, r.drop_metric, r.add_metric);
            }
            println!("wrote {}", path.display());
        }
        Command::Variant { common, variant } => {
            let cfg = with_variant(&load(&common)?, Variant::parse(&variant)?);
            let data = prepare_data(&cfg)?;
            let run = run_pipeline(&cfg, &data, false, None)?;
            let dir = out_dir(&common)?;
            let name = cfg.pretrain.variant.as_str();
            run.record.write(&dir.join(format!("variant-{name}.json")))?;
            write_metrics(&dir.join(format!("metrics-{name}.csv")), &cfg.digest(), &run.metrics)?;
            println!(
                "{name}: test {:.4}, final gen acc {:.3}, final disc acc {:.3}",
                run.test(),
                run.final_gen_acc(),
                run.final_disc_acc()
            );
            println!("wrote {}", dir.display());
        }
        Command::GenSbm { common } => {
            let cfg = load(&common)?;
            let graph = generate_sbm(&cfg.sbm_params(), cfg.run.seed)?;
            let dir = out_dir(&common)?;
            save_graph(
                &graph,
                &GraphFiles {
                    edges: dir.join("edges.tsv"),
                    features: Some(dir.join("features.csv")),
                    labels: Some(dir.join("labels.txt")),
                },
            )?;
            println!("{} nodes, {} edges; wrote {}", graph.num_nodes(), graph.num_edges(), dir.display());
        }
        Command::GradCheck { common, eps, tol } => {
            let cfg = load(&common)?;
            let report = grad_check(&cfg, eps)?;
            println!(
                "{} entries, max relative error {:.3e}, max absolute error {:.3e}",
                report.entries_checked, report.max_rel_error, report.max_abs_error
            );
            if !(report.max_rel_error < tol) {
                let (name, i) = report.worst.unwrap_or_default();
                return Err(Error::GradientMismatch(format!(
                    "{name}[{i}]: relative error {:.3e} exceeds {tol:.1e}",
                    report.max_rel_error
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
