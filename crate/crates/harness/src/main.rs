use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polyforget::config::ExperimentConfig;
use polyforget::error::{HarnessError, Result};
use polyforget::heatmap::{render_heatmap, HeatmapStyle, Midpoint};
use polyforget::matrix::LabeledMatrix;
use polyforget::orders::experiment_orders;
use polyforget::params::{attach_scores, count_rows, ParamsReport};
use polyforget::report::{compute_metrics, write_languages};
use polyforget::runner::{execute, plan, sweep, RunSpec};
use polyforget::workload::Workload;
use polyforget::{export, report};
use polyforget_core::regimes::Regime;

#[derive(Parser)]
#[command(name = "polyforget", version, about = "Multilingual continual-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Validate inputs and print the plan without writing anything.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic languages as MASSIVE-style JSON lines.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a MASSIVE-style JSON-lines file into per-locale datasets.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        max_len: usize,
    },
    /// Train one regime on one order.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        regime: Regime,
        /// Order index.
        #[arg(long, default_value_t = 0)]
        order: usize,
        /// Run seed; the config seed plus the order index when omitted.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Train every configured regime on every order.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Number of orders (and seeds).
        #[arg(long)]
        orders: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Transfer reports and score matrices from a sweep directory.
    Metrics {
        #[command(flatten)]
        common: Common,
        /// Sweep directory.
        #[arg(long)]
        dir: PathBuf,
        /// Output directory; `<dir>/metrics` when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Largest hop distance.
        #[arg(long)]
        hops: Option<usize>,
    },
    /// Render a matrix CSV as an SVG heatmap.
    Heatmap {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Scale midpoint: a number, `mean` or `column-mean`. Defaults to
        /// `column-mean` for score matrices (`*R.csv`) and 0 otherwise.
        #[arg(long)]
        midpoint: Option<Midpoint>,
        #[arg(long)]
        title: Option<String>,
        #[arg(long)]
        dry_run: bool,
    },
    /// Trainable parameters per regime and rank, with F1 from a sweep.
    Params {
        #[command(flatten)]
        common: Common,
        /// Sweep directory to read scores from; its config.toml is used when
        /// --config is omitted.
        #[arg(long)]
        dir: Option<PathBuf>,
        /// Directory for params.csv and params.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Config and resolved data snapshot at the root of an output directory.
fn write_root(out: &Path, cfg: &ExperimentConfig, work: &Workload) -> Result<()> {
    write(&out.join("config.toml"), &cfg.to_toml())?;
    write_languages(out, &work.languages())
}

fn print_plan(specs: &[RunSpec], out: &Path) {
    for s in specs {
        println!("{}  ->  {}", s.label(), s.dir(out).display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, out } => {
            let cfg = ExperimentConfig::load_or_default(common.config.as_deref())?;
            let work = Workload::build(&cfg)?;
            if common.dry_run {
                println!("would write {} languages to {}", work.datasets.len(), out.display());
                return Ok(());
            }
            for f in export::write_workload(&work, &out)? {
                println!("{}", out.join(f).display());
            }
        }
        Command::Ingest {
            common,
            input,
            out,
            max_len,
        } => {
            let cfg = ExperimentConfig::load_or_default(common.config.as_deref())?;
            if common.dry_run {
                let c = polyforget_core::tasks::ingest_massive(&input, max_len, &cfg.data.vitality)?;
                println!("{} locales, {} words; nothing written", c.datasets.len(), c.vocab.len());
                return Ok(());
            }
            for f in export::ingest_to_dir(&input, &out, max_len, &cfg.data.vitality)? {
                println!("{}", out.join(f).display());
            }
        }
        Command::Train {
            common,
            out,
            regime,
            order,
            seed,
            workers,
        } => {
            let cfg = ExperimentConfig::load_or_default(common.config.as_deref())?;
            let work = Workload::build(&cfg)?;
            let orders = experiment_orders(&cfg, &work)?;
            let o = orders.get(order).cloned().ok_or_else(|| HarnessError::Config {
                path: common.config.clone().unwrap_or_default(),
                message: format!("order {order} requested but only {} configured", orders.len()),
            })?;
            let spec = RunSpec {
                regime,
                order: o,
                seed: seed.unwrap_or(cfg.run_seed(order)),
            };
            if common.dry_run {
                print_plan(std::slice::from_ref(&spec), &out);
                return Ok(());
            }
            write_root(&out, &cfg, &work)?;
            let dir = spec.dir(&out);
            let r = execute(&cfg, &work, &spec, workers.unwrap_or(cfg.workers), Some(&dir))?;
            println!(
                "{}: final mean F1 {:.4}  ({})",
                spec.label(),
                r.summary.final_mean_f1,
                dir.display()
            );
        }
        Command::Sweep {
            common,
            out,
            orders,
            seed,
            workers,
        } => {
            let mut cfg = ExperimentConfig::load_or_default(common.config.as_deref())?;
            if let Some(n) = orders {
                cfg.num_orders = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate().map_err(|message| HarnessError::Config {
                path: common.config.clone().unwrap_or_default(),
                message,
            })?;
            let work = Workload::build(&cfg)?;
            let specs = plan(&cfg, &experiment_orders(&cfg, &work)?);
            if common.dry_run {
                print_plan(&specs, &out);
                return Ok(());
            }
            write_root(&out, &cfg, &work)?;
            let done = sweep(&cfg, &work, &specs, workers.unwrap_or(cfg.workers), Some(&out))?;
            for r in done {
                let s = &r.summary;
                println!(
                    "{} order {} seed {}: final mean F1 {:.4}",
                    s.regime, s.order_id, s.seed, s.final_mean_f1
                );
            }
        }
        Command::Metrics { common, dir, out, hops } => {
            let cfg = match &common.config {
                Some(p) => ExperimentConfig::load(p)?,
                None if dir.join("config.toml").is_file() => ExperimentConfig::load(&dir.join("config.toml"))?,
                None => ExperimentConfig::default(),
            };
            let out = out.unwrap_or_else(|| dir.join("metrics"));
            let max_hop = hops.unwrap_or(cfg.max_hop);
            if common.dry_run {
                for regime in Regime::ALL {
                    let n = report::stored_runs(&dir, regime)?.len();
                    if n > 0 {
                        println!("{regime}: {n} runs");
                    }
                }
                println!("would write reports (H = {max_hop}) to {}", out.display());
                return Ok(());
            }
            let overview = compute_metrics(&dir, &out, max_hop)?;
            for (regime, t) in &overview.transfer {
                println!(
                    "{regime}: CFT {:.4}  CBT {:.4}  final mean F1 {:.4}",
                    t.cft, t.cbt, t.final_mean_f1
                );
            }
            for (regime, f) in &overview.final_scores {
                if !overview.transfer.contains_key(regime) {
                    println!("{regime}: final mean F1 {:.4}", f.final_mean_f1);
                }
            }
            println!("reports in {}", out.display());
        }
        Command::Heatmap {
            input,
            out,
            midpoint,
            title,
            dry_run,
        } => {
            let m = LabeledMatrix::read(&input)?;
            let is_scores = input
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with("R.csv"));
            let style = HeatmapStyle {
                midpoint: midpoint.unwrap_or(if is_scores {
                    Midpoint::ColumnMean
                } else {
                    Midpoint::Value(0.0)
                }),
                title,
                ..HeatmapStyle::default()
            };
            let svg = render_heatmap(&m, &style)?;
            if dry_run {
                println!(
                    "{}x{} matrix; would write {}",
                    m.rows.len(),
                    m.cols.len(),
                    out.display()
                );
                return Ok(());
            }
            write(&out, &svg)?;
            println!("{}", out.display());
        }
        Command::Params { common, dir, out } => {
            let cfg = match (&common.config, &dir) {
                (Some(p), _) => ExperimentConfig::load(p)?,
                (None, Some(d)) if d.join("config.toml").is_file() => ExperimentConfig::load(&d.join("config.toml"))?,
                _ => ExperimentConfig::default(),
            };
            let work = Workload::build(&cfg)?;
            let mut report = ParamsReport {
                rows: count_rows(&cfg, &work.model, work.datasets.len())?,
                missing: Vec::new(),
            };
            if let Some(d) = &dir {
                attach_scores(&cfg, d, &mut report)?;
            }
            print!("{}", report.to_text());
            if let Some(o) = out.filter(|_| !common.dry_run) {
                write(&o.join("params.csv"), &report.to_csv())?;
                write(&o.join("params.txt"), &report.to_text())?;
            }
            if !report.missing.is_empty() {
                return Err(HarnessError::Partial {
                    total: cfg.regimes.len() * cfg.num_orders,
                    failed: report.missing,
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
