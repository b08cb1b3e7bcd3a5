use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use coolgraph::archgraph::{enumerate, Family, Scenario};
use coolgraph::gnn::{load_checkpoint, save_checkpoint, Checkpoint};
use coolgraph::oloc::OlocConfig;
use coolgraph::pipeline::{self, LabelJob, SplitTag};
use coolgraph::{Error, Result};

#[derive(Parser)]
#[command(name = "coolgraph", version, about = "Enumerate, label and rank thermal-management architectures")]
struct Cli {
    /// Log progress (repeat for more detail). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write every architecture of a family, one record per line.
    Enumerate {
        #[arg(long)]
        family: String,
        /// One or more CPHX counts, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        nodes: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw seeded heat-load scenarios.
    GenScenarios {
        #[arg(long, default_value_t = 6)]
        nodes: usize,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4.0)]
        min: f64,
        #[arg(long, default_value_t = 16.0)]
        max: f64,
        /// A single scenario with exactly these loads (kW).
        #[arg(long, value_delimiter = ',')]
        fixed: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label architectures x scenarios with optimized endurance.
    Label {
        /// Architecture files; may be repeated.
        #[arg(long, required = true)]
        graphs: Vec<PathBuf>,
        #[arg(long)]
        scenarios: PathBuf,
        #[command(flatten)]
        plant: PlantArg,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Tag a whole family as holdout, e.g. `single:5`; may be repeated.
        #[arg(long)]
        holdout: Vec<String>,
        #[command(flatten)]
        oloc: OlocArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Train the graph regressor on a labeled dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// `key = value` training config; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        train_fraction: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Bucketed loss history CSV. Defaults to `<out>.history.csv`.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Also write the dataset with train/test tags filled in.
        #[arg(long)]
        tagged_out: Option<PathBuf>,
    },
    /// Rank quality of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Rank candidates by prediction and verify only the top k.
    Reduce {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        graphs: Vec<PathBuf>,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long, default_value_t = 0)]
        scenario_id: u64,
        #[arg(long, default_value_t = 1)]
        budget: usize,
        /// Reference labels for N_OL and the reduction fraction.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        plant: PlantArg,
        #[command(flatten)]
        oloc: OlocArgs,
        /// Report JSON; the ranking goes next to it as `<out>.ranking.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export 48-dim graph embeddings as CSV.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PlantArg {
    /// Plant `key = value` file.
    #[arg(long, env = pipeline::PLANT_CONFIG_ENV)]
    plant_config: Option<PathBuf>,
}

#[derive(Args)]
struct OlocArgs {
    #[arg(long, default_value_t = 4)]
    n_intervals: usize,
    #[arg(long, default_value_t = 400)]
    max_evals: usize,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    oloc_seed: u64,
    #[arg(long, default_value_t = 0.5)]
    convergence_tol: f64,
}

impl OlocArgs {
    fn config(&self) -> OlocConfig {
        OlocConfig {
            n_intervals: self.n_intervals,
            max_evals: self.max_evals,
            restarts: self.restarts,
            seed: self.oloc_seed,
            convergence_tol: self.convergence_tol,
        }
    }
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_all_archs(paths: &[PathBuf]) -> Result<Vec<coolgraph::archgraph::Architecture>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(pipeline::read_archs(p)?);
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Enumerate { family, nodes, out } => {
            let fam = Family::from_tag(&family)?;
            let mut archs = Vec::new();
            for n in nodes {
                archs.extend(enumerate(fam, n)?);
            }
            pipeline::write_atomic(&out, pipeline::archs_to_jsonl(&archs).as_bytes())?;
            println!("{}", archs.len());
        }
        Cmd::GenScenarios {
            nodes,
            count,
            seed,
            min,
            max,
            fixed,
            out,
        } => {
            let scen = match fixed {
                Some(loads) => vec![Scenario::new(0, loads).map_err(|e| Error::Config(e.to_string()))?],
                None => pipeline::gen_scenarios(nodes, count, seed, min, max)?,
            };
            pipeline::write_atomic(&out, pipeline::scenarios_to_jsonl(&scen).as_bytes())?;
            println!("{}", scen.len());
        }
        Cmd::Label {
            graphs,
            scenarios,
            plant,
            workers,
            holdout,
            oloc,
            out,
            stop_after,
        } => {
            let archs = read_all_archs(&graphs)?;
            let scen = pipeline::read_scenarios(&scenarios)?;
            let plant = pipeline::resolve_plant(plant.plant_config.as_deref())?;
            let holdout: Vec<(Family, usize)> = holdout
                .iter()
                .map(|s| pipeline::parse_family_spec(s))
                .collect::<Result<_>>()?;
            let cfg = oloc.config();
            let job = LabelJob {
                archs: &archs,
                scenarios: &scen,
                plant: &plant,
                oloc: &cfg,
                workers,
                holdout: &holdout,
                stop_after,
            };
            let s = pipeline::label_to_file(&job, &out)?;
            if s.complete {
                println!("rows={} written={} failed={} resumed={}", s.rows, s.written, s.failed, s.resumed);
            } else {
                println!(
                    "incomplete: {} of {} rows done; rerun to resume",
                    s.resumed + s.labeled_now,
                    s.rows
                );
            }
        }
        Cmd::Train {
            dataset,
            config,
            epochs,
            batch_size,
            lr,
            seed,
            train_fraction,
            out,
            history,
            tagged_out,
        } => {
            let mut cfg = match config {
                Some(p) => pipeline::parse_train_config(
                    &std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?,
                )?,
                None => Default::default(),
            };
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            if let Some(v) = batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = lr {
                cfg.learning_rate = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = train_fraction {
                cfg.train_fraction = v;
            }
            cfg.validate()?;
            let records = pipeline::read_dataset(&dataset)?;
            let t = pipeline::train_records(&records, &cfg)?;
            info!(
                "trained on {} scenarios, {} held out",
                t.train_scenarios.len(),
                t.test_scenarios.len()
            );
            let hist_path = history.unwrap_or_else(|| with_suffix(&out, ".history.csv"));
            pipeline::write_atomic(&hist_path, t.history.to_csv().as_bytes())?;
            if let Some(p) = tagged_out {
                let tagged = pipeline::tag_records(&records, &t.train_scenarios);
                pipeline::write_atomic(&p, pipeline::dataset_to_jsonl(&tagged).as_bytes())?;
            }
            let n_train = t.train_scenarios.len();
            save_checkpoint(&out, &Checkpoint::new(t.model, cfg, t.train_scenarios))?;
            println!(
                "train_scenarios={} final_test_mse={}",
                n_train,
                t.history.final_test_mse().map_or("nan".into(), |v| format!("{v:.6}"))
            );
        }
        Cmd::Eval {
            checkpoint,
            dataset,
            out_dir,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let records = pipeline::read_dataset(&dataset)?;
            let rep = pipeline::evaluate(&ckpt, &records)?;
            rep.write(&out_dir)?;
            for p in [SplitTag::Train, SplitTag::Test, SplitTag::Holdout] {
                if let Some(s) = rep.partition(p) {
                    println!(
                        "{} n={} tau={} mean_N_OL={:.2} mean_J_sub={:.4} mean_reduction={:.4}",
                        p.as_str(),
                        s.n,
                        s.tau.map_or("nan".into(), |v| format!("{v:.4}")),
                        s.mean_n_ol,
                        s.mean_j_sub,
                        s.mean_reduction
                    );
                }
            }
        }
        Cmd::Reduce {
            checkpoint,
            graphs,
            scenarios,
            scenario_id,
            budget,
            labels,
            plant,
            oloc,
            out,
        } => {
            if graphs.is_empty() {
                return Err(Error::Config("reduce needs at least one --graphs file".into()));
            }
            let ckpt = load_checkpoint(&checkpoint)?;
            let archs = read_all_archs(&graphs)?;
            let scen = pipeline::read_scenarios(&scenarios)?
                .into_iter()
                .find(|s| s.scenario_id == scenario_id)
                .ok_or_else(|| Error::Config(format!("scenario {scenario_id} not in {}", scenarios.display())))?;
            let plant = pipeline::resolve_plant(plant.plant_config.as_deref())?;
            let labels = labels.map(|p| pipeline::read_dataset(&p)).transpose()?;
            let rep = pipeline::reduce(&ckpt.model, &archs, &scen, budget, &plant, &oloc.config(), labels.as_deref())?;
            let json = serde_json::to_string_pretty(&rep).expect("report serializes");
            pipeline::write_atomic(&out, json.as_bytes())?;
            pipeline::write_atomic(&with_suffix(&out, ".ranking.csv"), rep.ranking_csv().as_bytes())?;
            println!(
                "best_found_j={:.3} key={} budget={} n_graphs={}",
                rep.best_found_j, rep.best_found_key, rep.budget, rep.n_graphs
            );
            if let (Some(k), Some(r)) = (rep.n_ol_plus_1, rep.reduction_fraction) {
                println!("N_OL+1={k} reduction={r:.4}");
            }
        }
        Cmd::Embed {
            checkpoint,
            dataset,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let records = pipeline::read_dataset(&dataset)?;
            let csv = pipeline::embeddings_csv(&ckpt.model, &records)?;
            pipeline::write_atomic(&out, csv.as_bytes())?;
            println!("{}", records.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
