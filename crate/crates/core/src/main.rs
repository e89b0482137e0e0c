use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mask_select::budget::{
    budget_csv_row, BudgetModel, BudgetStrategy, CampaignPlan, BUDGET_CSV_HEADER,
};
use mask_select::pipeline::{
    analyze_betas, parse_beta_grid, run_experiment_in, run_sweep_in, sweep_csv, ExperimentConfig,
    World,
};
use mask_select::selection::{ScoredPool, SelectionConfig, Strategy};
use mask_select::simulator::{generate_dataset, WorldConfig};
use mask_select::{Error, Result};

/// Mask-guided sample selection toolkit: synthetic worlds, annotation
/// budgets, IoU-score selection and two-stage experiment runs.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BudgetKind {
    Random,
    #[value(name = "mask_guided", alias = "mask-guided")]
    MaskGuided,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectKind {
    Random,
    Beta,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (dataset.json and stats.csv).
    Gen {
        #[arg(long)]
        seed: u64,
        /// World config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the number of images.
        #[arg(long)]
        images: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the annotation cost of a campaign as a CSV row.
    Budget {
        #[arg(long, value_enum)]
        strategy: BudgetKind,
        #[arg(long)]
        strong: u64,
        #[arg(long, default_value_t = 0)]
        weak: u64,
        /// Images labelled with counts for scoring; defaults to the
        /// strong-pool size (1464) for mask_guided and 0 for random.
        #[arg(long)]
        pool: Option<u64>,
    },
    /// Select images from a scores CSV (image_id,iou_score).
    Select {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value = "beta")]
        strategy: SelectKind,
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an experiment; writes report.csv and analysis.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment per beta; writes sweep.csv and analysis.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// start:stop:step or a comma-separated list.
        #[arg(long, default_value = "0.0:1.0:0.1")]
        betas: String,
        /// Add a random-selection row before the beta rows.
        #[arg(long)]
        with_random: bool,
    },
    /// Selection statistics per beta without training the second stage.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "0.0:1.0:0.1")]
        betas: String,
    },
}

const STRONG_POOL: u64 = 1464;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

fn load_experiment(path: &Path, seed: u64) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_json(&read(path)?)?;
    cfg.seed = seed;
    Ok(cfg)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Gen {
            seed,
            config,
            images,
            out,
        } => {
            let mut world: WorldConfig = match config {
                Some(p) => serde_json::from_str(&read(&p)?)?,
                None => WorldConfig::default(),
            };
            world.seed = seed;
            if let Some(n) = images {
                world.num_images = n;
            }
            let dataset = generate_dataset(&world)?;
            write(&out, "dataset.json", &dataset.to_json()?)?;
            write(&out, "stats.csv", &dataset.stats_csv())?;
        }
        Command::Budget {
            strategy,
            strong,
            weak,
            pool,
        } => {
            let (strategy, pool) = match strategy {
                BudgetKind::Random => (BudgetStrategy::Random, pool.unwrap_or(0)),
                BudgetKind::MaskGuided => (BudgetStrategy::MaskGuided, pool.unwrap_or(STRONG_POOL)),
            };
            let plan = CampaignPlan {
                n_strong: strong,
                selection_pool: pool,
                n_weak: weak,
            };
            println!("{BUDGET_CSV_HEADER}");
            println!(
                "{}",
                budget_csv_row(&BudgetModel::default(), &plan, strategy)?
            );
        }
        Command::Select {
            scores,
            n,
            strategy,
            beta,
            seed,
        } => {
            let pool = ScoredPool::from_csv(&read(&scores)?)?;
            let config = SelectionConfig {
                strategy: match strategy {
                    SelectKind::Random => Strategy::Random,
                    SelectKind::Beta => Strategy::BetaProximity,
                },
                beta,
                n_prime: n,
                seed,
            };
            for id in config.select(&pool)? {
                println!("{id}");
            }
        }
        Command::Run { config, seed, out } => {
            let cfg = load_experiment(&config, seed)?;
            let world = World::build(&cfg.world, &cfg.splits)?;
            let report = run_experiment_in(&world, &cfg)?;
            let selections = if report.per_seed.iter().all(|r| r.selected.is_empty()) {
                Vec::new()
            } else {
                vec![(report.beta, report.selections())]
            };
            write(&out, "report.csv", &report.to_csv())?;
            let analysis = if selections.is_empty() {
                String::from("selection,beta,n_selected,mean_objects,mean_area_fraction\n")
            } else {
                mask_select::pipeline::analyze_selection(&world.dataset, &selections)?.to_csv()
            };
            write(&out, "analysis.csv", &analysis)?;
        }
        Command::Sweep {
            config,
            seed,
            out,
            betas,
            with_random,
        } => {
            let cfg = load_experiment(&config, seed)?;
            let betas = parse_beta_grid(&betas)?;
            let world = World::build(&cfg.world, &cfg.splits)?;
            let reports = run_sweep_in(&world, &cfg, &betas, with_random)?;
            let selections: Vec<_> = reports
                .iter()
                .filter(|r| r.per_seed.iter().any(|s| !s.selected.is_empty()))
                .map(|r| (r.beta, r.selections()))
                .collect();
            write(&out, "sweep.csv", &sweep_csv(&reports))?;
            if !selections.is_empty() {
                let analysis =
                    mask_select::pipeline::analyze_selection(&world.dataset, &selections)?;
                write(&out, "analysis.csv", &analysis.to_csv())?;
            }
        }
        Command::Analyze {
            config,
            seed,
            out,
            betas,
        } => {
            let cfg = load_experiment(&config, seed)?;
            let betas = parse_beta_grid(&betas)?;
            let world = World::build(&cfg.world, &cfg.splits)?;
            write(
                &out,
                "analysis.csv",
                &analyze_betas(&world, &cfg, &betas)?.to_csv(),
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
