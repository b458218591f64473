use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fedmlac::data::{dirichlet_partition, group_partition, iid_partition, label_entropy, load_feature_csv};
use fedmlac::nn::write_checkpoint;
use fedmlac::report::{compare_runs, read_metrics, render_comparison, RunWriter};
use fedmlac::sim::{load_dataset, run_federation, RoundSink};
use fedmlac::{Federation, FederationConfig, LayerAudit, RoundRecord, RunManifest};

const SEED_ENV: &str = "FEDMLAC_SEED";

#[derive(Parser)]
#[command(
    name = "fedmlac",
    version,
    about = "Federated mutual learning with layer-wise pruning aggregation"
)]
struct Cli {
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation from a config file or a run manifest.
    Run(RunArgs),
    /// Partition a dataset across clients and print per-client label histograms.
    Partition(PartitionArgs),
    /// Compare the final rounds of two or more metrics files.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file (.cfg, TOML) or manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,

    /// KEY=VALUE, where KEY is `key` or `section.key`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Iid,
    Dirichlet,
    Group,
}

#[derive(Args)]
struct PartitionArgs {
    /// Feature CSV. Without it the synthetic dataset of `--config` is used.
    #[arg(long)]
    data: Option<PathBuf>,

    /// Config describing a synthetic dataset.
    #[arg(long, conflicts_with = "data")]
    config: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "dirichlet")]
    strategy: Strategy,

    /// Dirichlet concentration.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,

    /// Number of clients; ignored by the group strategy.
    #[arg(long, default_value_t = 10)]
    clients: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output directory for plan.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Metrics CSVs; drops are measured against the first.
    #[arg(required = true, num_args = 2..)]
    metrics: Vec<PathBuf>,
}

struct Progress<'a> {
    writer: RunWriter,
    every: u64,
    quiet: bool,
    rounds: u64,
    label: &'a str,
}

impl RoundSink for Progress<'_> {
    fn record(&mut self, record: &RoundRecord, audit: &[LayerAudit]) -> fedmlac::Result<()> {
        self.writer.record(record, audit)?;
        if !self.quiet && (record.round.is_multiple_of(self.every) || record.round == self.rounds) {
            eprintln!(
                "[{}] round {}/{}  acc {:.4}  f1 {:.4}  loss {:.4}",
                self.label, record.round, self.rounds, record.test_acc, record.macro_f1, record.mean_train_loss
            );
        }
        Ok(())
    }
}

fn load_config(path: &Path, overrides: &[String]) -> Result<FederationConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = if path.extension().is_some_and(|e| e == "json") {
        let manifest = RunManifest::from_json(&text)?;
        FederationConfig::from_toml_str(&manifest.config.to_toml_string(), overrides, None)?
    } else {
        let env_seed = std::env::var(SEED_ENV).ok();
        FederationConfig::from_toml_str(&text, overrides, env_seed.as_deref())?
    };
    Ok(cfg)
}

fn cmd_run(args: &RunArgs, quiet: bool) -> Result<()> {
    let cfg = load_config(&args.config, &args.overrides)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let metrics = args.out.join("metrics.csv");
    let audit = args.out.join("audit.jsonl");
    let manifest_path = args.out.join("manifest.json");
    let checkpoint = args.out.join("global.ckpt");

    let manifest = RunManifest {
        config: cfg.clone(),
        data_source: RunManifest::data_descriptor(&cfg),
        outputs: vec![metrics.clone(), audit.clone(), checkpoint.clone()],
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    fs::write(&manifest_path, manifest.to_json())?;

    let run = &cfg.federation;
    let label = run.algorithm.to_string();
    let mut sink = Progress {
        writer: RunWriter::create(&metrics, &audit, run.algorithm, run.master_seed)?,
        every: (run.rounds / 20).max(1),
        quiet,
        rounds: run.rounds,
        label: &label,
    };
    let summary = run_federation(Federation::new(cfg.clone())?, Some(&mut sink))?;
    write_checkpoint(&summary.global, BufWriter::new(File::create(&checkpoint)?))?;
    if !quiet {
        let last = summary.final_record();
        println!(
            "{label}: {} rounds, test_acc {:.4}, macro_f1 {:.4} -> {}",
            last.round,
            last.test_acc,
            last.macro_f1,
            args.out.display()
        );
    }
    Ok(())
}

fn cmd_partition(args: &PartitionArgs) -> Result<()> {
    let ds = match (&args.data, &args.config) {
        (Some(path), _) => load_feature_csv(path, None)?,
        (None, Some(cfg)) => load_dataset(&load_config(cfg, &[])?)?,
        (None, None) => bail!(fedmlac::Error::Config {
            field: "data".into(),
            message: "pass --data or --config".into(),
        }),
    };
    let plan = match args.strategy {
        Strategy::Iid => iid_partition(&ds, args.clients, args.seed)?,
        Strategy::Dirichlet => dirichlet_partition(&ds, args.clients, args.alpha, args.seed)?,
        Strategy::Group => group_partition(&ds)?,
    };
    fs::create_dir_all(&args.out)?;
    let path = args.out.join("plan.json");
    fs::write(&path, serde_json::to_string(&plan)?)?;

    let classes = ds.num_classes();
    let mut header = format!("{:>6} {:>6}", "client", "n");
    for c in 0..classes {
        header.push_str(&format!(" {:>5}", format!("c{c}")));
    }
    println!("{header} {:>8}", "entropy");
    for (k, hist) in plan.histograms(&ds).iter().enumerate() {
        let mut line = format!("{k:>6} {:>6}", plan.clients[k].len());
        for n in hist {
            line.push_str(&format!(" {n:>5}"));
        }
        println!("{line} {:>8.3}", label_entropy(hist));
    }
    println!("plan written to {}", path.display());
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let runs = args
        .metrics
        .iter()
        .map(|p| Ok((p.display().to_string(), read_metrics(p)?)))
        .collect::<Result<Vec<_>>>()?;
    print!("{}", render_comparison(&compare_runs(&runs)?));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args, cli.quiet),
        Command::Partition(args) => cmd_partition(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e
                .downcast_ref::<fedmlac::Error>()
                .is_some_and(fedmlac::Error::is_config);
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}
