mod config;
mod plot;
mod runner;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mpgnn_lab::{Aggregator, ValueDomain};

use config::{Experiment, ExperimentConfig, Family, ModeName, ModelRef, NRange};

#[derive(Parser, Debug)]
#[command(name = "mpgnn-lab", version, about = "Exact-arithmetic GNN expressivity experiments")]
struct Cli {
    /// Run seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Largest n for labeled graph enumeration.
    #[arg(long, global = true)]
    cap_n: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every experiment item of a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Measure aggregation output complexity over a schedule of n.
    ProfileAgg {
        #[arg(long = "agg", value_delimiter = ',', default_value = "sum,mean,max")]
        aggregators: Vec<Aggregator>,
        #[arg(long = "domain", value_delimiter = ',', default_value = "integer")]
        domains: Vec<ValueDomain>,
        #[arg(long, value_enum, default_value = "sampled")]
        mode: ModeArg,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, default_value = "2^1..2^10")]
        n: NRange,
        #[arg(long, default_value_t = 4)]
        k_offset: u32,
        /// Fixed element budget instead of the logarithmic schedule.
        #[arg(long)]
        k: Option<u32>,
    },
    /// Fit output bit-length against input budget for one MLP.
    ProbeMlp {
        /// JSON MLP file; a random MLP is sampled otherwise.
        #[arg(long)]
        mlp: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "2,3,1")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        weight_bits: u32,
        #[arg(long, default_value = "8,16,32,64")]
        budgets: NRange,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
    /// Exhaustive checks of the star lemma, trace bound or CR bound.
    Verify {
        #[command(subcommand)]
        what: Verify,
    },
    /// Evaluate one model on graph files, with traces.
    Eval {
        #[arg(long)]
        model: ModelRef,
        #[arg(long = "graph", required = true)]
        graphs: Vec<PathBuf>,
    },
    /// Color refinement on one graph file.
    Cr {
        #[arg(long)]
        graph: PathBuf,
        /// Rounds; defaults to the vertex count.
        #[arg(long)]
        t: Option<usize>,
    },
    /// Model classes against the CR star-family lower bound.
    Compare {
        #[arg(long, default_value = "constant")]
        model: ModelRef,
        #[arg(long, default_value = "3,5,7")]
        n: NRange,
    },
    /// Write graph families to files.
    Gen {
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(long)]
        n: NRange,
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// Edge probability for random graphs.
        #[arg(long, default_value = "1/2")]
        p: String,
    },
}

#[derive(Subcommand, Debug)]
enum Verify {
    StarLemma {
        #[arg(long, default_value = "1..4")]
        n: NRange,
    },
    Expobserve(ModelArgs),
    CrBound(ModelArgs),
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Number of random models, seeded from the run seed.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long = "model")]
    models: Vec<ModelRef>,
    #[arg(long, default_value = "3..6")]
    n: NRange,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Exhaustive,
    Sampled,
    ReciprocalPrimes,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum FamilyArg {
    Labeled,
    Star,
    Random,
    Complete,
    Path,
    Cycle,
}

impl Command {
    fn experiment(self) -> Experiment {
        match self {
            Command::Run { .. } => unreachable!("run loads its items from the config"),
            Command::ProfileAgg { aggregators, domains, mode, samples, n, k_offset, k } => Experiment::AggProfile {
                name: Some("agg-profile".into()),
                aggregators,
                domains,
                mode: match mode {
                    ModeArg::Exhaustive => ModeName::Exhaustive,
                    ModeArg::Sampled => ModeName::Sampled,
                    ModeArg::ReciprocalPrimes => ModeName::ReciprocalPrimes,
                },
                samples,
                n,
                k_offset,
                k,
            },
            Command::ProbeMlp { mlp, dims, weight_bits, budgets, samples } => Experiment::MlpProbe {
                name: Some("mlp-probe".into()),
                mlp,
                dims,
                weight_bits,
                budgets,
                samples,
            },
            Command::Verify { what: Verify::StarLemma { n } } => Experiment::StarLemma { name: Some("star-lemma".into()), n },
            Command::Verify { what: Verify::Expobserve(m) } => Experiment::Expobserve {
                name: Some("expobserve".into()),
                seeds: m.seeds,
                models: m.models,
                n: m.n,
            },
            Command::Verify { what: Verify::CrBound(m) } => Experiment::CrBound {
                name: Some("cr-bound".into()),
                seeds: m.seeds,
                models: m.models,
                n: m.n,
            },
            Command::Eval { model, graphs } => Experiment::GnnEval { name: Some("gnn-eval".into()), model, graphs },
            Command::Cr { graph, t } => Experiment::CrRun { name: Some("cr-run".into()), graph, t },
            Command::Compare { model, n } => Experiment::Compare { name: Some("compare".into()), model, n },
            Command::Gen { family, n, count, p } => Experiment::Gen {
                name: Some("gen".into()),
                family: match family {
                    FamilyArg::Labeled => Family::Labeled,
                    FamilyArg::Star => Family::Star,
                    FamilyArg::Random => Family::Random,
                    FamilyArg::Complete => Family::Complete,
                    FamilyArg::Path => Family::Path,
                    FamilyArg::Cycle => Family::Cycle,
                },
                n,
                count,
                p,
            },
        }
    }
}

/// The config plus the directory its relative paths resolve against.
fn load(cli: Cli) -> Result<(ExperimentConfig, PathBuf)> {
    let (mut cfg, base) = match cli.command {
        Command::Run { config } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading config {}", config.display()))?;
            let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
            let mut cfg = ExperimentConfig::parse(&text)?;
            cfg.out = base.join(&cfg.out);
            (cfg, base)
        }
        command => (ExperimentConfig::single(0, PathBuf::from("out"), command.experiment()), PathBuf::new()),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Some(n) = cli.cap_n {
        cfg.caps.graph_n = n;
    }
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    cfg.validate(&base)?;
    Ok((cfg, base))
}

fn execute(cli: Cli) -> Result<bool> {
    let (cfg, base) = load(cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cfg.jobs {
        pool = pool.num_threads(jobs);
    }
    let out = pool.build()?.install(|| runner::run(&cfg, &base))?;
    runner::write_artifacts(&cfg.out, &out.artifacts)?;
    println!("wrote {} artifacts to {}", out.artifacts.len(), cfg.out.display());
    for f in &out.failures {
        eprintln!("FAIL {f}");
    }
    Ok(out.passes())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
