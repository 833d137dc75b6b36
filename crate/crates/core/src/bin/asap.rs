use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use asap_core::attnio::{read_stack, write_stack};
use asap_core::bench::{loglog_slope, run_bench, write_bench_csv, BenchConfig, Stage};
use asap_core::hybrid::{HybridConfig, RedundancyMetric};
use asap_core::pipeline::{run_pipeline, Anchor, FeatureLayer, Mode, PipelineConfig, ReduceConfig};
use asap_core::reduce::BudgetPolicy;
use asap_core::report::{write_distance_csv, write_mask_csv, RunReport};
use asap_core::synth::{gen_sink_stack, gen_uniform_stack, SynthConfig};
use asap_core::walk::WalkConfig;
use asap_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "asap",
    version,
    about = "Sink-anchored token reduction over ATNB attention stacks"
)]
struct Cli {
    /// Worker threads for stage-internal parallelism. ASAP_THREADS wins over this flag.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reduce the tokens of one stack and write a JSON report.
    Run(RunArgs),
    /// Write a synthetic stack with a planted sink.
    Synth(SynthArgs),
    /// Time the scaling-sensitive stages across token counts.
    Bench(BenchArgs),
    /// Check that a file parses and passes every stack invariant.
    Validate {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Pool,
    Prune,
    Hybrid,
    ReportOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnchorArg {
    Sink,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Diffusion,
    Cosine,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Strict,
    Literal,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "pool")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 7.0)]
    tau: f64,
    #[arg(long, default_value_t = 6)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// Foreground budget T (required for hybrid).
    #[arg(long)]
    budget: Option<usize>,
    /// Tokens removed per bipartite round (default max(1, |S|/8)).
    #[arg(long)]
    removal_batch: Option<usize>,
    #[arg(long, value_enum, default_value = "sink")]
    anchor: AnchorArg,
    /// Seed for the random anchor.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "diffusion")]
    metric: MetricArg,
    #[arg(long, value_enum, default_value = "strict")]
    budget_policy: PolicyArg,
    /// Feature layer for pooling: "trigger" or a 0-based layer index.
    #[arg(long, default_value = "trigger")]
    feature_layer: String,
    /// Keep accumulating past the trigger to record the full column-sum curve.
    #[arg(long)]
    no_early_stop: bool,
    #[arg(long)]
    max_layers: Option<usize>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Per-token distance CSV.
    #[arg(long)]
    dump_distances: Option<PathBuf>,
    /// Keep/pool/drop mask CSV.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Leave the reduced token list (features included) out of the report.
    #[arg(long)]
    no_tokens: bool,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 12)]
    layers: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = 0.3)]
    margin: f64,
    /// Planted sink index; omit (with --margin 0) for a plain random stack.
    #[arg(long)]
    sink: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 8)]
    feature_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    sink_retention: f64,
    /// Every entry 1/n instead.
    #[arg(long)]
    uniform: bool,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512,1024")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Minimum wall time of one sample, in milliseconds.
    #[arg(long, default_value_t = 2.0)]
    min_sample_ms: f64,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = json!({ "error": e.kind(), "code": e.code(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(e.code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Run(args) => run(args),
        Command::Synth(args) => synth(args),
        Command::Bench(args) => bench(args),
        Command::Validate { input } => validate(&input),
    }
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let threads =
        match std::env::var("ASAP_THREADS") {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| {
                Error::Config(format!("ASAP_THREADS must be an integer, got {v:?}"))
            })?),
            Err(_) => flag,
        };
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn sink_for(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn pipeline_config(args: &RunArgs) -> Result<PipelineConfig> {
    let feature_layer = match args.feature_layer.as_str() {
        "trigger" => FeatureLayer::Trigger,
        other => FeatureLayer::Fixed(other.parse().map_err(|_| {
            Error::Config(format!(
                "--feature-layer must be 'trigger' or an index, got {other:?}"
            ))
        })?),
    };
    let mode = match args.mode {
        ModeArg::Pool => Mode::Pool,
        ModeArg::Prune => Mode::Prune,
        ModeArg::Hybrid => Mode::Hybrid,
        ModeArg::ReportOnly => Mode::ReportOnly,
    };
    let hybrid = match (mode, args.budget) {
        (Mode::Hybrid, Some(target)) => Some(HybridConfig {
            target,
            removal_batch: args.removal_batch,
            metric: match args.metric {
                MetricArg::Diffusion => RedundancyMetric::Diffusion,
                MetricArg::Cosine => RedundancyMetric::Cosine,
            },
        }),
        _ => None,
    };
    let cfg = PipelineConfig {
        mode,
        walk: WalkConfig {
            alpha: args.alpha,
            tau: args.tau,
            max_layers: args.max_layers,
            early_stop: !args.no_early_stop,
            retain_history: false,
        },
        reduce: ReduceConfig {
            k: args.k,
            p: args.p,
            budget: if mode == Mode::Hybrid {
                None
            } else {
                args.budget
            },
            budget_policy: match args.budget_policy {
                PolicyArg::Strict => BudgetPolicy::Strict,
                PolicyArg::Literal => BudgetPolicy::Literal,
            },
            feature_layer,
        },
        hybrid,
        anchor: match args.anchor {
            AnchorArg::Sink => Anchor::Sink,
            AnchorArg::Random => Anchor::Random { seed: args.seed },
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = pipeline_config(&args)?;
    let stack = read_stack(&args.input)?;
    let out = run_pipeline(&stack, &cfg)?;
    let report = RunReport::new(&cfg, &out, stack.layers(), !args.no_tokens);
    let mut w = sink_for(args.output.as_deref())?;
    report.write_json(&mut w)?;
    w.flush()?;
    if let Some(path) = &args.dump_distances {
        write_distance_csv(&out, File::create(path)?)?;
    }
    if let Some(path) = &args.mask {
        write_mask_csv(&out, File::create(path)?)?;
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n: args.n,
        layers: args.layers,
        heads: args.heads,
        margin: args.margin,
        sink_index: args.sink,
        seed: args.seed,
        noise: args.noise,
        feature_dim: args.feature_dim,
        sink_retention: args.sink_retention,
    };
    let stack = if args.uniform {
        gen_uniform_stack(&cfg)?
    } else {
        gen_sink_stack(&cfg)?
    };
    write_stack(&stack, &args.out)
}

fn bench(args: BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        sizes: args.sizes,
        layers: args.layers,
        warmup: args.warmup,
        iterations: args.iterations,
        seed: args.seed,
        min_sample: Duration::from_secs_f64(args.min_sample_ms.max(0.0) / 1e3),
    };
    let rows = run_bench(&cfg)?;
    write_bench_csv(&rows, sink_for(args.out.as_deref())?)?;
    for stage in Stage::ALL {
        if let Some(slope) = loglog_slope(&rows, stage) {
            eprintln!("{}: log-log slope {slope:.3}", stage.as_str());
        }
    }
    Ok(())
}

fn validate(input: &Path) -> Result<()> {
    let stack = read_stack(input)?;
    let drift = stack.max_row_drift();
    let summary = json!({
        "ok": true,
        "layers": stack.layers(),
        "heads": stack.heads(),
        "tokens": stack.tokens(),
        "feature_dim": stack.feature_dim(),
        "max_row_drift": drift,
        "renormalized": drift > 0.0,
        "meta": stack.meta(),
    });
    if drift > 1e-5 {
        log::warn!("row sums drift by up to {drift:.3e}; rows are renormalized on load");
    }
    println!("{summary}");
    Ok(())
}
