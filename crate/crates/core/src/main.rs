use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use subcon::connectivity::{NadParams, PprParams, ScoreCache, ScoreMethod, ScoreSource, DEFAULT_GAMMA};
use subcon::encoder::Checkpoint;
use subcon::experiment::{run_sweep, sweep_csv, ExperimentConfig, SweepAxis};
use subcon::fewshot::{cluster_novel, evaluate, EvalProtocol, FinetuneConfig};
use subcon::graph::{average_degree, generate_sbm, load_graph, save_graph, split_sidecar_path, ClassSplit, Graph, SyntheticSpec};
use subcon::train::{trace_csv, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "subcon", version, about = "Supervised graph contrastive pretraining for few-shot node classification")]
struct Cli {
    /// Overrides the seed in configs and protocols.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect or generate graphs.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Precompute top-ranked partners for every node.
    Scores(ScoresArgs),
    /// Pretrain an encoder on the base classes.
    Pretrain(PretrainArgs),
    /// Few-shot evaluation of a frozen encoder on the novel classes.
    Eval(EvalArgs),
    /// k-means NMI/ARI of novel-class embeddings.
    Cluster(ClusterArgs),
    /// Pretrain and evaluate over a hyperparameter grid.
    Sweep(SweepArgs),
}

#[derive(Subcommand)]
enum GraphCmd {
    Info { graph: PathBuf },
    Synth(SynthArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON generator spec; the flags below are ignored when given.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 500)]
    nodes_per_class: usize,
    #[arg(long, default_value_t = 0.02)]
    p_in: f64,
    #[arg(long, default_value_t = 0.002)]
    p_out: f64,
    #[arg(long, default_value_t = 32)]
    feature_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Leading feature coordinates that carry class signal.
    #[arg(long)]
    signal_dim: Option<usize>,
    #[arg(long)]
    base_classes: Option<usize>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct GraphInput {
    #[arg(long)]
    graph: PathBuf,
    /// Class split JSON; defaults to `<graph>.split.json`.
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Args)]
struct ScoresArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long, default_value_t = 19)]
    alpha_max: usize,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Nad,
    Ppr,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    input: GraphInput,
    #[arg(long)]
    scores: PathBuf,
    /// Training config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Loss trace CSV; defaults to `<output>.trace.csv`.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    input: GraphInput,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 5)]
    nway: usize,
    #[arg(long, default_value_t = 5)]
    kshot: usize,
    #[arg(long, default_value_t = 10)]
    qsize: usize,
    #[arg(long, default_value_t = 50)]
    episodes: usize,
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    #[arg(long, default_value_t = 19)]
    alpha: usize,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    input: GraphInput,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 19)]
    alpha: usize,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    axis: AxisArg,
    /// Comma-separated grid, e.g. `0.5,1,2`. Not used by the loss axis.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Beta,
    Batch,
    Loss,
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

/// Bad argument value caught after parsing; exits like a clap usage error.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is::<UsageError>() { 1 } else { 2 })
        }
    }
}

fn emit(text: &str, output: Option<&Path>) -> AnyResult<()> {
    match output {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_inputs(input: &GraphInput) -> AnyResult<(Graph, ClassSplit)> {
    let g = load_graph(&input.graph)?;
    let split_path = input.split.clone().unwrap_or_else(|| split_sidecar_path(&input.graph));
    let split = ClassSplit::load(split_path)?;
    split.validate(&g)?;
    Ok((g, split))
}

fn load_cache(path: &Path, g: &Graph) -> AnyResult<ScoreCache> {
    let cache = ScoreCache::load(path)?;
    cache.check_graph(g)?;
    Ok(cache)
}

fn run(cli: &Cli) -> AnyResult<()> {
    match &cli.command {
        Command::Graph(GraphCmd::Info { graph }) => {
            let g = load_graph(graph)?;
            let info = [
                ("nodes", g.num_nodes().to_string()),
                ("edges", g.num_edges().to_string()),
                ("feature_dim", g.feature_dim().to_string()),
                ("classes", g.num_classes().to_string()),
                ("average_degree", format!("{:.4}", average_degree(&g))),
                ("hash", format!("{:016x}", g.content_hash())),
            ];
            let text = match cli.format {
                Format::Json => {
                    let map: serde_json::Map<_, _> =
                        info.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
                    serde_json::to_string_pretty(&map)? + "\n"
                }
                Format::Csv => {
                    let mut s = String::from("key,value\n");
                    for (k, v) in &info {
                        s.push_str(&format!("{k},{v}\n"));
                    }
                    s
                }
            };
            emit(&text, None)
        }
        Command::Graph(GraphCmd::Synth(a)) => {
            let mut spec = match &a.spec {
                Some(p) => serde_json::from_str::<SyntheticSpec>(&std::fs::read_to_string(p)?)?,
                None => SyntheticSpec {
                    blocks: vec![a.nodes_per_class; a.classes],
                    p_in: a.p_in,
                    p_out: a.p_out,
                    feature_dim: a.feature_dim,
                    noise: a.noise,
                    mean_scale: 1.0,
                    signal_dim: a.signal_dim,
                    base_classes: a.base_classes,
                    seed: 0,
                },
            };
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let g = generate_sbm(&spec)?;
            save_graph(&g, &a.output)?;
            spec.split()?.save(split_sidecar_path(&a.output))?;
            eprintln!("wrote {} nodes, {} edges to {}", g.num_nodes(), g.num_edges(), a.output.display());
            Ok(())
        }
        Command::Scores(a) => {
            let g = load_graph(&a.graph)?;
            let source = match a.method {
                MethodArg::Nad => {
                    let params = NadParams {
                        seed: cli.seed.unwrap_or(0),
                        ..Default::default()
                    };
                    ScoreSource::nad(&g, &params, a.gamma)?
                }
                MethodArg::Ppr => ScoreSource::ppr(PprParams::default(), a.gamma)?,
            };
            let cache = ScoreCache::build(&g, &source, a.alpha_max)?;
            cache.save(&a.output)?;
            let method = if cache.method() == ScoreMethod::Nad { "nad" } else { "ppr" };
            eprintln!("scored {} nodes with {method}", cache.len());
            Ok(())
        }
        Command::Pretrain(a) => {
            let (g, split) = load_inputs(&a.input)?;
            let cache = load_cache(&a.scores, &g)?;
            let mut config = match &a.config {
                Some(p) => serde_json::from_str::<TrainConfig>(&std::fs::read_to_string(p)?)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = cli.seed {
                config.seed = s;
            }
            let mut trainer = match &a.resume {
                Some(p) => Trainer::resume(&g, &split, &cache, config, &Checkpoint::load(p)?)?,
                None => Trainer::new(&g, &split, &cache, config)?,
            };
            let outcome = trainer.run()?;
            trainer.checkpoint().save(&a.output)?;
            let trace_path = a.trace.clone().unwrap_or_else(|| {
                let mut p = a.output.clone().into_os_string();
                p.push(".trace.csv");
                PathBuf::from(p)
            });
            std::fs::write(trace_path, trace_csv(&outcome.trace))?;
            if let (Some(first), Some(last)) = (outcome.trace.first(), outcome.trace.last()) {
                eprintln!("{} steps, loss {:.4} -> {:.4}", outcome.trace.len(), first.loss, last.loss);
            }
            Ok(())
        }
        Command::Eval(a) => {
            let (g, split) = load_inputs(&a.input)?;
            let cache = load_cache(&a.scores, &g)?;
            let params = Checkpoint::load(&a.ckpt)?.params()?;
            let protocol = EvalProtocol {
                nway: a.nway,
                kshot: a.kshot,
                qsize: a.qsize,
                episodes: a.episodes,
                seeds: a.seeds,
                base_seed: cli.seed.unwrap_or(0),
                alpha: a.alpha,
                finetune: FinetuneConfig::default(),
            };
            let res = evaluate(&g, &split, &params, &cache, &protocol)?;
            eprintln!("{}: {:.2}% +/- {:.2}", res.setting, 100.0 * res.mean, 100.0 * res.ci95);
            let text = match cli.format {
                Format::Json => res.to_json()? + "\n",
                Format::Csv => res.to_csv(),
            };
            emit(&text, a.output.as_deref())
        }
        Command::Cluster(a) => {
            let (g, split) = load_inputs(&a.input)?;
            let cache = load_cache(&a.scores, &g)?;
            let params = Checkpoint::load(&a.ckpt)?.params()?;
            let m = cluster_novel(&g, &split, &params, &cache, a.alpha, cli.seed.unwrap_or(0))?;
            let text = match cli.format {
                Format::Json => serde_json::to_string_pretty(&m)? + "\n",
                Format::Csv => format!("nmi,ari,inertia\n{},{},{}\n", m.nmi, m.ari, m.inertia),
            };
            emit(&text, a.output.as_deref())
        }
        Command::Sweep(a) => {
            let mut config = ExperimentConfig::load(&a.config)?;
            if let Some(s) = cli.seed {
                config.train.seed = s;
                config.eval.base_seed = s;
            }
            let axis = match a.axis {
                AxisArg::Beta => SweepAxis::Beta(parse_values(&a.values)?),
                AxisArg::Batch => SweepAxis::Batch(parse_values(&a.values)?),
                AxisArg::Loss => SweepAxis::Loss,
            };
            let rows = run_sweep(&config, &axis)?;
            let text = match cli.format {
                Format::Json => serde_json::to_string_pretty(&rows)? + "\n",
                Format::Csv => sweep_csv(&rows),
            };
            emit(&text, None)
        }
    }
}

fn parse_values<T: std::str::FromStr>(values: &[String]) -> AnyResult<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if values.is_empty() {
        return Err(UsageError("--values is required for this axis".into()).into());
    }
    values
        .iter()
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|e| UsageError(format!("bad grid value {v:?}: {e}")).into())
        })
        .collect()
}
