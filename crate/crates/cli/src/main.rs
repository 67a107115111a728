use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use memrec_core::curation::{builtin_ruleset, generate_ruleset, Domain};
use memrec_core::eval::{judge_rationales, sample_cases, JudgeItem, Pipeline};
use memrec_core::gateway::{CallLedger, Gateway};
use memrec_core::ingest::{cases_to_jsonl, ingest, IngestOptions};
use memrec_core::propagation::{DeadLetter, Worker};
use memrec_core::{EntityId, EvalCase, MemoryGraph, PipelineConfig};

#[derive(Parser)]
#[command(name = "memrec", version, about = "Collaborative-memory recommendation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load JSONL datasets into a graph snapshot.
    Ingest {
        #[arg(long, num_args = 1.., required = true)]
        data: Vec<PathBuf>,
        /// Snapshot to write.
        #[arg(long)]
        out: PathBuf,
        /// Also write the collected eval cases here.
        #[arg(long)]
        cases_out: Option<PathBuf>,
        /// Skip malformed lines with a warning.
        #[arg(long)]
        lenient: bool,
    },
    /// Write a curation rule set for a domain.
    GenRules {
        #[arg(long)]
        domain: Domain,
        /// Use the shipped rules instead of asking the memory model.
        #[arg(long)]
        builtin: bool,
        #[arg(long)]
        out: PathBuf,
        /// Backend settings for generation (defaults to the mock backend).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run an experiment and write its report.
    Run {
        #[command(flatten)]
        input: RunInput,
        /// Report file.
        #[arg(long)]
        out: PathBuf,
        /// Machine-readable copy of the report.
        #[arg(long)]
        json_out: Option<PathBuf>,
        /// Final graph snapshot.
        #[arg(long)]
        snapshot_out: Option<PathBuf>,
        /// Failed Stage-W events are appended here.
        #[arg(long)]
        dead_letter: Option<PathBuf>,
    },
    /// Run a grid of configurations, one report per point.
    Sweep {
        #[command(flatten)]
        input: RunInput,
        /// `key=v1,v2,...`; repeat for more axes.
        #[arg(long = "param", required = true)]
        params: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print a node's memory and version history.
    Inspect {
        #[arg(long)]
        graph: PathBuf,
        /// `User-<id>` or `Item-<id>`.
        #[arg(long)]
        entity: String,
    },
    /// Re-process dead-lettered Stage-W events against a snapshot.
    ReplayFailed {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        dead_letter: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Snapshot to write (defaults to overwriting `--graph`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score rationale triples with the judge model.
    Judge {
        /// JSONL of {user_summary, item_title, rationale_a, rationale_b, rationale_c}.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunInput {
    #[arg(long)]
    config: PathBuf,
    /// Dataset JSONL. Without `--graph` it is ingested into an empty graph;
    /// with `--graph` it may only hold eval cases.
    #[arg(long, num_args = 1.., required = true)]
    cases: Vec<PathBuf>,
    /// Starting graph snapshot.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Overrides `candidate_shuffle_seed`.
    #[arg(long)]
    shuffle_candidates: Option<u64>,
    /// Evaluate a seeded random subset of this many cases.
    #[arg(long, requires = "seed")]
    sample: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Drain memory writes after every case. Evaluation runs always do.
    #[arg(long)]
    sync_propagation: bool,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    Ok(PipelineConfig::load(path)?)
}

impl RunInput {
    fn load(&self) -> Result<(PipelineConfig, MemoryGraph, Vec<EvalCase>)> {
        let mut config = load_config(&self.config)?;
        if let Some(seed) = self.shuffle_candidates {
            config.candidate_shuffle_seed = Some(seed);
        }
        let (graph, cases) = match &self.graph {
            None => {
                let mut graph = MemoryGraph::new();
                let (summary, cases) = ingest(&self.cases, &mut graph, IngestOptions::default())?;
                log::info!("ingested {summary}");
                (graph, cases)
            }
            Some(snapshot) => {
                let mut graph =
                    MemoryGraph::load(snapshot).with_context(|| format!("loading {}", snapshot.display()))?;
                let before = graph.clone();
                let (summary, cases) = ingest(&self.cases, &mut graph, IngestOptions::default())?;
                if graph != before {
                    bail!("with --graph, the cases file may only contain eval_case records (found {summary})");
                }
                (graph, cases)
            }
        };
        let cases = match (self.sample, self.seed) {
            (Some(n), Some(seed)) => sample_cases(&cases, n, seed),
            _ => cases,
        };
        if cases.is_empty() {
            bail!("no eval cases found");
        }
        Ok((config, graph, cases))
    }
}

fn parse_axis(spec: &str) -> Result<(String, Vec<String>)> {
    let (key, values) = spec.split_once('=').with_context(|| format!("--param {spec:?} is not key=v1,v2"))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if key.trim().is_empty() || values.is_empty() {
        bail!("--param {spec:?} is not key=v1,v2");
    }
    Ok((key.trim().to_string(), values))
}

fn grid(axes: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    axes.iter().fold(vec![Vec::new()], |points, (key, values)| {
        points
            .iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut p = p.clone();
                    p.push((key.clone(), v.clone()));
                    p
                })
            })
            .collect()
    })
}

fn point_name(point: &[(String, String)]) -> String {
    let name = point.iter().map(|(k, v)| format!("{k}-{v}")).collect::<Vec<_>>().join("_");
    name.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

fn cmd_ingest(data: &[PathBuf], out: &Path, cases_out: Option<&Path>, lenient: bool) -> Result<()> {
    let mut graph = MemoryGraph::new();
    let (summary, cases) = ingest(data, &mut graph, IngestOptions { lenient })?;
    for warning in &summary.warnings {
        eprintln!("warning: {warning}");
    }
    write(out, &graph.to_snapshot_string())?;
    if let Some(path) = cases_out {
        write(path, &cases_to_jsonl(&cases))?;
    }
    println!("{summary}");
    Ok(())
}

fn cmd_gen_rules(domain: Domain, builtin: bool, out: &Path, config: Option<&Path>) -> Result<()> {
    let ruleset = if builtin {
        builtin_ruleset(domain)
    } else {
        let config = match config {
            Some(path) => load_config(path)?,
            None => PipelineConfig::default(),
        };
        let gateway = Gateway::new(config.backends.mem.build_chat()?, Arc::new(CallLedger::new()));
        let ruleset = generate_ruleset(&domain.context(), &gateway)?;
        eprint!("{}", gateway.ledger().render_table());
        ruleset
    };
    write(out, &ruleset.to_text())?;
    println!("{} rules ({} clauses) written to {}", ruleset.rules.len(), ruleset.clause_count(), out.display());
    Ok(())
}

fn cmd_run(
    input: &RunInput,
    out: &Path,
    json_out: Option<&Path>,
    snapshot_out: Option<&Path>,
    dead_letter: Option<&Path>,
) -> Result<()> {
    let (config, graph, cases) = input.load()?;
    let mut pipeline = Pipeline::from_config(config, graph)?;
    if let Some(path) = dead_letter {
        pipeline = pipeline.with_dead_letter(path);
    }
    let report = pipeline.run(&cases, input.jobs)?;
    write(out, &report.render())?;
    if let Some(path) = json_out {
        write(path, &report.to_json())?;
    }
    if let Some(path) = snapshot_out {
        write(path, &pipeline.graph().read().to_snapshot_string())?;
    }
    for m in &report.metrics {
        println!("H@{} {:.4}  N@{} {:.4}", m.k, m.hit, m.k, m.ndcg);
    }
    Ok(())
}

fn cmd_sweep(input: &RunInput, params: &[String], out_dir: &Path) -> Result<()> {
    let (base, graph, cases) = input.load()?;
    let axes = params.iter().map(|p| parse_axis(p)).collect::<Result<Vec<_>>>()?;
    for point in grid(&axes) {
        let mut config = base.clone();
        for (key, value) in &point {
            config.set_param(key, value)?;
        }
        let pipeline = Pipeline::from_config(config, graph.clone())?;
        let report = pipeline.run(&cases, input.jobs)?;
        let path = out_dir.join(format!("{}.txt", point_name(&point)));
        write(&path, &report.render())?;
        let h1 = report.metrics.first().map_or(0.0, |m| m.hit);
        println!("{} H@{} {:.4}", path.display(), report.metrics.first().map_or(1, |m| m.k), h1);
    }
    Ok(())
}

fn cmd_inspect(graph: &Path, entity: &str) -> Result<()> {
    let graph = MemoryGraph::load(graph).with_context(|| format!("loading {}", graph.display()))?;
    let id: EntityId = entity.parse()?;
    let node = graph.node(&id).with_context(|| format!("{id} is not in the graph"))?;
    println!("{}", node.entity);
    if let Some(title) = &node.title {
        println!("title:   {title}");
    }
    println!("version: {} (updated at {})", node.version, node.updated_at);
    let degree = if id.is_user() { graph.edges_of_user(&id).count() } else { graph.edges_of_item(&id).count() };
    println!("edges:   {degree}");
    println!("memory:\n  {}", node.text);
    let history = graph.history(&id);
    if !history.is_empty() {
        println!("history:");
        for head in history {
            println!("  v{} @{}: {}", head.version, head.updated_at, head.head);
        }
    }
    Ok(())
}

fn cmd_replay(graph_path: &Path, dead_letter: &Path, config: &Path, out: Option<&Path>) -> Result<()> {
    let config = load_config(config)?;
    let graph = MemoryGraph::load(graph_path).with_context(|| format!("loading {}", graph_path.display()))?;
    let letters = DeadLetter::read_all(dead_letter).with_context(|| format!("reading {}", dead_letter.display()))?;
    let shared = memrec_core::SharedGraph::new(graph);
    let ledger = Arc::new(CallLedger::new());
    let gateway =
        Gateway::new(config.backends.mem.build_chat()?, Arc::clone(&ledger)).with_temperature(config.temperature);
    let retry_log = dead_letter.with_extension("retry.jsonl");
    let worker = Worker::new(shared.clone(), gateway).with_mode(config.propagation).with_dead_letter(&retry_log);
    let applied = letters.iter().filter(|l| worker.process(&l.event)).count();
    write(out.unwrap_or(graph_path), &shared.read().to_snapshot_string())?;
    println!("replayed {} events: {applied} applied, {} failed", letters.len(), letters.len() - applied);
    if applied < letters.len() {
        println!("still failing events appended to {}", retry_log.display());
    }
    eprint!("{}", ledger.render_table());
    Ok(())
}

fn cmd_judge(input: &Path, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let config = match config {
        Some(path) => load_config(path)?,
        None => PipelineConfig::default(),
    };
    let backend = config.backends.judge.as_ref().unwrap_or(&config.backends.mem).build_chat()?;
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let items = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str::<JudgeItem>(l).with_context(|| format!("{}:{}", input.display(), i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let gateway = Gateway::new(backend, Arc::new(CallLedger::new()));
    let report = judge_rationales(&items, &gateway)?;
    match out {
        Some(path) => write(path, &report.render())?,
        None => print!("{}", report.render()),
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest { data, out, cases_out, lenient } => cmd_ingest(&data, &out, cases_out.as_deref(), lenient),
        Command::GenRules { domain, builtin, out, config } => cmd_gen_rules(domain, builtin, &out, config.as_deref()),
        Command::Run { input, out, json_out, snapshot_out, dead_letter } => {
            cmd_run(&input, &out, json_out.as_deref(), snapshot_out.as_deref(), dead_letter.as_deref())
        }
        Command::Sweep { input, params, out_dir } => cmd_sweep(&input, &params, &out_dir),
        Command::Inspect { graph, entity } => cmd_inspect(&graph, &entity),
        Command::ReplayFailed { graph, dead_letter, config, out } => {
            cmd_replay(&graph, &dead_letter, &config, out.as_deref())
        }
        Command::Judge { input, config, out } => cmd_judge(&input, config.as_deref(), out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
