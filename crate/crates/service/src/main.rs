use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ridechat_core::dialog::{ModelChoice, ModelTier};
use ridechat_core::eval::{aggregate, render_table, verdicts, LabeledSession};
use ridechat_core::llm::Completion;
use ridechat_core::simulator::{
    generate_scenario, model_score, quality_filter, run_session, DialogRecord, Judge, ModelUser, ProfileSchema,
    Scenario, ScriptedUser, UserAgent, DEFAULT_MAX_ROUNDS,
};
use ridechat_core::timefmt;

use ridechat_service::bench::{render_bench_table, run_bench};
use ridechat_service::config::ServiceConfig;
use ridechat_service::export::{build_instruction_sets, write_instruction_sets};
use ridechat_service::golden::{load_golden, run_golden, Offline};
use ridechat_service::server;
use ridechat_service::store::replay;
use ridechat_service::Service;

#[derive(Parser)]
#[command(name = "ridechat", version, about = "Conversational ride-hailing assistant")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum JudgeKind {
    Rubric,
    Model,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum UserKind {
    Scripted,
    Model,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured port; 0 picks a free one.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Write the five instruction-set files for turns logged in a range.
    Export {
        #[arg(long)]
        config: PathBuf,
        /// Reads this log instead of the configured one.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate role-played dialogs and keep the good ones.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        count: u64,
        /// Line-delimited scenarios to run instead of generating them.
        #[arg(long)]
        scenarios: Option<PathBuf>,
        /// Where generated scenarios are written.
        #[arg(long)]
        write_scenarios: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "rubric")]
        judge: JudgeKind,
        #[arg(long, value_enum, default_value = "scripted")]
        user: UserKind,
        /// Endpoint key used by the model judge and the model user.
        #[arg(long, default_value = "large")]
        endpoint: String,
        #[arg(long)]
        threshold: Option<u8>,
        #[arg(long, default_value_t = DEFAULT_MAX_ROUNDS)]
        max_rounds: u32,
    },
    /// Score a labeled corpus and print the metrics table.
    Eval {
        /// Labeled sessions, simulated dialog records, or golden sessions
        /// with `--golden`.
        #[arg(long)]
        corpus: PathBuf,
        /// Treat the corpus as golden sessions and play them first.
        #[arg(long)]
        golden: bool,
        /// Needed with `--golden` or `--judge model`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<u8>,
        #[arg(long, value_enum, default_value = "rubric")]
        judge: JudgeKind,
        #[arg(long, default_value = "large")]
        endpoint: String,
        /// Structured report output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Play golden sessions against each endpoint and tabulate quality and latency.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        golden: PathBuf,
        /// Comma-separated endpoint keys; defaults to every configured one.
        #[arg(long, value_delimiter = ',')]
        endpoints: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    match Cli::parse().command {
        Command::Serve { config, port } => serve(config, port),
        Command::Export { config, log, from, to, out } => export(&config, log, &from, &to, &out),
        Command::Simulate {
            config,
            seed,
            count,
            scenarios,
            write_scenarios,
            out,
            judge,
            user,
            endpoint,
            threshold,
            max_rounds,
        } => {
            let cfg = ServiceConfig::load(&config)?;
            let opts = SimOptions { judge, user, endpoint, threshold: threshold.unwrap_or(cfg.threshold), max_rounds };
            simulate(&cfg, seed, count, scenarios.as_deref(), write_scenarios.as_deref(), &out, &opts)
        }
        Command::Eval { corpus, golden, config, threshold, judge, endpoint, out } => {
            eval(&corpus, golden, config.as_deref(), threshold, judge, &endpoint, out.as_deref())
        }
        Command::Bench { config, golden, endpoints, out } => bench(&config, &golden, endpoints, out.as_deref()),
    }
}

fn serve(config: PathBuf, port: Option<u16>) -> Result<()> {
    let cfg = ServiceConfig::load(&config)?;
    let service = Arc::new(Service::from_config_file(&config)?);
    let addr = format!("{}:{}", cfg.bind, port.unwrap_or(cfg.port));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
        // Tests and scripts read this line to find the port.
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        server::serve(service, listener).await?;
        Ok(())
    })
}

fn parse_time(t: &str) -> Result<chrono::NaiveDateTime> {
    timefmt::parse(t).ok_or_else(|| anyhow!("bad time `{t}`, expected {}", timefmt::FORMAT))
}

fn export(config: &Path, log: Option<PathBuf>, from: &str, to: &str, out: &Path) -> Result<()> {
    let cfg = ServiceConfig::load(config)?;
    let prompts = cfg.load_resources()?.prompts;
    let log = log.unwrap_or_else(|| cfg.log_path());
    let replayed = replay(&log)?;
    let sets = build_instruction_sets(&replayed.records, parse_time(from)?, parse_time(to)?, &prompts)?;
    for (category, n) in write_instruction_sets(&sets, out)? {
        println!("{:<20} {n}", category.as_str());
    }
    Ok(())
}

struct SimOptions {
    judge: JudgeKind,
    user: UserKind,
    endpoint: String,
    threshold: u8,
    max_rounds: u32,
}

fn choice(endpoint: &str) -> ModelChoice {
    ModelChoice { tier: ModelTier::Large, endpoint_key: endpoint.into(), fine_tuned: false }
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

fn write_lines<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    for it in items {
        serde_json::to_writer(&mut f, it)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

fn simulate(
    cfg: &ServiceConfig,
    seed: u64,
    count: u64,
    scenarios: Option<&Path>,
    write_scenarios: Option<&Path>,
    out: &Path,
    opts: &SimOptions,
) -> Result<()> {
    let resources = cfg.load_resources()?;
    let assistant = resources.assistant();
    let backend: Arc<dyn Completion> = Arc::new(resources.backends.clone());
    let scenarios: Vec<Scenario> = match scenarios {
        Some(p) => read_lines(p)?,
        None => (seed..seed + count)
            .map(|s| generate_scenario(s, &resources.db, &ProfileSchema::default()))
            .collect::<Result<_, _>>()?,
    };
    if let Some(p) = write_scenarios {
        write_lines(p, &scenarios)?;
    }
    let judge = match opts.judge {
        JudgeKind::Rubric => Judge::Rubric,
        JudgeKind::Model => Judge::Model { backend: backend.as_ref(), choice: choice(&opts.endpoint) },
    };
    let mut records: Vec<DialogRecord> = Vec::new();
    for sc in &scenarios {
        let mut user: Box<dyn UserAgent> = match opts.user {
            UserKind::Scripted => Box::new(ScriptedUser::from_scenario(sc)),
            UserKind::Model => Box::new(ModelUser::new(backend.clone(), opts.endpoint.clone())),
        };
        let record = run_session(sc, &assistant, user.as_mut(), opts.max_rounds)?;
        records.push(if record.session.turns.is_empty() {
            record
        } else {
            quality_filter(record, &judge, opts.threshold)?
        });
    }
    write_lines(out, &records)?;
    let kept = records.iter().filter(|r| r.kept).count();
    let rounds: usize = records.iter().map(|r| r.session.turns.len()).sum();
    println!(
        "{} dialogs, {kept} kept, {:.2} rounds on average",
        records.len(),
        if records.is_empty() { 0.0 } else { rounds as f64 / records.len() as f64 }
    );
    Ok(())
}

/// Labeled sessions, or simulated records taken as unlabeled sessions.
fn load_corpus(path: &Path) -> Result<Vec<LabeledSession>> {
    let values: Vec<serde_json::Value> = read_lines(path)?;
    values
        .into_iter()
        .map(|v| {
            if v.get("scenario").is_some() {
                let r: DialogRecord = serde_json::from_value(v)?;
                Ok(LabeledSession { session: r.session, truths: Vec::new() })
            } else {
                Ok(serde_json::from_value(v)?)
            }
        })
        .collect()
}

fn eval(
    corpus: &Path,
    golden: bool,
    config: Option<&Path>,
    threshold: Option<u8>,
    judge: JudgeKind,
    endpoint: &str,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = config.map(ServiceConfig::load).transpose()?;
    let resources = cfg.as_ref().map(ServiceConfig::load_resources).transpose()?;
    let threshold = threshold.or(cfg.as_ref().map(|c| c.threshold)).unwrap_or(ridechat_core::eval::DEFAULT_THRESHOLD);
    let labeled = if golden {
        let Some(res) = &resources else { bail!("--golden needs --config") };
        let sessions = load_golden(&fs::read_to_string(corpus)?).map_err(|e| anyhow!(e))?;
        run_golden(&Offline::new(Arc::new(res.assistant())), &sessions).map_err(|e| anyhow!(e))?
    } else {
        load_corpus(corpus)?
    };
    let mut all: Vec<_> = labeled.iter().map(|s| verdicts(s, threshold)).collect();
    if let JudgeKind::Model = judge {
        let Some(res) = &resources else { bail!("--judge model needs --config") };
        let c = choice(endpoint);
        for (s, vs) in labeled.iter().zip(all.iter_mut()) {
            for (turn, v) in s.session.turns.iter().zip(vs.iter_mut()) {
                if turn.ground_truth.is_none() {
                    v.response = model_score(&res.backends, &c, turn) >= threshold;
                }
            }
        }
    }
    let report = aggregate(&all)?;
    print!("{}", render_table(&report));
    if let Some(p) = out {
        fs::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn bench(config: &Path, golden: &Path, endpoints: Vec<String>, out: Option<&Path>) -> Result<()> {
    let cfg = ServiceConfig::load(config)?;
    let resources = cfg.load_resources()?;
    let sessions = load_golden(&fs::read_to_string(golden)?).map_err(|e| anyhow!(e))?;
    let endpoints =
        if endpoints.is_empty() { resources.backends.keys().map(str::to_string).collect() } else { endpoints };
    let rows = run_bench(&resources, &sessions, &endpoints, cfg.threshold).map_err(|e| anyhow!(e))?;
    print!("{}", render_bench_table(&rows));
    if let Some(p) = out {
        fs::write(p, serde_json::to_string_pretty(&rows)?)?;
    }
    Ok(())
}
