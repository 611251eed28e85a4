use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use frem::answer::{run_frem, FremContext};
use frem::config::FremConfig;
use frem::eval::{ablation_run, evaluate, load_dataset, write_report, FlagSet, Strategy};
use frem::gateway::{Backend, CacheMode, Gateway, MockBackend, RemoteBackend, ReplayCache};
use frem::selection::select_with_fallback;
use frem::skills::estimate_required_skills;
use frem::synthesis::{build_pool, load_pool, save_pool, FillStrategy};
use frem::template::RawQuestion;

#[derive(Parser)]
#[command(name = "frem", version, about = "Template-driven demo synthesis and skill-weighted path selection for document QA")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML or JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = BackendKind::Mock)]
    backend: BackendKind,
    /// Pool build seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pool file to read (select, answer) or write (synth).
    #[arg(long, global = true)]
    pool: Option<PathBuf>,
    /// Judge threshold; demos must score above it.
    #[arg(long, global = true)]
    delta: Option<u8>,
    #[arg(long, global = true)]
    m_target: Option<usize>,
    /// Demo construction strategy.
    #[arg(long, global = true, value_enum)]
    strategy: Option<FillArg>,
    /// Mock fixture file.
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,
    /// Record/replay cache file.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Remote,
    Mock,
    Replay,
}

#[derive(Clone, Copy, ValueEnum)]
enum FillArg {
    RandomFill,
    GuidedFill,
    TemplateVariation,
}

impl From<FillArg> for FillStrategy {
    fn from(a: FillArg) -> Self {
        match a {
            FillArg::RandomFill => FillStrategy::RandomFill,
            FillArg::GuidedFill => FillStrategy::GuidedFill,
            FillArg::TemplateVariation => FillStrategy::TemplateVariation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalStrategy {
    Frem,
    Standard,
}

#[derive(Args)]
struct QuestionArgs {
    /// Question text.
    #[arg(long, short)]
    question: String,
    #[arg(long, default_value = "q0")]
    id: String,
}

#[derive(Subcommand)]
enum Command {
    /// Print the question template as JSON.
    Template {
        #[command(flatten)]
        q: QuestionArgs,
    },
    /// Build a demo pool for a question and write it to --pool.
    Synth {
        #[command(flatten)]
        q: QuestionArgs,
    },
    /// Select a demo from --pool and print the selection trace.
    Select {
        #[command(flatten)]
        q: QuestionArgs,
    },
    /// Answer a question over a document file.
    Answer {
        #[command(flatten)]
        q: QuestionArgs,
        /// Document file.
        #[arg(long, short)]
        document: PathBuf,
        /// Also print template, trace and manifest.
        #[arg(long)]
        full: bool,
    },
    /// Evaluate a JSON Lines dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "eval-strategy", value_enum, default_value_t = EvalStrategy::Frem)]
        eval_strategy: EvalStrategy,
        /// Report file.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run selection ablations; writes `<name>.json` per flag set.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated subset of full,no_suw,no_scc,no_judge.
        #[arg(long, default_value = "full,no_suw,no_scc,no_judge")]
        flags: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn load_config(g: &Global) -> Result<FremConfig> {
    let mut cfg = match &g.config {
        Some(p) => FremConfig::load(p)?,
        None => FremConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.pool.seed = s;
    }
    if let Some(d) = g.delta {
        cfg.selection.delta = d;
    }
    if let Some(m) = g.m_target {
        cfg.pool.m_target = m;
    }
    if let Some(s) = g.strategy {
        cfg.pool.strategy = s.into();
    }
    if let Some(f) = &g.fixtures {
        cfg.paths.fixtures = Some(f.clone());
    }
    if let Some(c) = &g.cache {
        cfg.paths.cache = Some(c.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn make_gateway(kind: BackendKind, cfg: &FremConfig) -> Result<Gateway> {
    let backend: Arc<dyn Backend> = match kind {
        BackendKind::Mock => match &cfg.paths.fixtures {
            Some(p) => Arc::new(MockBackend::load(p)?),
            None => Arc::new(MockBackend::new()),
        },
        BackendKind::Remote => {
            let remote: Arc<dyn Backend> = Arc::new(RemoteBackend::new(cfg.remote.clone()));
            match &cfg.paths.cache {
                Some(p) => Arc::new(ReplayCache::open(p, Some(remote), CacheMode::Record)?),
                None => remote,
            }
        }
        BackendKind::Replay => {
            let Some(p) = &cfg.paths.cache else { bail!("--backend replay needs --cache") };
            Arc::new(ReplayCache::open(p, None, CacheMode::ReplayOnly)?)
        }
    };
    Ok(Gateway::with_settings(backend, cfg.gateway.clone()))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn need_pool(g: &Global) -> Result<&Path> {
    g.pool.as_deref().context("--pool is required")
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let gw = make_gateway(cli.global.backend, &cfg)?;
    let ctx = FremContext::from_config(cfg)?;
    match cli.command {
        Command::Template { q } => {
            let q = RawQuestion::new(q.id, q.question)?;
            let t = ctx.template_for(&q, &gw)?;
            print_json(&t.debug_dump())?;
        }
        Command::Synth { q } => {
            let out = need_pool(&cli.global)?;
            let q = RawQuestion::new(q.id, q.question)?;
            let t = ctx.template_for(&q, &gw)?;
            let pool = build_pool(&t, &ctx.config.pool, &ctx.terms, &gw)?;
            save_pool(&pool, out)?;
            eprintln!("wrote {} demos to {} ({} attempts)", pool.size(), out.display(), pool.stats.attempts);
        }
        Command::Select { q } => {
            let pool = load_pool(need_pool(&cli.global)?)?;
            let q = RawQuestion::new(q.id, q.question)?;
            let required = estimate_required_skills(&q, Some(&gw), ctx.config.estimation);
            let sel = select_with_fallback(&pool, &q.text, &required.skills, &ctx.config.selection, Some(&gw))?;
            print_json(&sel.trace.to_json())?;
        }
        Command::Answer { q, document, full } => {
            if let Some(p) = &cli.global.pool {
                ctx.pools.insert(load_pool(p)?);
            }
            let doc = std::fs::read_to_string(&document).with_context(|| document.display().to_string())?;
            let q = RawQuestion::new(q.id, q.question)?;
            let out = run_frem(&q, &doc, &ctx, &gw)?;
            if full {
                print_json(&out)?;
            } else {
                print_json(&out.result)?;
            }
        }
        Command::Eval { dataset, eval_strategy, out } => {
            let ds = load_dataset(&dataset)?;
            let strategy = match eval_strategy {
                EvalStrategy::Frem => Strategy::Frem,
                EvalStrategy::Standard => Strategy::Standard,
            };
            let report = evaluate(&ds.records, strategy, &ctx, &gw);
            write_report(&report, &out)?;
            let a = &report.aggregates;
            println!("{strategy}: n={} EM={:.2} ROUGE-L={:.2} failures={}", a.n, a.em, a.rouge_l, a.failures);
        }
        Command::Ablate { dataset, flags, out_dir } => {
            let sets = flags.split(',').map(|s| s.trim().parse::<FlagSet>()).collect::<Result<Vec<_>, _>>()?;
            let ds = load_dataset(&dataset)?;
            std::fs::create_dir_all(&out_dir)?;
            for report in ablation_run(&ds.records, &sets, &ctx, &gw) {
                let label = report.header.label.clone().unwrap_or_default();
                write_report(&report, &out_dir.join(format!("{label}.json")))?;
                let a = &report.aggregates;
                println!("{label}: n={} EM={:.2} ROUGE-L={:.2} failures={}", a.n, a.em, a.rouge_l, a.failures);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
