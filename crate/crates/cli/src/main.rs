//! `spl`: command-line client of the source prompt library service.
//!
//! Without `--server` every command runs against a private server started
//! on a loopback port for the duration of the command.

mod io;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spl_client::SplClient;
use spl_core::api::{
    AblateRequest, BuildLibraryRequest, EmbeddingFile, EvaluateRequest, KeyFile, ProviderSpec,
    QueryFile, RetrieveRequest, SelectRequest, TallyDocument,
};
use spl_core::harness::{
    default_seeds, write_ablation_csv, AblationBase, AblationGrid, SyntheticWorld, WorldSpec,
    BUILTIN_FIXTURES,
};
use spl_core::library::{BuildConfig, SamplingMethod};
use spl_core::oracle::{
    parse_table, write_table_line, OptionProbe, SyntheticOracleConfig, TableLine,
};
use spl_core::{EvalTask, PipelineConfig, Similarity, Strategy, DOCUMENT_VERSION};

use crate::io::{
    check_input, parse_note, read_json, read_library, read_text, write_bytes, write_json,
    write_library, CliError,
};

#[derive(Parser)]
#[command(
    name = "spl",
    version,
    about = "Source prompt library retrieval and selection"
)]
struct Cli {
    /// Base URL of a running server. A private one is started when omitted.
    #[arg(long, global = true, env = "SPL_SERVER")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Sample keys per embedding and write a library file.
    BuildLibrary(BuildArgs),
    /// Search the library with sampled queries and write the candidate tally.
    Retrieve(RetrieveArgs),
    /// Choose and weight prompts from a tally.
    Select(SelectArgs),
    /// Run the full pipeline over a task and write a report.
    Evaluate(EvaluateArgs),
    /// Run a grid of synthetic experiments and write a CSV table.
    Ablate(AblateArgs),
    /// Recompute reported averages from the built-in per-prompt tables.
    Replay {
        /// Fixture names; all when omitted.
        names: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic world as input files (keys, embeddings, task, queries, probes, oracle).
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// World spec JSON overriding the defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Keys kept per embedding.
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value = "random")]
    method: SamplingMethod,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Provenance entry, repeatable.
    #[arg(long = "note", value_parser = parse_note)]
    notes: Vec<(String, String)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    library: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 32)]
    q: usize,
    #[arg(long, default_value_t = 10)]
    top_n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the query file's hard prompt id.
    #[arg(long)]
    hard_prompt: Option<String>,
    #[arg(long)]
    cosine: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    tally: PathBuf,
    #[arg(long)]
    strategy: Strategy,
    #[arg(long, default_value_t = 3)]
    n_prime: usize,
    /// Probe table (JSON lines). Needed by var and var-inter.
    #[arg(long)]
    probes: Option<PathBuf>,
    #[arg(long)]
    hard_prompt: Option<String>,
    /// Also write the blended prompt matrix from this library.
    #[arg(long)]
    library: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    library: PathBuf,
    #[arg(long)]
    task: PathBuf,
    #[arg(long)]
    strategy: Strategy,
    /// Number of seeds (0..n).
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    /// Probe and record table (JSON lines).
    #[arg(
        long,
        conflicts_with = "synthetic",
        required_unless_present = "synthetic"
    )]
    tables: Option<PathBuf>,
    /// Synthetic oracle config (JSON).
    #[arg(long)]
    synthetic: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    q: usize,
    #[arg(long, default_value_t = 10)]
    top_n: usize,
    #[arg(long, default_value_t = 3)]
    n_prime: usize,
    #[arg(long)]
    cosine: bool,
    /// Also compute the best single candidate per hard prompt.
    #[arg(long)]
    with_oracle: bool,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the full table with per-trial reports.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn similarity(cosine: bool) -> Similarity {
    if cosine {
        Similarity::Cosine
    } else {
        Similarity::InnerProduct
    }
}

async fn upload(client: &SplClient, path: &Path) -> Result<String, CliError> {
    let (bytes, manifest) = read_library(path)?;
    Ok(client
        .upload_library(bytes, manifest.as_ref())
        .await?
        .library_id)
}

async fn build_library(client: &SplClient, args: BuildArgs) -> Result<(), CliError> {
    let keys: KeyFile = read_json(&args.keys)?;
    check_input(&args.keys, keys.validate())?;
    let embeddings: EmbeddingFile = read_json(&args.embeddings)?;
    check_input(&args.embeddings, embeddings.validate())?;
    let req = BuildLibraryRequest {
        embeddings: embeddings.embeddings,
        instances: keys.instances,
        config: BuildConfig {
            n_per_prompt: args.n,
            sampling_method: args.method,
            seed: args.seed,
        },
        provenance: args.notes.into_iter().collect(),
    };
    let summary = client.build_library(&req).await?;
    let bytes = client.download_library(&summary.library_id).await?;
    write_library(&args.out, &bytes, &summary.manifest)?;
    eprintln!(
        "{}: {} embeddings, {} entries",
        args.out.display(),
        summary.manifest.embedding_count,
        summary.manifest.entry_count
    );
    Ok(())
}

async fn retrieve(client: &SplClient, args: RetrieveArgs) -> Result<(), CliError> {
    let queries: QueryFile = read_json(&args.queries)?;
    check_input(&args.queries, queries.validate())?;
    let id = upload(client, &args.library).await?;
    let req = RetrieveRequest {
        instances: queries.instances,
        query_count: args.q,
        top_n: args.top_n,
        seed: args.seed,
        similarity: similarity(args.cosine),
        hard_prompt_id: args.hard_prompt.or(queries.hard_prompt_id),
    };
    let doc = client.retrieve(&id, &req).await?;
    write_json(&args.out, &doc)?;
    eprintln!(
        "{}: {} candidates from {} hits",
        args.out.display(),
        doc.tally.distinct(),
        doc.tally.total
    );
    Ok(())
}

async fn select(client: &SplClient, args: SelectArgs) -> Result<(), CliError> {
    let tally: TallyDocument = read_json(&args.tally)?;
    let probes = match &args.probes {
        Some(path) => parse_table(&read_text(path)?)
            .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?
            .into_iter()
            .filter_map(|line| match line {
                TableLine::Probe(p) => Some(p),
                TableLine::Record(_) => None,
            })
            .collect(),
        None => Vec::new(),
    };
    let library_id = match &args.library {
        Some(path) => Some(upload(client, path).await?),
        None => None,
    };
    let req = SelectRequest {
        tally: tally.tally,
        strategy: args.strategy,
        n_prime: args.n_prime,
        probes,
        hard_prompt_id: args.hard_prompt.or(tally.hard_prompt_id),
        library_id,
    };
    let doc = client.select(&req).await?;
    write_json(&args.out, &doc)?;
    eprintln!("{}: {}", args.out.display(), doc.selection.label());
    Ok(())
}

async fn evaluate(client: &SplClient, args: EvaluateArgs) -> Result<(), CliError> {
    let task: EvalTask = read_json(&args.task)?;
    let provider = match (&args.tables, &args.synthetic) {
        (Some(path), _) => ProviderSpec::Table {
            jsonl: read_text(path)?,
        },
        (None, Some(path)) => ProviderSpec::Synthetic {
            config: read_json::<SyntheticOracleConfig>(path)?,
        },
        (None, None) => unreachable!("clap requires a provider"),
    };
    let id = upload(client, &args.library).await?;
    let req = EvaluateRequest {
        task,
        strategy: args.strategy,
        pipeline: PipelineConfig {
            query_count: args.q,
            top_n: args.top_n,
            n_prime: args.n_prime,
            similarity: similarity(args.cosine),
        },
        seeds: default_seeds(args.seeds),
        provider,
        with_oracle: args.with_oracle,
    };
    let report = client.evaluate(&id, &req).await?;
    write_json(&args.report, &report)?;
    let oracle = report
        .oracle_mean
        .map(|m| format!(", oracle {:.4}", m))
        .unwrap_or_default();
    println!(
        "{} {}: mean {:.4} std {:.4}{oracle}",
        report.task_id,
        report.strategy.as_str(),
        report.mean,
        report.std
    );
    Ok(())
}

async fn ablate(client: &SplClient, args: AblateArgs) -> Result<(), CliError> {
    let grid: AblationGrid = read_json(&args.grid)?;
    let base: AblationBase = match &args.base {
        Some(path) => read_json(path)?,
        None => AblationBase::default(),
    };
    let table = client.ablate(&AblateRequest { grid, base }).await?;
    let mut csv = Vec::new();
    write_ablation_csv(&table, &mut csv).map_err(|e| CliError::Other(e.to_string()))?;
    write_bytes(&args.out, &csv)?;
    if let Some(path) = &args.json {
        write_json(path, &table)?;
    }
    eprintln!("{}: {} rows", args.out.display(), table.rows.len());
    Ok(())
}

async fn replay(
    client: &SplClient,
    names: Vec<String>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let names = if names.is_empty() {
        BUILTIN_FIXTURES.iter().map(|s| s.to_string()).collect()
    } else {
        names
    };
    let mut docs = Vec::new();
    for name in names {
        let doc = client.replay(&name).await?;
        for (column, c) in &doc.outcome.columns {
            println!(
                "{:<12} {:<6} mean {:>8.4} reported {:>6.2} {}",
                doc.fixture,
                column,
                c.mean,
                c.reported,
                if c.matches { "ok" } else { "MISMATCH" }
            );
        }
        docs.push(doc);
    }
    if let Some(path) = out {
        write_json(&path, &docs)?;
    }
    Ok(())
}

fn synth(out_dir: &Path, seed: u64, spec: Option<&Path>) -> Result<(), CliError> {
    let spec: WorldSpec = match spec {
        Some(path) => read_json(path)?,
        None => WorldSpec::default(),
    };
    let world = SyntheticWorld::generate(&spec.with_seed(seed))
        .map_err(|e| CliError::Validation(e.to_string()))?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Format(format!("cannot create {}: {e}", out_dir.display())))?;
    let key_dim = world.spec.key_dim;
    write_json(
        &out_dir.join("keys.json"),
        &KeyFile {
            version: DOCUMENT_VERSION,
            key_dim,
            instances: world.instances.clone(),
        },
    )?;
    write_json(
        &out_dir.join("embeddings.json"),
        &EmbeddingFile {
            version: DOCUMENT_VERSION,
            embeddings: world.embeddings.clone(),
        },
    )?;
    write_json(&out_dir.join("task.json"), &world.task)?;
    let first = &world.task.prompts[0];
    write_json(
        &out_dir.join("queries.json"),
        &QueryFile {
            version: DOCUMENT_VERSION,
            key_dim,
            hard_prompt_id: Some(first.id.clone()),
            instances: first.keys.clone(),
        },
    )?;
    write_json(&out_dir.join("oracle.json"), world.oracle.config())?;
    let mut probes = String::new();
    for prompt in &world.task.prompts {
        for embedding in &world.embeddings {
            let probe = world
                .oracle
                .probe_options(&embedding.id, &prompt.id)
                .map_err(|e| CliError::Other(e.to_string()))?;
            let line = write_table_line(&TableLine::Probe(probe))
                .map_err(|e| CliError::Other(e.to_string()))?;
            probes.push_str(&line);
            probes.push('\n');
        }
    }
    write_bytes(&out_dir.join("probes.jsonl"), probes.as_bytes())?;
    let meta: BTreeMap<&str, String> = [
        ("planted", world.planted.clone()),
        ("seed", seed.to_string()),
    ]
    .into();
    write_json(&out_dir.join("world.json"), &meta)?;
    eprintln!("{}: planted {}", out_dir.display(), world.planted);
    Ok(())
}

async fn run(cli: Cli) -> Result<(), CliError> {
    let command = match cli.command {
        Command::Serve { addr } => {
            let (local, server) = spl_server::bind(addr)
                .await
                .map_err(|e| CliError::Format(format!("cannot bind {addr}: {e}")))?;
            eprintln!("listening on http://{local}");
            return server.await.map_err(|e| CliError::Other(e.to_string()));
        }
        Command::Synth {
            out_dir,
            seed,
            spec,
        } => return synth(&out_dir, seed, spec.as_deref()),
        other => other,
    };
    let client = match cli.server {
        Some(url) => SplClient::new(url),
        None => {
            let (local, server) = spl_server::bind(SocketAddr::from(([127, 0, 0, 1], 0)))
                .await
                .map_err(|e| CliError::Format(format!("cannot start local server: {e}")))?;
            tokio::spawn(server);
            SplClient::new(format!("http://{local}"))
        }
    };
    match command {
        Command::BuildLibrary(args) => build_library(&client, args).await,
        Command::Retrieve(args) => retrieve(&client, args).await,
        Command::Select(args) => select(&client, args).await,
        Command::Evaluate(args) => evaluate(&client, args).await,
        Command::Ablate(args) => ablate(&client, args).await,
        Command::Replay { names, out } => replay(&client, names, out).await,
        Command::Serve { .. } | Command::Synth { .. } => unreachable!(),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
