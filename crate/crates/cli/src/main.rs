use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use psykit_cli::{data, lm, run};
use psykit_core::corpus::TaskKind;
use psykit_core::models::load_regressor_bundle;
use psykit_core::persona::{
    load_lm_bundle, read_instruction_jsonl, synthetic_instruction_records, write_instruction_jsonl, GenerateConfig,
};
use psykit_services::{
    lm_router, orchestrator_router, predictor_router, serve, stub_generative_router, stub_predictor_router, LmChat,
    Orchestrator, ServiceConfig, Stub,
};
use serde::Serialize;
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "psykit", version, about = "Text-to-trait modelling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Regression,
    MultiLabel,
    MultiClass,
}

impl From<Task> for TaskKind {
    fn from(t: Task) -> Self {
        match t {
            Task::Regression => TaskKind::MultiOutputRegression,
            Task::MultiLabel => TaskKind::MultiLabelClassification,
            Task::MultiClass => TaskKind::MultiClassClassification,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StubKind {
    Predictor,
    Generative,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic regression corpus into a store.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 300)]
        vocab: usize,
        #[arg(long, default_value_t = 2)]
        targets: usize,
        #[arg(long, default_value_t = 0.6)]
        oracle_r2: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Clean and ingest a CSV (id,text,t0..tk) or JSON-lines file.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "dataset")]
        name: String,
        #[arg(long, value_enum, default_value = "regression")]
        task: Task,
        /// Comma-separated target names.
        #[arg(long, value_delimiter = ',')]
        target_names: Option<Vec<String>>,
    },
    /// Train the text regressor; writes checkpoints, curves, metrics and a bundle.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: bool,
    },
    /// Regression-stabilization ablation on synthetic data.
    Ablate {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        report: PathBuf,
    },
    /// Evaluate every checkpoint of a run and pick the best.
    Sweep {
        /// Output directory of a `train` run.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Kill a run at a step, resume it, and compare against an uninterrupted run.
    PreemptTest {
        #[arg(long)]
        kill_at: u64,
        #[arg(long, default_value_t = 500)]
        steps: u64,
        #[arg(long, default_value_t = 25)]
        save_steps: u64,
        #[arg(long, default_value_t = 99)]
        seed: u64,
        /// Keep checkpoints here instead of a temporary directory.
        #[arg(long)]
        work: Option<PathBuf>,
    },
    /// Write a synthetic scored instruction corpus (JSON lines).
    GenInstructions {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the persona LM (base then LoRA) and export a bundle.
    TrainLm {
        #[arg(long)]
        instructions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "persona-lm")]
        name: String,
        #[arg(long, default_value_t = 300)]
        base_steps: u64,
        #[arg(long, default_value_t = 500)]
        lora_steps: u64,
        #[arg(long, default_value_t = 4)]
        rank: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        quantize: bool,
    },
    /// Serve a regressor bundle: POST /predict, GET /health.
    ServeModel {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8101")]
        listen: String,
    },
    /// Serve a persona LM bundle: POST /chat, GET /health.
    ServeGen {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8201")]
        listen: String,
        #[arg(long, default_value_t = 0.8)]
        temperature: f64,
        #[arg(long, default_value_t = 20)]
        top_k: usize,
    },
    /// Run the fan-out orchestrator.
    Orchestrate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's listen_address.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Serve a canned service with a fixed delay.
    ServeStub {
        #[arg(long, value_enum)]
        kind: StubKind,
        #[arg(long, default_value = "stub")]
        name: String,
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
        #[arg(long)]
        listen: String,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::GenSynthetic { out, n, vocab, targets, oracle_r2, seed } => {
            let args = data::SyntheticArgs {
                n,
                vocab_size: vocab,
                n_targets: targets,
                oracle_r2,
                seed,
            };
            print_json(&data::gen_synthetic_store(&args, &out)?)
        }
        Command::Ingest { input, out, name, task, target_names } => {
            print_json(&data::ingest_file(&input, &out, &name, task.into(), target_names)?)
        }
        Command::Train { config, data, out, resume } => {
            let cfg = match config {
                Some(p) => run::RunConfig::load(&p)?,
                None => run::RunConfig::default(),
            };
            let outcome = run::train_run(&cfg, &data, &out, resume)?;
            print_json(&outcome)
        }
        Command::Ablate { seed, report } => {
            let r = run::ablate(seed, &report)?;
            print!("{}", run::ablation_csv(&r));
            if !r.ordering_holds() {
                log::warn!("ablation rows are not strictly increasing for seed {seed}");
            }
            Ok(())
        }
        Command::Sweep { dir, data, csv } => print_json(&run::sweep_run(&dir, &data, csv.as_deref())?),
        Command::PreemptTest { kill_at, steps, save_steps, seed, work } => {
            let args = run::PreemptArgs {
                kill_at,
                max_steps: steps,
                save_steps,
                seed,
                ..Default::default()
            };
            let tmp = tempfile::tempdir()?;
            let dir = work.unwrap_or_else(|| tmp.path().to_path_buf());
            let outcome = run::preempt_test(&args, &dir)?;
            print_json(&outcome)?;
            if !outcome.identical {
                bail!("resumed parameters differ from the uninterrupted run");
            }
            Ok(())
        }
        Command::GenInstructions { out, n, seed } => {
            write_instruction_jsonl(&out, &synthetic_instruction_records(n, seed))?;
            println!("wrote {n} records to {}", out.display());
            Ok(())
        }
        Command::TrainLm { instructions, out, name, base_steps, lora_steps, rank, seed, quantize } => {
            let records = read_instruction_jsonl(&instructions)?;
            let mut args = lm::LmArgs {
                name,
                base_steps,
                lora_steps,
                quantize,
                ..Default::default()
            };
            args.lora.rank = rank;
            args.lora.seed = seed;
            args.model.seed = seed;
            print_json(&lm::train_lm(&records, &args, &out)?)
        }
        Command::ServeModel { bundle, listen } => {
            let b = load_regressor_bundle(&bundle).with_context(|| format!("loading {}", bundle.display()))?;
            log::info!("serving model {}", b.manifest.name);
            runtime()?.block_on(serve(predictor_router(Arc::new(b)), &listen))?;
            Ok(())
        }
        Command::ServeGen { bundle, listen, temperature, top_k } => {
            let (manifest, model) = load_lm_bundle(&bundle).with_context(|| format!("loading {}", bundle.display()))?;
            let chat = LmChat {
                name: manifest.name,
                model,
                defaults: GenerateConfig {
                    temperature,
                    top_k,
                    ..Default::default()
                },
            };
            runtime()?.block_on(serve(lm_router(chat), &listen))?;
            Ok(())
        }
        Command::Orchestrate { config, listen } => {
            let cfg = ServiceConfig::load(&config)?;
            let addr = listen.unwrap_or_else(|| cfg.listen_address.clone());
            let orch = Arc::new(Orchestrator::new(cfg)?);
            runtime()?.block_on(serve(orchestrator_router(orch), &addr))?;
            Ok(())
        }
        Command::ServeStub { kind, name, delay_ms, listen } => {
            let stub = Stub::new(name, delay_ms);
            let router = match kind {
                StubKind::Predictor => stub_predictor_router(stub),
                StubKind::Generative => stub_generative_router(stub),
            };
            runtime()?.block_on(serve(router, &listen))?;
            Ok(())
        }
    }
}
