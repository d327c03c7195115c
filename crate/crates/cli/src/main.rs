use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use lego_core::chains::decompose_chains;
use lego_core::critic::{abstract_chain, judge, mock_critic, Critic, RemoteCritic, TaskSpec};
use lego_core::exec::{Bindings, Status, Value};
use lego_core::graph_match::{match_workflows_with, similarity_reward_with, MATCH_THRESHOLD};
use lego_core::prompt::{assemble_builder_prompt, default_examples};
use lego_core::raster::ImageBuf;
use lego_core::rewards::effect_reward;
use lego_core::toy::{default_toy_tasks, load_toy_tasks, toy_train, TrainConfig};
use lego_core::validate::default_init_slots;
use lego_core::{
    execute_workflow, load_registry, parse_workflow, validate_workflow, MockBackend, Registry,
    Workflow,
};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "lego",
    version,
    about = "Validate, run and score tool-composition workflows"
)]
struct Cli {
    /// Tool registry document; the bundled registry when omitted.
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Static check; exits 0 only when the workflow is executable.
    Validate {
        #[arg(short, long)]
        workflow: PathBuf,
    },
    /// Execute with the deterministic mock backend and write artifacts.
    Run {
        #[arg(short, long)]
        workflow: PathBuf,
        /// PPM input image. A 64x64 checkerboard when omitted.
        #[arg(short, long)]
        image: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Score(Score),
    /// Print the edit chains of a workflow as JSON.
    Chains {
        #[arg(short, long)]
        workflow: PathBuf,
    },
    /// Print the builder prompt for an instruction.
    Prompt {
        #[arg(long)]
        instruction: String,
    },
    /// Train the tabular toy policy and write its reward curve as CSV.
    TrainToy {
        /// Toy task fixtures; the bundled set when omitted.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long, default_value_t = TrainConfig::default().iterations)]
        iters: usize,
        #[arg(long, default_value_t = TrainConfig::default().group_size)]
        group: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum Score {
    /// Structural similarity against a reference workflow.
    Sim {
        #[arg(short, long)]
        workflow: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Also print the matched step pairs.
        #[arg(long)]
        pairs: bool,
    },
    /// Critic-judged edit effect against a task description.
    Effect {
        #[arg(short, long)]
        workflow: PathBuf,
        #[arg(long)]
        task: PathBuf,
        #[arg(long, value_enum, default_value_t = CriticKind::Mock)]
        critic: CriticKind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CriticKind {
    Mock,
    Remote,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        // a closed pipe (e.g. `| head`) is not a failure
        Err(e)
            if e.downcast_ref::<io::Error>()
                .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn read_workflow(path: &Path) -> Result<Workflow> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_workflow(&text).with_context(|| format!("parsing {}", path.display()))
}

fn registry(path: Option<&Path>) -> Result<Registry> {
    match path {
        None => Ok(Registry::default_tools()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            load_registry(&text).with_context(|| format!("loading registry {}", p.display()))
        }
    }
}

/// Returns whether the command succeeded in the domain sense.
fn run(cli: Cli) -> Result<bool> {
    let registry = registry(cli.registry.as_deref())?;
    match cli.command {
        Command::Validate { workflow } => {
            let w = read_workflow(&workflow)?;
            let report = validate_workflow(&w, &registry, &default_init_slots());
            emit(&format!("{}\n", report.to_json()))?;
            Ok(report.executable)
        }
        Command::Run {
            workflow,
            image,
            seed,
            out,
        } => {
            let w = read_workflow(&workflow)?;
            let img = match image {
                Some(p) => {
                    let f = File::open(&p).with_context(|| format!("opening {}", p.display()))?;
                    ImageBuf::read_pnm(BufReader::new(f))
                        .with_context(|| format!("decoding {}", p.display()))?
                }
                None => ImageBuf::checkerboard(64, 64, 8),
            };
            let init = Bindings::from([("image".to_string(), Value::Img(img))]);
            let result = execute_workflow(&w, &registry, &MockBackend::new(), &init, seed);
            for p in result.write_artifacts(&out, seed)? {
                emit(&format!("{}\n", p.display()))?;
            }
            if let Status::Fault { step, reason } = &result.status {
                eprintln!("fault at step {step}: {reason}");
                return Ok(false);
            }
            Ok(true)
        }
        Command::Score(Score::Sim {
            workflow,
            gt,
            pairs,
        }) => {
            let (w, gt) = (read_workflow(&workflow)?, read_workflow(&gt)?);
            if pairs {
                let m = match_workflows_with(&w, &gt, &registry, MATCH_THRESHOLD);
                emit(&format!("{}\n", serde_json::to_string_pretty(&m)?))?;
            }
            emit(&format!(
                "{:.6}\n",
                similarity_reward_with(&w, &gt, &registry)
            ))?;
            Ok(true)
        }
        Command::Score(Score::Effect {
            workflow,
            task,
            critic,
        }) => {
            let w = read_workflow(&workflow)?;
            let text =
                fs::read_to_string(&task).with_context(|| format!("reading {}", task.display()))?;
            let task: TaskSpec = serde_json::from_str(&text)
                .context("task must be {instruction, required_edits}")?;
            let edits: Vec<_> = decompose_chains(&w, &registry)
                .iter()
                .map(|c| abstract_chain(c, &w, &registry))
                .collect();
            let critic: Box<dyn Critic> = match critic {
                CriticKind::Mock => Box::new(mock_critic(task.clone())),
                CriticKind::Remote => Box::new(RemoteCritic::from_env()?),
            };
            let c = judge(&edits, &task.instruction, critic.as_ref())?;
            let out = json!({
                "meta_edits": edits,
                "remove_indices": c.remove_indices,
                "additions": c.additions,
                "n_add": c.n_add,
                "n_remove": c.n_remove,
                "r_effect": effect_reward(c.n_add, c.n_remove),
            });
            emit(&format!("{}\n", serde_json::to_string_pretty(&out)?))?;
            Ok(true)
        }
        Command::Chains { workflow } => {
            let w = read_workflow(&workflow)?;
            let chains = decompose_chains(&w, &registry);
            emit(&format!("{}\n", serde_json::to_string_pretty(&chains)?))?;
            Ok(true)
        }
        Command::Prompt { instruction } => {
            emit(&assemble_builder_prompt(
                &registry,
                &default_examples(),
                &instruction,
            )?)?;
            Ok(true)
        }
        Command::TrainToy {
            fixtures,
            iters,
            group,
            seed,
            out,
        } => {
            let tasks = match fixtures {
                Some(p) => {
                    let text = fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    load_toy_tasks(&text)?
                }
                None => default_toy_tasks(),
            };
            if iters == 0 {
                bail!("--iters must be positive");
            }
            let cfg = TrainConfig {
                iterations: iters,
                group_size: group,
                seed,
                ..TrainConfig::default()
            };
            let report = toy_train(&tasks, &registry, &cfg)?;
            fs::write(&out, report.to_csv())
                .with_context(|| format!("writing {}", out.display()))?;
            let rewards = report.mean_rewards();
            eprintln!(
                "{} iterations, mean reward {:.4} -> {:.4}, decile gain {:.4}",
                rewards.len(),
                rewards.first().copied().unwrap_or_default(),
                rewards.last().copied().unwrap_or_default(),
                report.decile_gain()
            );
            Ok(true)
        }
    }
}
