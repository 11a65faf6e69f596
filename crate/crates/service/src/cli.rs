//! The `seqref` command line.

use std::collections::VecDeque;
use std::io::{BufReader, Write as _};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use seqref_core::agents::{run_selfplay, PolicySpec, SelfplayError};
use seqref_core::analytics::{
    ingest, parse_tables, render_tables, write_reports, AnalyticsError, Corpus, Format, JsonLinesAdapter,
    ModifierLexicon, ReportInputs, TokenModel,
};
use seqref_core::scenario::{generate_scenario, validate_scenario, Scenario, ScenarioConfig, ScenarioError};
use seqref_core::transcript::{read_games, records_for, GameLog, Players, TranscriptError};
use thiserror::Error;

use crate::hub::{FileStore, HubConfig, Pairing, ScenarioQueue, ScenarioSource, SeededScenarios, SessionHub};
use crate::replay::{export_replay, ReplayError, ReplayFormat};
use crate::server::{bind, now_ms, serve, ServeError, Shared};

#[derive(Debug, Parser)]
#[command(name = "seqref", version, about = "Sequential reference game: scenarios, selfplay, server and reports")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorpusFormat {
    /// Game transcripts (JSON lines), a file or a directory of `.jsonl` files.
    Native,
    /// One dialogue object per line.
    CorpusJsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReplayKind {
    Json,
    Svg,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate scenarios for consecutive seeds.
    Generate {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long, env = "SEQREF_SCENARIO_DIR")]
        out: PathBuf,
    },
    /// Check scenario files against every generation constraint.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Play scripted agents against each other and report success rates.
    Selfplay {
        #[arg(long)]
        agent_a: String,
        #[arg(long)]
        agent_b: String,
        #[arg(long)]
        games: usize,
        /// First agent seed; game i uses seed + i.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TSV report path.
        #[arg(long)]
        report: PathBuf,
        /// Directory of scenario files to cycle through.
        #[arg(long, env = "SEQREF_SCENARIO_DIR")]
        scenarios: Option<PathBuf>,
        /// Without --scenarios, how many scenarios to generate (seeds seed..).
        #[arg(long, default_value_t = 200)]
        pool: usize,
        /// Also write every game as transcript JSON lines.
        #[arg(long)]
        transcripts: Option<PathBuf>,
    },
    /// Run the game server.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory of scenario files; scenarios are generated when absent.
        #[arg(long, env = "SEQREF_SCENARIO_DIR")]
        scenarios: Option<PathBuf>,
        /// First seed for generated scenarios.
        #[arg(long, default_value_t = 1)]
        scenario_seed: u64,
        #[arg(long, env = "SEQREF_LOG_DIR", default_value = "logs")]
        logs: PathBuf,
        /// `humans`, or a policy name (`template`, `random`) for human-bot sessions.
        #[arg(long, default_value = "humans")]
        pairing: String,
    },
    /// Compute corpus statistics tables.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "2,4,5,6")]
        tables: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "native")]
        format: CorpusFormat,
        /// Second corpus for vocabulary overlap.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        rare_threshold: u64,
        /// Keep sessions that ended by inactivity.
        #[arg(long)]
        include_abandoned: bool,
    },
    /// Export replays of recorded games.
    ExportReplay {
        #[arg(long)]
        game: PathBuf,
        #[arg(long, value_enum)]
        format: ReplayKind,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Scenario file the transcript must match.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Only this game from a multi-game file.
        #[arg(long)]
        game_id: Option<String>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Scenario { path: PathBuf, source: ScenarioError },
    #[error("seed {seed}: {source}")]
    Generate { seed: u64, source: ScenarioError },
    #[error("{path}: {source}")]
    Transcript { path: PathBuf, source: TranscriptError },
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Selfplay(#[from] SelfplayError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Serve(#[from] ServeError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Files in `dir` with extension `ext`, sorted by name.
fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_at(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    out.sort();
    Ok(out)
}

fn load_scenarios(dir: &Path) -> Result<Vec<Arc<Scenario>>, CliError> {
    files_with_ext(dir, "json")?
        .into_iter()
        .map(|p| Scenario::load(&p).map(Arc::new).map_err(|source| CliError::Scenario { path: p, source }))
        .collect()
}

/// Reads every game from a transcript file or a directory of them.
pub fn load_games(path: &Path) -> Result<Vec<GameLog>, CliError> {
    let files = if path.is_dir() { files_with_ext(path, "jsonl")? } else { vec![path.to_path_buf()] };
    let mut games = Vec::new();
    for f in files {
        let reader = BufReader::new(std::fs::File::open(&f).map_err(io_at(&f))?);
        games.extend(read_games(reader).map_err(|source| CliError::Transcript { path: f.clone(), source })?);
    }
    Ok(games)
}

fn is_abandoned(log: &GameLog) -> bool {
    log.footer.as_ref().is_some_and(|f| f.payload.get("status").and_then(|s| s.as_str()) == Some("abandoned"))
}

fn load_corpus(path: &Path, format: CorpusFormat, include_abandoned: bool) -> Result<Corpus, CliError> {
    match format {
        CorpusFormat::Native => {
            let games: Vec<GameLog> =
                load_games(path)?.into_iter().filter(|g| include_abandoned || !is_abandoned(g)).collect();
            Ok(Corpus::from_logs(&games)?)
        }
        CorpusFormat::CorpusJsonl => Ok(ingest(path, Format::Adapter(&JsonLinesAdapter))?),
    }
}

fn policy(name: &str) -> Result<PolicySpec, CliError> {
    name.parse().map_err(CliError::Usage)
}

pub fn parse_pairing(s: &str) -> Result<Pairing, CliError> {
    match s {
        "humans" | "human" => Ok(Pairing::Humans),
        other => Ok(Pairing::Bot(policy(other.strip_prefix("bot:").unwrap_or(other))?)),
    }
}

/// Runs one command, writing human-readable output to `out`. Returns
/// whether the command succeeded.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<bool, CliError> {
    let stdout = Path::new("<stdout>");
    match cli.command {
        Command::Generate { seed, count, out: dir } => {
            std::fs::create_dir_all(&dir).map_err(io_at(&dir))?;
            let config = ScenarioConfig::default();
            for s in seed..seed + count {
                let scenario = generate_scenario(s, &config).map_err(|source| CliError::Generate { seed: s, source })?;
                let path = dir.join(format!("scenario_{s}.json"));
                scenario.save(&path).map_err(|source| CliError::Scenario { path: path.clone(), source })?;
                writeln!(out, "{}", path.display()).map_err(io_at(stdout))?;
            }
            Ok(true)
        }
        Command::Validate { files } => {
            let mut ok = true;
            for f in files {
                match Scenario::load(&f) {
                    Err(e) => {
                        ok = false;
                        writeln!(out, "{}: {e}", f.display()).map_err(io_at(stdout))?;
                    }
                    Ok(s) => {
                        let report = validate_scenario(&s);
                        if report.is_empty() {
                            writeln!(out, "{}: ok", f.display()).map_err(io_at(stdout))?;
                        } else {
                            ok = false;
                            writeln!(out, "{}: {} violation(s)", f.display(), report.violations.len())
                                .map_err(io_at(stdout))?;
                            for v in &report.violations {
                                let turn = v.turn.map_or("-".to_string(), |t| t.to_string());
                                let ids: Vec<String> = v.entities.iter().map(|e| e.0.to_string()).collect();
                                writeln!(
                                    out,
                                    "  {:?} turn={turn} entities=[{}] measured={}",
                                    v.constraint,
                                    ids.join(","),
                                    v.measured
                                )
                                .map_err(io_at(stdout))?;
                            }
                        }
                    }
                }
            }
            Ok(ok)
        }
        Command::Selfplay { agent_a, agent_b, games, seed, report, scenarios, pool, transcripts } => {
            let (pa, pb) = (policy(&agent_a)?, policy(&agent_b)?);
            let scenarios = match scenarios {
                Some(dir) => load_scenarios(&dir)?,
                None => {
                    let config = ScenarioConfig::default();
                    (seed..seed + pool.clamp(1, games.max(1)) as u64)
                        .map(|s| {
                            generate_scenario(s, &config)
                                .map(Arc::new)
                                .map_err(|source| CliError::Generate { seed: s, source })
                        })
                        .collect::<Result<_, _>>()?
                }
            };
            let seeds: Vec<u64> = (0..games as u64).map(|i| seed + i).collect();
            let (rep, records) = run_selfplay(&pa, &pb, &scenarios, &seeds)?;
            if let Some(parent) = report.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(io_at(parent))?;
            }
            std::fs::write(&report, rep.to_tsv()).map_err(io_at(&report))?;
            if let Some(path) = transcripts {
                let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(io_at(&path))?);
                let players = Players { a: format!("bot:{agent_a}"), b: format!("bot:{agent_b}") };
                for (i, g) in records.iter().enumerate() {
                    let log = g.to_log(scenarios[i % scenarios.len()].clone(), &format!("selfplay-{i}"), players.clone());
                    for r in records_for(&log)? {
                        writeln!(f, "{}", r.to_line()).map_err(io_at(&path))?;
                    }
                }
                f.flush().map_err(io_at(&path))?;
            }
            writeln!(
                out,
                "{} games, avg LST {:.2}, {} protocol violation(s); report written to {}",
                rep.games,
                rep.avg_lst(),
                rep.violations.len(),
                report.display()
            )
            .map_err(io_at(stdout))?;
            Ok(rep.violations.is_empty())
        }
        Command::Serve { port, host, scenarios, scenario_seed, logs, pairing } => {
            let pairing = parse_pairing(&pairing)?;
            let source: Box<dyn ScenarioSource> = match scenarios {
                Some(dir) => {
                    let list = load_scenarios(&dir)?;
                    if list.is_empty() {
                        return Err(CliError::Usage(format!("no scenario files in {}", dir.display())));
                    }
                    Box::new(ScenarioQueue(VecDeque::from(list)))
                }
                None => Box::new(SeededScenarios { next_seed: scenario_seed, remaining: None, config: ScenarioConfig::default() }),
            };
            std::fs::create_dir_all(&logs).map_err(io_at(&logs))?;
            let previous = load_games(&logs)?;
            let config = HubConfig { pairing, ..HubConfig::default() };
            let hub = SessionHub::recover(config, source, Box::new(FileStore { dir: logs.clone() }), &previous, now_ms())
                .map_err(|e| CliError::Usage(format!("recovering {}: {e}", logs.display())))?;
            let addr: SocketAddr =
                format!("{host}:{port}").parse().map_err(|e| CliError::Usage(format!("bad address {host}:{port}: {e}")))?;
            let runtime = tokio::runtime::Runtime::new().map_err(io_at(Path::new("<runtime>")))?;
            runtime.block_on(async {
                let listener = bind(addr).await?;
                tracing::info!(%addr, resumed = hub.session_ids().len(), "listening");
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                };
                serve(listener, Shared::new(hub), Duration::from_secs(5), shutdown).await
            })?;
            Ok(true)
        }
        Command::Stats { corpus, tables, out: dir, format, compare, rare_threshold, include_abandoned } => {
            let tables = parse_tables(&tables)?;
            let main = load_corpus(&corpus, format, include_abandoned)?;
            let other = compare.map(|p| load_corpus(&p, format, include_abandoned)).transpose()?;
            let lexicon = ModifierLexicon::bundled();
            let inputs = ReportInputs {
                corpus: &main,
                compare: other.as_ref(),
                token_model: TokenModel { rare_threshold },
                lexicon: &lexicon,
            };
            let rendered = render_tables(&inputs, &tables)?;
            write_reports(&dir, &rendered)?;
            for r in &rendered {
                writeln!(out, "{}", dir.join(format!("{}.tsv", r.stem)).display()).map_err(io_at(stdout))?;
            }
            Ok(true)
        }
        Command::ExportReplay { game, format, out: dir, scenario, game_id } => {
            let scenario = scenario
                .map(|p| Scenario::load(&p).map_err(|source| CliError::Scenario { path: p, source }))
                .transpose()?;
            let games: Vec<GameLog> =
                load_games(&game)?.into_iter().filter(|g| game_id.as_ref().is_none_or(|id| &g.game_id == id)).collect();
            if games.is_empty() {
                return Err(CliError::Usage(format!("{}: no games to export", game.display())));
            }
            let format = match format {
                ReplayKind::Json => ReplayFormat::Json,
                ReplayKind::Svg => ReplayFormat::Svg,
            };
            std::fs::create_dir_all(&dir).map_err(io_at(&dir))?;
            for g in &games {
                for (name, text) in export_replay(g, scenario.as_ref(), format)? {
                    let path = dir.join(name);
                    std::fs::write(&path, text).map_err(io_at(&path))?;
                    writeln!(out, "{}", path.display()).map_err(io_at(stdout))?;
                }
            }
            Ok(true)
        }
    }
}

impl From<seqref_core::game::GameError> for CliError {
    fn from(e: seqref_core::game::GameError) -> Self {
        CliError::Replay(ReplayError::Game(e))
    }
}
