//! JSON-lines game transcripts.
//!
//! One record per line: `{seq, kind, agent?, turn, payload, wallclock}`.
//! A file may hold several games; each starts with a `start` record that
//! embeds the scenario, so a transcript alone is enough to replay a game.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::canonical::to_canonical_line;
use crate::game::{GameConfig, GameError, GameEvent, GameState, TurnOutcome};
use crate::scenario::Scenario;
use crate::{EntityId, Seat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Start,
    Shift,
    Utterance,
    Selection,
    Resolution,
    Footer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub seq: u64,
    pub kind: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<Seat>,
    pub turn: usize,
    pub payload: Value,
    /// Milliseconds since the Unix epoch.
    pub wallclock: u64,
}

impl TranscriptRecord {
    pub fn to_line(&self) -> String {
        to_canonical_line(self).expect("records serialize")
    }
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: {source}")]
    Replay { line: usize, source: GameError },
    #[error("line {line}: recorded resolution disagrees with replay")]
    Mismatch { line: usize },
    #[error("transcript holds no game")]
    Empty,
    #[error("transcript I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Names of the two players, for the record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Players {
    pub a: String,
    pub b: String,
}

/// Appends records for one game.
#[derive(Debug, Clone)]
pub struct TranscriptWriter {
    next_seq: u64,
    records: Vec<TranscriptRecord>,
}

impl TranscriptWriter {
    pub fn start(game_id: &str, scenario: &Scenario, config: GameConfig, players: &Players, wallclock: u64) -> Self {
        let payload = json!({
            "game_id": game_id,
            "scenario": scenario,
            "config": config,
            "players": players,
        });
        let mut w = TranscriptWriter { next_seq: 0, records: Vec::new() };
        w.push(RecordKind::Start, None, 0, payload, wallclock);
        w
    }

    /// Continues a transcript from records already written.
    pub fn resume(records: Vec<TranscriptRecord>) -> Self {
        let next_seq = records.last().map_or(0, |r| r.seq + 1);
        TranscriptWriter { next_seq, records }
    }

    fn push(&mut self, kind: RecordKind, agent: Option<Seat>, turn: usize, payload: Value, wallclock: u64) -> &TranscriptRecord {
        self.records.push(TranscriptRecord { seq: self.next_seq, kind, agent, turn, payload, wallclock });
        self.next_seq += 1;
        self.records.last().expect("just pushed")
    }

    /// Records `event`, which has just been applied to `after`.
    pub fn event(&mut self, event: &GameEvent, after: &GameState, wallclock: u64) -> &TranscriptRecord {
        match event {
            GameEvent::AnimationDone { turn } => {
                let frames = if *turn == 1 { 10 } else { 15 };
                self.push(RecordKind::Shift, None, *turn, json!({ "frames": frames }), wallclock)
            }
            GameEvent::Utterance { agent, turn, text } => {
                self.push(RecordKind::Utterance, Some(*agent), *turn, json!({ "text": text }), wallclock)
            }
            GameEvent::Selection { agent, turn, entity } => {
                self.push(RecordKind::Selection, Some(*agent), *turn, json!({ "entity": entity }), wallclock)
            }
            GameEvent::Resolution { turn } => {
                let outcome = after.outcomes().last().expect("resolution leaves an outcome");
                let payload = resolution_payload(outcome, after.lst());
                self.push(RecordKind::Resolution, None, *turn, payload, wallclock)
            }
        }
    }

    pub fn footer(&mut self, turn: usize, payload: Value, wallclock: u64) -> &TranscriptRecord {
        self.push(RecordKind::Footer, None, turn, payload, wallclock)
    }

    pub fn records(&self) -> &[TranscriptRecord] {
        &self.records
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        for r in &self.records {
            writeln!(out, "{}", r.to_line())?;
        }
        Ok(())
    }
}

fn resolution_payload(o: &TurnOutcome, lst: usize) -> Value {
    json!({
        "selections": { "A": o.selections[0], "B": o.selections[1] },
        "success": o.success,
        "lst": lst,
        "shared_count": o.shared_count,
        "category": o.category,
    })
}

/// A parsed game: its scenario, events and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct GameLog {
    pub game_id: String,
    pub scenario: Arc<Scenario>,
    pub config: GameConfig,
    pub players: Players,
    pub events: Vec<GameEvent>,
    pub footer: Option<TranscriptRecord>,
    pub started_at: u64,
    /// Wallclock of each event, parallel to `events`.
    pub wallclocks: Vec<u64>,
}

impl GameLog {
    pub fn replay(&self) -> Result<GameState, GameError> {
        GameState::replay(self.scenario.clone(), self.config, &self.events)
    }
}

fn field<'a>(r: &'a TranscriptRecord, key: &str, line: usize) -> Result<&'a Value, TranscriptError> {
    r.payload.get(key).ok_or_else(|| TranscriptError::Schema { line, message: format!("{:?} record lacks `{key}`", r.kind) })
}

fn decode<T: serde::de::DeserializeOwned>(v: &Value, line: usize) -> Result<T, TranscriptError> {
    serde_json::from_value(v.clone()).map_err(|e| TranscriptError::Schema { line, message: e.to_string() })
}

fn agent(r: &TranscriptRecord, line: usize) -> Result<Seat, TranscriptError> {
    r.agent.ok_or_else(|| TranscriptError::Schema { line, message: format!("{:?} record lacks `agent`", r.kind) })
}

/// Parses JSON-lines text into games, replaying each to check that recorded
/// resolutions match the engine. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn read_games(input: impl BufRead) -> Result<Vec<GameLog>, TranscriptError> {
    let mut games: Vec<(GameLog, GameState)> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TranscriptRecord =
            serde_json::from_str(&line).map_err(|e| TranscriptError::Schema { line: line_no, message: e.to_string() })?;
        if r.kind == RecordKind::Start {
            let scenario: Scenario = decode(field(&r, "scenario", line_no)?, line_no)?;
            let config: GameConfig = decode(field(&r, "config", line_no)?, line_no)?;
            let scenario = Arc::new(scenario);
            let log = GameLog {
                game_id: decode(field(&r, "game_id", line_no)?, line_no)?,
                scenario: scenario.clone(),
                config,
                players: decode(field(&r, "players", line_no)?, line_no)?,
                events: Vec::new(),
                footer: None,
                started_at: r.wallclock,
                wallclocks: Vec::new(),
            };
            games.push((log, GameState::new_unchecked(scenario, config)));
            continue;
        }
        let Some((log, state)) = games.last_mut() else {
            return Err(TranscriptError::Schema { line: line_no, message: "record before any start record".into() });
        };
        let event = match r.kind {
            RecordKind::Start => unreachable!(),
            RecordKind::Footer => {
                log.footer = Some(r.clone());
                continue;
            }
            RecordKind::Shift => GameEvent::AnimationDone { turn: r.turn },
            RecordKind::Utterance => GameEvent::Utterance {
                agent: agent(&r, line_no)?,
                turn: r.turn,
                text: decode(field(&r, "text", line_no)?, line_no)?,
            },
            RecordKind::Selection => GameEvent::Selection {
                agent: agent(&r, line_no)?,
                turn: r.turn,
                entity: decode::<EntityId>(field(&r, "entity", line_no)?, line_no)?,
            },
            RecordKind::Resolution => GameEvent::Resolution { turn: r.turn },
        };
        state.apply(event.clone()).map_err(|source| TranscriptError::Replay { line: line_no, source })?;
        if r.kind == RecordKind::Resolution {
            let expected = resolution_payload(state.outcomes().last().expect("resolved"), state.lst());
            if expected != r.payload {
                return Err(TranscriptError::Mismatch { line: line_no });
            }
        }
        log.events.push(event);
        log.wallclocks.push(r.wallclock);
    }
    if games.is_empty() {
        return Err(TranscriptError::Empty);
    }
    Ok(games.into_iter().map(|(log, _)| log).collect())
}

/// Renders a finished game as transcript lines with a fixed clock.
pub fn records_for(log: &GameLog) -> Result<Vec<TranscriptRecord>, GameError> {
    let mut w = TranscriptWriter::start(&log.game_id, &log.scenario, log.config, &log.players, log.started_at);
    let mut state = GameState::new_unchecked(log.scenario.clone(), log.config);
    for (e, clock) in log.events.iter().zip(&log.wallclocks) {
        state.apply(e.clone())?;
        w.event(e, &state, *clock);
    }
    if let Some(f) = &log.footer {
        w.footer(f.turn, f.payload.clone(), f.wallclock);
    }
    Ok(w.records)
}
