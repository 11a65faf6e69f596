//! Turn state machine, per-agent observations, transcripts and the
//! model-facing featurization.
//!
//! A [`GameState`] is a fold over [`GameEvent`]s: every public transition
//! builds an event and applies it, so replaying a saved event list through
//! [`GameState::replay`] reconstructs the same state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{is_visible, sample_turn_frames, Frame, FrameKind, Point, View};
use crate::scenario::{validate_scenario, Scenario};
use crate::{EntityId, Seat};

pub const DEFAULT_MAX_UTTERANCE_CHARS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// The turn's frames are still playing; no chat or selection yet.
    Animating,
    /// Chat and (revocable) selection.
    Dialogue,
    /// Both selections are in and the turn awaits resolution.
    Resolved,
    Ended,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Animating => "animating",
            Phase::Dialogue => "dialogue",
            Phase::Resolved => "resolved",
            Phase::Ended => "ended",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnCategory {
    First,
    /// The previous target is still selectable by both agents.
    LaterStay,
    /// The previous target left at least one agent's view.
    LaterLeave,
}

impl TurnCategory {
    pub const ALL: [TurnCategory; 3] = [TurnCategory::First, TurnCategory::LaterStay, TurnCategory::LaterLeave];

    pub fn label(self) -> &'static str {
        match self {
            TurnCategory::First => "first",
            TurnCategory::LaterStay => "later_stay",
            TurnCategory::LaterLeave => "later_leave",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GameError {
    #[error("action not allowed in phase {0}")]
    Phase(Phase),
    #[error("utterance is empty")]
    EmptyUtterance,
    #[error("utterance has {len} characters, limit is {max}")]
    UtteranceTooLong { len: usize, max: usize },
    #[error("entity {entity} is not selectable by {agent}")]
    IllegalSelection { agent: Seat, entity: EntityId },
    #[error("turn cannot be resolved: selection missing from {0}")]
    MissingSelection(Seat),
    #[error("turn {requested} is not available (current turn {current})")]
    FutureTurn { requested: usize, current: usize },
    #[error("turn {0} is out of range")]
    TurnOutOfRange(usize),
    #[error("turn {0} needs a previous target")]
    NoPreviousTarget(usize),
    #[error("scenario is not valid: {0} violations")]
    InvalidScenario(usize),
    #[error("event for turn {event} applied during turn {current}")]
    TurnMismatch { event: usize, current: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    pub max_utterance_chars: usize,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig { max_utterance_chars: DEFAULT_MAX_UTTERANCE_CHARS }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub seq: u64,
    pub speaker: Seat,
    pub turn: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub turn: usize,
    /// Indexed by [`Seat::index`].
    pub selections: [EntityId; 2],
    pub success: bool,
    pub shared_count: usize,
    pub category: TurnCategory,
}

/// Everything that can happen to a game.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum GameEvent {
    /// The turn's animation (view shift and movement) finished playing.
    AnimationDone { turn: usize },
    Utterance { agent: Seat, turn: usize, text: String },
    Selection { agent: Seat, turn: usize, entity: EntityId },
    Resolution { turn: usize },
}

impl GameEvent {
    pub fn turn(&self) -> usize {
        match self {
            GameEvent::AnimationDone { turn }
            | GameEvent::Utterance { turn, .. }
            | GameEvent::Selection { turn, .. }
            | GameEvent::Resolution { turn } => *turn,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameState {
    scenario: Arc<Scenario>,
    config: GameConfig,
    turn: usize,
    phase: Phase,
    transcript: Vec<Utterance>,
    pending: [Option<EntityId>; 2],
    outcomes: Vec<TurnOutcome>,
    lst: usize,
    previous_target: Option<EntityId>,
    events: Vec<GameEvent>,
    /// Cached `selectable[seat][k-1]`.
    selectable: [Vec<BTreeSet<EntityId>>; 2],
}

impl GameState {
    /// Starts a game after checking the scenario.
    pub fn new(scenario: Arc<Scenario>, config: GameConfig) -> Result<Self, GameError> {
        let report = validate_scenario(&scenario);
        if !report.is_empty() {
            return Err(GameError::InvalidScenario(report.violations.len()));
        }
        Ok(Self::new_unchecked(scenario, config))
    }

    /// Starts a game on a scenario the caller has already validated.
    pub fn new_unchecked(scenario: Arc<Scenario>, config: GameConfig) -> Self {
        let selectable = Seat::BOTH.map(|seat| (1..=scenario.num_turns()).map(|k| scenario.visible_at(seat, k)).collect());
        GameState {
            scenario,
            config,
            turn: 1,
            phase: Phase::Animating,
            transcript: Vec::new(),
            pending: [None, None],
            outcomes: Vec::new(),
            lst: 0,
            previous_target: None,
            events: Vec::new(),
            selectable,
        }
    }

    /// Rebuilds a game by applying `events` in order.
    pub fn replay(scenario: Arc<Scenario>, config: GameConfig, events: &[GameEvent]) -> Result<Self, GameError> {
        let mut g = Self::new_unchecked(scenario, config);
        for e in events {
            g.apply(e.clone())?;
        }
        Ok(g)
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn config(&self) -> GameConfig {
        self.config
    }

    pub fn turn(&self) -> usize {
        self.turn
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn lst(&self) -> usize {
        self.lst
    }

    pub fn previous_target(&self) -> Option<EntityId> {
        self.previous_target
    }

    pub fn transcript(&self) -> &[Utterance] {
        &self.transcript
    }

    pub fn outcomes(&self) -> &[TurnOutcome] {
        &self.outcomes
    }

    pub fn events(&self) -> &[GameEvent] {
        &self.events
    }

    pub fn pending(&self, agent: Seat) -> Option<EntityId> {
        self.pending[agent.index()]
    }

    pub fn is_over(&self) -> bool {
        self.phase == Phase::Ended
    }

    /// Turns played to resolution, including a failed last one.
    pub fn completed_turns(&self) -> usize {
        self.outcomes.len()
    }

    /// Entities `agent` may select at the end of turn `k`.
    pub fn selectable(&self, agent: Seat, k: usize) -> &BTreeSet<EntityId> {
        &self.selectable[agent.index()][k - 1]
    }

    pub fn advance_animation(&mut self) -> Result<(), GameError> {
        self.apply(GameEvent::AnimationDone { turn: self.turn })
    }

    pub fn submit_utterance(&mut self, agent: Seat, text: &str) -> Result<(), GameError> {
        self.apply(GameEvent::Utterance { agent, turn: self.turn, text: text.to_string() })
    }

    pub fn submit_selection(&mut self, agent: Seat, entity: EntityId) -> Result<(), GameError> {
        self.apply(GameEvent::Selection { agent, turn: self.turn, entity })
    }

    pub fn resolve_turn(&mut self) -> Result<&TurnOutcome, GameError> {
        self.apply(GameEvent::Resolution { turn: self.turn })?;
        Ok(self.outcomes.last().expect("resolution records an outcome"))
    }

    /// Applies one event, leaving the state untouched on error.
    pub fn apply(&mut self, event: GameEvent) -> Result<(), GameError> {
        if event.turn() != self.turn {
            return Err(GameError::TurnMismatch { event: event.turn(), current: self.turn });
        }
        match &event {
            GameEvent::AnimationDone { .. } => {
                self.expect_phase(Phase::Animating)?;
                self.phase = Phase::Dialogue;
            }
            GameEvent::Utterance { agent, text, .. } => {
                self.expect_phase(Phase::Dialogue)?;
                if text.trim().is_empty() {
                    return Err(GameError::EmptyUtterance);
                }
                let len = text.chars().count();
                if len > self.config.max_utterance_chars {
                    return Err(GameError::UtteranceTooLong { len, max: self.config.max_utterance_chars });
                }
                self.transcript.push(Utterance {
                    seq: self.transcript.len() as u64,
                    speaker: *agent,
                    turn: self.turn,
                    text: text.clone(),
                });
            }
            GameEvent::Selection { agent, entity, .. } => {
                self.expect_phase(Phase::Dialogue)?;
                if !self.selectable(*agent, self.turn).contains(entity) {
                    return Err(GameError::IllegalSelection { agent: *agent, entity: *entity });
                }
                self.pending[agent.index()] = Some(*entity);
                if self.pending.iter().all(Option::is_some) {
                    self.phase = Phase::Resolved;
                }
            }
            GameEvent::Resolution { .. } => {
                if self.phase != Phase::Resolved {
                    if self.phase != Phase::Dialogue {
                        return Err(GameError::Phase(self.phase));
                    }
                    let missing = Seat::BOTH.into_iter().find(|s| self.pending[s.index()].is_none()).expect("a selection is missing");
                    return Err(GameError::MissingSelection(missing));
                }
                let selections = [self.pending[0].expect("both pending"), self.pending[1].expect("both pending")];
                let category = classify_turn(&self.scenario, self.turn, self.previous_target)?;
                let success = selections[0] == selections[1];
                self.outcomes.push(TurnOutcome {
                    turn: self.turn,
                    selections,
                    success,
                    shared_count: self.scenario.shared_at(self.turn).len(),
                    category,
                });
                self.pending = [None, None];
                if success {
                    self.lst += 1;
                    self.previous_target = Some(selections[0]);
                    if self.turn < self.scenario.num_turns() {
                        self.turn += 1;
                        self.phase = Phase::Animating;
                    } else {
                        self.phase = Phase::Ended;
                    }
                } else {
                    self.previous_target = None;
                    self.phase = Phase::Ended;
                }
            }
        }
        self.events.push(event);
        Ok(())
    }

    fn expect_phase(&self, phase: Phase) -> Result<(), GameError> {
        if self.phase == phase {
            Ok(())
        } else {
            Err(GameError::Phase(self.phase))
        }
    }

    /// What `agent` saw during `turn`; earlier turns stay available.
    pub fn observation(&self, agent: Seat, turn: usize) -> Result<Observation, GameError> {
        if turn == 0 || turn > self.turn {
            return Err(GameError::FutureTurn { requested: turn, current: self.turn });
        }
        Ok(observe(&self.scenario, agent, turn))
    }
}

/// Category of turn `k` given the target agreed on in turn `k - 1`.
pub fn classify_turn(scenario: &Scenario, k: usize, previous_target: Option<EntityId>) -> Result<TurnCategory, GameError> {
    if k == 0 || k > scenario.num_turns() {
        return Err(GameError::TurnOutOfRange(k));
    }
    if k == 1 {
        return Ok(TurnCategory::First);
    }
    let target = previous_target.ok_or(GameError::NoPreviousTarget(k))?;
    let stays = Seat::BOTH.iter().all(|&s| scenario.visible_at(s, k).contains(&target));
    Ok(if stays { TurnCategory::LaterStay } else { TurnCategory::LaterLeave })
}

/// How an entity looks; constant over the game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntityLook {
    pub color: f64,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedFrame {
    pub kind: FrameKind,
    pub view: View,
    /// Entities close enough to the view to be drawn, even partly.
    pub placements: BTreeMap<EntityId, Point>,
}

/// One agent's record of one turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub agent: Seat,
    pub turn: usize,
    /// State before the turn's first frame.
    pub start: ObservedFrame,
    /// 10 movement frames, preceded by 5 shift frames after turn 1.
    pub frames: Vec<ObservedFrame>,
    pub selectable_ids: Vec<EntityId>,
    /// What this agent could select at the previous selection timestep.
    pub previous_selectable: Vec<EntityId>,
    pub looks: BTreeMap<EntityId, EntityLook>,
}

impl Observation {
    pub fn last_frame(&self) -> &ObservedFrame {
        self.frames.last().expect("observations carry frames")
    }

    /// Entities visible (center in view) in at least one frame.
    pub fn observed_ids(&self) -> Vec<EntityId> {
        let mut ids: BTreeSet<EntityId> = BTreeSet::new();
        for f in std::iter::once(&self.start).chain(&self.frames) {
            ids.extend(f.placements.iter().filter(|(_, p)| is_visible(**p, &f.view)).map(|(id, _)| *id));
        }
        ids.into_iter().collect()
    }

    /// Position of `id` at the start and end of the turn, when drawn.
    pub fn endpoints(&self, id: EntityId) -> Option<(Point, Point)> {
        Some((*self.start.placements.get(&id)?, *self.last_frame().placements.get(&id)?))
    }
}

/// Builds `agent`'s observation of `turn` from its own views only.
pub fn observe(scenario: &Scenario, agent: Seat, turn: usize) -> Observation {
    let margin = scenario.config.size.hi();
    let draw = |view: View, positions: &BTreeMap<EntityId, Point>| -> BTreeMap<EntityId, Point> {
        positions
            .iter()
            .filter(|(_, p)| p.distance(view.center) <= view.radius() + margin)
            .map(|(id, p)| (*id, *p))
            .collect()
    };
    let moves = scenario.turn_moves(turn);
    let view = scenario.view(agent, turn);
    let before = if turn == 1 { view } else { scenario.view(agent, turn - 1) };
    let start_positions: BTreeMap<EntityId, Point> = moves.iter().map(|(id, t)| (*id, t.p0)).collect();
    let raw = sample_turn_frames(turn, &moves, scenario.shift(agent, turn)).expect("scenario turns are well formed");
    let frames: Vec<ObservedFrame> = raw
        .iter()
        .map(|f: &Frame| {
            let v = if f.kind == FrameKind::Shift && f.step < crate::geometry::SHIFT_FRAMES {
                View::new(before.center + f.view_offset, view.diameter)
            } else {
                view
            };
            ObservedFrame { kind: f.kind, view: v, placements: draw(v, &f.positions) }
        })
        .collect();
    let start = ObservedFrame { kind: FrameKind::Shift, view: before, placements: draw(before, &start_positions) };
    let mut looks = BTreeMap::new();
    for f in std::iter::once(&start).chain(&frames) {
        for id in f.placements.keys() {
            let e = &scenario.entities[id.0 as usize];
            looks.insert(*id, EntityLook { color: e.color, size: e.size });
        }
    }
    let previous_selectable = if turn == 1 { Vec::new() } else { scenario.visible_at(agent, turn - 1).into_iter().collect() };
    Observation {
        agent,
        turn,
        start,
        frames,
        selectable_ids: scenario.visible_at(agent, turn).into_iter().collect(),
        previous_selectable,
        looks,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    /// Every entity observed at some frame of the turn.
    All,
    /// The selectable entities at the end of the turn.
    Selectable,
}

/// Per-frame entity vectors, meta bits and pairwise differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub entity_ids: Vec<EntityId>,
    /// `vectors[f][i]`: (color, size, x, y), location in view units.
    pub vectors: Vec<Vec<[f64; 4]>>,
    /// `visible[f][i]`: center inside the frame's view.
    pub visible: Vec<Vec<u8>>,
    /// Per entity: (visible at t_k, visible at t_{k-1}, previous target).
    pub meta: Vec<[u8; 3]>,
    /// `differences[f][i][j] = vectors[f][i] - vectors[f][j]`.
    pub differences: Vec<Vec<Vec<[f64; 4]>>>,
}

impl FeatureSet {
    /// Full four-bit meta vector for entity `i` in frame `f`.
    pub fn meta_bits(&self, f: usize, i: usize) -> [u8; 4] {
        let m = self.meta[i];
        [self.visible[f][i], m[0], m[1], m[2]]
    }
}

pub fn featurize(obs: &Observation, previous_target: Option<EntityId>, subset: FeatureSubset) -> FeatureSet {
    let ids = match subset {
        FeatureSubset::All => obs.observed_ids(),
        FeatureSubset::Selectable => obs.selectable_ids.clone(),
    };
    let mut vectors = Vec::with_capacity(obs.frames.len());
    let mut visible = Vec::with_capacity(obs.frames.len());
    for f in &obs.frames {
        let r = f.view.radius();
        let mut row = Vec::with_capacity(ids.len());
        let mut vis = Vec::with_capacity(ids.len());
        for id in &ids {
            let look = obs.looks[id];
            match f.placements.get(id).filter(|p| is_visible(**p, &f.view)) {
                Some(p) => {
                    let rel = (*p - f.view.center) * (1.0 / r);
                    row.push([look.color, look.size, rel.x, rel.y]);
                    vis.push(1);
                }
                None => {
                    row.push([look.color, look.size, 0.0, 0.0]);
                    vis.push(0);
                }
            }
        }
        vectors.push(row);
        visible.push(vis);
    }
    let meta = ids
        .iter()
        .map(|id| {
            [
                obs.selectable_ids.contains(id) as u8,
                obs.previous_selectable.contains(id) as u8,
                (previous_target == Some(*id)) as u8,
            ]
        })
        .collect();
    let differences = vectors
        .iter()
        .map(|row| {
            row.iter()
                .map(|a| row.iter().map(|b| [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]).collect())
                .collect()
        })
        .collect();
    FeatureSet { entity_ids: ids, vectors, visible, meta, differences }
}
