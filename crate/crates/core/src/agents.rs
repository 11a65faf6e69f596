//! Scripted players and evaluation harnesses.
//!
//! Two policies ship here: a uniform-random baseline and a template agent
//! that describes dots through a small closed grammar. [`run_selfplay`]
//! pits two policies against each other over a set of scenarios and
//! [`target_selection_eval`] scores a [`Predictor`] on recorded games.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{observe, GameConfig, GameError, GameEvent, GameState, Observation, TurnCategory, TurnOutcome, Utterance};
use crate::geometry::Point;
use crate::scenario::Scenario;
use crate::transcript::GameLog;
use crate::{EntityId, Seat};

/// A player. Memory lives inside the policy and is reset by `begin_game`.
pub trait AgentPolicy {
    fn name(&self) -> &str;
    fn begin_game(&mut self, seat: Seat, seed: u64);
    /// Called once per turn after the animation; returns opening utterances.
    fn on_observation(&mut self, obs: &Observation) -> Vec<String>;
    /// Returns replies, possibly none.
    fn on_partner_utterance(&mut self, text: &str) -> Vec<String>;
    fn decide_selection(&mut self) -> EntityId;
    fn on_turn_result(&mut self, outcome: &TurnOutcome);
    fn previous_target(&self) -> Option<EntityId>;
}

/// Seeds a per-seat stream so the two copies of a policy never share draws.
fn seat_rng(seed: u64, seat: Seat) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + seat.index() as u64);
    rng
}

/// Silent baseline that picks uniformly among its selectable dots.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    rng: ChaCha8Rng,
    selectable: Vec<EntityId>,
    previous: Option<EntityId>,
}

pub fn random_agent() -> RandomAgent {
    RandomAgent { rng: ChaCha8Rng::seed_from_u64(0), selectable: Vec::new(), previous: None }
}

impl AgentPolicy for RandomAgent {
    fn name(&self) -> &str {
        "random"
    }

    fn begin_game(&mut self, seat: Seat, seed: u64) {
        self.rng = seat_rng(seed, seat);
        self.selectable.clear();
        self.previous = None;
    }

    fn on_observation(&mut self, obs: &Observation) -> Vec<String> {
        self.selectable = obs.selectable_ids.clone();
        Vec::new()
    }

    fn on_partner_utterance(&mut self, _text: &str) -> Vec<String> {
        Vec::new()
    }

    fn decide_selection(&mut self) -> EntityId {
        *self.selectable.choose(&mut self.rng).expect("observation lists selectable dots")
    }

    fn on_turn_result(&mut self, outcome: &TurnOutcome) {
        self.previous = outcome.success.then_some(outcome.selections[0]);
    }

    fn previous_target(&self) -> Option<EntityId> {
        self.previous
    }
}

macro_rules! vocab {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $word:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn word(self) -> &'static str {
                match self { $($name::$variant => $word),+ }
            }

            pub fn from_word(w: &str) -> Option<Self> {
                match w { $($word => Some($name::$variant),)+ _ => None }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.word())
            }
        }
    };
}

vocab!(SizeTerm { Small => "small", Medium => "medium", Large => "large" });
vocab!(ShadeTerm { Dark => "dark", Gray => "gray", Light => "light" });
vocab!(
    /// Octant of net displacement, y pointing up.
    DirectionTerm {
        East => "east", Northeast => "northeast", North => "north", Northwest => "northwest",
        West => "west", Southwest => "southwest", South => "south", Southeast => "southeast",
    }
);
vocab!(SpeedTerm { Slow => "slowly", Steady => "steadily", Fast => "quickly" });
vocab!(
    /// Cell of a 3x3 grid over the view's bounding square.
    PositionTerm {
        TopLeft => "top left", Top => "top", TopRight => "top right",
        Left => "left", Middle => "middle", Right => "right",
        BottomLeft => "bottom left", Bottom => "bottom", BottomRight => "bottom right",
    }
);
vocab!(PrevRelation { Same => "same as before", Near => "near the previous one", Gone => "with the previous one gone" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Descriptor {
    pub size: SizeTerm,
    pub shade: ShadeTerm,
    pub direction: DirectionTerm,
    pub speed: SpeedTerm,
    pub position: PositionTerm,
    pub prev: Option<PrevRelation>,
}

impl Descriptor {
    /// Number of terms on which the two agree. `prev` counts only when both carry one.
    pub fn agreement(&self, other: &Descriptor) -> usize {
        [
            self.size == other.size,
            self.shade == other.shade,
            self.direction == other.direction,
            self.speed == other.speed,
            self.position == other.position,
            self.prev.is_some() && self.prev == other.prev,
        ]
        .iter()
        .filter(|b| **b)
        .count()
    }

    pub fn distance(&self, other: &Descriptor) -> usize {
        5 + usize::from(self.prev.is_some() || other.prev.is_some()) - self.agreement(other)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{} {} dot moving {} {}, ending at {}",
            self.size, self.shade, self.direction, self.speed, self.position
        );
        if let Some(p) = self.prev {
            s.push_str(", ");
            s.push_str(p.word());
        }
        s
    }

    pub fn parse(text: &str) -> Option<Descriptor> {
        let (head, rest) = text.split_once(", ending at ")?;
        let (pos, prev) = match rest.split_once(", ") {
            Some((pos, prev)) => (pos, Some(PrevRelation::from_word(prev)?)),
            None => (rest, None),
        };
        let words: Vec<&str> = head.split(' ').collect();
        let [size, shade, "dot", "moving", dir, speed] = words.as_slice() else { return None };
        Some(Descriptor {
            size: SizeTerm::from_word(size)?,
            shade: ShadeTerm::from_word(shade)?,
            direction: DirectionTerm::from_word(dir)?,
            speed: SpeedTerm::from_word(speed)?,
            position: PositionTerm::from_word(pos)?,
            prev,
        })
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Template messages. Each renders to exactly one sentence form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Message {
    Retain,
    RetainToo,
    Gone,
    Propose(Descriptor),
    Confirm,
    Counter(Descriptor),
    Accept,
}

impl Message {
    pub fn render(&self) -> String {
        match self {
            Message::Retain => "i still see the same dot.".into(),
            Message::RetainToo => "me too, same one.".into(),
            Message::Gone => "my previous dot is gone.".into(),
            Message::Propose(d) => format!("do you see a {d}?"),
            Message::Confirm => "yes, selecting it.".into(),
            Message::Counter(d) => format!("no. i have a {d}."),
            Message::Accept => "ok, selecting yours.".into(),
        }
    }

    pub fn parse(text: &str) -> Option<Message> {
        let fixed = [Message::Retain, Message::RetainToo, Message::Gone, Message::Confirm, Message::Accept];
        if let Some(m) = fixed.into_iter().find(|m| m.render() == text) {
            return Some(m);
        }
        if let Some(d) = text.strip_prefix("do you see a ").and_then(|t| t.strip_suffix('?')) {
            return Descriptor::parse(d).map(Message::Propose);
        }
        if let Some(d) = text.strip_prefix("no. i have a ").and_then(|t| t.strip_suffix('.')) {
            return Descriptor::parse(d).map(Message::Counter);
        }
        None
    }
}

fn tercile(rank: usize, n: usize) -> usize {
    (3 * rank / n.max(1)).min(2)
}

/// Ranks `values` ascending (ties by id) and returns each entry's tercile.
fn terciles(values: &[(EntityId, f64)]) -> BTreeMap<EntityId, usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    sorted.iter().enumerate().map(|(r, (id, _))| (*id, tercile(r, values.len()))).collect()
}

pub fn octant(d: Point) -> DirectionTerm {
    let a = d.y.atan2(d.x).rem_euclid(std::f64::consts::TAU);
    let i = ((a / (std::f64::consts::TAU / 8.0)).round() as usize) % 8;
    DirectionTerm::ALL[i]
}

pub fn position_cell(p: Point, view_center: Point, radius: f64) -> PositionTerm {
    let third = |v: f64| {
        if v < -radius / 3.0 {
            0
        } else if v > radius / 3.0 {
            2
        } else {
            1
        }
    };
    let col = third(p.x - view_center.x);
    let row = 2 - third(p.y - view_center.y);
    PositionTerm::ALL[row * 3 + col]
}

/// Observed movement of one dot: net displacement and estimated path length.
fn observed_motion(obs: &Observation, id: EntityId) -> (Point, f64) {
    let track: Vec<Point> = std::iter::once(&obs.start)
        .chain(obs.frames.iter().filter(|f| f.kind == crate::geometry::FrameKind::Movement))
        .map(|f| f.placements.get(&id).copied())
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    if track.len() < 2 {
        return (Point::ORIGIN, 0.0);
    }
    let steps: f64 = track.windows(2).map(|w| w[0].distance(w[1])).sum();
    let per_step = steps / (track.len() - 1) as f64;
    (track[track.len() - 1] - track[0], per_step * crate::geometry::MOVEMENT_FRAMES as f64)
}

/// Describes every selectable dot of `obs`, terciles taken over those dots.
pub fn describe_all(obs: &Observation, previous_target: Option<EntityId>) -> BTreeMap<EntityId, Descriptor> {
    let ids = &obs.selectable_ids;
    let look = |id: &EntityId| obs.looks[id];
    let sizes = terciles(&ids.iter().map(|id| (*id, look(id).size)).collect::<Vec<_>>());
    let shades = terciles(&ids.iter().map(|id| (*id, look(id).color)).collect::<Vec<_>>());
    let motion: BTreeMap<EntityId, (Point, f64)> = ids.iter().map(|id| (*id, observed_motion(obs, *id))).collect();
    let speeds = terciles(&motion.iter().map(|(id, m)| (*id, m.1)).collect::<Vec<_>>());
    let last = obs.last_frame();
    let prev_pos = previous_target.and_then(|p| last.placements.get(&p).copied());
    let nearest_to_prev = previous_target.filter(|p| ids.contains(p)).and_then(|p| {
        let at = prev_pos?;
        ids.iter()
            .filter(|id| **id != p)
            .min_by(|a, b| last.placements[a].distance(at).total_cmp(&last.placements[b].distance(at)).then(a.cmp(b)))
            .copied()
    });
    ids.iter()
        .map(|id| {
            let prev = match previous_target {
                None => None,
                Some(p) if p == *id => Some(PrevRelation::Same),
                Some(p) if !ids.contains(&p) => Some(PrevRelation::Gone),
                Some(_) if nearest_to_prev == Some(*id) => Some(PrevRelation::Near),
                Some(_) => None,
            };
            let d = Descriptor {
                size: SizeTerm::ALL[sizes[id]],
                shade: [ShadeTerm::Dark, ShadeTerm::Gray, ShadeTerm::Light][shades[id]],
                direction: octant(motion[id].0),
                speed: SpeedTerm::ALL[speeds[id]],
                position: position_cell(last.placements[id], last.view.center, last.view.radius()),
                prev,
            };
            (*id, d)
        })
        .collect()
}

/// Describes one selectable dot against the other selectable dots.
pub fn describe(entity: EntityId, obs: &Observation, previous_target: Option<EntityId>) -> Option<Descriptor> {
    describe_all(obs, previous_target).remove(&entity)
}

/// Picks the dot whose nearest distractor is furthest away in descriptor
/// terms; ties go to the larger summed distance, then the smallest id.
fn most_distinctive(ds: &BTreeMap<EntityId, Descriptor>) -> Option<EntityId> {
    let score = |id: &EntityId| {
        let d = &ds[id];
        let others = ds.iter().filter(|(o, _)| *o != id).map(|(_, e)| d.distance(e));
        let min = others.clone().min().unwrap_or(0);
        (min, others.sum::<usize>())
    };
    let mut best: Option<(EntityId, (usize, usize))> = None;
    for id in ds.keys() {
        let s = score(id);
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((*id, s));
        }
    }
    best.map(|(id, _)| id)
}

/// Best match for a heard descriptor among own dots, ties to the smallest id.
fn best_match(ds: &BTreeMap<EntityId, Descriptor>, heard: &Descriptor) -> Option<(EntityId, usize)> {
    let mut best: Option<(EntityId, usize)> = None;
    for (id, d) in ds {
        let s = d.agreement(heard);
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((*id, s));
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateStyle {
    /// Seat that opens each turn.
    pub lead: Seat,
    /// Minimum term agreement for a listener to confirm instead of countering.
    pub confirm_threshold: usize,
    /// Counter-proposals allowed per turn.
    pub counter_rounds: usize,
}

impl Default for TemplateStyle {
    fn default() -> Self {
        TemplateStyle { lead: Seat::A, confirm_threshold: 4, counter_rounds: 1 }
    }
}

#[derive(Debug, Clone, Default)]
struct TurnMemory {
    descriptors: BTreeMap<EntityId, Descriptor>,
    plan: Option<EntityId>,
    proposed: Option<EntityId>,
    counters_left: usize,
}

/// Geometric agent speaking the template grammar.
#[derive(Debug, Clone)]
pub struct TemplateAgent {
    style: TemplateStyle,
    seat: Seat,
    previous: Option<EntityId>,
    turn: TurnMemory,
}

pub fn template_agent(style: TemplateStyle) -> TemplateAgent {
    TemplateAgent { style, seat: Seat::A, previous: None, turn: TurnMemory::default() }
}

impl TemplateAgent {
    fn retains(&self) -> Option<EntityId> {
        self.previous.filter(|p| self.turn.descriptors.contains_key(p))
    }

    fn own_best(&self) -> Option<EntityId> {
        most_distinctive(&self.turn.descriptors)
    }

    fn propose(&mut self) -> Message {
        let c = self.own_best().expect("observation lists selectable dots");
        self.turn.proposed = Some(c);
        self.turn.plan = Some(c);
        Message::Propose(self.turn.descriptors[&c])
    }

    fn answer_proposal(&mut self, heard: &Descriptor) -> Message {
        let (id, score) = best_match(&self.turn.descriptors, heard).expect("observation lists selectable dots");
        if score >= self.style.confirm_threshold || self.turn.counters_left == 0 {
            self.turn.plan = Some(id);
            return Message::Confirm;
        }
        self.turn.counters_left -= 1;
        // Offer something other than the poor match just rejected.
        let mut rest = self.turn.descriptors.clone();
        if rest.len() > 1 {
            rest.remove(&id);
        }
        let c = most_distinctive(&rest).expect("nonempty");
        self.turn.plan = Some(c);
        self.turn.proposed = Some(c);
        Message::Counter(self.turn.descriptors[&c])
    }
}

impl AgentPolicy for TemplateAgent {
    fn name(&self) -> &str {
        "template"
    }

    fn begin_game(&mut self, seat: Seat, _seed: u64) {
        self.seat = seat;
        self.previous = None;
        self.turn = TurnMemory::default();
    }

    fn on_observation(&mut self, obs: &Observation) -> Vec<String> {
        self.turn = TurnMemory {
            descriptors: describe_all(obs, self.previous),
            plan: None,
            proposed: None,
            counters_left: self.style.counter_rounds,
        };
        self.turn.plan = self.retains();
        if self.seat != self.style.lead {
            return Vec::new();
        }
        let m = if self.retains().is_some() { Message::Retain } else { self.propose() };
        vec![m.render()]
    }

    fn on_partner_utterance(&mut self, text: &str) -> Vec<String> {
        let Some(msg) = Message::parse(text) else {
            if self.turn.plan.is_none() {
                self.turn.plan = self.own_best();
            }
            return Vec::new();
        };
        let reply = match msg {
            Message::Retain => match self.retains() {
                Some(p) => {
                    self.turn.plan = Some(p);
                    vec![Message::RetainToo]
                }
                None => vec![Message::Gone, self.propose()],
            },
            Message::Gone => {
                // The partner lost the old target; their proposal follows.
                self.turn.plan = None;
                Vec::new()
            }
            Message::Propose(d) => vec![self.answer_proposal(&d)],
            Message::Counter(d) => {
                self.turn.plan = best_match(&self.turn.descriptors, &d).map(|(id, _)| id);
                vec![Message::Accept]
            }
            Message::Confirm | Message::Accept => {
                if self.turn.proposed.is_some() {
                    self.turn.plan = self.turn.proposed;
                }
                Vec::new()
            }
            Message::RetainToo => Vec::new(),
        };
        reply.iter().map(Message::render).collect()
    }

    fn decide_selection(&mut self) -> EntityId {
        self.turn.plan.or_else(|| self.own_best()).expect("observation lists selectable dots")
    }

    fn on_turn_result(&mut self, outcome: &TurnOutcome) {
        self.previous = outcome.success.then_some(outcome.selections[self.seat.index()]);
    }

    fn previous_target(&self) -> Option<EntityId> {
        self.previous
    }
}

/// Buildable policy description, so the runner can make fresh copies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Random,
    Template(TemplateStyle),
}

impl PolicySpec {
    pub fn build(&self) -> Box<dyn AgentPolicy + Send> {
        match self {
            PolicySpec::Random => Box::new(random_agent()),
            PolicySpec::Template(style) => Box::new(template_agent(*style)),
        }
    }
}

impl std::str::FromStr for PolicySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(PolicySpec::Random),
            "template" => Ok(PolicySpec::Template(TemplateStyle::default())),
            other => Err(format!("unknown policy `{other}` (expected random or template)")),
        }
    }
}

/// Utterances exchanged per turn before both sides are made to select.
pub const UTTERANCE_SOFT_CAP: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolViolation {
    pub seat: Seat,
    pub turn: usize,
    pub entity: Option<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub scenario_seed: u64,
    pub agent_seed: u64,
    pub lst: usize,
    pub outcomes: Vec<TurnOutcome>,
    pub events: Vec<GameEvent>,
    pub violation: Option<ProtocolViolation>,
}

/// Plays one game to the end.
pub fn play_game(
    scenario: Arc<Scenario>,
    a: &mut dyn AgentPolicy,
    b: &mut dyn AgentPolicy,
    seed: u64,
) -> GameRecord {
    let scenario_seed = scenario.seed;
    let mut state = GameState::new_unchecked(scenario, GameConfig::default());
    a.begin_game(Seat::A, seed);
    b.begin_game(Seat::B, seed);
    let mut violation = None;
    'game: while !state.is_over() {
        let k = state.turn();
        state.apply(GameEvent::AnimationDone { turn: k }).expect("animating at turn start");
        let mut queue: VecDeque<(Seat, String)> = VecDeque::new();
        for seat in [Seat::A, Seat::B] {
            let agent: &mut dyn AgentPolicy = if seat == Seat::A { &mut *a } else { &mut *b };
            let obs = state.observation(seat, k).expect("current turn");
            queue.extend(agent.on_observation(&obs).into_iter().map(|u| (seat, u)));
        }
        let mut said = 0;
        while let Some((from, text)) = queue.pop_front() {
            if said >= UTTERANCE_SOFT_CAP {
                break;
            }
            if state.apply(GameEvent::Utterance { agent: from, turn: k, text: text.clone() }).is_err() {
                violation = Some(ProtocolViolation { seat: from, turn: k, entity: None });
                break 'game;
            }
            said += 1;
            let partner: &mut dyn AgentPolicy = if from == Seat::A { &mut *b } else { &mut *a };
            queue.extend(partner.on_partner_utterance(&text).into_iter().map(|u| (from.partner(), u)));
        }
        for seat in [Seat::A, Seat::B] {
            let agent: &mut dyn AgentPolicy = if seat == Seat::A { &mut *a } else { &mut *b };
            let entity = agent.decide_selection();
            if state.apply(GameEvent::Selection { agent: seat, turn: k, entity }).is_err() {
                violation = Some(ProtocolViolation { seat, turn: k, entity: Some(entity) });
                break 'game;
            }
        }
        state.apply(GameEvent::Resolution { turn: k }).expect("both selections in");
        let outcome = state.outcomes().last().expect("just resolved").clone();
        a.on_turn_result(&outcome);
        b.on_turn_result(&outcome);
    }
    GameRecord {
        scenario_seed,
        agent_seed: seed,
        lst: state.lst(),
        outcomes: state.outcomes().to_vec(),
        events: state.events().to_vec(),
        violation,
    }
}

impl GameRecord {
    /// Wraps the record as a transcript-level game log.
    pub fn to_log(&self, scenario: Arc<Scenario>, game_id: &str, players: crate::transcript::Players) -> GameLog {
        GameLog {
            game_id: game_id.to_string(),
            scenario,
            config: GameConfig::default(),
            players,
            events: self.events.clone(),
            footer: None,
            started_at: 0,
            wallclocks: vec![0; self.events.len()],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub successes: u64,
    pub total: u64,
}

impl Tally {
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.successes as f64 / self.total as f64)
    }

    fn add(&mut self, success: bool) {
        self.total += 1;
        self.successes += u64::from(success);
    }

    fn merge(&mut self, other: Tally) {
        self.successes += other.successes;
        self.total += other.total;
    }
}

/// Success by turn category and shared count, plus average LST.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelfplayReport {
    pub cells: BTreeMap<TurnCategory, BTreeMap<usize, Tally>>,
    pub games: u64,
    pub lst_total: u64,
    /// LST of every game, in play order.
    pub lsts: Vec<usize>,
    pub violations: Vec<ProtocolViolation>,
}

impl SelfplayReport {
    pub fn record(&mut self, game: &GameRecord) {
        self.games += 1;
        self.lst_total += game.lst as u64;
        self.lsts.push(game.lst);
        for o in &game.outcomes {
            self.cells.entry(o.category).or_default().entry(o.shared_count).or_default().add(o.success);
        }
        if let Some(v) = game.violation {
            self.violations.push(v);
        }
    }

    pub fn merge(&mut self, other: &SelfplayReport) {
        self.games += other.games;
        self.lst_total += other.lst_total;
        self.lsts.extend(&other.lsts);
        self.violations.extend(&other.violations);
        for (cat, row) in &other.cells {
            for (s, t) in row {
                self.cells.entry(*cat).or_default().entry(*s).or_default().merge(*t);
            }
        }
    }

    pub fn avg_lst(&self) -> f64 {
        if self.games == 0 {
            0.0
        } else {
            self.lst_total as f64 / self.games as f64
        }
    }

    pub fn cell(&self, category: TurnCategory, shared: usize) -> Tally {
        self.cells.get(&category).and_then(|r| r.get(&shared)).copied().unwrap_or_default()
    }

    /// Rows per turn category, columns per shared count, as tab-separated text.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("turn\tprevious_target\tshared=4\tshared=5\tshared=6\tavg_lst\n");
        for (i, cat) in TurnCategory::ALL.iter().enumerate() {
            let (turn, prev) = match cat {
                TurnCategory::First => ("1st", "-"),
                TurnCategory::LaterStay => (">=2nd", "stay"),
                TurnCategory::LaterLeave => (">=2nd", "leave"),
            };
            out.push_str(&format!("{turn}\t{prev}"));
            for s in [4, 5, 6] {
                let t = self.cell(*cat, s);
                match t.rate() {
                    Some(r) => out.push_str(&format!("\t{:.1} ({}/{})", 100.0 * r, t.successes, t.total)),
                    None => out.push_str("\t-"),
                }
            }
            if i == 0 {
                out.push_str(&format!("\t{:.2}", self.avg_lst()));
            } else {
                out.push('\t');
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SelfplayError {
    #[error("selfplay needs at least one scenario")]
    NoScenarios,
    #[error("selfplay needs at least one seed")]
    NoSeeds,
}

/// Plays game `i` on `scenarios[i % n]` with agent seed `seeds[i]`, one
/// game per seed. Policies are rebuilt for every game.
pub fn run_selfplay(
    policy_a: &PolicySpec,
    policy_b: &PolicySpec,
    scenarios: &[Arc<Scenario>],
    seeds: &[u64],
) -> Result<(SelfplayReport, Vec<GameRecord>), SelfplayError> {
    if scenarios.is_empty() {
        return Err(SelfplayError::NoScenarios);
    }
    if seeds.is_empty() {
        return Err(SelfplayError::NoSeeds);
    }
    let mut report = SelfplayReport::default();
    let mut games = Vec::with_capacity(seeds.len());
    for (i, seed) in seeds.iter().enumerate() {
        let mut a = policy_a.build();
        let mut b = policy_b.build();
        let g = play_game(scenarios[i % scenarios.len()].clone(), a.as_mut(), b.as_mut(), *seed);
        report.record(&g);
        games.push(g);
    }
    Ok((report, games))
}

/// What a predictor sees for one (game, agent, turn).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorInput {
    pub example_id: String,
    pub agent: Seat,
    pub turn: usize,
    /// Observations of turns 1..=turn.
    pub observations: Vec<Observation>,
    /// Utterances up to this turn's resolution.
    pub transcript: Vec<Utterance>,
    pub selectable_ids: Vec<EntityId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorOutput {
    pub entity_id: EntityId,
}

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("predictor timed out after {0:?}")]
    Timeout(Duration),
    #[error("predictor process: {0}")]
    Io(#[from] std::io::Error),
    #[error("predictor output: {0}")]
    Output(String),
    #[error("predictor exited")]
    Exited,
}

pub trait Predictor {
    fn predict(&mut self, input: &PredictorInput) -> Result<EntityId, PredictorError>;
}

impl<F: FnMut(&PredictorInput) -> Result<EntityId, PredictorError>> Predictor for F {
    fn predict(&mut self, input: &PredictorInput) -> Result<EntityId, PredictorError> {
        self(input)
    }
}

/// Child process speaking one JSON object per line each way. Writes and
/// reads run on helper threads so a stuck child cannot block the caller;
/// after a timeout the child is killed and a fresh one started on demand.
pub struct SubprocessPredictor {
    program: String,
    args: Vec<String>,
    timeout: Duration,
    worker: Option<Worker>,
}

struct Worker {
    child: Child,
    to_child: mpsc::Sender<String>,
    from_child: Receiver<std::io::Result<String>>,
}

impl Worker {
    fn spawn(program: &str, args: &[String]) -> Result<Worker, PredictorError> {
        let mut child = Command::new(program).args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn()?;
        let mut stdin: ChildStdin = child.stdin.take().expect("piped");
        let stdout = child.stdout.take().expect("piped");
        let (to_child, lines_in) = mpsc::channel::<String>();
        std::thread::spawn(move || {
            for line in lines_in {
                if writeln!(stdin, "{line}").and_then(|_| stdin.flush()).is_err() {
                    break;
                }
            }
        });
        let (tx, from_child) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Worker { child, to_child, from_child })
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl SubprocessPredictor {
    pub fn spawn(program: &str, args: &[String], timeout: Duration) -> Result<Self, PredictorError> {
        let worker = Some(Worker::spawn(program, args)?);
        Ok(SubprocessPredictor { program: program.to_string(), args: args.to_vec(), timeout, worker })
    }
}

impl Predictor for SubprocessPredictor {
    fn predict(&mut self, input: &PredictorInput) -> Result<EntityId, PredictorError> {
        let line = serde_json::to_string(input).map_err(|e| PredictorError::Output(e.to_string()))?;
        if self.worker.is_none() {
            self.worker = Some(Worker::spawn(&self.program, &self.args)?);
        }
        let worker = self.worker.as_ref().expect("just ensured");
        if worker.to_child.send(line).is_err() {
            self.worker = None;
            return Err(PredictorError::Exited);
        }
        let reply = worker.from_child.recv_timeout(self.timeout);
        match reply {
            Ok(Ok(reply)) => serde_json::from_str::<PredictorOutput>(&reply)
                .map(|o| o.entity_id)
                .map_err(|e| PredictorError::Output(e.to_string())),
            Ok(Err(e)) => {
                self.worker = None;
                Err(PredictorError::Io(e))
            }
            Err(RecvTimeoutError::Timeout) => {
                // A late answer would pair with the wrong question; start over.
                self.worker = None;
                Err(PredictorError::Timeout(self.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.worker = None;
                Err(PredictorError::Exited)
            }
        }
    }
}

/// One target-selection example with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionExample {
    pub input: PredictorInput,
    pub truth: EntityId,
    pub category: TurnCategory,
}

/// Expands recorded games into one example per (game, agent, resolved turn).
pub fn selection_examples(log: &GameLog) -> Result<Vec<SelectionExample>, GameError> {
    let state = log.replay()?;
    let mut out = Vec::new();
    for o in state.outcomes() {
        let k = o.turn;
        let transcript: Vec<Utterance> = state.transcript().iter().filter(|u| u.turn <= k).cloned().collect();
        for agent in [Seat::A, Seat::B] {
            let observations: Vec<Observation> = (1..=k).map(|t| observe(&log.scenario, agent, t)).collect();
            let selectable_ids = observations[k - 1].selectable_ids.clone();
            out.push(SelectionExample {
                input: PredictorInput {
                    example_id: format!("{}/{}/{}", log.game_id, agent, k),
                    agent,
                    turn: k,
                    observations,
                    transcript: transcript.clone(),
                    selectable_ids,
                },
                truth: o.selections[agent.index()],
                category: o.category,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalIssue {
    pub example_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub by_category: BTreeMap<TurnCategory, Tally>,
    /// Illegal answers and predictor failures, each scored as incorrect.
    pub issues: Vec<EvalIssue>,
}

impl SelectionReport {
    pub fn accuracy(&self, category: TurnCategory) -> Option<f64> {
        self.by_category.get(&category).and_then(Tally::rate)
    }
}

/// Scores `predictor` on every example of `corpus`.
pub fn target_selection_eval(corpus: &[GameLog], predictor: &mut dyn Predictor) -> Result<SelectionReport, GameError> {
    let mut report = SelectionReport::default();
    for log in corpus {
        for ex in selection_examples(log)? {
            let correct = match predictor.predict(&ex.input) {
                Ok(id) if ex.input.selectable_ids.contains(&id) => id == ex.truth,
                Ok(id) => {
                    report.issues.push(EvalIssue {
                        example_id: ex.input.example_id.clone(),
                        message: format!("illegal selection {id}"),
                    });
                    false
                }
                Err(e) => {
                    report.issues.push(EvalIssue { example_id: ex.input.example_id.clone(), message: e.to_string() });
                    false
                }
            };
            report.by_category.entry(ex.category).or_default().add(correct);
        }
    }
    Ok(report)
}
