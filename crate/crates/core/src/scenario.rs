//! Constrained generation and validation of complete five-turn scenes.
//!
//! Generation is forward rejection sampling. Movement parameters are always
//! drawn from their configured uniform ranges; a turn is kept only if the
//! resulting scene satisfies every constraint at its selection timestep.
//! Every random draw comes from a ChaCha substream keyed by
//! `(seed, restart, purpose, turn, attempt, index)`, so one entity's
//! resampling never shifts another entity's draws.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{quantize, to_canonical_string};
use crate::geometry::{build_trajectory, is_visible, min_separation, normalize_angle, Point, Trajectory, View};
use crate::{EntityId, Seat};

pub const FORMAT_VERSION: u32 = 1;

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span(pub f64, pub f64);

impl Span {
    pub fn lo(&self) -> f64 {
        self.0
    }

    pub fn hi(&self) -> f64 {
        self.1
    }

    pub fn contains(&self, x: f64) -> bool {
        self.0 <= x && x <= self.1
    }

    /// Uniform draw; a degenerate span returns its single value exactly.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        if self.0 == self.1 {
            self.0
        } else {
            self.0 + (self.1 - self.0) * u
        }
    }

    fn is_valid(&self) -> bool {
        self.0.is_finite() && self.1.is_finite() && self.0 <= self.1
    }

    fn quantized(self) -> Span {
        Span(quantize(self.0), quantize(self.1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttemptCaps {
    /// Draws per entity per turn before the turn attempt is abandoned.
    pub entity_draws: usize,
    pub turn_attempts: usize,
    pub scenario_restarts: usize,
    /// Draws per entity when placing initial positions.
    pub placement_draws: usize,
    /// Perspective-shift draws tried against one sampled movement.
    pub shift_draws: usize,
}

impl Default for AttemptCaps {
    fn default() -> Self {
        AttemptCaps { entity_draws: 200, turn_attempts: 500, scenario_restarts: 50, placement_draws: 2000, shift_draws: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Defines the length unit; all distances below are in these units.
    pub view_diameter: f64,
    pub n_entities: usize,
    /// Grayscale intensity; higher is lighter.
    pub color: Span,
    /// Dot radius.
    pub size: Span,
    pub r1: Span,
    pub r2: Span,
    pub delta_theta: Span,
    pub shift_magnitude: Span,
    /// Distance between the two starting view centers, keyed by the shared
    /// count drawn for the first selection timestep.
    pub initial_view_distance: BTreeMap<usize, Span>,
    pub min_center_gap_margin: f64,
    pub visible_count: usize,
    pub shared_choices: Vec<usize>,
    pub max_turns: usize,
    pub max_consecutive_shared: usize,
    pub separation_samples: usize,
    /// Draw the two agents' shifts independently (otherwise both views move
    /// by the same vector).
    pub independent_shifts: bool,
    pub caps: AttemptCaps,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            view_diameter: 1.0,
            n_entities: 40,
            color: Span(0.2, 0.8),
            size: Span(0.0125, 0.03),
            r1: Span(0.08, 0.25),
            r2: Span(0.08, 0.25),
            delta_theta: Span(-FRAC_PI_2, FRAC_PI_2),
            shift_magnitude: Span(0.25, 0.45),
            initial_view_distance: BTreeMap::from([(4, Span(0.28, 0.42)), (5, Span(0.17, 0.3)), (6, Span(0.06, 0.18))]),
            min_center_gap_margin: 0.02,
            visible_count: 7,
            shared_choices: vec![4, 5, 6],
            max_turns: 5,
            max_consecutive_shared: 3,
            separation_samples: crate::geometry::DEFAULT_SEPARATION_SAMPLES,
            independent_shifts: true,
            caps: AttemptCaps::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: &str| Err(ScenarioError::Config(msg.to_string()));
        if !(self.view_diameter.is_finite() && self.view_diameter > 0.0) {
            return bad("view_diameter must be positive");
        }
        let spans = [
            ("color", self.color),
            ("size", self.size),
            ("r1", self.r1),
            ("r2", self.r2),
            ("delta_theta", self.delta_theta),
            ("shift_magnitude", self.shift_magnitude),
        ];
        for (name, span) in spans {
            if !span.is_valid() {
                return Err(ScenarioError::Config(format!("{name} range is empty or not finite")));
            }
        }
        for s in &self.shared_choices {
            match self.initial_view_distance.get(s) {
                Some(span) if span.is_valid() && span.lo() >= 0.0 => {}
                _ => return Err(ScenarioError::Config(format!("initial_view_distance needs a valid range for shared count {s}"))),
            }
        }
        if self.size.lo() < 0.0 || self.r1.lo() < 0.0 || self.r2.lo() < 0.0 || self.shift_magnitude.lo() < 0.0 {
            return bad("sizes and distances must be non-negative");
        }
        if self.shared_choices.is_empty() || self.shared_choices.iter().any(|&s| s > self.visible_count) {
            return bad("shared_choices must be nonempty and not exceed visible_count");
        }
        if self.visible_count == 0 || self.n_entities < self.visible_count {
            return bad("n_entities must be at least visible_count");
        }
        if self.max_turns == 0 || self.max_consecutive_shared == 0 {
            return bad("max_turns and max_consecutive_shared must be positive");
        }
        if self.separation_samples < 2 {
            return bad("separation_samples must be at least 2");
        }
        if !(self.min_center_gap_margin.is_finite() && self.min_center_gap_margin >= 0.0) {
            return bad("min_center_gap_margin must be non-negative");
        }
        let caps = self.caps;
        if caps.entity_draws == 0 || caps.turn_attempts == 0 || caps.scenario_restarts == 0 || caps.placement_draws == 0 || caps.shift_draws == 0 {
            return bad("attempt caps must be positive");
        }
        Ok(())
    }

    /// Whether the fixed task constants (7 visible, 4-6 shared, 5 turns, at
    /// most 3 consecutive shared timesteps) are in force.
    pub fn is_standard(&self) -> bool {
        self.visible_count == 7
            && !self.shared_choices.is_empty()
            && self.shared_choices.iter().all(|s| (4..=6).contains(s))
            && self.max_turns == 5
            && self.max_consecutive_shared == 3
    }

    /// Longest possible single-turn travel distance.
    pub fn max_travel(&self) -> f64 {
        self.r1.hi() + self.r2.hi()
    }

    fn quantized(&self) -> ScenarioConfig {
        ScenarioConfig {
            view_diameter: quantize(self.view_diameter),
            color: self.color.quantized(),
            size: self.size.quantized(),
            r1: self.r1.quantized(),
            r2: self.r2.quantized(),
            delta_theta: self.delta_theta.quantized(),
            shift_magnitude: self.shift_magnitude.quantized(),
            initial_view_distance: self.initial_view_distance.iter().map(|(&k, v)| (k, v.quantized())).collect(),
            min_center_gap_margin: quantize(self.min_center_gap_margin),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub color: f64,
    pub size: f64,
    pub initial_pos: Point,
    pub initial_heading: f64,
}

/// A fully pre-generated five-turn world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub version: u32,
    pub seed: u64,
    pub config: ScenarioConfig,
    /// Ordered by id; `entities[i].id == EntityId(i)`.
    pub entities: Vec<Entity>,
    /// `turns[k][i]`: movement of entity `i` during turn `k + 1`.
    pub turns: Vec<Vec<Trajectory>>,
    /// `views[seat][k]`: the view active during turn `k + 1`.
    pub views: Vec<Vec<View>>,
    /// `shifts[seat][k]`: displacement applied before turn `k + 2`.
    pub shifts: Vec<Vec<Point>>,
    /// Entities visible to both agents at the end of each turn, sorted.
    pub shared_sets: Vec<Vec<EntityId>>,
}

impl Scenario {
    pub fn num_turns(&self) -> usize {
        self.turns.len()
    }

    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.entities.get(id.0 as usize).filter(|e| e.id == id)
    }

    /// Movements of turn `k` (1-based) keyed by entity.
    pub fn turn_moves(&self, k: usize) -> BTreeMap<EntityId, Trajectory> {
        self.entities.iter().zip(&self.turns[k - 1]).map(|(e, t)| (e.id, *t)).collect()
    }

    /// View of `seat` during turn `k` (1-based).
    pub fn view(&self, seat: Seat, k: usize) -> View {
        self.views[seat.index()][k - 1]
    }

    /// Shift applied to `seat`'s view at the start of turn `k`, for `k ≥ 2`.
    pub fn shift(&self, seat: Seat, k: usize) -> Option<Point> {
        (k >= 2).then(|| self.shifts[seat.index()][k - 2])
    }

    /// Entity centers at selection timestep `t_k` (`k = 0` is the start).
    pub fn positions_at(&self, k: usize) -> Vec<Point> {
        if k == 0 {
            self.entities.iter().map(|e| e.initial_pos).collect()
        } else {
            self.turns[k - 1].iter().map(|t| t.p2).collect()
        }
    }

    /// Entities `seat` can see at `t_k`; at `t_0` this uses the first view.
    pub fn visible_at(&self, seat: Seat, k: usize) -> BTreeSet<EntityId> {
        let view = self.view(seat, k.max(1));
        self.positions_at(k)
            .into_iter()
            .zip(&self.entities)
            .filter(|(p, _)| is_visible(*p, &view))
            .map(|(_, e)| e.id)
            .collect()
    }

    pub fn shared_at(&self, k: usize) -> &[EntityId] {
        &self.shared_sets[k - 1]
    }

    pub fn to_json(&self) -> Result<String, ScenarioError> {
        Ok(to_canonical_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        if s.version != FORMAT_VERSION {
            return Err(ScenarioError::Version(s.version));
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = fs::read_to_string(path)?;
        Scenario::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("generation exhausted: {0}")]
    Exhausted(GenerationDiagnostics),
    #[error("unsupported scenario format version {0}")]
    Version(u32),
    #[error("scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Why generation gave up.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationDiagnostics {
    pub seed: u64,
    pub restarts: usize,
    /// Furthest turn reached by any restart (0 = failed during placement).
    pub furthest_turn: usize,
    /// Rejection counts per reason over all attempts.
    pub rejections: BTreeMap<&'static str, usize>,
}

impl std::fmt::Display for GenerationDiagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "seed {} after {} restarts, furthest turn {}", self.seed, self.restarts, self.furthest_turn)?;
        for (reason, n) in &self.rejections {
            write!(f, ", {reason}={n}")?;
        }
        Ok(())
    }
}

/// Deterministic source of independent ChaCha streams for one generation
/// restart.
#[derive(Debug, Clone, Copy)]
pub struct RngStreams {
    seed: u64,
    restart: u64,
}

const TAG_SETUP: u64 = 1;
const TAG_MOVE: u64 = 2;
const TAG_SHIFT: u64 = 3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStreams {
    pub fn new(seed: u64, restart: u64) -> Self {
        RngStreams { seed, restart }
    }

    /// Stream identified by `labels` under this seed and restart.
    pub fn substream(&self, labels: &[u64]) -> ChaCha8Rng {
        let stream = labels.iter().fold(splitmix(self.restart), |acc, &l| splitmix(acc ^ splitmix(l)));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    pub fn setup(&self) -> ChaCha8Rng {
        self.substream(&[TAG_SETUP])
    }

    pub fn movement(&self, turn: usize, attempt: usize, entity: EntityId) -> ChaCha8Rng {
        self.substream(&[TAG_MOVE, turn as u64, attempt as u64, entity.0 as u64])
    }

    pub fn shift(&self, turn: usize, attempt: usize, seat: Seat) -> ChaCha8Rng {
        self.substream(&[TAG_SHIFT, turn as u64, attempt as u64, seat.index() as u64])
    }
}

fn q_point(p: Point) -> Point {
    p.map(quantize)
}

fn gap_ok(a: Point, size_a: f64, b: Point, size_b: f64, margin: f64) -> bool {
    a.distance(b) >= size_a + size_b + margin
}

/// Places `n_entities` dots uniformly inside the union of the two starting
/// views, each inflated by the longest single-turn travel, keeping the
/// minimum center gap. Headings are uniform on `[0, 2π)`.
pub fn sample_entities<R: Rng + ?Sized>(rng: &mut R, config: &ScenarioConfig, region: [View; 2]) -> Result<Vec<Entity>, ScenarioError> {
    let reach = region[0].radius().max(region[1].radius()) + config.max_travel();
    let min = Point::new(region[0].center.x.min(region[1].center.x) - reach, region[0].center.y.min(region[1].center.y) - reach);
    let max = Point::new(region[0].center.x.max(region[1].center.x) + reach, region[0].center.y.max(region[1].center.y) + reach);
    let inside = |p: Point| region.iter().any(|v| p.distance(v.center) <= v.radius() + config.max_travel());

    let mut entities: Vec<Entity> = Vec::with_capacity(config.n_entities);
    for i in 0..config.n_entities {
        let color = quantize(config.color.sample(rng));
        let size = quantize(config.size.sample(rng));
        let initial_heading = quantize(normalize_angle(rng.gen::<f64>() * 2.0 * PI));
        let mut placed = None;
        for _ in 0..config.caps.placement_draws {
            let p = q_point(Point::new(Span(min.x, max.x).sample(rng), Span(min.y, max.y).sample(rng)));
            if inside(p) && entities.iter().all(|e| gap_ok(p, size, e.initial_pos, e.size, config.min_center_gap_margin)) {
                placed = Some(p);
                break;
            }
        }
        let Some(initial_pos) = placed else {
            let mut diag = GenerationDiagnostics::default();
            diag.rejections.insert("placement", i);
            return Err(ScenarioError::Exhausted(diag));
        };
        entities.push(Entity { id: EntityId(i as u32), color, size, initial_pos, initial_heading });
    }
    Ok(entities)
}

/// Where an entity stands at the start of a turn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntityState {
    pub pos: Point,
    pub heading: f64,
    pub size: f64,
}

/// Trajectory with every stored number rounded to its file representation.
fn quantized_trajectory(start: Point, heading: f64, r1: f64, r2: f64, delta: f64) -> Trajectory {
    let t = build_trajectory(start, heading, r1, r2, delta);
    Trajectory { p0: start, p1: q_point(t.p1), p2: q_point(t.p2), params: t.params }
}

/// Heading carried out of a trajectory, as stored.
pub fn next_heading(t: &Trajectory) -> f64 {
    quantize(normalize_angle(t.params.heading_out()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("turn rejected: entity {entity} found no overlap-free movement")]
pub struct TurnRejected {
    pub entity: EntityId,
}

fn boxes_apart(a: &Trajectory, b: &Trajectory, margin: f64) -> bool {
    let bounds = |t: &Trajectory| {
        let xs = [t.p0.x, t.p1.x, t.p2.x];
        let ys = [t.p0.y, t.p1.y, t.p2.y];
        let lo = Point::new(xs.iter().copied().fold(f64::INFINITY, f64::min), ys.iter().copied().fold(f64::INFINITY, f64::min));
        let hi = Point::new(xs.iter().copied().fold(f64::NEG_INFINITY, f64::max), ys.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        (lo, hi)
    };
    let (alo, ahi) = bounds(a);
    let (blo, bhi) = bounds(b);
    alo.x - bhi.x > margin || blo.x - ahi.x > margin || alo.y - bhi.y > margin || blo.y - ahi.y > margin
}

/// Draws one turn of movement for every entity, in id order. Each entity
/// redraws `(r1, r2, Δθ)` from its own stream until its path keeps clear of
/// every path already fixed this turn.
pub fn sample_turn(
    streams: &RngStreams,
    turn: usize,
    attempt: usize,
    prior: &[EntityState],
    config: &ScenarioConfig,
) -> Result<Vec<Trajectory>, TurnRejected> {
    match sample_turn_pruned(streams, turn, attempt, prior, config, |_, _| true) {
        Ok(moves) => Ok(moves),
        Err(TurnFailure::Rejected(r)) => Err(r),
        Err(TurnFailure::Pruned) => unreachable!("no pruning requested"),
    }
}

enum TurnFailure {
    Rejected(TurnRejected),
    /// The caller saw from a prefix of the movements that the turn cannot
    /// be accepted.
    Pruned,
}

/// [`sample_turn`] that asks `proceed` after each entity is fixed whether
/// the partial turn can still be accepted. Stopping early changes nothing
/// but the work done: every stream is consumed exactly as in a full run.
fn sample_turn_pruned(
    streams: &RngStreams,
    turn: usize,
    attempt: usize,
    prior: &[EntityState],
    config: &ScenarioConfig,
    mut proceed: impl FnMut(usize, &Trajectory) -> bool,
) -> Result<Vec<Trajectory>, TurnFailure> {
    let samples = config.separation_samples;
    let reach = 2.0 * config.max_travel();
    let mut fixed: Vec<Trajectory> = Vec::with_capacity(prior.len());
    for (i, state) in prior.iter().enumerate() {
        let id = EntityId(i as u32);
        let near: Vec<usize> = (0..i).filter(|&j| prior[j].pos.distance(state.pos) <= reach + prior[j].size + state.size).collect();
        if near.iter().any(|&j| prior[j].pos.distance(state.pos) < prior[j].size + state.size) {
            // Already overlapping at the start: no movement can fix that.
            return Err(TurnFailure::Rejected(TurnRejected { entity: id }));
        }
        let mut rng = streams.movement(turn, attempt, id);
        let mut accepted = None;
        for _ in 0..config.caps.entity_draws {
            let r1 = quantize(config.r1.sample(&mut rng));
            let r2 = quantize(config.r2.sample(&mut rng));
            let delta = quantize(config.delta_theta.sample(&mut rng));
            let traj = quantized_trajectory(state.pos, state.heading, r1, r2, delta);
            let clear = near.iter().all(|&j| {
                let need = prior[j].size + state.size;
                // Each curve stays inside its control-point box.
                boxes_apart(&traj, &fixed[j], need) || min_separation(&traj, &fixed[j], samples).expect("samples >= 2") >= need
            });
            if clear {
                accepted = Some(traj);
                break;
            }
        }
        match accepted {
            Some(t) => {
                if !proceed(i, &t) {
                    return Err(TurnFailure::Pruned);
                }
                fixed.push(t)
            }
            None => return Err(TurnFailure::Rejected(TurnRejected { entity: id })),
        }
    }
    Ok(fixed)
}

/// Displacement with uniform direction and uniform magnitude.
pub fn sample_view_shift<R: Rng + ?Sized>(rng: &mut R, config: &ScenarioConfig) -> Point {
    let angle = rng.gen::<f64>() * 2.0 * PI;
    let magnitude = config.shift_magnitude.sample(rng);
    q_point(Point::polar(magnitude, angle))
}

/// Generates a scenario satisfying every constraint, as a pure function of
/// `(seed, config)`.
pub fn generate_scenario(seed: u64, config: &ScenarioConfig) -> Result<Scenario, ScenarioError> {
    config.validate()?;
    let config = config.quantized();
    let mut diag = GenerationDiagnostics { seed, ..Default::default() };
    for restart in 0..config.caps.scenario_restarts {
        diag.restarts = restart + 1;
        let streams = RngStreams::new(seed, restart as u64);
        if let Some(s) = attempt_scenario(seed, &config, &streams, &mut diag) {
            if validate_scenario(&s).is_empty() {
                return Ok(s);
            }
            *diag.rejections.entry("final_validation").or_default() += 1;
        }
    }
    Err(ScenarioError::Exhausted(diag))
}

/// Accepted outcome of one turn.
struct TurnStep {
    views: [View; 2],
    shifts: Option<[Point; 2]>,
    moves: Vec<Trajectory>,
    shared: Vec<EntityId>,
}

/// Turn movements rejected for overlap, in a row, before the turn is judged
/// a dead end and the previous turn is resampled.
const DEAD_END_STREAK: usize = 25;
/// Previous-turn resamplings allowed within one restart.
const MAX_BACKTRACKS: usize = 40;

fn attempt_scenario(seed: u64, config: &ScenarioConfig, streams: &RngStreams, diag: &mut GenerationDiagnostics) -> Option<Scenario> {
    let mut setup = streams.setup();
    let schedule: Vec<usize> = (0..config.max_turns)
        .map(|_| config.shared_choices[setup.gen_range(0..config.shared_choices.len())])
        .collect();
    let d = config.initial_view_distance[&schedule[0]].sample(&mut setup);
    let dir = setup.gen::<f64>() * 2.0 * PI;
    let start_views = [
        View::new(Point::ORIGIN, config.view_diameter),
        View::new(q_point(Point::polar(d, dir)), config.view_diameter),
    ];
    let entities = match sample_entities(&mut setup, config, start_views) {
        Ok(e) => e,
        Err(_) => {
            *diag.rejections.entry("placement").or_default() += 1;
            return None;
        }
    };
    let start_state: Vec<EntityState> =
        entities.iter().map(|e| EntityState { pos: e.initial_pos, heading: e.initial_heading, size: e.size }).collect();

    // Depth-first over turns: a turn that cannot be completed sends the
    // search back to redraw the one before it.
    let mut steps: Vec<TurnStep> = Vec::with_capacity(config.max_turns);
    let mut entries = vec![0usize; config.max_turns + 1];
    let mut backtracks = 0;
    while steps.len() < config.max_turns {
        let k = steps.len() + 1;
        diag.furthest_turn = diag.furthest_turn.max(k);
        let (state, views, run_length) = replay_state(&start_state, start_views, &steps);
        let epoch = entries[k];
        entries[k] += 1;
        match search_turn(config, streams, k, epoch, schedule[k - 1], &entities, &state, views, &run_length, diag) {
            Some(step) => steps.push(step),
            None => {
                if k == 1 || backtracks == MAX_BACKTRACKS {
                    return None;
                }
                backtracks += 1;
                *diag.rejections.entry("backtrack").or_default() += 1;
                steps.pop();
                entries[k] = 0;
            }
        }
    }

    let mut views: Vec<Vec<View>> = vec![Vec::new(), Vec::new()];
    let mut shifts: Vec<Vec<Point>> = vec![Vec::new(), Vec::new()];
    let mut turns = Vec::with_capacity(config.max_turns);
    let mut shared_sets = Vec::with_capacity(config.max_turns);
    for step in steps {
        for seat in 0..2 {
            views[seat].push(step.views[seat]);
            if let Some(sh) = step.shifts {
                shifts[seat].push(sh[seat]);
            }
        }
        turns.push(step.moves);
        shared_sets.push(step.shared);
    }
    Some(Scenario { version: FORMAT_VERSION, seed, config: config.clone(), entities, turns, views, shifts, shared_sets })
}

/// Entity states, views and shared-run lengths after the accepted steps.
fn replay_state(start: &[EntityState], start_views: [View; 2], steps: &[TurnStep]) -> (Vec<EntityState>, [View; 2], Vec<usize>) {
    let mut state = start.to_vec();
    let mut views = start_views;
    let mut run = vec![0usize; start.len()];
    for step in steps {
        for (s, t) in state.iter_mut().zip(&step.moves) {
            s.pos = t.p2;
            s.heading = next_heading(t);
        }
        for (i, r) in run.iter_mut().enumerate() {
            *r = if step.shared.contains(&EntityId(i as u32)) { *r + 1 } else { 0 };
        }
        views = step.views;
    }
    (state, views, run)
}

#[allow(clippy::too_many_arguments)]
fn search_turn(
    config: &ScenarioConfig,
    streams: &RngStreams,
    k: usize,
    epoch: usize,
    target: usize,
    entities: &[Entity],
    state: &[EntityState],
    current: [View; 2],
    run_length: &[usize],
    diag: &mut GenerationDiagnostics,
) -> Option<TurnStep> {
    let attempts = config.caps.turn_attempts;
    let mut overlap_streak = 0;
    // With the views fixed, count bounds rule out most first-turn draws
    // before every entity has moved.
    // remaining[i]: entities from i on that could still end up seen by A,
    // by B, and by both.
    let mut remaining = vec![[0usize; 3]; state.len() + 1];
    for i in (0..state.len()).rev() {
        let reach = |v: &View| state[i].pos.distance(v.center) <= v.radius() + config.max_travel();
        let (a, b) = (reach(&current[0]), reach(&current[1]));
        let r = remaining[i + 1];
        remaining[i] = [r[0] + a as usize, r[1] + b as usize, r[2] + (a && b) as usize];
    }
    for attempt in 0..attempts {
        let label = epoch * attempts + attempt;
        let mut counts = [0usize; 3];
        let prune = |i: usize, t: &Trajectory| {
            if k > 1 {
                return true;
            }
            let (a, b) = (is_visible(t.p2, &current[0]), is_visible(t.p2, &current[1]));
            counts[0] += a as usize;
            counts[1] += b as usize;
            counts[2] += (a && b) as usize;
            let goal = [config.visible_count, config.visible_count, target];
            (0..3).all(|c| counts[c] <= goal[c] && counts[c] + remaining[i + 1][c] >= goal[c])
        };
        let moves = match sample_turn_pruned(streams, k, label, state, config, prune) {
            Ok(m) => m,
            Err(TurnFailure::Pruned) => {
                *diag.rejections.entry("visible_count").or_default() += 1;
                continue;
            }
            Err(TurnFailure::Rejected(_)) => {
                *diag.rejections.entry("overlap").or_default() += 1;
                overlap_streak += 1;
                if overlap_streak == DEAD_END_STREAK {
                    return None;
                }
                continue;
            }
        };
        overlap_streak = 0;
        if k == 1 {
            match check_timestep(config, entities, &moves, &current, target, run_length) {
                Ok(shared) => return Some(TurnStep { views: current, shifts: None, moves, shared }),
                Err(reason) => {
                    *diag.rejections.entry(reason).or_default() += 1;
                    continue;
                }
            }
        }
        if let Some((views, shifts, shared)) = search_shifts(config, streams, k, label, entities, &moves, current, target, run_length, diag) {
            return Some(TurnStep { views, shifts: Some(shifts), moves, shared });
        }
    }
    None
}

/// Tries shift draws for each seat separately, keeping those that leave the
/// seat with exactly `visible_count` dots, then pairs them up in draw order.
#[allow(clippy::too_many_arguments)]
fn search_shifts(
    config: &ScenarioConfig,
    streams: &RngStreams,
    k: usize,
    label: usize,
    entities: &[Entity],
    moves: &[Trajectory],
    current: [View; 2],
    target: usize,
    run_length: &[usize],
    diag: &mut GenerationDiagnostics,
) -> Option<([View; 2], [Point; 2], Vec<EntityId>)> {
    let words = moves.len().div_ceil(64);
    let candidates = |seat: Seat| -> Vec<(Point, View, Vec<u64>)> {
        let mut rng = streams.shift(k, label, seat);
        let from = current[seat.index()];
        let mut out = Vec::new();
        for _ in 0..config.caps.shift_draws {
            let shift = sample_view_shift(&mut rng, config);
            let view = View::new(q_point(from.center + shift), from.diameter);
            let mut mask = vec![0u64; words];
            let mut count = 0;
            for (i, t) in moves.iter().enumerate() {
                if is_visible(t.p2, &view) {
                    mask[i / 64] |= 1 << (i % 64);
                    count += 1;
                }
            }
            if count == config.visible_count {
                out.push((shift, view, mask));
            }
        }
        out
    };
    let a = candidates(Seat::A);
    let b = if config.independent_shifts {
        candidates(Seat::B)
    } else {
        // One shared displacement moves both views.
        a.iter()
            .map(|(shift, _, _)| {
                let view = View::new(q_point(current[1].center + *shift), current[1].diameter);
                let mut mask = vec![0u64; words];
                for (i, t) in moves.iter().enumerate() {
                    if is_visible(t.p2, &view) {
                        mask[i / 64] |= 1 << (i % 64);
                    }
                }
                (*shift, view, mask)
            })
            .collect()
    };
    if a.is_empty() || b.is_empty() {
        *diag.rejections.entry("visible_count").or_default() += 1;
        return None;
    }
    let pairs: Box<dyn Iterator<Item = (usize, usize)>> = if config.independent_shifts {
        Box::new((0..a.len()).flat_map(|i| (0..b.len()).map(move |j| (i, j))))
    } else {
        Box::new((0..a.len()).map(|i| (i, i)))
    };
    for (i, j) in pairs {
        let (sa, va, ma) = &a[i];
        let (sb, vb, mb) = &b[j];
        let shared: u32 = ma.iter().zip(mb).map(|(x, y)| (x & y).count_ones()).sum();
        if shared as usize != target {
            *diag.rejections.entry("shared_count").or_default() += 1;
            continue;
        }
        let views = [*va, *vb];
        match check_timestep(config, entities, moves, &views, target, run_length) {
            Ok(shared) => return Some((views, [*sa, *sb], shared)),
            Err(reason) => *diag.rejections.entry(reason).or_default() += 1,
        }
    }
    None
}

/// Selection-timestep constraints for a candidate turn; returns the shared
/// set or the name of the first failing constraint.
fn check_timestep(
    config: &ScenarioConfig,
    entities: &[Entity],
    moves: &[Trajectory],
    views: &[View; 2],
    target_shared: usize,
    run_length: &[usize],
) -> Result<Vec<EntityId>, &'static str> {
    let vis: Vec<Vec<usize>> = views
        .iter()
        .map(|v| (0..moves.len()).filter(|&i| is_visible(moves[i].p2, v)).collect())
        .collect();
    if vis.iter().any(|v| v.len() != config.visible_count) {
        return Err("visible_count");
    }
    let shared: Vec<usize> = vis[0].iter().copied().filter(|i| vis[1].contains(i)).collect();
    if shared.len() != target_shared {
        return Err("shared_count");
    }
    if shared.iter().any(|&i| run_length[i] + 1 > config.max_consecutive_shared) {
        return Err("consecutive_shared");
    }
    let either: BTreeSet<usize> = vis[0].iter().chain(&vis[1]).copied().collect();
    let either: Vec<usize> = either.into_iter().collect();
    for (x, &i) in either.iter().enumerate() {
        for &j in &either[x + 1..] {
            if !gap_ok(moves[i].p2, entities[i].size, moves[j].p2, entities[j].size, config.min_center_gap_margin) {
                return Err("min_gap");
            }
        }
    }
    Ok(shared.into_iter().map(|i| EntityId(i as u32)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Structure,
    Attribute,
    TrajectoryShape,
    Continuity,
    HeadingPersistence,
    ViewShift,
    VisibleCount,
    SharedSetMismatch,
    SharedCount,
    ConsecutiveShared,
    MinGap,
    Overlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    /// 1-based turn, when the violation belongs to one.
    pub turn: Option<usize>,
    pub entities: Vec<EntityId>,
    pub measured: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, c: Constraint) -> usize {
        self.violations.iter().filter(|v| v.constraint == c).count()
    }

    fn push(&mut self, constraint: Constraint, turn: Option<usize>, entities: Vec<EntityId>, measured: f64) {
        self.violations.push(Violation { constraint, turn, entities, measured });
    }
}

const SHAPE_TOL: f64 = 1e-9;

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Re-derives every constraint from raw geometry. An empty report means the
/// scenario is valid.
pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let mut report = ValidationReport::default();
    let c = &s.config;
    let n_turns = c.max_turns;
    let n = s.entities.len();

    let structure_ok = c.validate().is_ok()
        && n == c.n_entities
        && s.turns.len() == n_turns
        && s.turns.iter().all(|t| t.len() == n)
        && s.views.len() == 2
        && s.views.iter().all(|v| v.len() == n_turns)
        && s.shifts.len() == 2
        && s.shifts.iter().all(|v| v.len() + 1 == n_turns)
        && s.shared_sets.len() == n_turns
        && s.entities.iter().enumerate().all(|(i, e)| e.id == EntityId(i as u32));
    if !structure_ok {
        report.push(Constraint::Structure, None, Vec::new(), 0.0);
        return report;
    }

    for e in &s.entities {
        let finite = e.initial_pos.is_finite() && e.initial_heading.is_finite();
        if !finite || !c.color.contains(e.color) || !c.size.contains(e.size) {
            report.push(Constraint::Attribute, None, vec![e.id], e.size);
        }
    }

    for seat in Seat::BOTH {
        for (k, v) in s.views[seat.index()].iter().enumerate() {
            if v.diameter != c.view_diameter {
                report.push(Constraint::Structure, Some(k + 1), Vec::new(), v.diameter);
            }
            if k >= 1 {
                let expected = s.views[seat.index()][k - 1].center + s.shifts[seat.index()][k - 1];
                let err = expected.distance(v.center);
                if err > SHAPE_TOL {
                    report.push(Constraint::ViewShift, Some(k + 1), Vec::new(), err);
                }
            }
        }
    }

    for (k, turn) in s.turns.iter().enumerate() {
        let k1 = k + 1;
        for (i, t) in turn.iter().enumerate() {
            let id = EntityId(i as u32);
            let rebuilt = build_trajectory(t.p0, t.params.theta_prev, t.params.r1, t.params.r2, t.params.delta_theta);
            let err = rebuilt.p1.distance(t.p1).max(rebuilt.p2.distance(t.p2));
            let params_ok = c.r1.contains(t.params.r1) && c.r2.contains(t.params.r2) && c.delta_theta.contains(t.params.delta_theta);
            if !(err <= SHAPE_TOL) || !params_ok {
                report.push(Constraint::TrajectoryShape, Some(k1), vec![id], err);
            }
            let (start, heading) = if k == 0 {
                (s.entities[i].initial_pos, s.entities[i].initial_heading)
            } else {
                let prev = &s.turns[k - 1][i];
                (prev.p2, prev.params.heading_out())
            };
            if t.p0 != start {
                report.push(Constraint::Continuity, Some(k1), vec![id], start.distance(t.p0));
            }
            let gap = angle_gap(t.params.theta_prev, heading);
            if !(gap <= SHAPE_TOL) {
                report.push(Constraint::HeadingPersistence, Some(k1), vec![id], gap);
            }
        }

        for i in 0..n {
            for j in i + 1..n {
                let need = s.entities[i].size + s.entities[j].size;
                let sep = min_separation(&turn[i], &turn[j], c.separation_samples).unwrap_or(0.0);
                if sep < need {
                    report.push(Constraint::Overlap, Some(k1), vec![EntityId(i as u32), EntityId(j as u32)], sep);
                }
            }
        }
    }

    let mut run = vec![0usize; n];
    for k in 1..=n_turns {
        let va = s.visible_at(Seat::A, k);
        let vb = s.visible_at(Seat::B, k);
        for vis in [&va, &vb] {
            if vis.len() != c.visible_count {
                report.push(Constraint::VisibleCount, Some(k), vis.iter().copied().collect(), vis.len() as f64);
            }
        }
        let shared: Vec<EntityId> = va.intersection(&vb).copied().collect();
        if shared != s.shared_sets[k - 1] {
            report.push(Constraint::SharedSetMismatch, Some(k), shared.clone(), s.shared_sets[k - 1].len() as f64);
        }
        if !c.shared_choices.contains(&shared.len()) {
            report.push(Constraint::SharedCount, Some(k), shared.clone(), shared.len() as f64);
        }
        for (i, r) in run.iter_mut().enumerate() {
            *r = if shared.contains(&EntityId(i as u32)) { *r + 1 } else { 0 };
            if *r > c.max_consecutive_shared {
                report.push(Constraint::ConsecutiveShared, Some(k), vec![EntityId(i as u32)], *r as f64);
            }
        }
        let either: Vec<EntityId> = va.union(&vb).copied().collect();
        let pos = s.positions_at(k);
        for (x, a) in either.iter().enumerate() {
            for b in &either[x + 1..] {
                let (ea, eb) = (&s.entities[a.0 as usize], &s.entities[b.0 as usize]);
                let d = pos[a.0 as usize].distance(pos[b.0 as usize]);
                if d < ea.size + eb.size + c.min_center_gap_margin {
                    report.push(Constraint::MinGap, Some(k), vec![*a, *b], d);
                }
            }
        }
    }
    report
}
