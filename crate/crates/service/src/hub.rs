//! Transport-free session core.
//!
//! [`SessionHub`] owns every session and turns client frames into server
//! frames. It never blocks and never reads the clock itself, so the
//! WebSocket layer, crash recovery and fuzz tests all drive it the same way.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use seqref_core::agents::{AgentPolicy, PolicySpec, UTTERANCE_SOFT_CAP};
use seqref_core::game::{observe, GameConfig, GameError, GameEvent, GameState, Phase};
use seqref_core::scenario::{generate_scenario, Scenario, ScenarioConfig};
use seqref_core::transcript::{records_for, GameLog, Players, TranscriptRecord, TranscriptWriter};
use seqref_core::Seat;
use thiserror::Error;

use crate::protocol::{
    decode_client, encode_server, ClientFrame, ClientMessage, EntityTrack, ErrorCode, JoinPayload, Reward,
    ServerMessage, SessionStatus, TurnStart,
};

pub type ConnId = u64;

/// An encoded frame bound for one connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub conn: ConnId,
    pub text: String,
}

pub trait ScenarioSource: Send {
    fn next_scenario(&mut self) -> Option<Arc<Scenario>>;
}

/// A fixed list, handed out in order.
pub struct ScenarioQueue(pub VecDeque<Arc<Scenario>>);

impl ScenarioSource for ScenarioQueue {
    fn next_scenario(&mut self) -> Option<Arc<Scenario>> {
        self.0.pop_front()
    }
}

/// Generates scenarios from consecutive seeds, optionally a limited number.
pub struct SeededScenarios {
    pub next_seed: u64,
    pub remaining: Option<u64>,
    pub config: ScenarioConfig,
}

impl ScenarioSource for SeededScenarios {
    fn next_scenario(&mut self) -> Option<Arc<Scenario>> {
        if let Some(r) = self.remaining.as_mut() {
            if *r == 0 {
                return None;
            }
            *r -= 1;
        }
        let seed = self.next_seed;
        self.next_seed += 1;
        generate_scenario(seed, &self.config).ok().map(Arc::new)
    }
}

/// Append-only persistence of transcript records, one stream per session.
pub trait EventStore: Send {
    fn append(&mut self, session: &str, record: &TranscriptRecord) -> std::io::Result<()>;
}

pub struct NullStore;

impl EventStore for NullStore {
    fn append(&mut self, _: &str, _: &TranscriptRecord) -> std::io::Result<()> {
        Ok(())
    }
}

/// In-memory store; clones share the same files.
#[derive(Clone, Default)]
pub struct MemoryStore {
    pub files: Arc<Mutex<BTreeMap<String, String>>>,
}

impl EventStore for MemoryStore {
    fn append(&mut self, session: &str, record: &TranscriptRecord) -> std::io::Result<()> {
        let mut files = self.files.lock().expect("store lock");
        let f = files.entry(session.to_string()).or_default();
        f.push_str(&record.to_line());
        f.push('\n');
        Ok(())
    }
}

/// Writes `<dir>/<session>.jsonl`, one line per record.
pub struct FileStore {
    pub dir: PathBuf,
}

impl EventStore for FileStore {
    fn append(&mut self, session: &str, record: &TranscriptRecord) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let mut f =
            std::fs::OpenOptions::new().create(true).append(true).open(self.dir.join(format!("{session}.jsonl")))?;
        writeln!(f, "{}", record.to_line())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// Sessions wait for a second human.
    Humans,
    /// The second seat is filled by a scripted policy as soon as one human joins.
    Bot(PolicySpec),
}

#[derive(Debug, Clone, Copy)]
pub struct HubConfig {
    pub pairing: Pairing,
    pub abandon_after_ms: u64,
    pub game: GameConfig,
}

impl Default for HubConfig {
    fn default() -> Self {
        HubConfig { pairing: Pairing::Humans, abandon_after_ms: 10 * 60 * 1000, game: GameConfig::default() }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum HubError {
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error("no session `{0}`")]
    UnknownSession(String),
    #[error("seat {0} is taken")]
    SeatTaken(Seat),
    #[error("no scenarios left")]
    ScenarioExhausted,
    #[error("session is over")]
    Closed,
}

fn policy_by_name(name: &str) -> Result<PolicySpec, HubError> {
    name.parse().map_err(|_| HubError::UnknownPolicy(name.to_string()))
}

const BOT_PREFIX: &str = "bot:";

enum SeatBinding {
    Open,
    Human { name: String, conn: Option<ConnId> },
    Bot { name: String, policy: Box<dyn AgentPolicy + Send> },
}

impl SeatBinding {
    fn conn(&self) -> Option<ConnId> {
        match self {
            SeatBinding::Human { conn, .. } => *conn,
            _ => None,
        }
    }

    fn is_bot(&self) -> bool {
        matches!(self, SeatBinding::Bot { .. })
    }

    fn label(&self) -> String {
        match self {
            SeatBinding::Open => "open".into(),
            SeatBinding::Human { name, .. } => name.clone(),
            SeatBinding::Bot { name, .. } => format!("{BOT_PREFIX}{name}"),
        }
    }

    fn bot(spec: PolicySpec, name: &str) -> SeatBinding {
        SeatBinding::Bot { name: name.to_string(), policy: spec.build() }
    }
}

/// Frames queued during one call, encoded once the call is done.
#[derive(Default)]
struct Outbox(Vec<(ConnId, ServerMessage)>);

impl Outbox {
    fn push(&mut self, conn: Option<ConnId>, m: ServerMessage) {
        if let Some(c) = conn {
            self.0.push((c, m));
        }
    }
}

struct Session {
    id: String,
    scenario: Arc<Scenario>,
    state: GameState,
    seats: [SeatBinding; 2],
    status: SessionStatus,
    writer: Option<TranscriptWriter>,
    last_activity: u64,
    bot_seed: u64,
}

/// Turn-start payload for one seat, built only from that seat's views.
pub fn turn_start(scenario: &Scenario, seat: Seat, k: usize) -> TurnStart {
    let obs = observe(scenario, seat, k);
    let moves = scenario.turn_moves(k);
    let entities = obs
        .looks
        .iter()
        .map(|(id, look)| {
            let t = &moves[id];
            EntityTrack { id: *id, color: look.color, size: look.size, p0: t.p0, p1: t.p1, p2: t.p2 }
        })
        .collect();
    TurnStart {
        turn: k,
        frames: obs.frames.len(),
        view_before: obs.start.view,
        view: scenario.view(seat, k),
        shift: scenario.shift(seat, k),
        entities,
        selectable_ids: obs.selectable_ids,
    }
}

/// Everything `seat` has been shown so far, rebuilt from the event log.
fn seat_history(scenario: &Scenario, state: &GameState, seat: Seat, status: SessionStatus) -> Vec<ServerMessage> {
    let mut out = Vec::new();
    let mut lst_so_far = 0;
    let mut broken = false;
    for e in state.events() {
        match e {
            GameEvent::AnimationDone { turn } => out.push(ServerMessage::TurnStart(turn_start(scenario, seat, *turn))),
            GameEvent::Utterance { agent, turn, text } => {
                out.push(ServerMessage::Utterance { turn: *turn, from: *agent, text: text.clone() })
            }
            GameEvent::Selection { agent, turn, entity } if *agent == seat => {
                out.push(ServerMessage::SelectionAck { turn: *turn, entity: *entity })
            }
            GameEvent::Selection { .. } => {}
            GameEvent::Resolution { turn } => {
                let o = &state.outcomes()[turn - 1];
                if o.success && !broken {
                    lst_so_far += 1;
                } else {
                    broken = true;
                }
                out.push(turn_result(o, seat, lst_so_far));
            }
        }
    }
    if matches!(status, SessionStatus::Finished | SessionStatus::Abandoned) {
        out.push(game_over(state, status));
    }
    out
}

fn turn_result(o: &seqref_core::game::TurnOutcome, seat: Seat, lst: usize) -> ServerMessage {
    ServerMessage::TurnResult {
        turn: o.turn,
        success: o.success,
        lst,
        yours: o.selections[seat.index()],
        partners: o.selections[seat.partner().index()],
    }
}

fn game_over(state: &GameState, status: SessionStatus) -> ServerMessage {
    ServerMessage::GameOver {
        status,
        lst: state.lst(),
        completed_turns: state.completed_turns(),
        reward: Reward::for_lst(state.lst()),
    }
}

fn game_error_code(e: &GameError) -> ErrorCode {
    match e {
        GameError::IllegalSelection { .. } => ErrorCode::IllegalSelection,
        GameError::EmptyUtterance | GameError::UtteranceTooLong { .. } => ErrorCode::BadUtterance,
        _ => ErrorCode::WrongPhase,
    }
}

impl Session {
    fn emit(&self, out: &mut Outbox, seat: Seat, m: ServerMessage) {
        out.push(self.seats[seat.index()].conn(), m);
    }

    fn broadcast(&self, out: &mut Outbox, m: ServerMessage) {
        self.emit(out, Seat::A, m.clone());
        self.emit(out, Seat::B, m);
    }

    fn state_message(&self, seat: Seat) -> ServerMessage {
        let partner = &self.seats[seat.partner().index()];
        ServerMessage::SessionState {
            session_id: self.id.clone(),
            seat,
            status: self.status,
            turn: self.state.turn(),
            lst: self.state.lst(),
            partner_present: partner.is_bot() || partner.conn().is_some(),
            history: seat_history(&self.scenario, &self.state, seat, self.status),
        }
    }

    fn record(&mut self, event: GameEvent, store: &mut dyn EventStore, now: u64) -> Result<(), GameError> {
        self.state.apply(event.clone())?;
        if let Some(w) = self.writer.as_mut() {
            let r = w.event(&event, &self.state, now);
            if let Err(e) = store.append(&self.id, r) {
                tracing::error!(session = %self.id, "persisting event failed: {e}");
            }
        }
        Ok(())
    }

    fn start_game(&mut self, out: &mut Outbox, store: &mut dyn EventStore, now: u64) {
        let players = Players { a: self.seats[0].label(), b: self.seats[1].label() };
        let w = TranscriptWriter::start(&self.id, &self.scenario, self.state.config(), &players, now);
        if let Err(e) = store.append(&self.id, &w.records()[0]) {
            tracing::error!(session = %self.id, "persisting start failed: {e}");
        }
        self.writer = Some(w);
        self.status = SessionStatus::Active;
        for seat in [Seat::A, Seat::B] {
            if let SeatBinding::Bot { policy, .. } = &mut self.seats[seat.index()] {
                policy.begin_game(seat, self.bot_seed);
            }
        }
        self.advance(out, store, now);
    }

    fn bot_mut(&mut self, seat: Seat) -> Option<&mut Box<dyn AgentPolicy + Send>> {
        match &mut self.seats[seat.index()] {
            SeatBinding::Bot { policy, .. } => Some(policy),
            _ => None,
        }
    }

    /// Applies queued utterances in order, letting bots answer each other.
    fn pump(&mut self, mut queue: VecDeque<(Seat, String)>, out: &mut Outbox, store: &mut dyn EventStore, now: u64) {
        let k = self.state.turn();
        let mut said = 0;
        while let Some((from, text)) = queue.pop_front() {
            if said >= UTTERANCE_SOFT_CAP {
                break;
            }
            if self.record(GameEvent::Utterance { agent: from, turn: k, text: text.clone() }, store, now).is_err() {
                tracing::warn!(session = %self.id, "bot utterance rejected");
                continue;
            }
            said += 1;
            self.broadcast(out, ServerMessage::Utterance { turn: k, from, text: text.clone() });
            if let Some(bot) = self.bot_mut(from.partner()) {
                queue.extend(bot.on_partner_utterance(&text).into_iter().map(|u| (from.partner(), u)));
            }
        }
    }

    fn bot_select(&mut self, seat: Seat, store: &mut dyn EventStore, now: u64) {
        let k = self.state.turn();
        let Some(bot) = self.bot_mut(seat) else { return };
        let mut entity = bot.decide_selection();
        if !self.state.selectable(seat, k).contains(&entity) {
            tracing::warn!(session = %self.id, %seat, "bot chose an unselectable dot");
            entity = *self.state.selectable(seat, k).iter().next().expect("seven selectable dots");
        }
        self.record(GameEvent::Selection { agent: seat, turn: k, entity }, store, now).expect("legal selection in dialogue");
    }

    /// Runs automatic steps until a human has to act or the game ends.
    fn advance(&mut self, out: &mut Outbox, store: &mut dyn EventStore, now: u64) {
        loop {
            match self.state.phase() {
                Phase::Ended => {
                    self.finish(SessionStatus::Finished, out, store, now);
                    return;
                }
                Phase::Animating => {
                    let k = self.state.turn();
                    self.record(GameEvent::AnimationDone { turn: k }, store, now).expect("animating");
                    let mut openers = VecDeque::new();
                    for seat in [Seat::A, Seat::B] {
                        self.emit(out, seat, ServerMessage::TurnStart(turn_start(&self.scenario, seat, k)));
                        let obs = self.state.observation(seat, k).expect("current turn");
                        if let Some(bot) = self.bot_mut(seat) {
                            openers.extend(bot.on_observation(&obs).into_iter().map(|u| (seat, u)));
                        }
                    }
                    self.pump(openers, out, store, now);
                }
                Phase::Dialogue if self.seats.iter().all(SeatBinding::is_bot) => {
                    self.bot_select(Seat::A, store, now);
                    self.bot_select(Seat::B, store, now);
                }
                Phase::Dialogue => return,
                Phase::Resolved => self.resolve(out, store, now),
            }
        }
    }

    fn resolve(&mut self, out: &mut Outbox, store: &mut dyn EventStore, now: u64) {
        let k = self.state.turn();
        self.record(GameEvent::Resolution { turn: k }, store, now).expect("both selections in");
        let outcome = self.state.outcomes().last().expect("resolved").clone();
        let lst = self.state.lst();
        for seat in [Seat::A, Seat::B] {
            self.emit(out, seat, turn_result(&outcome, seat, lst));
            if let Some(bot) = self.bot_mut(seat) {
                bot.on_turn_result(&outcome);
            }
        }
    }

    fn finish(&mut self, status: SessionStatus, out: &mut Outbox, store: &mut dyn EventStore, now: u64) {
        self.status = status;
        let reward = Reward::for_lst(self.state.lst());
        if let Some(w) = self.writer.as_mut() {
            let payload = serde_json::json!({
                "status": status,
                "lst": self.state.lst(),
                "completed_turns": self.state.completed_turns(),
                "reward": reward,
            });
            let r = w.footer(self.state.turn(), payload, now);
            if let Err(e) = store.append(&self.id, r) {
                tracing::error!(session = %self.id, "persisting footer failed: {e}");
            }
        }
        self.broadcast(out, game_over(&self.state, status));
    }
}

struct Conn {
    session: Option<(String, Seat)>,
    out_seq: u64,
    last_in: Option<u64>,
}

pub struct SessionHub {
    config: HubConfig,
    source: Box<dyn ScenarioSource>,
    store: Box<dyn EventStore>,
    sessions: BTreeMap<String, Session>,
    conns: BTreeMap<ConnId, Conn>,
    next_session: u64,
}

impl SessionHub {
    pub fn new(config: HubConfig, source: Box<dyn ScenarioSource>, store: Box<dyn EventStore>) -> Self {
        SessionHub { config, source, store, sessions: BTreeMap::new(), conns: BTreeMap::new(), next_session: 1 }
    }

    /// Rebuilds unfinished sessions from their transcripts. Humans must
    /// rejoin; scripted seats are restored by replaying what they saw.
    pub fn recover(
        config: HubConfig,
        source: Box<dyn ScenarioSource>,
        store: Box<dyn EventStore>,
        logs: &[GameLog],
        now: u64,
    ) -> Result<Self, HubError> {
        let mut hub = SessionHub::new(config, source, store);
        for log in logs.iter().filter(|l| l.footer.is_none()) {
            let state = log.replay().map_err(|_| HubError::UnknownSession(log.game_id.clone()))?;
            let bot_seed = log.scenario.seed;
            let bind = |label: &str, seat: Seat| -> Result<SeatBinding, HubError> {
                match label.strip_prefix(BOT_PREFIX) {
                    Some(name) => {
                        let mut policy = policy_by_name(name)?.build();
                        warm_bot(policy.as_mut(), &log.scenario, &state, seat, bot_seed);
                        Ok(SeatBinding::Bot { name: name.to_string(), policy })
                    }
                    None => Ok(SeatBinding::Human { name: label.to_string(), conn: None }),
                }
            };
            let seats = [bind(&log.players.a, Seat::A)?, bind(&log.players.b, Seat::B)?];
            let records = records_for(log).map_err(|_| HubError::UnknownSession(log.game_id.clone()))?;
            let session = Session {
                id: log.game_id.clone(),
                scenario: log.scenario.clone(),
                state,
                seats,
                status: SessionStatus::Active,
                writer: Some(TranscriptWriter::resume(records)),
                last_activity: now,
                bot_seed,
            };
            hub.sessions.insert(session.id.clone(), session);
        }
        hub.next_session = hub.sessions.len() as u64 + 1;
        Ok(hub)
    }

    pub fn game_state(&self, session: &str) -> Option<&GameState> {
        self.sessions.get(session).map(|s| &s.state)
    }

    pub fn status(&self, session: &str) -> Option<SessionStatus> {
        self.sessions.get(session).map(|s| s.status)
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.keys().cloned().collect()
    }

    pub fn connect(&mut self, conn: ConnId) {
        self.conns.entry(conn).or_insert(Conn { session: None, out_seq: 0, last_in: None });
    }

    fn flush(&mut self, out: Outbox) -> Vec<Outbound> {
        out.0
            .into_iter()
            .filter_map(|(conn, m)| {
                let c = self.conns.get_mut(&conn)?;
                c.out_seq += 1;
                Some(Outbound { conn, text: encode_server(c.out_seq, &m) })
            })
            .collect()
    }

    /// Handles one text frame from `conn`.
    pub fn handle_text(&mut self, conn: ConnId, text: &str, now: u64) -> Vec<Outbound> {
        self.connect(conn);
        let mut out = Outbox::default();
        let decoded = decode_client(text);
        let seq = match &decoded {
            Ok(f) => Some(f.seq),
            Err((seq, _)) => *seq,
        };
        if let Some(seq) = seq {
            let c = self.conns.get_mut(&conn).expect("connected");
            if c.last_in.is_some_and(|last| seq <= last) {
                // Duplicate or stale delivery.
                return Vec::new();
            }
            c.last_in = Some(seq);
        }
        match decoded {
            Ok(frame) => self.dispatch(conn, frame, now, &mut out),
            Err((_, e)) => out.push(Some(conn), ServerMessage::error(e.code(), e.to_string())),
        }
        self.flush(out)
    }

    fn dispatch(&mut self, conn: ConnId, frame: ClientFrame, now: u64, out: &mut Outbox) {
        if let ClientMessage::Join(j) = frame.message {
            return self.join(conn, j, now, out);
        }
        let Some((sid, seat)) = self.conns[&conn].session.clone() else {
            return out.push(Some(conn), ServerMessage::error(ErrorCode::NotJoined, "join a session first"));
        };
        let store = self.store.as_mut();
        let session = self.sessions.get_mut(&sid).expect("bound sessions exist");
        session.last_activity = now;
        match frame.message {
            ClientMessage::Join(_) => unreachable!(),
            ClientMessage::ReplayRequest => out.push(Some(conn), session.state_message(seat)),
            ClientMessage::Leave => {
                self.detach(conn, out);
            }
            _ if session.status != SessionStatus::Active => {
                let code = if session.status == SessionStatus::Waiting { ErrorCode::WrongPhase } else { ErrorCode::SessionClosed };
                out.push(Some(conn), ServerMessage::error(code, format!("session is {:?}", session.status).to_lowercase()));
            }
            ClientMessage::Utterance { text } => {
                let k = session.state.turn();
                match session.record(GameEvent::Utterance { agent: seat, turn: k, text: text.clone() }, store, now) {
                    Err(e) => out.push(Some(conn), ServerMessage::error(game_error_code(&e), e.to_string())),
                    Ok(()) => {
                        session.broadcast(out, ServerMessage::Utterance { turn: k, from: seat, text: text.clone() });
                        if let Some(bot) = session.bot_mut(seat.partner()) {
                            let replies: VecDeque<_> =
                                bot.on_partner_utterance(&text).into_iter().map(|u| (seat.partner(), u)).collect();
                            session.pump(replies, out, store, now);
                        }
                    }
                }
            }
            ClientMessage::Select { entity } => {
                let k = session.state.turn();
                match session.record(GameEvent::Selection { agent: seat, turn: k, entity }, store, now) {
                    Err(e) => out.push(Some(conn), ServerMessage::error(game_error_code(&e), e.to_string())),
                    Ok(()) => {
                        session.emit(out, seat, ServerMessage::SelectionAck { turn: k, entity });
                        if session.seats[seat.partner().index()].is_bot() {
                            session.bot_select(seat.partner(), store, now);
                        }
                        session.advance(out, store, now);
                    }
                }
            }
        }
    }

    fn join(&mut self, conn: ConnId, j: JoinPayload, now: u64, out: &mut Outbox) {
        if self.conns[&conn].session.is_some() {
            return out.push(Some(conn), ServerMessage::error(ErrorCode::AlreadyJoined, "already in a session"));
        }
        let partner = match j.partner.as_deref().map(policy_by_name).transpose() {
            Ok(p) => p.map(|spec| (spec, j.partner.clone().expect("named"))),
            Err(e) => return out.push(Some(conn), ServerMessage::error(ErrorCode::UnknownPolicy, e.to_string())),
        };
        let sid = match j.session_id.clone().filter(|id| self.sessions.contains_key(id)) {
            Some(id) => id,
            None => {
                let Some(scenario) = self.source.next_scenario() else {
                    return out.push(Some(conn), ServerMessage::error(ErrorCode::ScenarioExhausted, "no scenarios left"));
                };
                let id = j.session_id.clone().unwrap_or_else(|| loop {
                    let id = format!("s{}", self.next_session);
                    self.next_session += 1;
                    if !self.sessions.contains_key(&id) {
                        break id;
                    }
                });
                let session = Session {
                    id: id.clone(),
                    state: GameState::new_unchecked(scenario.clone(), self.config.game),
                    bot_seed: scenario.seed,
                    scenario,
                    seats: [SeatBinding::Open, SeatBinding::Open],
                    status: SessionStatus::Waiting,
                    writer: None,
                    last_activity: now,
                };
                self.sessions.insert(id.clone(), session);
                id
            }
        };
        let session = self.sessions.get_mut(&sid).expect("just ensured");
        if matches!(session.status, SessionStatus::Finished | SessionStatus::Abandoned) {
            return out.push(Some(conn), ServerMessage::error(ErrorCode::SessionClosed, "session is over"));
        }
        let free = |b: &SeatBinding| matches!(b, SeatBinding::Open | SeatBinding::Human { conn: None, .. });
        let seat = match j.seat {
            Some(s) if free(&session.seats[s.index()]) => s,
            Some(s) => return out.push(Some(conn), ServerMessage::error(ErrorCode::SessionFull, format!("seat {s} is taken"))),
            None => match [Seat::A, Seat::B].into_iter().find(|s| matches!(session.seats[s.index()], SeatBinding::Open)) {
                Some(s) => s,
                None => return out.push(Some(conn), ServerMessage::error(ErrorCode::SessionFull, "both seats are taken")),
            },
        };
        let name = match &session.seats[seat.index()] {
            SeatBinding::Human { name, .. } => name.clone(),
            _ => j.name.clone().unwrap_or_else(|| "human".to_string()),
        };
        session.seats[seat.index()] = SeatBinding::Human { name, conn: Some(conn) };
        session.last_activity = now;
        self.conns.get_mut(&conn).expect("connected").session = Some((sid.clone(), seat));
        let other = seat.partner();
        if matches!(session.seats[other.index()], SeatBinding::Open) {
            let bot = partner.or(match self.config.pairing {
                Pairing::Bot(spec) => Some((spec, spec_name(&spec).to_string())),
                Pairing::Humans => None,
            });
            if let Some((spec, name)) = bot {
                session.seats[other.index()] = SeatBinding::bot(spec, &name);
            }
        }
        out.push(Some(conn), session.state_message(seat));
        if let Some(c) = session.seats[other.index()].conn() {
            out.push(Some(c), session.state_message(other));
        }
        let ready = session.seats.iter().all(|s| !matches!(s, SeatBinding::Open));
        let store = self.store.as_mut();
        if session.status == SessionStatus::Waiting && ready {
            session.start_game(out, store, now);
        } else if session.status == SessionStatus::Active {
            session.advance(out, store, now);
        }
    }

    fn detach(&mut self, conn: ConnId, out: &mut Outbox) {
        let Some((sid, seat)) = self.conns.get_mut(&conn).and_then(|c| c.session.take()) else { return };
        let Some(session) = self.sessions.get_mut(&sid) else { return };
        if session.status == SessionStatus::Waiting {
            session.seats[seat.index()] = SeatBinding::Open;
        } else if let SeatBinding::Human { conn: c, .. } = &mut session.seats[seat.index()] {
            *c = None;
        }
        if let Some(c) = session.seats[seat.partner().index()].conn() {
            out.push(Some(c), session.state_message(seat.partner()));
        }
    }

    /// Drops a closed connection; its seat stays reserved for a rejoin.
    pub fn disconnect(&mut self, conn: ConnId, now: u64) -> Vec<Outbound> {
        let mut out = Outbox::default();
        if let Some((sid, _)) = self.conns.get(&conn).and_then(|c| c.session.clone()) {
            if let Some(s) = self.sessions.get_mut(&sid) {
                s.last_activity = now;
            }
        }
        self.detach(conn, &mut out);
        let frames = self.flush(out);
        self.conns.remove(&conn);
        frames
    }

    /// Marks sessions idle for too long as abandoned.
    pub fn tick(&mut self, now: u64) -> Vec<Outbound> {
        let mut out = Outbox::default();
        let limit = self.config.abandon_after_ms;
        let store = self.store.as_mut();
        for s in self.sessions.values_mut() {
            let live = matches!(s.status, SessionStatus::Waiting | SessionStatus::Active);
            if live && now.saturating_sub(s.last_activity) >= limit {
                s.finish(SessionStatus::Abandoned, &mut out, store, now);
            }
        }
        self.flush(out)
    }

    /// Seats a scripted policy in the free seat of a waiting session.
    pub fn pair_with_bot(&mut self, session: &str, policy: &str, now: u64) -> Result<Vec<Outbound>, HubError> {
        let spec = policy_by_name(policy)?;
        let s = self.sessions.get_mut(session).ok_or_else(|| HubError::UnknownSession(session.to_string()))?;
        if s.status != SessionStatus::Waiting {
            return Err(HubError::Closed);
        }
        let seat = [Seat::A, Seat::B]
            .into_iter()
            .find(|x| matches!(s.seats[x.index()], SeatBinding::Open))
            .ok_or(HubError::SeatTaken(Seat::B))?;
        s.seats[seat.index()] = SeatBinding::bot(spec, policy);
        let mut out = Outbox::default();
        if s.seats.iter().all(|b| !matches!(b, SeatBinding::Open)) {
            s.start_game(&mut out, self.store.as_mut(), now);
        }
        Ok(self.flush(out))
    }

    /// Plays a whole bot-versus-bot game on the next scenario.
    pub fn run_bot_session(&mut self, a: &str, b: &str, seed: u64, now: u64) -> Result<String, HubError> {
        let (sa, sb) = (policy_by_name(a)?, policy_by_name(b)?);
        let scenario = self.source.next_scenario().ok_or(HubError::ScenarioExhausted)?;
        let id = format!("s{}", self.next_session);
        self.next_session += 1;
        let mut session = Session {
            id: id.clone(),
            state: GameState::new_unchecked(scenario.clone(), self.config.game),
            scenario,
            seats: [SeatBinding::bot(sa, a), SeatBinding::bot(sb, b)],
            status: SessionStatus::Waiting,
            writer: None,
            last_activity: now,
            bot_seed: seed,
        };
        let mut out = Outbox::default();
        session.start_game(&mut out, self.store.as_mut(), now);
        self.sessions.insert(id.clone(), session);
        Ok(id)
    }
}

fn spec_name(spec: &PolicySpec) -> &'static str {
    match spec {
        PolicySpec::Random => "random",
        PolicySpec::Template(_) => "template",
    }
}

/// Replays to a fresh policy what it saw before a restart.
fn warm_bot(policy: &mut dyn AgentPolicy, scenario: &Scenario, state: &GameState, seat: Seat, seed: u64) {
    policy.begin_game(seat, seed);
    let mut shown = 0;
    for e in state.events() {
        match e {
            GameEvent::AnimationDone { turn } => {
                let _ = policy.on_observation(&observe(scenario, seat, *turn));
                shown = *turn;
            }
            GameEvent::Utterance { agent, text, .. } if *agent != seat => {
                let _ = policy.on_partner_utterance(text);
            }
            GameEvent::Resolution { turn } => policy.on_turn_result(&state.outcomes()[turn - 1]),
            _ => {}
        }
    }
    debug_assert!(shown <= state.turn());
}
