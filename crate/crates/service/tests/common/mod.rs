#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use seqref_core::game::{observe, GameEvent, GameState};
use seqref_core::scenario::{generate_scenario, Scenario, ScenarioConfig};
use seqref_core::{EntityId, Seat};
use seqref_service::hub::ScenarioSource;
use serde_json::Value;

/// Scenarios for seeds `1..=n`, generated once per test binary.
pub fn pool(n: usize) -> Vec<Arc<Scenario>> {
    static POOL: OnceLock<std::sync::Mutex<Vec<Arc<Scenario>>>> = OnceLock::new();
    let mut p = POOL.get_or_init(Default::default).lock().unwrap();
    while p.len() < n {
        let seed = p.len() as u64 + 1;
        p.push(Arc::new(
            generate_scenario(seed, &ScenarioConfig::default()).unwrap(),
        ));
    }
    p[..n].to_vec()
}

/// Hands out the same scenarios round robin, forever.
pub struct Cycle {
    pub scenarios: Vec<Arc<Scenario>>,
    pub next: usize,
}

impl ScenarioSource for Cycle {
    fn next_scenario(&mut self) -> Option<Arc<Scenario>> {
        let s = self.scenarios[self.next % self.scenarios.len()].clone();
        self.next += 1;
        Some(s)
    }
}

/// Every selection `seat` made in `turn`; a pending choice may be replaced.
fn selections_of(state: &GameState, seat: Seat, turn: usize) -> Vec<EntityId> {
    state
        .events()
        .iter()
        .filter_map(|e| match e {
            GameEvent::Selection {
                agent,
                turn: t,
                entity,
            } if *agent == seat && *t == turn => Some(*entity),
            _ => None,
        })
        .collect()
}

fn close(a: &Value, x: f64, y: f64) -> bool {
    let (ax, ay) = (
        a["x"].as_f64().unwrap_or(f64::NAN),
        a["y"].as_f64().unwrap_or(f64::NAN),
    );
    (ax - x).abs() < 1e-9 && (ay - y).abs() < 1e-9
}

/// Checks one serialized server frame sent to `seat` for information the
/// seat must not have: partner views, shared sets, unresolved partner
/// selections, or dots outside its own observation.
pub fn check_frame(
    text: &str,
    scenario: &Scenario,
    seat: Seat,
    state: &GameState,
) -> Result<(), String> {
    if text.contains('\n') {
        return Err("frame contains a newline".into());
    }
    let v: Value = serde_json::from_str(text).map_err(|e| format!("not JSON: {e}"))?;
    walk(&v, scenario, seat, state)
}

fn walk(v: &Value, scenario: &Scenario, seat: Seat, state: &GameState) -> Result<(), String> {
    match v {
        Value::Array(xs) => xs.iter().try_for_each(|x| walk(x, scenario, seat, state)),
        Value::Object(m) => {
            if m.contains_key("shared_sets") || m.contains_key("shared_count") {
                return Err("shared set information sent".into());
            }
            if let Some(c) = m.get("center") {
                let own = scenario.views[seat.index()]
                    .iter()
                    .any(|w| close(c, w.center.x, w.center.y));
                if !own {
                    return Err(format!("foreign view {c}"));
                }
            }
            if m.contains_key("view_offset") {
                return Err("raw frames sent".into());
            }
            let kind = m.get("type").and_then(Value::as_str);
            let p = m.get("payload");
            match (kind, p) {
                (Some("selection_ack"), Some(p)) => {
                    let turn = p["turn"].as_u64().unwrap() as usize;
                    let e = EntityId(p["entity"].as_u64().unwrap() as u32);
                    if !selections_of(state, seat, turn).contains(&e) {
                        return Err(format!("ack for a selection that is not ours: {p}"));
                    }
                }
                (Some("turn_start"), Some(p)) => {
                    let k = p["turn"].as_u64().unwrap() as usize;
                    let obs = observe(scenario, seat, k);
                    let sel: Vec<u64> = p["selectable_ids"]
                        .as_array()
                        .unwrap()
                        .iter()
                        .map(|x| x.as_u64().unwrap())
                        .collect();
                    let own: Vec<u64> = obs.selectable_ids.iter().map(|e| e.0 as u64).collect();
                    if sel != own {
                        return Err(format!(
                            "selectable ids {sel:?} are not this seat's {own:?}"
                        ));
                    }
                    let drawn: BTreeSet<u64> = obs.looks.keys().map(|e| e.0 as u64).collect();
                    for e in p["entities"].as_array().unwrap() {
                        if !drawn.contains(&e["id"].as_u64().unwrap()) {
                            return Err(format!("undrawn dot {} sent", e["id"]));
                        }
                    }
                }
                (Some("turn_result"), Some(p)) => {
                    let k = p["turn"].as_u64().unwrap() as usize;
                    if state.outcomes().len() < k {
                        return Err(format!("result for unresolved turn {k}"));
                    }
                }
                _ => {}
            }
            m.values().try_for_each(|x| walk(x, scenario, seat, state))
        }
        _ => Ok(()),
    }
}

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqref_service::hub::{ConnId, HubConfig, NullStore, Outbound, SessionHub};
use seqref_service::protocol::{encode_client, ClientMessage, JoinPayload};
use std::collections::BTreeMap;

#[derive(Debug, Default)]
pub struct FuzzSummary {
    pub sessions: usize,
    pub frames: usize,
    pub duplicates: usize,
    pub problems: Vec<String>,
}

struct FuzzConn {
    id: ConnId,
    seq: u64,
    last_text: Option<String>,
    bound: Option<(String, Seat)>,
    last_out: u64,
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const TEXTS: &[&str] = &[
        "hi",
        "do you see a small dark dot moving left slowly, ending at top left?",
        "yes, selecting it.",
        "i still see the same dot.",
        "",
        "{\"type\":\"select\"}",
    ];
    if rng.gen_bool(0.05) {
        "x".repeat(rng.gen_range(400..700))
    } else {
        TEXTS.choose(rng).unwrap().to_string()
    }
}

/// A bad frame, and whether it still carries a readable seq.
fn garbage(rng: &mut ChaCha8Rng, seq: u64) -> (String, bool) {
    let text = match rng.gen_range(0..6) {
        0 => "not json".into(),
        1 => format!(r#"{{"v":2,"type":"leave","seq":{seq},"payload":{{}}}}"#),
        2 => format!(r#"{{"v":1,"type":"teleport","seq":{seq},"payload":{{}}}}"#),
        3 => format!(r#"{{"v":1,"type":"select","seq":{seq},"payload":{{"entity":"seven"}}}}"#),
        4 => format!(r#"{{"v":1,"type":"join","seq":{seq},"payload":{{"bogus":1}}}}"#),
        _ => "[1,2,3]".into(),
    };
    let has_seq = text.contains("\"seq\"");
    (text, has_seq)
}

/// Drives random traffic through a hub until `sessions` sessions exist,
/// checking every outbound frame for leaks and ordering.
pub fn run_fuzz(sessions: usize, seed: u64) -> FuzzSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = Cycle {
        scenarios: pool(8),
        next: 0,
    };
    let mut hub = SessionHub::new(HubConfig::default(), Box::new(source), Box::new(NullStore));
    let mut summary = FuzzSummary::default();
    let mut next_conn: ConnId = 1;
    let mut now = 0u64;
    let mut batch = 0usize;
    while hub.session_ids().len() < sessions {
        batch += 1;
        let ids = [format!("f{batch}a"), format!("f{batch}b")];
        let mut conns: Vec<FuzzConn> = (0..3)
            .map(|_| {
                next_conn += 1;
                FuzzConn {
                    id: next_conn,
                    seq: 0,
                    last_text: None,
                    bound: None,
                    last_out: 0,
                }
            })
            .collect();
        for _ in 0..rng.gen_range(10..60) {
            now += rng.gen_range(0..20_000);
            let ci = rng.gen_range(0..conns.len());
            let op = rng.gen_range(0..100);
            let out: Vec<Outbound>;
            let mut duplicate = false;
            {
                let c = &mut conns[ci];
                let bound_state = c
                    .bound
                    .as_ref()
                    .and_then(|(s, _)| hub.game_state(s).map(|g| (g.turn(), g.clone())));
                let msg = match op {
                    0..=24 => Some(ClientMessage::Join(JoinPayload {
                        session_id: Some(ids.choose(&mut rng).unwrap().clone()),
                        name: Some("w".into()),
                        seat: if rng.gen_bool(0.2) {
                            Some(*Seat::BOTH.choose(&mut rng).unwrap())
                        } else {
                            None
                        },
                        partner: match rng.gen_range(0..10) {
                            0 => Some("template".into()),
                            1 => Some("random".into()),
                            2 => Some("gpt".into()),
                            _ => None,
                        },
                    })),
                    25..=44 => Some(ClientMessage::Utterance {
                        text: random_text(&mut rng),
                    }),
                    45..=69 => {
                        let legal = match (&c.bound, &bound_state) {
                            (Some((_, seat)), Some((k, g)))
                                if rng.gen_bool(0.8) && *k <= g.scenario().num_turns() =>
                            {
                                g.selectable(*seat, *k)
                                    .iter()
                                    .copied()
                                    .collect::<Vec<_>>()
                                    .choose(&mut rng)
                                    .copied()
                            }
                            _ => None,
                        };
                        let entity = legal.unwrap_or(EntityId(rng.gen_range(0..60)));
                        Some(ClientMessage::Select { entity })
                    }
                    70..=74 => Some(ClientMessage::ReplayRequest),
                    75..=78 => Some(ClientMessage::Leave),
                    79..=86 => None,
                    _ => {
                        duplicate = c.last_text.is_some();
                        None
                    }
                };
                let (text, has_seq) = match (msg, duplicate) {
                    (_, true) => (c.last_text.clone().unwrap(), true),
                    (Some(m), _) => {
                        c.seq += 1;
                        (encode_client(c.seq, &m), true)
                    }
                    (None, _) => {
                        c.seq += 1;
                        garbage(&mut rng, c.seq)
                    }
                };
                let before: BTreeMap<String, GameState> = if duplicate {
                    ids.iter()
                        .filter_map(|s| hub.game_state(s).map(|g| (s.clone(), g.clone())))
                        .collect()
                } else {
                    BTreeMap::new()
                };
                out = hub.handle_text(c.id, &text, now);
                if duplicate {
                    summary.duplicates += 1;
                    if !out.is_empty() {
                        summary.problems.push("duplicate frame answered".into());
                    }
                    for (s, g) in &before {
                        if hub.game_state(s) != Some(g) {
                            summary
                                .problems
                                .push(format!("duplicate frame changed session {s}"));
                        }
                    }
                }
                if has_seq {
                    c.last_text = Some(text);
                }
                if op >= 75 && op <= 78 {
                    c.bound = None;
                }
            }
            check_frames(&hub, &mut conns, out, &mut summary);
            if rng.gen_bool(0.03) {
                let c = conns.remove(ci);
                let out = hub.disconnect(c.id, now);
                check_frames(&hub, &mut conns, out, &mut summary);
                next_conn += 1;
                conns.push(FuzzConn {
                    id: next_conn,
                    seq: 0,
                    last_text: None,
                    bound: None,
                    last_out: 0,
                });
            }
            if rng.gen_bool(0.02) {
                now += 11 * 60 * 1000;
                let out = hub.tick(now);
                check_frames(&hub, &mut conns, out, &mut summary);
            }
        }
        while let Some(c) = conns.pop() {
            let out = hub.disconnect(c.id, now);
            check_frames(&hub, &mut conns, out, &mut summary);
        }
    }
    summary.sessions = hub.session_ids().len();
    summary
}

fn check_frames(
    hub: &SessionHub,
    conns: &mut [FuzzConn],
    frames: Vec<Outbound>,
    summary: &mut FuzzSummary,
) {
    for f in frames {
        summary.frames += 1;
        let Some(c) = conns.iter_mut().find(|c| c.id == f.conn) else {
            summary
                .problems
                .push(format!("frame for unknown connection {}", f.conn));
            continue;
        };
        let v: Value = serde_json::from_str(&f.text).unwrap();
        let seq = v["seq"].as_u64().unwrap();
        if seq <= c.last_out {
            summary
                .problems
                .push(format!("outbound seq {seq} after {}", c.last_out));
        }
        c.last_out = seq;
        if v["type"] == "session_state" {
            let seat: Seat = serde_json::from_value(v["payload"]["seat"].clone()).unwrap();
            c.bound = Some((
                v["payload"]["session_id"].as_str().unwrap().to_string(),
                seat,
            ));
        }
        match &c.bound {
            Some((sid, seat)) => {
                let g = hub.game_state(sid).unwrap();
                if let Err(e) = check_frame(&f.text, g.scenario(), *seat, g) {
                    summary
                        .problems
                        .push(format!("{sid}/{seat}: {e}: {}", f.text));
                }
            }
            None if v["type"] != "error" => summary
                .problems
                .push(format!("unbound conn got {}", f.text)),
            None => {}
        }
    }
}

use seqref_core::agents::AgentPolicy;
use std::collections::VecDeque;

/// A remote player: a scripted policy speaking the wire protocol.
pub struct Driver {
    pub conn: ConnId,
    pub seq: u64,
    pub agent: Box<dyn AgentPolicy + Send>,
    pub session: String,
    pub seat: Option<Seat>,
    pub selected: bool,
    pub over: bool,
    begun: bool,
    inbox: VecDeque<Value>,
}

impl Driver {
    pub fn new(conn: ConnId, agent: Box<dyn AgentPolicy + Send>, session: &str) -> Self {
        Driver {
            conn,
            seq: 0,
            agent,
            session: session.to_string(),
            seat: None,
            selected: false,
            over: false,
            begun: false,
            inbox: VecDeque::new(),
        }
    }

    pub fn send(&mut self, hub: &mut SessionHub, m: &ClientMessage, now: u64) -> Vec<Outbound> {
        self.seq += 1;
        let out = hub.handle_text(self.conn, &encode_client(self.seq, m), now);
        self.accept(&out);
        out
    }

    /// Queues frames addressed to this driver.
    pub fn accept(&mut self, frames: &[Outbound]) {
        for f in frames.iter().filter(|f| f.conn == self.conn) {
            self.inbox.push_back(serde_json::from_str(&f.text).unwrap());
        }
    }

    pub fn join(&mut self, hub: &mut SessionHub, seat: Option<Seat>, partner: Option<&str>, now: u64) -> Vec<Outbound> {
        let j = JoinPayload {
            session_id: Some(self.session.clone()),
            name: Some(format!("worker{}", self.conn)),
            seat,
            partner: partner.map(str::to_string),
        };
        self.send(hub, &ClientMessage::Join(j), now)
    }

    fn react(&mut self, hub: &SessionHub, m: &Value) -> Vec<String> {
        let p = &m["payload"];
        let state = hub.game_state(&self.session).unwrap();
        let seat = self.seat.unwrap();
        match m["type"].as_str().unwrap() {
            "turn_start" => {
                let k = p["turn"].as_u64().unwrap() as usize;
                self.selected = false;
                self.agent.on_observation(&observe(state.scenario(), seat, k))
            }
            "utterance" if p["from"] != serde_json::to_value(seat).unwrap() => {
                self.agent.on_partner_utterance(p["text"].as_str().unwrap())
            }
            "selection_ack" => {
                self.selected = true;
                Vec::new()
            }
            "turn_result" => {
                let k = p["turn"].as_u64().unwrap() as usize;
                self.agent.on_turn_result(&state.outcomes()[k - 1]);
                Vec::new()
            }
            "game_over" => {
                self.over = true;
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    /// Plays until the game ends, the partner must act, or turn `stop_before`
    /// starts. Frames for other connections are returned.
    pub fn play(&mut self, hub: &mut SessionHub, now: u64, stop_before: Option<usize>) -> Vec<Outbound> {
        let mut foreign = Vec::new();
        loop {
            let mut outgoing: Vec<String> = Vec::new();
            while let Some(m) = self.inbox.pop_front() {
                if m["type"] == "session_state" {
                    self.seat = Some(serde_json::from_value(m["payload"]["seat"].clone()).unwrap());
                    if !self.begun {
                        self.begun = true;
                        let seed = hub.game_state(&self.session).unwrap().scenario().seed;
                        self.agent.begin_game(self.seat.unwrap(), seed);
                        for h in m["payload"]["history"].as_array().unwrap() {
                            let _ = self.react(hub, h);
                        }
                    }
                    continue;
                }
                if m["type"] == "turn_start" {
                    let k = m["payload"]["turn"].as_u64().unwrap() as usize;
                    if stop_before.is_some_and(|s| k >= s) {
                        self.inbox.push_front(m);
                        return foreign;
                    }
                }
                outgoing.extend(self.react(hub, &m));
            }
            if self.over {
                return foreign;
            }
            let state = hub.game_state(&self.session).unwrap();
            let active = hub.status(&self.session) == Some(seqref_service::protocol::SessionStatus::Active);
            if !outgoing.is_empty() {
                for text in outgoing {
                    let out = self.send(hub, &ClientMessage::Utterance { text }, now);
                    foreign.extend(out.into_iter().filter(|f| f.conn != self.conn));
                }
            } else if active && !self.selected && state.pending(self.seat.unwrap()).is_none() && !state.is_over() {
                let entity = self.agent.decide_selection();
                let out = self.send(hub, &ClientMessage::Select { entity }, now);
                foreign.extend(out.into_iter().filter(|f| f.conn != self.conn));
            } else {
                return foreign;
            }
        }
    }
}
