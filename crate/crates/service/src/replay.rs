//! Replay export: what each player saw, turn by turn, as JSON or SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use seqref_core::game::{observe, EntityLook, GameError, GameEvent};
use seqref_core::geometry::{sample_turn_frames, Frame, FrameKind, GeometryError, Point, View};
use seqref_core::scenario::Scenario;
use seqref_core::transcript::GameLog;
use seqref_core::{EntityId, Seat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seconds each frame stays on screen in SVG output.
const FRAME_SECONDS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayFormat {
    Json,
    Svg,
}

impl FromStr for ReplayFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReplayFormat::Json),
            "svg" => Ok(ReplayFormat::Svg),
            other => Err(format!("unknown replay format `{other}` (json, svg)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("game `{0}` has no played turns")]
    NothingToExport(String),
    #[error("scenario seed {given} does not match the one recorded for game `{game_id}`")]
    Mismatch { game_id: String, given: u64 },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One player's turn: the frames as drawn for them and what they chose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayTurn {
    pub turn: usize,
    pub agent: Seat,
    pub view_before: View,
    pub view: View,
    /// Canonical frames exactly as sampled for this player's view shift.
    pub frames: Vec<Frame>,
    pub looks: BTreeMap<EntityId, EntityLook>,
    pub selectable_ids: Vec<EntityId>,
    pub selection: Option<EntityId>,
    pub success: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replay {
    pub game_id: String,
    pub scenario_seed: u64,
    pub turns: Vec<ReplayTurn>,
}

/// Builds the replay of `log`. A separately supplied scenario must be the
/// one the game was played on.
pub fn build_replay(log: &GameLog, scenario: Option<&Scenario>) -> Result<Replay, ReplayError> {
    if let Some(s) = scenario {
        if s != log.scenario.as_ref() {
            return Err(ReplayError::Mismatch { game_id: log.game_id.clone(), given: s.seed });
        }
    }
    let state = log.replay()?;
    let scenario = &log.scenario;
    let mut turns = Vec::new();
    for e in state.events() {
        let GameEvent::AnimationDone { turn: k } = *e else { continue };
        let outcome = state.outcomes().get(k - 1);
        for agent in Seat::BOTH {
            let obs = observe(scenario, agent, k);
            let frames = sample_turn_frames(k, &scenario.turn_moves(k), scenario.shift(agent, k))?;
            let selection = state
                .events()
                .iter()
                .find_map(|e| match e {
                    GameEvent::Selection { agent: a, turn, entity } if *a == agent && *turn == k => Some(*entity),
                    _ => None,
                });
            turns.push(ReplayTurn {
                turn: k,
                agent,
                view_before: obs.start.view,
                view: scenario.view(agent, k),
                frames,
                looks: obs.looks,
                selectable_ids: obs.selectable_ids,
                selection,
                success: outcome.map(|o| o.success),
            });
        }
    }
    if turns.is_empty() {
        return Err(ReplayError::NothingToExport(log.game_id.clone()));
    }
    Ok(Replay { game_id: log.game_id.clone(), scenario_seed: scenario.seed, turns })
}

pub fn replay_json(replay: &Replay) -> String {
    serde_json::to_string_pretty(replay).expect("replays serialize")
}

fn gray(intensity: f64) -> String {
    let v = (intensity.clamp(0.0, 1.0) * 255.0).round() as u8;
    format!("#{v:02x}{v:02x}{v:02x}")
}

/// One SVG document animating a single player's turn. Coordinates are
/// relative to the view center with y pointing up.
pub fn turn_svg(t: &ReplayTurn) -> String {
    let r = t.view.radius();
    let size = 2.0 * r;
    let total = t.frames.len() as f64 * FRAME_SECONDS;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{:.4} {:.4} {size:.4} {size:.4}" width="480" height="480">"#,
        -r, -r
    );
    let _ = writeln!(s, "<title>turn {} agent {}</title>", t.turn, t.agent);
    let _ = writeln!(s, r#"<defs><clipPath id="view"><circle cx="0" cy="0" r="{r:.4}"/></clipPath></defs>"#);
    let _ = writeln!(s, r#"<circle cx="0" cy="0" r="{r:.4}" fill="white" stroke="black" stroke-width="{:.4}"/>"#, r / 200.0);
    let _ = writeln!(s, r#"<g clip-path="url(#view)"><g transform="scale(1,-1)">"#);
    let views: Vec<View> = t
        .frames
        .iter()
        .map(|f| match f.kind {
            FrameKind::Shift => View::new(t.view_before.center + f.view_offset, t.view.diameter),
            FrameKind::Movement => t.view,
        })
        .collect();
    for (id, look) in &t.looks {
        let rel: Vec<Point> =
            t.frames.iter().zip(&views).map(|(f, v)| f.positions[id] - v.center).collect();
        let xs: Vec<String> = rel.iter().map(|p| format!("{:.5}", p.x)).collect();
        let ys: Vec<String> = rel.iter().map(|p| format!("{:.5}", p.y)).collect();
        let mut attrs = String::new();
        if t.selectable_ids.contains(id) {
            attrs.push_str(&format!(r#" class="selectable" stroke="steelblue" stroke-width="{:.4}""#, look.size / 4.0));
        }
        if t.selection == Some(*id) {
            attrs = format!(r#" class="selectable selected" stroke="crimson" stroke-width="{:.4}""#, look.size / 3.0);
        }
        let _ = writeln!(
            s,
            r#"<circle id="e{}" cx="{}" cy="{}" r="{:.5}" fill="{}"{attrs}>"#,
            id.0,
            xs[0],
            ys[0],
            look.size,
            gray(look.color)
        );
        for (attr, values) in [("cx", xs.join(";")), ("cy", ys.join(";"))] {
            let _ = writeln!(
                s,
                r#"  <animate attributeName="{attr}" values="{values}" dur="{total:.2}s" calcMode="discrete" fill="freeze"/>"#
            );
        }
        s.push_str("</circle>\n");
    }
    s.push_str("</g></g>\n</svg>\n");
    s
}

/// File name and contents for every exported document.
pub fn export_replay(
    log: &GameLog,
    scenario: Option<&Scenario>,
    format: ReplayFormat,
) -> Result<Vec<(String, String)>, ReplayError> {
    let replay = build_replay(log, scenario)?;
    Ok(match format {
        ReplayFormat::Json => vec![(format!("{}.replay.json", log.game_id), replay_json(&replay))],
        ReplayFormat::Svg => replay
            .turns
            .iter()
            .map(|t| (format!("{}_turn{}_{}.svg", log.game_id, t.turn, t.agent), turn_svg(t)))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use seqref_core::agents::{play_game, random_agent};
    use seqref_core::scenario::{generate_scenario, ScenarioConfig};
    use seqref_core::transcript::Players;
    use std::sync::Arc;

    fn log(seed: u64) -> GameLog {
        let s = Arc::new(generate_scenario(seed, &ScenarioConfig::default()).unwrap());
        let (mut a, mut b) = (random_agent(), random_agent());
        let rec = play_game(s.clone(), &mut a, &mut b, seed);
        rec.to_log(s, "g", Players { a: "x".into(), b: "y".into() })
    }

    #[test]
    fn one_entry_per_agent_and_turn() {
        let l = log(3);
        let r = build_replay(&l, None).unwrap();
        let played = l.events.iter().filter(|e| matches!(e, GameEvent::AnimationDone { .. })).count();
        assert_eq!(r.turns.len(), 2 * played);
        assert_eq!(r.turns[0].frames.len(), 10);
        assert_eq!(r.turns[0].selectable_ids.len(), 7);
        assert!(r.turns.iter().skip(2).all(|t| t.frames.len() == 15));
        let svgs = export_replay(&l, None, ReplayFormat::Svg).unwrap();
        assert_eq!(svgs.len(), r.turns.len());
        assert!(svgs[0].1.starts_with("<svg"));
    }

    #[test]
    fn wrong_scenario_is_rejected() {
        let l = log(3);
        let other = generate_scenario(4, &ScenarioConfig::default()).unwrap();
        assert!(matches!(build_replay(&l, Some(&other)), Err(ReplayError::Mismatch { .. })));
        assert!(build_replay(&l, Some(&l.scenario)).is_ok());
    }

    #[test]
    fn unplayed_game_has_nothing() {
        let mut l = log(3);
        l.events.clear();
        assert!(matches!(build_replay(&l, None), Err(ReplayError::NothingToExport(_))));
    }
}
