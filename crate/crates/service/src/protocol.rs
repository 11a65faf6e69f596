//! Versioned JSON wire protocol.
//!
//! Every frame in either direction is `{v, type, seq, payload}`. Clients
//! number their frames; the server numbers its own per connection.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use seqref_core::geometry::{Point, View};
use seqref_core::{EntityId, Seat};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub seq: u64,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JoinPayload {
    /// Session to join; a new one is opened when absent or unknown.
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub name: Option<String>,
    /// Reclaims a seat after a disconnect.
    #[serde(default)]
    pub seat: Option<Seat>,
    /// Policy name for a scripted partner, e.g. `template`.
    #[serde(default)]
    pub partner: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    Join(JoinPayload),
    Utterance { text: String },
    Select { entity: EntityId },
    ReplayRequest,
    Leave,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientFrame {
    pub seq: u64,
    pub message: ClientMessage,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("not a protocol frame: {0}")]
    Malformed(String),
    #[error("protocol version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("bad `{kind}` payload: {message}")]
    BadPayload { kind: String, message: String },
}

impl ProtocolError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ProtocolError::Malformed(_) => ErrorCode::Malformed,
            ProtocolError::UnsupportedVersion(_) => ErrorCode::UnsupportedVersion,
            ProtocolError::UnknownType(_) => ErrorCode::UnknownType,
            ProtocolError::BadPayload { .. } => ErrorCode::BadPayload,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TextPayload {
    text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectPayload {
    entity: EntityId,
}

fn payload<T: serde::de::DeserializeOwned>(kind: &str, v: Value) -> Result<T, ProtocolError> {
    let v = if v.is_null() { Value::Object(Default::default()) } else { v };
    serde_json::from_value(v).map_err(|e| ProtocolError::BadPayload { kind: kind.to_string(), message: e.to_string() })
}

/// Parses one client frame. The frame's `seq` is returned alongside any
/// error that occurs after the envelope itself parsed.
pub fn decode_client(text: &str) -> Result<ClientFrame, (Option<u64>, ProtocolError)> {
    let w: WireMessage = serde_json::from_str(text).map_err(|e| (None, ProtocolError::Malformed(e.to_string())))?;
    let seq = Some(w.seq);
    if w.v != PROTOCOL_VERSION {
        return Err((seq, ProtocolError::UnsupportedVersion(w.v)));
    }
    let message = match w.kind.as_str() {
        "join" => ClientMessage::Join(payload(&w.kind, w.payload).map_err(|e| (seq, e))?),
        "utterance" => {
            ClientMessage::Utterance { text: payload::<TextPayload>(&w.kind, w.payload).map_err(|e| (seq, e))?.text }
        }
        "select" => {
            ClientMessage::Select { entity: payload::<SelectPayload>(&w.kind, w.payload).map_err(|e| (seq, e))?.entity }
        }
        "replay_request" => ClientMessage::ReplayRequest,
        "leave" => ClientMessage::Leave,
        other => return Err((seq, ProtocolError::UnknownType(other.to_string()))),
    };
    Ok(ClientFrame { seq: w.seq, message })
}

/// Client-side encoder, used by bots over the wire and by tests.
pub fn encode_client(seq: u64, message: &ClientMessage) -> String {
    let (kind, payload) = match message {
        ClientMessage::Join(j) => ("join", serde_json::to_value(j).expect("serializes")),
        ClientMessage::Utterance { text } => ("utterance", serde_json::json!({ "text": text })),
        ClientMessage::Select { entity } => ("select", serde_json::json!({ "entity": entity })),
        ClientMessage::ReplayRequest => ("replay_request", serde_json::json!({})),
        ClientMessage::Leave => ("leave", serde_json::json!({})),
    };
    serde_json::to_string(&WireMessage { v: PROTOCOL_VERSION, kind: kind.into(), seq, payload }).expect("serializes")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnsupportedVersion,
    UnknownType,
    BadPayload,
    NotJoined,
    AlreadyJoined,
    SessionFull,
    SessionClosed,
    ScenarioExhausted,
    UnknownPolicy,
    IllegalSelection,
    WrongPhase,
    BadUtterance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Waiting,
    Active,
    Finished,
    Abandoned,
}

/// Everything a client needs to animate one dot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityTrack {
    pub id: EntityId,
    pub color: f64,
    pub size: f64,
    pub p0: Point,
    pub p1: Point,
    pub p2: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnStart {
    pub turn: usize,
    /// Canonical frame count: 10 on turn 1, 15 afterwards.
    pub frames: usize,
    pub view_before: View,
    pub view: View,
    pub shift: Option<Point>,
    /// Dots drawn in at least one of this seat's frames.
    pub entities: Vec<EntityTrack>,
    pub selectable_ids: Vec<EntityId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reward {
    pub success_cents: u64,
    pub bonus_cents: u64,
    pub total_cents: u64,
}

impl Reward {
    pub const PER_SUCCESS_CENTS: u64 = 25;
    /// Bonus per point of LST, reaching 25 cents at LST 5.
    pub const BONUS_PER_LST_CENTS: u64 = 5;

    /// Every success before the first failure counts, so successes equal LST.
    pub fn for_lst(lst: usize) -> Reward {
        let success_cents = Self::PER_SUCCESS_CENTS * lst as u64;
        let bonus_cents = Self::BONUS_PER_LST_CENTS * lst as u64;
        Reward { success_cents, bonus_cents, total_cents: success_cents + bonus_cents }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ServerMessage {
    SessionState {
        session_id: String,
        seat: Seat,
        status: SessionStatus,
        turn: usize,
        lst: usize,
        partner_present: bool,
        /// This seat's view of the game so far, oldest first.
        history: Vec<ServerMessage>,
    },
    TurnStart(TurnStart),
    Utterance {
        turn: usize,
        from: Seat,
        text: String,
    },
    SelectionAck {
        turn: usize,
        entity: EntityId,
    },
    TurnResult {
        turn: usize,
        success: bool,
        lst: usize,
        yours: EntityId,
        partners: EntityId,
    },
    GameOver {
        status: SessionStatus,
        lst: usize,
        completed_turns: usize,
        reward: Reward,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl ServerMessage {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMessage::Error { code, message: message.into() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ServerMessage::SessionState { .. } => "session_state",
            ServerMessage::TurnStart(_) => "turn_start",
            ServerMessage::Utterance { .. } => "utterance",
            ServerMessage::SelectionAck { .. } => "selection_ack",
            ServerMessage::TurnResult { .. } => "turn_result",
            ServerMessage::GameOver { .. } => "game_over",
            ServerMessage::Error { .. } => "error",
        }
    }
}

pub fn encode_server(seq: u64, message: &ServerMessage) -> String {
    let mut v = serde_json::to_value(message).expect("serializes");
    let obj = v.as_object_mut().expect("tagged enum");
    obj.insert("v".into(), PROTOCOL_VERSION.into());
    obj.insert("seq".into(), seq.into());
    obj.entry("payload").or_insert(Value::Object(Default::default()));
    serde_json::to_string(&v).expect("serializes")
}

/// Parses a server frame back into its envelope and typed body.
pub fn decode_server(text: &str) -> Result<(WireMessage, ServerMessage), ProtocolError> {
    let w: WireMessage = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let body = serde_json::json!({ "type": w.kind, "payload": w.payload });
    let m = serde_json::from_value(body).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    Ok((w, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_frames_round_trip() {
        let msgs = [
            ClientMessage::Join(JoinPayload { session_id: Some("s1".into()), partner: Some("template".into()), ..Default::default() }),
            ClientMessage::Utterance { text: "a dark one?".into() },
            ClientMessage::Select { entity: EntityId(4) },
            ClientMessage::ReplayRequest,
            ClientMessage::Leave,
        ];
        for (i, m) in msgs.into_iter().enumerate() {
            let f = decode_client(&encode_client(i as u64, &m)).unwrap();
            assert_eq!(f, ClientFrame { seq: i as u64, message: m });
        }
    }

    #[test]
    fn unknown_type_keeps_seq() {
        let err = decode_client(r#"{"v":1,"type":"dance","seq":7,"payload":{}}"#).unwrap_err();
        assert_eq!(err, (Some(7), ProtocolError::UnknownType("dance".into())));
        assert_eq!(err.1.code(), ErrorCode::UnknownType);
    }

    #[test]
    fn envelope_errors() {
        assert!(matches!(decode_client("nope"), Err((None, ProtocolError::Malformed(_)))));
        assert!(matches!(
            decode_client(r#"{"v":2,"type":"leave","seq":1}"#),
            Err((Some(1), ProtocolError::UnsupportedVersion(2)))
        ));
        assert!(matches!(
            decode_client(r#"{"v":1,"type":"select","seq":1,"payload":{"entity":"x"}}"#),
            Err((Some(1), ProtocolError::BadPayload { .. }))
        ));
        // Missing payload is an empty object.
        assert_eq!(decode_client(r#"{"v":1,"type":"leave","seq":3}"#).unwrap().message, ClientMessage::Leave);
    }

    #[test]
    fn server_envelope_shape() {
        let text = encode_server(5, &ServerMessage::SelectionAck { turn: 2, entity: EntityId(9) });
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["v"], 1);
        assert_eq!(v["type"], "selection_ack");
        assert_eq!(v["seq"], 5);
        assert_eq!(v["payload"]["entity"], 9);
        let (w, m) = decode_server(&text).unwrap();
        assert_eq!(w.seq, 5);
        assert_eq!(m, ServerMessage::SelectionAck { turn: 2, entity: EntityId(9) });
    }

    #[test]
    fn rewards() {
        assert_eq!(Reward::for_lst(0).total_cents, 0);
        assert_eq!(Reward::for_lst(5), Reward { success_cents: 125, bonus_cents: 25, total_cents: 150 });
    }
}
