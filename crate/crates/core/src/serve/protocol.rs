//! Newline-delimited JSON frames.
//!
//! Inbound: `{"sample":{"t_ms":0,"acc":[x,y,z],"gyro":[x,y,z]}}`,
//! `{"cmd":"clutch","on":true}`, `{"cmd":"reset"}`.
//! Outbound: gesture and clutch events, or `{"error":kind,"detail":text}`.

use serde::{Deserialize, Serialize};

use crate::signal::ImuSample;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMsg {
    pub t_ms: u64,
    pub acc: [f64; 3],
    pub gyro: [f64; 3],
}

impl From<SampleMsg> for ImuSample {
    fn from(s: SampleMsg) -> Self {
        ImuSample {
            t_ms: s.t_ms,
            acc: s.acc,
            gyro: s.gyro,
        }
    }
}

impl From<&ImuSample> for SampleMsg {
    fn from(s: &ImuSample) -> Self {
        SampleMsg {
            t_ms: s.t_ms,
            acc: s.acc,
            gyro: s.gyro,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Inbound {
    Sample(SampleMsg),
    Clutch(bool),
    Reset,
}

impl Inbound {
    pub fn to_line(&self) -> String {
        #[derive(Serialize)]
        struct Sample<'a> {
            sample: &'a SampleMsg,
        }
        match self {
            Self::Sample(sample) => serde_json::to_string(&Sample { sample }).expect("frames serialize"),
            Self::Clutch(on) => format!(r#"{{"cmd":"clutch","on":{on}}}"#),
            Self::Reset => r#"{"cmd":"reset"}"#.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outbound {
    Gesture {
        label: String,
        message: String,
        confidence: f64,
        window_end: u64,
    },
    Clutch {
        on: bool,
    },
    Error {
        error: String,
        detail: String,
    },
}

impl Outbound {
    pub fn error(kind: &str, detail: impl Into<String>) -> Self {
        Self::Error {
            error: kind.to_string(),
            detail: detail.into(),
        }
    }

    pub fn is_gesture(&self) -> bool {
        matches!(self, Self::Gesture { .. })
    }

    pub fn to_line(&self) -> String {
        #[derive(Serialize)]
        struct Gesture<'a> {
            event: &'static str,
            label: &'a str,
            message: &'a str,
            confidence: f64,
            window_end: u64,
        }
        #[derive(Serialize)]
        struct Clutch {
            event: &'static str,
            on: bool,
        }
        #[derive(Serialize)]
        struct Error<'a> {
            error: &'a str,
            detail: &'a str,
        }
        let line = match self {
            Self::Gesture {
                label,
                message,
                confidence,
                window_end,
            } => serde_json::to_string(&Gesture {
                event: "gesture",
                label,
                message,
                confidence: *confidence,
                window_end: *window_end,
            }),
            Self::Clutch { on } => serde_json::to_string(&Clutch { event: "clutch", on: *on }),
            Self::Error { error, detail } => serde_json::to_string(&Error { error, detail }),
        };
        line.expect("frames serialize")
    }

    /// Parses a frame produced by [`to_line`](Self::to_line).
    pub fn from_line(line: &str) -> Result<Self, String> {
        #[derive(Deserialize)]
        struct Raw {
            event: Option<String>,
            label: Option<String>,
            message: Option<String>,
            confidence: Option<f64>,
            window_end: Option<u64>,
            on: Option<bool>,
            error: Option<String>,
            detail: Option<String>,
        }
        let r: Raw = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let missing = |f: &str| format!("frame lacks `{f}`: {line}");
        match (r.event.as_deref(), r.error) {
            (Some("gesture"), None) => Ok(Self::Gesture {
                label: r.label.ok_or_else(|| missing("label"))?,
                message: r.message.ok_or_else(|| missing("message"))?,
                confidence: r.confidence.ok_or_else(|| missing("confidence"))?,
                window_end: r.window_end.ok_or_else(|| missing("window_end"))?,
            }),
            (Some("clutch"), None) => Ok(Self::Clutch {
                on: r.on.ok_or_else(|| missing("on"))?,
            }),
            (None, Some(error)) => Ok(Self::Error {
                error,
                detail: r.detail.unwrap_or_default(),
            }),
            _ => Err(format!("unrecognized frame: {line}")),
        }
    }
}

/// Parses one inbound line. Failures come back as the error frame to send.
pub fn parse_inbound(line: &str) -> Result<Inbound, Outbound> {
    let parse = |d: String| Outbound::error("parse", d);
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| parse(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse("frame is not a JSON object".into()))?;
    if let Some(sample) = obj.get("sample") {
        let s: SampleMsg = serde_json::from_value(sample.clone()).map_err(|e| parse(format!("sample: {e}")))?;
        if !ImuSample::from(s).is_finite() {
            return Err(parse("sample has non-finite values".into()));
        }
        return Ok(Inbound::Sample(s));
    }
    let cmd = match obj.get("cmd") {
        Some(serde_json::Value::String(c)) => c.as_str(),
        Some(_) => return Err(parse("`cmd` must be a string".into())),
        None => return Err(parse("frame has neither `sample` nor `cmd`".into())),
    };
    match cmd {
        "clutch" => match obj.get("on") {
            Some(serde_json::Value::Bool(on)) => Ok(Inbound::Clutch(*on)),
            _ => Err(parse("clutch needs a boolean `on`".into())),
        },
        "reset" => Ok(Inbound::Reset),
        other => Err(Outbound::error("unknown_cmd", format!("unknown cmd `{other}`"))),
    }
}
