use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use super::{Classifier, Inbound, Outbound, SampleMsg, ServeError, SessionConfig, SessionState};
use crate::signal::{Recording, SAMPLE_PERIOD_MS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReplayRate {
    /// One sample every 20 ms.
    RealTime,
    MaxSpeed,
}

/// Clutch held from the first sample at `start_ms` until the first sample
/// at `end_ms`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClutchSpan {
    pub start_ms: u64,
    pub end_ms: u64,
}

impl std::str::FromStr for ClutchSpan {
    type Err = String;

    /// `START-END` in milliseconds.
    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| format!("clutch span `{s}` is not START-END"))?;
        let parse = |v: &str| v.trim().parse::<u64>().map_err(|e| format!("clutch span `{s}`: {e}"));
        let span = ClutchSpan {
            start_ms: parse(a)?,
            end_ms: parse(b)?,
        };
        if span.end_ms <= span.start_ms {
            return Err(format!("clutch span `{s}` ends before it starts"));
        }
        Ok(span)
    }
}

/// The inbound frames a replay sends: every sample in order, with clutch
/// commands inserted before the sample at which each span starts and ends.
pub fn replay_lines(rec: &Recording, clutch: &[ClutchSpan]) -> Vec<Inbound> {
    let mut toggles: Vec<(u64, bool)> = clutch
        .iter()
        .flat_map(|c| [(c.start_ms, true), (c.end_ms, false)])
        .collect();
    toggles.sort_by_key(|&(t, on)| (t, on));
    let mut next = toggles.into_iter().peekable();
    let mut out = Vec::with_capacity(rec.len() + 2 * clutch.len());
    for s in &rec.samples {
        while let Some(&(t, on)) = next.peek() {
            if t > s.t_ms {
                break;
            }
            out.push(Inbound::Clutch(on));
            next.next();
        }
        out.push(Inbound::Sample(SampleMsg::from(s)));
    }
    out.extend(next.map(|(_, on)| Inbound::Clutch(on)));
    out
}

/// Replays through an in-process session, returning every outbound frame.
pub fn replay_local(
    classifier: &Classifier,
    config: SessionConfig,
    rec: &Recording,
    clutch: &[ClutchSpan],
) -> Vec<Outbound> {
    let mut session = SessionState::new(classifier, config);
    replay_lines(rec, clutch)
        .into_iter()
        .flat_map(|m| session.handle_message(m))
        .collect()
}

/// Streams a recording to a running server and collects its replies until
/// the server has processed the whole stream.
pub fn replay_tcp(
    addr: impl ToSocketAddrs,
    rec: &Recording,
    rate: ReplayRate,
    clutch: &[ClutchSpan],
) -> Result<Vec<Outbound>, ServeError> {
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    let collector = std::thread::spawn(move || -> Result<Vec<Outbound>, ServeError> {
        let mut frames = Vec::new();
        for line in reader.lines() {
            let line = line?;
            frames.push(Outbound::from_line(&line).map_err(ServeError::Protocol)?);
        }
        Ok(frames)
    });
    let mut writer = BufWriter::new(stream.try_clone()?);
    let period = Duration::from_millis(SAMPLE_PERIOD_MS);
    let started = Instant::now();
    let mut sent_samples = 0u32;
    for msg in replay_lines(rec, clutch) {
        if rate == ReplayRate::RealTime && matches!(msg, Inbound::Sample(_)) {
            let due = started + period * sent_samples;
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        writer.write_all(msg.to_line().as_bytes())?;
        writer.write_all(b"\n")?;
        if matches!(msg, Inbound::Sample(_)) {
            sent_samples += 1;
        }
        if rate == ReplayRate::RealTime {
            writer.flush()?;
        }
    }
    writer.flush()?;
    // half-close: the server drains the stream, then hangs up
    stream.shutdown(std::net::Shutdown::Write)?;
    collector
        .join()
        .map_err(|_| ServeError::Protocol("reader thread panicked".into()))?
}
