use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use gesturewire::serve::{
    replay_tcp, ClutchSpan, Outbound, ReplayRate, Server, SessionConfig, DEFAULT_PORT,
};
use serde_json::json;

use crate::project::{report, Project};
use crate::CliError;

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Model bundle (.zip) or baseline model (.json).
    #[arg(long)]
    model: String,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    /// Minimum confidence for an event (default: 0.5, or the baseline's θ).
    #[arg(long)]
    theta_conf: Option<f64>,
}

fn session_config(classifier: &gesturewire::serve::Classifier, theta: Option<f64>) -> Result<SessionConfig, CliError> {
    let mut cfg = SessionConfig::for_classifier(classifier);
    if let Some(t) = theta {
        if !(0.0..=1.0).contains(&t) {
            return Err(CliError::Usage(format!("--theta-conf {t} outside [0, 1]")));
        }
        cfg.theta_conf = t;
    }
    Ok(cfg)
}

pub fn serve(project: &Project, a: ServeArgs) -> Result<(), CliError> {
    let classifier = crate::assess::load_classifier(project, &a.model)?;
    let cfg = session_config(&classifier, a.theta_conf)?;
    let server = Server::bind((a.host.as_str(), a.port), Arc::new(classifier), cfg)?;
    log::info!("listening on {}", server.local_addr()?);
    server.run();
    Ok(())
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    /// Recording id in the project.
    #[arg(long)]
    recording: String,
    /// Address of a running `serve`.
    #[arg(long, conflicts_with = "model")]
    addr: Option<String>,
    /// Serve this model in-process instead of connecting to `--addr`.
    #[arg(long)]
    model: Option<String>,
    /// Pace samples at 50 Hz instead of sending them as fast as possible.
    #[arg(long)]
    real_time: bool,
    /// Hold the clutch over `START-END` milliseconds; repeatable.
    #[arg(long)]
    clutch: Vec<ClutchSpan>,
    #[arg(long)]
    theta_conf: Option<f64>,
    /// Event log (JSON lines), relative to the project.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn replay(project: &Project, a: ReplayArgs) -> Result<(), CliError> {
    // file errors surface before anything is streamed
    let rec = project.load_recording(&a.recording)?;
    let rel = a
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("reports/replay-{}.jsonl", a.recording)));
    let out = project.output(&rel)?;
    let rate = if a.real_time { ReplayRate::RealTime } else { ReplayRate::MaxSpeed };
    let frames = match (&a.addr, &a.model) {
        (Some(addr), None) => replay_tcp(addr.as_str(), &rec, rate, &a.clutch)?,
        (None, Some(model)) => {
            let classifier = crate::assess::load_classifier(project, model)?;
            let cfg = session_config(&classifier, a.theta_conf)?;
            let handle = Server::bind("127.0.0.1:0", Arc::new(classifier), cfg)?.spawn()?;
            let frames = replay_tcp(handle.addr(), &rec, rate, &a.clutch)?;
            handle.shutdown();
            frames
        }
        _ => return Err(CliError::Usage("give either --addr or --model".into())),
    };
    let mut log = Vec::new();
    for f in &frames {
        writeln!(log, "{}", f.to_line()).expect("writing to memory");
    }
    std::fs::write(&out, &log).map_err(|e| CliError::io(&out, e))?;
    let labels: Vec<&str> = frames
        .iter()
        .filter_map(|f| match f {
            Outbound::Gesture { label, .. } => Some(label.as_str()),
            _ => None,
        })
        .collect();
    let errors = frames.iter().filter(|f| matches!(f, Outbound::Error { .. })).count();
    let config = json!({
        "recording": a.recording, "real_time": a.real_time, "model": a.model, "addr": a.addr,
        "clutch": a.clutch.iter().map(|c| [c.start_ms, c.end_ms]).collect::<Vec<_>>(),
        "theta_conf": a.theta_conf,
    });
    let path = project.write_json(
        format!("reports/replay-{}.json", a.recording),
        &report(
            "replay",
            None,
            &config,
            json!({ "events": labels.len(), "labels": labels, "errors": errors, "log": out }),
        ),
    )?;
    println!("{} gesture events ({}); log {}; report {}", labels.len(), labels.join(" "), out.display(), path.display());
    Ok(())
}
