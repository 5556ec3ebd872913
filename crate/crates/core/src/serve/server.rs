use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::{Classifier, ServeError, SessionConfig, SessionState};

/// TCP front end: one thread and one [`SessionState`] per connection, all
/// sharing the classifier.
pub struct Server {
    listener: TcpListener,
    classifier: Arc<Classifier>,
    config: SessionConfig,
    stop: Arc<AtomicBool>,
}

/// Stops a spawned server's accept loop.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Refuses new connections; open sessions run until their client hangs up.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_accepting();
        }
    }
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, classifier: Arc<Classifier>, config: SessionConfig) -> Result<Self, ServeError> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            classifier,
            config,
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, ServeError> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts connections until stopped.
    pub fn run(self) {
        for stream in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let classifier = Arc::clone(&self.classifier);
            let config = self.config.clone();
            std::thread::spawn(move || {
                let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
                if let Err(e) = serve_connection(stream, &classifier, config) {
                    log::warn!("session {peer}: {e}");
                }
            });
        }
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> Result<ServerHandle, ServeError> {
        let addr = self.local_addr()?;
        let stop = Arc::clone(&self.stop);
        let thread = std::thread::spawn(move || self.run());
        Ok(ServerHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }
}

fn serve_connection(stream: TcpStream, classifier: &Classifier, config: SessionConfig) -> Result<(), ServeError> {
    stream.set_nodelay(true)?;
    let peer = stream.peer_addr()?;
    let reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut session = SessionState::new(classifier, config);
    log::info!("session {peer} opened");
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frames = session.handle_line(&line);
        if frames.is_empty() {
            continue;
        }
        for f in frames {
            writer.write_all(f.to_line().as_bytes())?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
    }
    let lat = session.latency();
    log::info!(
        "session {peer} closed: {} inferences, mean latency {:.3} ms, max {:.3} ms",
        lat.count,
        lat.mean().as_secs_f64() * 1e3,
        lat.max.as_secs_f64() * 1e3
    );
    Ok(())
}
