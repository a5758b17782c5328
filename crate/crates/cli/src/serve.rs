//! Websocket endpoint: one simulated shared-control trial per connection.

use std::fs::File;
use std::io::{BufWriter, ErrorKind};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use crowdnav::trial::{derive_seed, LiveSession, ServerMessage, TrialConfig};
use tungstenite::{Message, WebSocket};

pub struct ServeOptions {
    pub cfg: TrialConfig,
    pub port: u16,
    pub out_dir: PathBuf,
    pub speed: f64,
    pub max_sessions: Option<usize>,
}

pub fn serve(opts: ServeOptions) -> Result<()> {
    std::fs::create_dir_all(&opts.out_dir)?;
    let listener = TcpListener::bind(("127.0.0.1", opts.port)).with_context(|| format!("binding port {}", opts.port))?;
    log::info!("listening on ws://{}", listener.local_addr()?);
    let counter = Arc::new(AtomicUsize::new(0));
    let mut handles = Vec::new();
    for stream in listener.incoming() {
        let stream = stream?;
        let n = counter.fetch_add(1, Ordering::SeqCst);
        let mut cfg = opts.cfg.clone();
        cfg.scenario.seed = derive_seed(opts.cfg.scenario.seed, n as u64);
        let path = opts.out_dir.join(format!("session_{n:03}.jsonl"));
        let speed = opts.speed;
        handles.push(thread::spawn(move || {
            match run_session(stream, cfg, &path, speed) {
                Ok(true) => log::info!("session {n} finished, log {}", path.display()),
                Ok(false) => log::warn!("session {n} disconnected, partial log {}", path.display()),
                Err(e) => log::error!("session {n}: {e:#}"),
            }
        }));
        if opts.max_sessions.is_some_and(|m| n + 1 >= m) {
            break;
        }
    }
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}

fn would_block(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

/// Returns whether the trial ran to completion.
fn run_session(stream: TcpStream, cfg: TrialConfig, path: &PathBuf, speed: f64) -> Result<bool> {
    let mut ws: WebSocket<TcpStream> = tungstenite::accept(stream).map_err(|e| anyhow::anyhow!("handshake: {e}"))?;
    ws.get_ref().set_nonblocking(true)?;
    let log = BufWriter::new(File::create(path)?);
    let mut session = LiveSession::new(cfg, log)?;
    let inbox = session.inbox();
    let tick = if speed > 0.0 { Some(Duration::from_secs_f64(session.dt() / speed)) } else { None };
    let start = Instant::now();
    let mut n = 0u32;
    loop {
        // Drain whatever the client sent since the last tick.
        loop {
            match ws.read() {
                Ok(Message::Text(text)) => {
                    if let Err(e) = inbox.post_text(&text) {
                        log::debug!("ignoring message: {e}");
                    }
                }
                Ok(Message::Close(_)) => {
                    session.abort()?;
                    return Ok(false);
                }
                Ok(_) => {}
                Err(e) if would_block(&e) => break,
                Err(e) => {
                    log::debug!("read failed: {e}");
                    session.abort()?;
                    return Ok(false);
                }
            }
        }
        let Some(messages) = session.step()? else { break };
        let ended = messages.iter().any(|m| matches!(m, ServerMessage::End { .. }));
        for m in &messages {
            let text = serde_json::to_string(m)?;
            if let Err(e) = send(&mut ws, Message::text(text)) {
                log::debug!("send failed: {e}");
                session.abort()?;
                return Ok(false);
            }
        }
        if ended {
            break;
        }
        n += 1;
        if let Some(tick) = tick {
            let due = start + tick * n;
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
    }
    drop(session);
    let _ = ws.get_ref().set_nonblocking(false);
    let _ = ws.close(None);
    let _ = ws.flush();
    Ok(true)
}

/// Sends on a nonblocking socket, waiting out back-pressure.
fn send(ws: &mut WebSocket<TcpStream>, msg: Message) -> tungstenite::Result<()> {
    let mut pending = Some(msg);
    loop {
        let r = match pending.take() {
            Some(m) => ws.send(m),
            None => ws.flush(),
        };
        match r {
            Ok(()) => return Ok(()),
            Err(e) if would_block(&e) => thread::sleep(Duration::from_micros(200)),
            Err(e) => return Err(e),
        }
    }
}
