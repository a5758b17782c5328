use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Output};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;
use tungstenite::{Message, WebSocket};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_crowdnav"));
    c.env("RUST_LOG", "warn");
    c
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("short.toml");
    std::fs::write(
        &path,
        "[scenario]\ntarget_density = 0.05\nduration_max = 60.0\nseed = 11\n\n[controller]\nmode = \"shared\"\n",
    )
    .unwrap();
    path
}

#[test]
fn run_is_reproducible_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        ok(bin().args(["run", "--controller", "mds", "--density", "0.08", "--seed", "5", "--out"]).arg(p).output().unwrap());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let svg = dir.path().join("a.svg");
    let out = ok(bin().arg("replay").arg(&a).arg("--svg").arg(&svg).output().unwrap());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["mode"], "mds_autonomous");
    assert!(std::fs::metadata(&svg).unwrap().len() > 0);

    let out = ok(bin().arg("metrics").arg(&a).args(["--ref-jerk", "2.0"]).output().unwrap());
    let m: Value = serde_json::from_slice(&out.stdout).unwrap();
    let (j, rj) = (m["jerk"].as_f64().unwrap(), m["rel_jerk"].as_f64().unwrap());
    assert!((rj - j / 2.0).abs() < 1e-12);
}

#[test]
fn truncated_log_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    ok(bin().args(["run", "--controller", "rds", "--density", "0.05", "--seed", "2", "--out"]).arg(&a).output().unwrap());
    let bytes = std::fs::read(&a).unwrap();
    let cut = dir.path().join("cut.jsonl");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let out = bin().arg("metrics").arg(&cut).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("byte"), "{err}");
}

#[test]
fn batch_and_compare_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("batch");
    let out = ok(bin()
        .args(["batch", "--controllers", "mds,rds", "--densities", "0.06", "--reps", "2", "--verify", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap());
    let md = String::from_utf8(out.stdout).unwrap();
    assert!(md.contains("| mds @ 0.06 ppsm | rds @ 0.06 ppsm |"));
    let logs: Vec<_> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    assert_eq!(logs.len(), 4);
    let report: Value = serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    let compared = ok(bin().arg("compare").args(&logs).arg("--out").arg(dir.path().join("c.json")).output().unwrap());
    assert!(String::from_utf8(compared.stdout).unwrap().contains("Controller comparisons"));
    let again: Value = serde_json::from_slice(&std::fs::read(dir.path().join("c.json")).unwrap()).unwrap();
    let (x, y) = (report["cells"][0]["stats"].as_array().unwrap(), again["cells"][0]["stats"].as_array().unwrap());
    assert_eq!(x.len(), y.len());
    for (a, b) in x.iter().zip(y) {
        assert_eq!(a["n"], b["n"]);
        assert!((a["mean"].as_f64().unwrap() - b["mean"].as_f64().unwrap()).abs() < 1e-9, "{a} vs {b}");
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_server(config: &Path, out: &Path, sessions: usize) -> (Server, u16) {
    let port = free_port();
    let child = bin()
        .arg("serve")
        .arg("--config")
        .arg(config)
        .args(["--port", &port.to_string(), "--speed", "10", "--max-sessions", &sessions.to_string(), "--out"])
        .arg(out)
        .spawn()
        .unwrap();
    (Server(child), port)
}

fn connect(port: u16) -> WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>> {
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        match tungstenite::connect(format!("ws://127.0.0.1:{port}")) {
            Ok((ws, _)) => return ws,
            Err(_) if Instant::now() < deadline => thread::sleep(Duration::from_millis(50)),
            Err(e) => panic!("cannot connect: {e}"),
        }
    }
}

/// Steers toward the goal on every state message; returns the end report.
fn drive(port: u16) -> (Value, usize, usize) {
    let mut ws = connect(port);
    let (mut states, mut metrics) = (0, 0);
    loop {
        let msg = match ws.read() {
            Ok(Message::Text(t)) => t,
            Ok(Message::Close(_)) => panic!("closed before end"),
            Ok(_) => continue,
            Err(e) => panic!("read: {e}"),
        };
        let v: Value = serde_json::from_str(&msg).unwrap();
        match v["type"].as_str().unwrap() {
            "state" => {
                states += 1;
                let (x, y, th) = (v["pose"]["x"].as_f64().unwrap(), v["pose"]["y"].as_f64().unwrap(), v["pose"]["theta"].as_f64().unwrap());
                let (gx, gy) = (v["goal"]["x"].as_f64().unwrap(), v["goal"]["y"].as_f64().unwrap());
                let err = ((gy - y).atan2(gx - x) - th).sin().asin();
                let cmd = serde_json::json!({"type": "cmd", "v": 0.8, "w": err.clamp(-1.0, 1.0), "t": v["t"]});
                // The server may already have closed after the last state.
                let _ = ws.send(Message::text(cmd.to_string()));
            }
            "metrics" => metrics += 1,
            "end" => return (v["report"].clone(), states, metrics),
            other => panic!("unexpected message {other}"),
        }
    }
}

#[test]
fn headless_client_completes_session() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("sessions");
    let (_server, port) = start_server(&cfg, &out, 2);
    let a = thread::spawn(move || drive(port));
    let b = thread::spawn(move || drive(port));
    let ((ra, sa, ma), (rb, _, _)) = (a.join().unwrap(), b.join().unwrap());
    assert_eq!(ra["mode"], "shared_control_rds", "{ra}");
    assert_eq!(rb["mode"], "shared_control_rds", "{rb}");
    let t_c = ra["t_c"].as_f64().unwrap();
    assert!((sa as f64 - t_c * 20.0).abs() <= 2.0, "state rate: {sa} in {t_c} s");
    assert!((ma as f64 - t_c).abs() <= 1.5, "metrics rate: {ma} in {t_c} s");

    // Wait for the logs to be flushed by the server threads.
    let deadline = Instant::now() + Duration::from_secs(20);
    let logs = loop {
        let logs: Vec<_> = (0..2).map(|i| out.join(format!("session_{i:03}.jsonl"))).collect();
        if logs.iter().all(|p| std::fs::read_to_string(p).is_ok_and(|s| s.contains("\"type\":\"trailer\""))) {
            break logs;
        }
        assert!(Instant::now() < deadline, "session logs incomplete");
        thread::sleep(Duration::from_millis(50));
    };
    for log in &logs {
        // Unchanged offline evaluation; replay fails on any mismatch.
        ok(bin().arg("replay").arg(log).output().unwrap());
        let m = ok(bin().arg("metrics").arg(log).output().unwrap());
        let report: Value = serde_json::from_slice(&m.stdout).unwrap();
        // Sessions are numbered in accept order, so match by content.
        let same = |live: &Value| report["t_c"] == live["t_c"] && report["success"] == live["success"];
        assert!(same(&ra) || same(&rb), "{report}");
    }
    // Separate sessions run separate worlds.
    assert_ne!(std::fs::read(&logs[0]).unwrap(), std::fs::read(&logs[1]).unwrap());
}

#[test]
fn disconnect_leaves_partial_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("sessions");
    let (mut server, port) = start_server(&cfg, &out, 1);
    let mut ws = connect(port);
    for _ in 0..10 {
        ws.read().unwrap();
    }
    drop(ws);
    let deadline = Instant::now() + Duration::from_secs(20);
    while server.0.try_wait().unwrap().is_none() {
        assert!(Instant::now() < deadline, "server did not end the session");
        thread::sleep(Duration::from_millis(50));
    }
    let log = std::fs::read_to_string(out.join("session_000.jsonl")).unwrap();
    assert!(log.lines().count() > 1 && !log.contains("\"type\":\"trailer\""));
    let m = bin().arg("metrics").arg(out.join("session_000.jsonl")).output().unwrap();
    assert!(!m.status.success());
}
