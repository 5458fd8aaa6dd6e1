//! Session records survive `kill -9` of `mirror serve` byte for byte.

use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use crate::fixture::{ensure, sports_db};

const SESSIONS: usize = 4;

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start(config: &Path) -> Result<(Server, String), String> {
    let mut child = Command::new(env!("CARGO_BIN_EXE_mirror"))
        .args(["serve", "--config"])
        .arg(config)
        .env_remove("MIRROR_API_KEY")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .map_err(|e| e.to_string())?;
    let base = line
        .trim()
        .strip_prefix("listening on ")
        .ok_or_else(|| format!("unexpected banner {line:?}"))?
        .to_owned();
    Ok((Server(child), base))
}

fn transcript(dir: &Path) -> std::path::PathBuf {
    let mut entries = Vec::new();
    for i in 0..SESSIONS {
        entries.push(json!({"match": {"contains": "### SQL"}, "text": format!("SELECT name, ppg FROM players ORDER BY ppg DESC LIMIT {}", i + 2)}));
        entries.push(json!({"match": {"contains": "Answer:"}, "text": format!("Summary number {i}.")}));
        entries.push(json!({"match": {"contains": "Vega-Lite JSON:"}, "text": r#"{"mark":"bar","encoding":{"x":{"field":"name"},"y":{"field":"ppg","type":"quantitative"}}}"#}));
    }
    entries.push(json!({"op": "edit", "text": "SELECT name, ppg FROM players WHERE retired = 0 ORDER BY ppg DESC LIMIT 2"}));
    let path = dir.join("transcript.json");
    std::fs::write(&path, Value::Array(entries).to_string()).unwrap();
    path
}

fn get(agent: &ureq::Agent, url: &str) -> Result<(u16, Vec<u8>), String> {
    let resp = agent.get(url).call().map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    let body = resp.into_body().read_to_vec().map_err(|e| e.to_string())?;
    Ok((status, body))
}

fn post(agent: &ureq::Agent, url: &str, body: Value) -> Result<(u16, Value), String> {
    let resp = agent.post(url).send_json(body).map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    Ok((status, resp.into_body().read_json().map_err(|e| e.to_string())?))
}

fn settled(agent: &ureq::Agent, base: &str, id: &str) -> Result<Vec<u8>, String> {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let (_, body) = get(agent, &format!("{base}/api/sessions/{id}?debug=1"))?;
        let v: Value = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
        if v["status"] == "complete" || v["status"] == "sql-failed" {
            return Ok(body);
        }
        ensure(Instant::now() < deadline, || format!("session {id} never settled"))?;
        std::thread::sleep(Duration::from_millis(20));
    }
}

pub fn run() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let db = sports_db(dir.path());
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let config = dir.path().join("mirror.json");
    let config_json = json!({
        "listen": format!("127.0.0.1:{port}"),
        "data_dir": "data",
        "provider": {"kind": "scripted", "transcript": transcript(dir.path())},
        "datasources": [{"id": "sports", "kind": "embedded-file", "location": db}],
    });
    std::fs::write(&config, config_json.to_string()).unwrap();
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(10)))
        .build()
        .into();

    let (mut server, base) = start(&config)?;
    let mut ids = Vec::new();
    for i in 0..SESSIONS {
        let (status, body) = post(
            &agent,
            &format!("{base}/api/query"),
            json!({"datasource_id": "sports", "question": format!("Top {} scorers?", i + 2)}),
        )?;
        ensure(status == 202, || format!("query returned {status}: {body}"))?;
        let id = body["id"].as_str().ok_or("no session id")?.to_owned();
        settled(&agent, &base, &id)?;
        ids.push(id);
    }
    let (status, _) = post(
        &agent,
        &format!("{base}/api/sessions/{}/edit", ids[0]),
        json!({"instruction": "Exclude players who have retired"}),
    )?;
    ensure(status == 200, || format!("edit returned {status}"))?;

    let mut before = Vec::new();
    for id in &ids {
        before.push(settled(&agent, &base, id)?);
    }
    let (_, list_before) = get(&agent, &format!("{base}/api/sessions"))?;

    // SIGKILL: no graceful shutdown, no flush beyond what was committed.
    server.0.kill().map_err(|e| e.to_string())?;
    server.0.wait().map_err(|e| e.to_string())?;
    drop(server);

    let (_server, base) = start(&config)?;
    for (id, old) in ids.iter().zip(&before) {
        let (status, now) = get(&agent, &format!("{base}/api/sessions/{id}?debug=1"))?;
        ensure(status == 200, || format!("session {id} missing after restart ({status})"))?;
        ensure(&now == old, || format!("session {id} differs after restart"))?;
    }
    let (_, list_after) = get(&agent, &format!("{base}/api/sessions"))?;
    ensure(list_after == list_before, || "session list differs after restart".into())?;
    let edited: Value = serde_json::from_slice(&before[0]).unwrap();
    ensure(edited["edits"].as_array().map(Vec::len) == Some(1), || "edit history lost".into())?;
    Ok(format!("{SESSIONS} completed sessions (one edited) byte-identical after kill -9 and restart"))
}
