//! Helpers for driving the binary and the service against shipped data.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use medmsa_cli::backend::LmOptions;
use medmsa_cli::service::{spawn, ServiceConfig};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn data(rel: &str) -> PathBuf {
    workspace_root().join("data").join(rel)
}

pub fn vignette_file(id: &str) -> PathBuf {
    data(&format!("vignettes/{id}.json"))
}

/// Runs the `medmsa` binary with the workspace root as working directory.
pub fn medmsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medmsa"))
        .args(args)
        .current_dir(workspace_root())
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Relative path to content hash for every file under `dir`.
pub fn tree_hash(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, hex::encode(Sha256::digest(std::fs::read(&p).unwrap())));
            }
        }
    }
    out
}

/// The single run directory under a runs root.
pub fn only_run(root: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = std::fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

pub fn overrides() -> BTreeMap<String, String> {
    serde_json::from_str(&std::fs::read_to_string(data("overrides.json")).unwrap()).unwrap()
}

/// Service settings over `root` replaying the shipped fixtures.
pub fn config(root: &Path) -> ServiceConfig {
    ServiceConfig {
        root: root.to_path_buf(),
        lm: LmOptions {
            fixtures: data("fixtures"),
            ..Default::default()
        },
        vignettes: Some(data("vignettes")),
        overrides: overrides(),
        cors_origins: vec!["http://localhost:5173".into()],
        ..Default::default()
    }
}

/// A running service.
pub struct Service {
    pub base: String,
    pub client: reqwest::blocking::Client,
}

impl Service {
    pub fn start(root: &Path) -> Self {
        Self::with_config(config(root))
    }

    pub fn with_config(config: ServiceConfig) -> Self {
        let addr = spawn(config, "127.0.0.1:0".parse().unwrap()).unwrap();
        Self {
            base: format!("http://{addr}"),
            client: reqwest::blocking::Client::builder().timeout(Duration::from_secs(300)).build().unwrap(),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        let r = self.client.get(self.url(path)).send().unwrap();
        let status = r.status().as_u16();
        (status, r.json().unwrap_or(Value::Null))
    }

    pub fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        let r = self.client.post(self.url(path)).json(body).send().unwrap();
        let status = r.status().as_u16();
        (status, r.json().unwrap_or(Value::Null))
    }

    /// Starts a run and polls until it leaves the running state. Returns
    /// the run id and every status body seen.
    pub fn run_to_completion(&self, body: &Value) -> (String, Vec<Value>) {
        let (status, created) = self.post("/runs", body);
        assert_eq!(status, 202, "{created}");
        let id = created["run_id"].as_str().unwrap().to_string();
        let deadline = Instant::now() + Duration::from_secs(600);
        let mut seen = Vec::new();
        loop {
            let (status, body) = self.get(&format!("/runs/{id}"));
            assert_eq!(status, 200, "{body}");
            let state = body["state"].as_str().unwrap().to_string();
            seen.push(body);
            if state != "running" {
                return (id, seen);
            }
            assert!(Instant::now() < deadline, "run {id} did not finish");
            std::thread::sleep(Duration::from_millis(50));
        }
    }
}

pub fn error_code(body: &Value) -> &str {
    body["error"]["code"].as_str().unwrap_or("<none>")
}
