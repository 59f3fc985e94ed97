#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ridechat_service::client::ApiClient;
use ridechat_service::server::serve;
use ridechat_service::Service;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden")
}

/// The golden config rewritten into `dir` with absolute data paths and a
/// fresh log. `extra` is appended verbatim.
pub fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let text = fs::read_to_string(fixtures().join("config.toml")).unwrap();
    let fx = fixtures();
    let mut out = String::new();
    for line in text.lines() {
        let rewritten = match line.split_once(" = ") {
            Some((k @ ("pois" | "kb" | "tariffs" | "script"), v)) => {
                format!("{k} = {:?}", fx.join(v.trim_matches('"')).display().to_string())
            }
            Some(("log", _)) => format!("log = {:?}", dir.join("dialog.jsonl").display().to_string()),
            _ => line.to_string(),
        };
        out.push_str(&rewritten);
        out.push('\n');
    }
    out.push_str(extra);
    let path = dir.join("config.toml");
    fs::write(&path, out).unwrap();
    path
}

pub struct TestServer {
    pub base: String,
    pub service: Arc<Service>,
    _runtime: tokio::runtime::Runtime,
}

impl TestServer {
    pub fn client(&self) -> ApiClient {
        ApiClient::new(self.base.clone())
    }
}

/// Serves `config` on an ephemeral port from a private runtime.
pub fn start(config: &Path) -> TestServer {
    let service = Arc::new(Service::from_config_file(config).unwrap());
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
    let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    runtime.spawn(serve(service.clone(), listener));
    TestServer { base, service, _runtime: runtime }
}
