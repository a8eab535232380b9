//! A server over a private copy of the shipped fixtures.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use infoflow_server::{spawn, RunningServer, ServerConfig};

pub const ALICE: &str = "alice-token";
pub const BOB: &str = "bob-token";
pub const ADMIN: &str = "admin-token";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn golden(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let target = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &target);
        } else if e.file_name() != "audit.log" {
            std::fs::copy(e.path(), target).unwrap();
        }
    }
}

pub struct Env {
    pub dir: tempfile::TempDir,
    pub server: RunningServer,
}

impl Env {
    pub fn start() -> Env {
        let dir = tempfile::tempdir().unwrap();
        copy_dir(&fixtures(), dir.path());
        let cfg_path = dir.path().join("server.toml");
        let text = std::fs::read_to_string(&cfg_path).unwrap().replace("127.0.0.1:8080", "127.0.0.1:0");
        std::fs::write(&cfg_path, text).unwrap();
        let server = spawn(&ServerConfig::load(&cfg_path).unwrap()).unwrap();
        Env { dir, server }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn url(&self) -> String {
        self.server.url()
    }

    /// Runs the `infoflow` binary against this server with a clean env.
    pub fn cli(&self, args: &[&str], token: Option<&str>) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_infoflow"));
        cmd.args(args)
            .env_remove("INFOFLOW_TOKEN")
            .env_remove("INFOFLOW_USER")
            .env_remove("INFOFLOW_CONFIG")
            .env("INFOFLOW_SERVER", self.url())
            .current_dir(self.dir.path());
        if let Some(t) = token {
            cmd.env("INFOFLOW_TOKEN", t);
        }
        cmd.output().unwrap()
    }
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}
