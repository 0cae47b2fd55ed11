//! Shared harness for driving the compiled binary from integration tests.

use std::path::Path;
use std::process::Command;

pub struct RunOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl RunOutput {
    /// The one-line JSON summary a successful run prints.
    pub fn summary(&self) -> serde_json::Value {
        serde_json::from_str(self.stdout.lines().last().unwrap_or_default())
            .unwrap_or_else(|e| panic!("stdout not a JSON summary ({e}): {:?}", self.stdout))
    }

    /// The one-line JSON error a failed run prints on stderr.
    pub fn error_line(&self) -> serde_json::Value {
        let lines: Vec<&str> = self.stderr.lines().collect();
        assert_eq!(lines.len(), 1, "expected exactly one stderr line, got {:?}", self.stderr);
        serde_json::from_str(lines[0])
            .unwrap_or_else(|e| panic!("stderr not JSON ({e}): {:?}", self.stderr))
    }
}

pub fn adex(args: &[&str]) -> RunOutput {
    adex_in(None, args)
}

pub fn adex_in(dir: Option<&Path>, args: &[&str]) -> RunOutput {
    let mut command = Command::new(env!("CARGO_BIN_EXE_adex"));
    if let Some(dir) = dir {
        command.current_dir(dir);
    }
    let output = command.args(args).output().expect("binary runs");
    RunOutput {
        code: output.status.code().expect("normal exit"),
        stdout: String::from_utf8(output.stdout).expect("utf8 stdout"),
        stderr: String::from_utf8(output.stderr).expect("utf8 stderr"),
    }
}

pub fn write(path: &Path, text: &str) {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).unwrap();
    }
    std::fs::write(path, text).unwrap();
}

pub fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

/// Parse a CSV produced by the binary into header + string rows.
pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}
