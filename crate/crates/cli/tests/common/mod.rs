//! Shared helpers for the CLI integration tests: fixture locations, process
//! invocation, and the deterministic corpus generators behind the committed
//! fixtures (see `tests/regen.rs`).

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_crosscheck")
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub struct CmdResult {
    pub code: i32,
    pub stdout: Vec<u8>,
    pub stderr: String,
}

pub fn run_cli(args: &[&str]) -> CmdResult {
    run_cli_with_stdin(args, None)
}

pub fn run_cli_with_stdin(args: &[&str], stdin: Option<&[u8]>) -> CmdResult {
    let mut command = Command::new(bin());
    command.args(args);
    let output: Output = match stdin {
        Some(bytes) => {
            command.stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
            let mut child = command.spawn().expect("spawn crosscheck");
            use std::io::Write;
            child.stdin.as_mut().unwrap().write_all(bytes).unwrap();
            child.wait_with_output().expect("wait for crosscheck")
        }
        None => command.output().expect("run crosscheck"),
    };
    CmdResult {
        code: output.status.code().unwrap_or(-1),
        stdout: output.stdout,
        stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
    }
}

/// Template family behind every committed corpus fixture. Disjoint index
/// ranges give corpora different documents with heavily overlapping byte
/// statistics.
pub fn template_docs(range: std::ops::Range<usize>) -> Vec<Vec<u8>> {
    let names = ["total", "count", "items", "value"];
    let templates: Vec<fn(&str, usize) -> String> = vec![
        |n, i| format!("fn get_{n}(xs: &[u32]) -> u32 {{ xs.iter().sum::<u32>() + {i} }}\n"),
        |n, i| format!("let {n} = xs.iter().map(|x| x * {i}).collect::<Vec<_>>();\n"),
        |n, i| format!("for x in xs.iter() {{ {n} += x + {i}; }}\n"),
        |n, i| format!("if {n} > {i} {{ return Err(Error::Limit); }}\n"),
        |n, i| format!("while {n} < xs.len() {{ {n} += {i}; }}\n"),
        |n, i| format!("assert_eq!({n}.len(), {i});\n"),
    ];
    range
        .map(|d| {
            let mut doc = String::new();
            for line in 0..5 {
                let t = templates[(d + line) % templates.len()];
                doc.push_str(&t(names[(d + line * 3) % names.len()], (d * 7 + line * 11) % 100));
            }
            doc.into_bytes()
        })
        .collect()
}

/// Larger corpus for the canonical simulation scenario: 64 documents from a
/// wider name/template pool.
pub fn canonical_docs() -> Vec<Vec<u8>> {
    let names = ["total", "count", "items", "value", "index", "limit", "result", "buffer"];
    let templates: Vec<fn(&str, usize) -> String> = vec![
        |n, i| format!("fn get_{n}(xs: &[u32]) -> u32 {{ xs.iter().sum::<u32>() + {i} }}\n"),
        |n, i| format!("let {n} = xs.iter().map(|x| x * {i}).collect::<Vec<_>>();\n"),
        |n, i| format!("for x in xs.iter() {{ {n} += x + {i}; }}\n"),
        |n, i| format!("if {n} > {i} {{ return Err(Error::Limit); }}\n"),
        |n, i| format!("while {n} < xs.len() {{ {n} += {i}; }}\n"),
        |n, i| format!("let mut {n} = Vec::with_capacity({i});\n"),
        |n, i| format!("assert_eq!({n}.len(), {i});\n"),
        |n, i| format!("println!(\"{n} = {{}}\", {n} + {i});\n"),
    ];
    (0..64)
        .map(|d| {
            let mut doc = String::new();
            for line in 0..6 {
                let t = templates[(d + line * 3) % templates.len()];
                doc.push_str(&t(names[(d * 5 + line) % names.len()], (d * 7 + line * 11) % 100));
            }
            doc.into_bytes()
        })
        .collect()
}

/// Out-of-distribution payload: byte values the corpus generators never
/// produce.
pub fn canonical_payload() -> Vec<u8> {
    vec![0xDE, 0xAD, 0xBE, 0xEF, 0x99, 0xF1, 0xE7, 0xD4, 0xC8, 0xB3, 0xA2, 0x91]
}

/// Payload document used to poison the rank fixture's training corpus.
pub fn payload_doc() -> Vec<u8> {
    let mut doc = Vec::new();
    for _ in 0..24 {
        doc.extend_from_slice(&[0xEE, 0xC4, 0xB9, 0xD7, 0xF2, 0xA8, 0x93, 0xE1, b'\n']);
    }
    doc
}
