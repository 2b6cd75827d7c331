//! Pins the wire encoding byte for byte. Set `UPDATE_GOLDEN=1` to rewrite
//! the files after an intentional protocol change.

use biteleop_core::protocol::{decode_command, decode_server, encode_command, encode_server, samples};
use std::path::PathBuf;

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn check(name: &str, encoded: String) {
    let path = golden(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &encoded).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap();
    assert_eq!(encoded, expected, "{name} drifted from the golden file");
}

#[test]
fn command_messages_match_golden_file() {
    let (commands, _) = samples();
    let text: String = commands.iter().map(|m| encode_command(m).unwrap()).collect();
    check("commands.jsonl", text.clone());
    for (line, m) in text.lines().zip(&commands) {
        assert_eq!(&decode_command(line).unwrap(), m);
    }
}

#[test]
fn server_messages_match_golden_file() {
    let (_, server) = samples();
    let text: String = server.iter().map(|m| encode_server(m).unwrap()).collect();
    check("server.jsonl", text.clone());
    for (line, m) in text.lines().zip(&server) {
        assert_eq!(&decode_server(line).unwrap(), m);
    }
}

#[test]
fn golden_files_cover_every_kind() {
    let kinds = |name: &str| -> Vec<String> {
        std::fs::read_to_string(golden(name))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["type"].as_str().unwrap().to_string())
            .collect()
    };
    let mut c = kinds("commands.jsonl");
    c.dedup();
    assert_eq!(c, ["frame", "calibrate", "set_mode", "inject_wrench", "record_ref", "clutch"]);
    assert_eq!(kinds("server.jsonl"), ["hello", "state", "ack", "error"]);
}
