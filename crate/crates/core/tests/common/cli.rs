//! Running the `mhpl` binary and comparing its outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

pub fn mhpl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhpl"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Run and panic with stderr unless the exit code is 0.
pub fn ok(args: &[&str]) -> Output {
    let out = mhpl(args);
    assert!(
        out.status.success(),
        "mhpl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Drop the run-time measurement: the `wall_ms` key of JSON reports and the
/// `wall_ms` column of sweep tables.
pub fn strip_wall_clock(name: &str, bytes: &[u8]) -> Vec<u8> {
    if name.ends_with(".json") {
        let mut v: serde_json::Value = serde_json::from_slice(bytes).expect("valid json");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("wall_ms");
        }
        return serde_json::to_vec(&v).unwrap();
    }
    if name == "sweep.csv" {
        let text = String::from_utf8(bytes.to_vec()).unwrap();
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let col = header.iter().position(|h| *h == "wall_ms").unwrap();
        let keep = |line: &str| {
            line.split(',')
                .enumerate()
                .filter(|(i, _)| *i != col)
                .map(|(_, f)| f)
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = keep(&header.join(","));
        for l in lines {
            out.push('\n');
            out.push_str(&keep(l));
        }
        return out.into_bytes();
    }
    bytes.to_vec()
}

/// File name to contents (wall clock removed) for every file in `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            let bytes = fs::read(&path).unwrap();
            out.insert(name.clone(), strip_wall_clock(&name, &bytes));
        }
    }
    out
}
