#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use carma_cds_cli::commands::synthetic_date;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_carma-cds")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    let d = dir.to_str().expect("utf8 path");
    all.extend(["--out-dir", d]);
    run(&all)
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(o),
        stderr(o)
    );
}

/// Data rows of a CSV output, without comment lines and header.
pub fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

/// Every file of a directory, sorted by name.
pub fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .expect("readable dir")
        .map(|e| {
            let p: PathBuf = e.expect("entry").path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).expect("readable"),
            )
        })
        .collect();
    v.sort();
    v
}

/// Writes a dated premium series whose log-returns are `returns`.
pub fn write_premium_from_returns(path: &Path, c0: f64, returns: &[f64]) {
    let mut s = String::from("date,premium\n");
    let mut level = c0;
    s.push_str(&format!("{},{level}\n", synthetic_date(0)));
    for (k, r) in returns.iter().enumerate() {
        level *= r.exp();
        s.push_str(&format!("{},{level}\n", synthetic_date(k + 1)));
    }
    fs::write(path, s).expect("writable");
}
