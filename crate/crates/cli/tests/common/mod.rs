#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use momentloop::transform::PceMode;
use momentloop::{parse_program, Program};

pub fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn bench_path(stem: &str) -> PathBuf {
    root().join("benchmarks").join(format!("{stem}.pp"))
}

pub struct Bench {
    pub stem: String,
    pub program: Program,
    pub target: String,
    pub n: u64,
    pub degrees: Vec<u32>,
    pub mode: PceMode,
}

pub fn bench(stem: &str) -> Bench {
    let src = std::fs::read_to_string(bench_path(stem)).unwrap();
    let mut b = Bench {
        stem: stem.to_string(),
        program: parse_program(&src).unwrap(),
        target: String::new(),
        n: 0,
        degrees: Vec::new(),
        mode: PceMode::Stable,
    };
    for line in src.lines() {
        let Some(rest) = line.trim().strip_prefix("# @") else { continue };
        let (key, value) = rest.split_once(' ').unwrap_or((rest, ""));
        match key {
            "target" => b.target = value.trim().to_string(),
            "n" => b.n = value.trim().parse().unwrap(),
            "degrees" => b.degrees = value.split_whitespace().map(|d| d.parse().unwrap()).collect(),
            "mode" => {
                b.mode = match value.trim().split_once(':') {
                    Some(("conditional", k)) => PceMode::Conditional(k.parse().unwrap()),
                    _ => PceMode::Stable,
                }
            }
            _ => {}
        }
    }
    b
}

pub const ALL: [&str; 11] = [
    "taylor_rule",
    "turning_vehicle",
    "turning_vehicle_trunc",
    "underwater_vehicle",
    "planar_aerial",
    "aerial_3d",
    "differential_drive",
    "rimless_wheel",
    "robotic_arm",
    "mobile_robotic_arm",
    "stochastic_decay",
];

pub fn momentloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_momentloop"))
        .args(args)
        .current_dir(root())
        .output()
        .unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Value column of the first data row of a CSV report.
pub fn first_value(csv: &str, column: &str) -> f64 {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == column).unwrap();
    lines.next().unwrap().split(',').nth(i).unwrap().parse().unwrap()
}

pub fn csv_column(csv: &str, column: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == column).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap().parse().unwrap()).collect()
}
