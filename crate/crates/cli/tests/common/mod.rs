//! Fixture generation and binary invocation shared by the CLI test suites.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_driftwatch")
}

pub fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(binary())
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn driftwatch")
}

pub fn assert_success(output: &Output) {
    assert!(
        output.status.success(),
        "command failed (exit {:?})\nstdout: {}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Write a feature CSV of `rows` x `d` normal draws shifted by `shift`.
/// When `labels` is given it must yield one 0/1 label per row; label-0 rows
/// are drawn shifted by `shift_incorrect` instead.
pub fn write_normal_csv(
    path: &PathBuf,
    seed: u64,
    rows: usize,
    d: usize,
    shift: f64,
    labels: Option<(&dyn Fn(usize) -> u8, f64)>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::new();
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    if labels.is_some() {
        header.push("correct".into());
    }
    text.push_str(&header.join(","));
    text.push('\n');
    for i in 0..rows {
        let (label, row_shift) = match &labels {
            Some((f, shift_incorrect)) => {
                let l = f(i);
                (Some(l), if l == 1 { shift } else { *shift_incorrect })
            }
            None => (None, shift),
        };
        let mut cells: Vec<String> = (0..d)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                format!("{}", x + row_shift)
            })
            .collect();
        if let Some(l) = label {
            cells.push(l.to_string());
        }
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}
