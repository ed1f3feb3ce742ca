//! Drives the `run` command from a configuration file, the same way the
//! binary does.
//!
//! cargo run --release --example run_config -- configs/rotating_patch.toml

use std::path::PathBuf;

use macflow::cli::{cmd_run, CommandOptions};

fn main() -> macflow::Result<()> {
    let config = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/trivial.toml")));
    let outcome = cmd_run(&CommandOptions {
        config,
        ..Default::default()
    })?;
    for c in &outcome.checks {
        println!("{c}");
    }
    println!("outputs in {}", outcome.out_dir.display());
    std::process::exit(outcome.exit_code());
}
