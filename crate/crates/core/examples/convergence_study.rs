//! Refinement study of the rotating-patch preset with δt proportional to h.
//!
//! cargo run --release --example convergence_study -- [levels...]

use macflow::linsolve::SolverOptions;
use macflow::presets::Preset;
use macflow::verify::{convergence_study, ConvergenceReport, StudyOptions, TimestepPolicy};

fn main() -> macflow::Result<()> {
    let mut levels: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if levels.is_empty() {
        levels = vec![16, 32, 64];
    }
    let report = convergence_study(&StudyOptions {
        preset: Preset::RotatingPatch,
        dim: 2,
        levels,
        policy: TimestepPolicy::Proportional { factor: 0.5 },
        t_final: 0.5,
        solver: SolverOptions::default(),
        min_factor: 1.5,
    })?;
    println!("{}", ConvergenceReport::COLUMNS.join(","));
    for row in report.rows() {
        println!("{}", row.join(","));
    }
    if let Some((a, b)) = report.energy_spread() {
        println!("energy norm spread between the finest levels: L2(H1) {a:.3}, Linf(L2) {b:.3}");
    }
    println!("monotone: {}, reduction >= {}: {}", report.monotone(), report.min_factor, report.passed());
    Ok(())
}
