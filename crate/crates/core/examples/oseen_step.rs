//! One transport and one Oseen solve on a rotating-patch state, timed.
//!
//! cargo run --release --example oseen_step -- [cells] [direct|iterative]

use std::sync::Arc;
use std::time::Instant;

use macflow::linsolve::{solve_oseen, solve_transport, SolverOptions, Strategy};
use macflow::presets::Preset;
use macflow::timestepper::{initialize, sample_forcing, SchemeConfig};
use macflow::MacMesh;

fn main() -> macflow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(32);
    let strategy = match args.get(2).map(String::as_str) {
        Some("iterative") => Strategy::Iterative,
        _ => Strategy::Direct,
    };
    let mesh = Arc::new(MacMesh::unit(2, n)?);
    let dt = 0.5 / n as f64;
    let config = SchemeConfig::from_problem(mesh.clone(), Preset::RotatingPatch.build(2)?, 0.5, dt);
    let state = initialize(&config)?;
    let opts = SolverOptions {
        strategy,
        ..Default::default()
    };

    let clock = Instant::now();
    let (rho, tr) = solve_transport(&mesh, &state.rho, &state.u, dt, &opts)?;
    println!("transport: {} cells, residual {:.2e}, {:?}", mesh.n_cells(), tr.transport_residual, clock.elapsed());

    let f = sample_forcing(&mesh, config.forcing.as_ref(), dt);
    let clock = Instant::now();
    let (u, _p, rep) = solve_oseen(&mesh, &state.rho, &rho, &state.u, &f, dt, &opts)?;
    println!(
        "oseen ({:?}): {} unknowns, {} iterations, momentum {:.2e}, divergence {:.2e}, fell back: {}, {:?}",
        strategy,
        mesh.n_velocity_unknowns() + mesh.n_cells(),
        rep.iterations,
        rep.momentum_residual,
        rep.divergence_residual,
        rep.fell_back,
        clock.elapsed()
    );
    println!("max |u| = {:.4}", u.max_abs());
    Ok(())
}
