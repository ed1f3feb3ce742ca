//! Time translates of the velocity on the unsteady swirl.
//!
//! cargo run --release --example time_translates -- [cells] [steps_per_unit]

use std::sync::Arc;

use macflow::presets::Preset;
use macflow::timestepper::{run, SchemeConfig};
use macflow::verify::measure_translates;
use macflow::MacMesh;

fn main() -> macflow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(32);
    let per_unit: usize = args.get(2).and_then(|a| a.parse().ok()).unwrap_or(64);
    let dt = 1.0 / per_unit as f64;
    let problem = Preset::Unsteady.build(2)?;
    let mesh = Arc::new(MacMesh::unit(2, n)?);
    let mut config = SchemeConfig::from_problem(mesh.clone(), problem.clone(), 1.0, dt);
    config.diagnostics = false;
    let out = run(&config)?;
    if let Some(f) = out.failure {
        return Err(f.error);
    }
    let taus: Vec<f64> = [0, 1, 2, 4, 8].iter().map(|&m| m as f64 * dt).collect();
    let report = measure_translates(&mesh, &out.trajectory, &taus, problem.density_bounds())?;
    println!("tau,integral");
    for (tau, i) in &report.entries {
        println!("{tau:.6},{i:.6e}");
    }
    println!("slope {:.4} (one-sided check: >= 0.4)", report.slope);
    println!("bound scale (rho_max/rho_min)(|u|^3 + 1) = {:.4}", report.scale);
    Ok(())
}
