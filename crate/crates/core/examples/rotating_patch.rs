//! Runs the rotating density patch and writes VTK snapshots to `patch_vtk/`.
//!
//! cargo run --release --example rotating_patch -- [cells] [steps]

use std::path::Path;
use std::sync::Arc;

use macflow::io::{atomic_write, write_vtk};
use macflow::presets::Preset;
use macflow::timestepper::{run, SchemeConfig};
use macflow::verify::Thresholds;
use macflow::MacMesh;

fn main() -> macflow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(32);
    let steps: usize = args.get(2).and_then(|a| a.parse().ok()).unwrap_or(64);
    let dt = 0.5 / n as f64;
    let mesh = Arc::new(MacMesh::unit(2, n)?);
    let config = SchemeConfig::from_problem(mesh.clone(), Preset::RotatingPatch.build(2)?, steps as f64 * dt, dt);
    let out = run(&config)?;
    if let Some(f) = &out.failure {
        eprintln!("stopped at step {}: {}", f.step, f.error);
    }
    let th = Thresholds::from_solver(&config.solver);
    let d = &out.diagnostics;
    println!("step,t,rho_min,rho_max,kinetic_energy,div_l2");
    for s in d.steps.iter().step_by((steps / 16).max(1)) {
        println!("{},{:.4},{:.6},{:.6},{:.6e},{:.2e}", s.n, s.t, s.rho_min, s.rho_max, s.kinetic_energy, s.div_l2);
    }
    println!("L2(H1) = {:.4}, Linf(L2) = {:.4}", d.l2_h1(), d.linf_l2());
    println!("failed checks: {:?}", d.failures(&th));
    let traj = &out.trajectory;
    for k in (0..traj.len()).step_by((steps / 8).max(1)) {
        let path = Path::new("patch_vtk").join(format!("state_{k:06}.vtk"));
        atomic_write(&path, |w| {
            write_vtk(w, &mesh, "rotating patch", &traj.density[k], &traj.velocity[k], &traj.pressure[k])
        })?;
    }
    println!("wrote patch_vtk/");
    Ok(())
}
