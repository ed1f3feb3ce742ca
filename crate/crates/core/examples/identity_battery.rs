//! Duality, adjointness and coercivity on random fields, uniform and graded
//! meshes in 2D and 3D.
//!
//! cargo run --release --example identity_battery -- [trials] [seed]

use macflow::verify::{check_adjointness, check_coercivity, check_duality};
use macflow::MacMesh;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> macflow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let trials: usize = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let seed: u64 = args.get(2).and_then(|a| a.parse().ok()).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let meshes = [
        ("2D 5x4", MacMesh::uniform(&[(0.0, 1.0), (0.0, 1.0)], &[5, 4])?),
        (
            "2D graded",
            MacMesh::new(&[(0.0, 1.0), (0.0, 1.0)], &[vec![0.0, 0.05, 0.3, 0.6, 1.0], vec![0.0, 0.4, 0.5, 1.0]])?,
        ),
        ("3D 3x3x3", MacMesh::unit(3, 3)?),
    ];
    println!("mesh,duality,adjointness,coercivity,symmetry");
    for (name, mesh) in &meshes {
        let d = check_duality(mesh, trials, &mut rng)?;
        let a = check_adjointness(mesh, trials, &mut rng)?;
        let c = check_coercivity(mesh, trials, &mut rng)?;
        println!("{name},{d:.2e},{a:.2e},{:.2e},{:.2e}", c.identity, c.symmetry);
    }
    Ok(())
}
