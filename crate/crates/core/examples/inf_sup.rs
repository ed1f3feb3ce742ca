//! Discrete inf-sup constant of the MAC velocity/pressure pair under
//! refinement. It should stay bounded away from zero.
//!
//! cargo run --release --example inf_sup

use macflow::linsolve::inf_sup_constant;
use macflow::MacMesh;

fn main() -> macflow::Result<()> {
    println!("cells,beta");
    for n in [4, 8, 12, 16] {
        println!("{n},{:.6}", inf_sup_constant(&MacMesh::unit(2, n)?)?);
    }
    let graded = MacMesh::new(
        &[(0.0, 1.0), (0.0, 1.0)],
        &[vec![0.0, 0.05, 0.15, 0.3, 0.5, 0.7, 0.85, 0.95, 1.0], vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]],
    )?;
    println!("graded,{:.6}", inf_sup_constant(&graded)?);
    Ok(())
}
