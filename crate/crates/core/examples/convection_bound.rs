//! Ratio of the convection trilinear form to its H¹ bound over random
//! divergence-free fields, at two resolutions.
//!
//! cargo run --release --example convection_bound -- [samples]

use macflow::verify::measure_convection_bound;
use macflow::MacMesh;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> macflow::Result<()> {
    let samples: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(50);
    let mut prev: Option<f64> = None;
    println!("cells,max_ratio,mean_ratio,samples,skipped,growth");
    for n in [8, 16, 32] {
        let mesh = MacMesh::unit(2, n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = measure_convection_bound(&mesh, samples, &mut rng)?;
        let growth = prev.map_or(String::new(), |p| format!("{:.3}", b.max_ratio / p));
        println!("{n},{:.4e},{:.4e},{},{},{growth}", b.max_ratio, b.mean_ratio, b.samples, b.skipped);
        prev = Some(b.max_ratio);
    }
    Ok(())
}
