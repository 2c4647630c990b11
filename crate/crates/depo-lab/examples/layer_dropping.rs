//! The depth-k layer model: most drops screen as usual, but a fraction can
//! fill holes within k levels of a column's top — subject to hard exclusion
//! against occupied and adjacent-equal positions. Tracking columns only down
//! to depth k keeps the state finite-per-window and the chain still mixes.
//!
//! ```text
//! cargo run --example layer_dropping
//! ```

use depo_lab::analysis::layer_tv_horizon;
use depo_lab::deposition::layer::{layer_equivalent, layer_one_step_law};
use depo_lab::{certificate_for, sample_step, ChainState, DriverSpec, Graph, LayerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> depo_lab::Result<()> {
    let g = Graph::path(3)?;
    let (k, rho) = (2usize, 0.3);
    let q = vec![1.0 / 3.0; 3];
    let driver = DriverSpec::Layer { k, rho, q: q.clone() };

    let mut state = ChainState::Layered(LayerConfig::seeded(&g, k)?);
    println!("start: {state}");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut fills, mut raises) = (0u32, 0u32);
    for _ in 0..20_000 {
        let before = state.profile().clone();
        let (next, _, raised) = sample_step(&state, &g, &driver, &mut rng)?;
        fills += u32::from(*next.profile() == before);
        raises += u32::from(raised);
        let ChainState::Layered(cfg) = &next else { unreachable!() };
        assert!(cfg.exclusion_ok(&g), "exclusion violated");
        state = next;
    }
    println!(
        "20k steps: {} fills below the surface, {} raises, exclusion intact",
        fills, raises
    );

    // Anything deeper than k below a top is out of the window: configs
    // differing only there are the same state with the same next-step law.
    let shallow = LayerConfig::from_particles(&g, k, &[vec![0], vec![-1], vec![-2]])?;
    let deep = LayerConfig::from_particles(&g, k, &[vec![0, -9], vec![-1, -8], vec![-2, -7]])?;
    assert!(layer_equivalent(&shallow, &deep));
    assert_eq!(
        layer_one_step_law(&shallow, &g, k, rho, &q),
        layer_one_step_law(&deep, &g, k, rho, &q)
    );
    println!("\nburied particles are invisible: same class, same one-step law");

    // Exact pushforward of two starts' laws until they meet in TV.
    let other = LayerConfig::from_particles(&g, k, &[vec![0], vec![-4], vec![-1]])?;
    if let Some((t, tv)) = layer_tv_horizon(&g, k, rho, &q, &shallow, &other, 0.05, 300)? {
        println!("laws from two distinct starts reach TV {tv:.4} after {t} steps");
    }

    let cert = certificate_for(&g, &driver)?;
    println!(
        "\nlayer certificate: window {} drops, floor α′ = {:.3e}",
        cert.s, cert.alpha_prime
    );
    Ok(())
}
