//! Rebuild strings for a Markov drop driver: when the drop site is itself a
//! lazy walk on a directed graph, a vertex's rebuild string must follow that
//! walk's arcs, and parking plus rebuilding takes a known number of steps.
//!
//! ```text
//! cargo run --example walk_rebuild
//! ```

use depo_lab::chain::markov_core;
use depo_lab::{DirectedDriverGraph, Graph, RelativeProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> depo_lab::Result<()> {
    // A triangle with a pendant vertex; the walker moves on a sparse,
    // lazy, irreducible arc set over the same vertices.
    let g = Graph::new(4, &[(0, 1), (0, 2), (1, 2), (2, 3)])?;
    let arcs = [
        (0, 0), (1, 1), (2, 2), (3, 3),
        (1, 2), (1, 0), (0, 3), (0, 2), (2, 3), (2, 1), (3, 1),
    ];
    let d = DirectedDriverGraph::new(4, &arcs)?;
    let report = d.check();
    println!(
        "driver graph: irreducible = {}, lazy = {}, diameter = {:?}\n",
        report.irreducible, report.lazy, report.diameter
    );

    let core = markov_core(&g, &d)?;
    println!("per-vertex rebuild strings (walker sites, arc-consecutive):");
    for m in &core.per_vertex {
        println!(
            "  root {}: ordering {:?}, string {:?}, s = {}, park budget σ = {}",
            m.root, m.ordering, m.string, m.s, m.sigma
        );
    }
    println!("\ncommunication window: {} walker steps", core.comm_time);

    // Replay one rebuild from a few random profiles with the max at its
    // root: the landed profile and walker position are always the same.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let target = &core.core[1];
    let drops = core.per_vertex[1].replay_drops();
    println!("\nreplaying root 1's drops {drops:?}:");
    for _ in 0..3 {
        let mut coords: Vec<i64> = (0..4).map(|_| rng.random_range(-5..=0)).collect();
        coords[1] = 0;
        let y = RelativeProfile { x: coords };
        let rebuilt = depo_lab::chain::replay_profile(&y, &g, &drops);
        println!("  {y}  →  {rebuilt} (walker parked at {})", target.1);
        assert_eq!(rebuilt, target.0);
    }
    Ok(())
}
