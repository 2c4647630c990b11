//! The deposit mechanics in slow motion: drop a few particles on a path,
//! watch columns screen their neighbors, and see why subtracting the
//! running maximum gives a chain that never drifts away.
//!
//! ```text
//! cargo run --example screening_deposits
//! ```

use depo_lab::{Graph, HeightProfile, RelativeProfile};

fn main() -> depo_lab::Result<()> {
    let g = Graph::path(3)?;
    println!("three-vertex path: 0 — 1 — 2\n");

    // Absolute heights first: each deposit lands one above the tallest
    // column in the dropped vertex's closed neighborhood.
    let mut h = HeightProfile::flat(3);
    println!("t  drop   heights        max");
    println!("0  —      {:?}  {}", h.h, h.max());
    for (t, &site) in [1usize, 0, 1, 2, 2].iter().enumerate() {
        h = h.deposit(&g, site);
        println!("{}  at {site}   {:?}  {}", t + 1, h.h, h.max());
    }

    // The same walk in relative coordinates: the profile is pinned to its
    // maximum, a raise sinks everyone else by one.
    println!("\nrelative view (heights minus the maximum):");
    let mut x = RelativeProfile::flat(3);
    println!("t  drop   profile      raised the max?");
    println!("0  —      {x}");
    for (t, &site) in [1usize, 0, 1, 2, 2].iter().enumerate() {
        let (next, raised) = x.deposit(&g, site);
        println!("{}  at {site}   {next}   {raised}", t + 1);
        x = next;
    }

    // Screening means a deposit can never create two adjacent columns of
    // equal height: the new column strictly clears its neighbors.
    let (after, _) = x.deposit(&g, 1);
    for &(u, v) in g.edges() {
        assert_ne!(after.x[u], after.x[v], "adjacent columns tied");
    }
    println!("\nno deposit ever leaves two adjacent columns at equal height");
    Ok(())
}
