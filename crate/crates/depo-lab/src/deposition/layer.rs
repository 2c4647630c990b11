//! Depth-`k` dropping: deposits may fill screened-off holes close to a
//! column's top instead of always landing above the neighborhood.
//!
//! The chain state is the equivalence class that survives shifting all
//! heights by a constant: the relative top profile plus, per vertex, a
//! width-`k` occupancy window hanging from the vertex's own top. Everything a
//! transition needs (and nothing more) can be read off that class, so the
//! class itself is a Markov state.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::deposition::{sample_index, DriverSpec, RelativeProfile};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Shift-invariant state of the depth-`k` model.
///
/// `windows[v]` bit `j` records a particle at height `top(v) - j`; bit 0 is
/// the particle realizing the top and is always set. Equality of two values
/// is exactly equivalence of the underlying particle configurations up to a
/// global height shift restricted to depth `k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LayerConfig {
    pub k: usize,
    pub top: RelativeProfile,
    pub windows: Vec<u64>,
}

/// Serializable mirror of [`LayerConfig`] with windows as explicit bit lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerConfigFile {
    pub k: usize,
    pub top: Vec<i64>,
    pub windows: Vec<Vec<u8>>,
}

impl From<&LayerConfig> for LayerConfigFile {
    fn from(c: &LayerConfig) -> Self {
        LayerConfigFile {
            k: c.k,
            top: c.top.x.clone(),
            windows: c
                .windows
                .iter()
                .map(|&w| (0..c.k).map(|j| (w >> j & 1) as u8).collect())
                .collect(),
        }
    }
}

impl TryFrom<&LayerConfigFile> for LayerConfig {
    type Error = Error;

    fn try_from(f: &LayerConfigFile) -> Result<LayerConfig> {
        let mut windows = Vec::with_capacity(f.windows.len());
        for bits in &f.windows {
            if bits.len() != f.k {
                return Err(Error::Config(format!(
                    "window has {} bits, expected k = {}",
                    bits.len(),
                    f.k
                )));
            }
            windows.push(bits.iter().enumerate().map(|(j, &b)| u64::from(b != 0) << j).sum());
        }
        let cfg = LayerConfig { k: f.k, top: RelativeProfile { x: f.top.clone() }, windows };
        if !cfg.top.is_valid() || cfg.windows.iter().any(|&w| w & 1 == 0) {
            return Err(Error::Config("malformed layer state".into()));
        }
        Ok(cfg)
    }
}

fn mask(k: usize) -> u64 {
    if k >= 64 {
        u64::MAX
    } else {
        (1u64 << k) - 1
    }
}

impl LayerConfig {
    /// Canonical start: one particle per site, deposited by screening along
    /// the growth ordering rooted at 0. Deterministic and exclusion-clean.
    pub fn seeded(g: &Graph, k: usize) -> Result<LayerConfig> {
        if k == 0 {
            return Err(Error::InvalidDriver("window width k must be >= 1".into()));
        }
        let mut h = crate::deposition::HeightProfile::flat(g.n());
        let ordering = g.growth_ordering(0)?;
        for v in std::iter::once(0).chain(ordering.order.iter().copied()) {
            h = h.deposit(g, v);
        }
        Ok(LayerConfig {
            k,
            top: h.relativize(),
            windows: vec![1; g.n()],
        })
    }

    /// Builds the class of an explicit particle set (absolute heights per
    /// vertex). Every vertex needs at least one particle; adjacent particles
    /// at equal heights are rejected.
    pub fn from_particles(g: &Graph, k: usize, particles: &[Vec<i64>]) -> Result<LayerConfig> {
        if particles.len() != g.n() {
            return Err(Error::Config(format!(
                "{} particle columns for {} vertices",
                particles.len(),
                g.n()
            )));
        }
        let mut tops = Vec::with_capacity(g.n());
        for (v, col) in particles.iter().enumerate() {
            let top = *col
                .iter()
                .max()
                .ok_or_else(|| Error::Config(format!("vertex {v} has no particles")))?;
            tops.push(top);
        }
        for &(u, w) in g.edges() {
            for &a in &particles[u] {
                if particles[w].contains(&a) {
                    return Err(Error::Config(format!(
                        "adjacent particles at equal height {a} on edge ({u}, {w})"
                    )));
                }
            }
        }
        let windows = particles
            .iter()
            .zip(&tops)
            .map(|(col, &top)| {
                (0..k.min(64))
                    .map(|j| u64::from(col.contains(&(top - j as i64))) << j)
                    .sum()
            })
            .collect();
        let m = *tops.iter().max().unwrap();
        Ok(LayerConfig {
            k,
            top: RelativeProfile { x: tops.iter().map(|&t| t - m).collect() },
            windows,
        })
    }

    pub fn n(&self) -> usize {
        self.top.n()
    }

    /// Occupancy at absolute (relative-to-max) height `a` on vertex `v`, as
    /// far as the window can see. `None` means the slot is below the window.
    fn slot(&self, v: usize, a: i64) -> Option<bool> {
        let top = self.top.x[v];
        if a > top {
            return Some(false); // above the column's top: certainly vacant
        }
        let d = (top - a) as u64;
        if d < self.k as u64 {
            Some(self.windows[v] >> d & 1 == 1)
        } else {
            None
        }
    }

    /// Screened deposit at `v`: new top one above the closed neighborhood,
    /// window shifted down by the rise. Returns the new class and whether the
    /// global maximum rose.
    pub fn screening_deposit(&self, g: &Graph, v: usize) -> (LayerConfig, bool) {
        let m = g.closed_neighborhood_max(v, |j| self.top.x[j]);
        let rise = (m + 1 - self.top.x[v]) as u64; // >= 1: the closed neighborhood includes v
        let (top, raised) = self.top.deposit(g, v);
        let mut windows = self.windows.clone();
        windows[v] = if rise >= 64 { 1 } else { (windows[v] << rise | 1) & mask(self.k) };
        (LayerConfig { k: self.k, top, windows }, raised)
    }

    /// Vacant in-window slots below `v`'s top that no neighbor's window
    /// contradicts. Slots below a neighbor's window are not blocked: the
    /// transition rule only reads the class.
    pub fn feasible_fill_slots(&self, g: &Graph, v: usize) -> Vec<usize> {
        let mut slots = Vec::new();
        'slot: for j in 1..self.k.min(64) {
            if self.windows[v] >> j & 1 == 1 {
                continue;
            }
            let a = self.top.x[v] - j as i64;
            for &w in g.neighbors(v) {
                if self.slot(w, a) == Some(true) {
                    continue 'slot;
                }
            }
            slots.push(j);
        }
        slots
    }

    /// Fills the vacant slot `j` levels below `v`'s top. Tops never move.
    pub fn fill(&self, v: usize, j: usize) -> LayerConfig {
        debug_assert!(j >= 1 && j < self.k && self.windows[v] >> j & 1 == 0);
        let mut windows = self.windows.clone();
        windows[v] |= 1 << j;
        LayerConfig { k: self.k, top: self.top.clone(), windows }
    }

    /// No two adjacent vertices may hold particles at the same height, as far
    /// as the overlapping windows can see.
    pub fn exclusion_ok(&self, g: &Graph) -> bool {
        for &(u, w) in g.edges() {
            for j in 0..self.k.min(64) {
                if self.windows[u] >> j & 1 == 0 {
                    continue;
                }
                let a = self.top.x[u] - j as i64;
                if self.slot(w, a) == Some(true) {
                    return false;
                }
            }
        }
        true
    }
}

impl std::fmt::Display for LayerConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let windows: Vec<String> = self
            .windows
            .iter()
            .map(|&w| (0..self.k).map(|j| if w >> j & 1 == 1 { '1' } else { '0' }).collect())
            .collect();
        write!(f, "{}|w[{}]", self.top, windows.join(","))
    }
}

/// Whether two classes are equal as shift-equivalence classes. Classes are
/// stored canonically, so this is plain equality; the name documents intent
/// at call sites comparing configurations built from different histories.
pub fn layer_equivalent(a: &LayerConfig, b: &LayerConfig) -> bool {
    a == b
}

/// Full one-step law from `cfg`: site `v` is drawn from `q`; with
/// probability `1 - rho` (or always, if no slot is feasible) it deposits by
/// screening, otherwise it fills a uniformly chosen feasible slot.
pub fn layer_one_step_law(
    cfg: &LayerConfig,
    g: &Graph,
    k: usize,
    rho: f64,
    q: &[f64],
) -> Vec<(LayerConfig, f64)> {
    debug_assert_eq!(k, cfg.k);
    let mut law: BTreeMap<LayerConfig, f64> = BTreeMap::new();
    for (v, &qv) in q.iter().enumerate() {
        if qv == 0.0 {
            continue;
        }
        let slots = cfg.feasible_fill_slots(g, v);
        let (screen, _) = cfg.screening_deposit(g, v);
        let screen_mass = if slots.is_empty() { qv } else { qv * (1.0 - rho) };
        *law.entry(screen).or_insert(0.0) += screen_mass;
        if !slots.is_empty() {
            let each = qv * rho / slots.len() as f64;
            for &j in &slots {
                *law.entry(cfg.fill(v, j)).or_insert(0.0) += each;
            }
        }
    }
    law.into_iter().collect()
}

/// One sampled step. Returns the new class, the chosen site, whether the
/// maximum rose, and whether the step was a hole fill.
pub fn step_layer(
    cfg: &LayerConfig,
    spec: &DriverSpec,
    g: &Graph,
    rng: &mut impl Rng,
) -> (LayerConfig, usize, bool, bool) {
    let (rho, q) = match spec {
        DriverSpec::Layer { rho, q, .. } => (*rho, q),
        _ => unreachable!("step_layer requires a layer driver"),
    };
    let v = sample_index(q, rng);
    if rng.random::<f64>() < rho {
        let slots = cfg.feasible_fill_slots(g, v);
        if !slots.is_empty() {
            let j = slots[rng.random_range(0..slots.len())];
            return (cfg.fill(v, j), v, false, true);
        }
    }
    let (next, raised) = cfg.screening_deposit(g, v);
    (next, v, raised, false)
}
