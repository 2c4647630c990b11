//! Height profiles and the screened deposition step.
//!
//! A deposit at site `i` lands one unit above the highest column in the
//! closed neighborhood of `i`, so a particle never sits below any neighbor's
//! top. Profiles are tracked either absolutely or relative to the running
//! maximum (all entries <= 0, at least one 0); the relative profile is the
//! state of the Markov chain everything else in the crate studies.

pub mod layer;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DirectedDriverGraph, Graph};

/// Absolute column heights, one per vertex. Entries may be negative so that
/// any relative profile doubles as its own representative.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HeightProfile {
    pub h: Vec<i64>,
}

impl HeightProfile {
    pub fn flat(n: usize) -> Self {
        HeightProfile { h: vec![0; n] }
    }

    pub fn max(&self) -> i64 {
        *self.h.iter().max().expect("profiles are nonempty")
    }

    /// Screened deposit at `i`: the new column top is one above the highest
    /// column among `i` and its neighbors. Pure; returns the new profile.
    pub fn deposit(&self, g: &Graph, i: usize) -> HeightProfile {
        let mut next = self.clone();
        next.h[i] = g.closed_neighborhood_max(i, |j| self.h[j]) + 1;
        next
    }

    /// Shifts so the maximum sits at zero.
    pub fn relativize(&self) -> RelativeProfile {
        let m = self.max();
        RelativeProfile { x: self.h.iter().map(|&v| v - m).collect() }
    }
}

/// Heights relative to the running maximum: all entries <= 0, max exactly 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelativeProfile {
    pub x: Vec<i64>,
}

impl RelativeProfile {
    pub fn flat(n: usize) -> Self {
        RelativeProfile { x: vec![0; n] }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Distance from the maximum down to the lowest column (>= 0).
    pub fn depth(&self) -> i64 {
        -*self.x.iter().min().expect("profiles are nonempty")
    }

    pub fn is_valid(&self) -> bool {
        !self.x.is_empty() && self.x.iter().all(|&v| v <= 0) && self.x.contains(&0)
    }

    /// Relative form of a deposit at `i`. Returns the new profile and whether
    /// the global maximum rose (it rises by exactly one or not at all).
    pub fn deposit(&self, g: &Graph, i: usize) -> (RelativeProfile, bool) {
        let m = g.closed_neighborhood_max(i, |j| self.x[j]);
        let mut x = self.x.clone();
        let raised = m == 0;
        if raised {
            // New top at i exceeds the old maximum by one; renormalize.
            for v in x.iter_mut() {
                *v -= 1;
            }
            x[i] = 0;
        } else {
            x[i] = m + 1;
        }
        (RelativeProfile { x }, raised)
    }
}

impl std::fmt::Display for RelativeProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.x.iter().map(|v| v.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// How dropping sites are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DriverSpec {
    /// Sites drawn i.i.d. from `p`.
    Iid { p: Vec<f64> },
    /// Sites follow a Markov chain with row-stochastic transition matrix `a`.
    Markov { a: Vec<Vec<f64>> },
    /// Depth-`k` dropping: the chosen site either deposits by screening or,
    /// with probability `rho`, fills a vacant slot within its depth-`k`
    /// window.
    Layer { k: usize, rho: f64, q: Vec<f64> },
}

impl DriverSpec {
    pub fn uniform_iid(n: usize) -> Self {
        DriverSpec::Iid { p: vec![1.0 / n as f64; n] }
    }

    /// Lazy random walk on the site graph: stay with probability 1/2, else
    /// move to a uniform neighbor. Irreducible and lazy on any connected
    /// graph with at least one edge.
    pub fn lazy_walk_markov(g: &Graph) -> Self {
        let n = g.n();
        let mut a = vec![vec![0.0; n]; n];
        for v in 0..n {
            let deg = g.neighbors(v).len();
            if deg == 0 {
                a[v][v] = 1.0;
                continue;
            }
            a[v][v] = 0.5;
            for &w in g.neighbors(v) {
                a[v][w] = 0.5 / deg as f64;
            }
        }
        DriverSpec::Markov { a }
    }

    /// Checks shape and stochasticity against a site graph. Pipeline entry
    /// points call this once; the step functions themselves do not.
    pub fn validate(&self, g: &Graph) -> Result<()> {
        let n = g.n();
        let check_dist = |p: &[f64], name: &str, strict: bool| -> Result<()> {
            if p.len() != n {
                return Err(Error::InvalidDriver(format!(
                    "{name} has {} entries, expected {n}",
                    p.len()
                )));
            }
            if p.iter().any(|&v| v < 0.0 || (strict && v == 0.0) || !v.is_finite()) {
                return Err(Error::InvalidDriver(format!(
                    "{name} must be strictly positive"
                )));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidDriver(format!("{name} sums to {s}, not 1")));
            }
            Ok(())
        };
        match self {
            DriverSpec::Iid { p } => check_dist(p, "site distribution", true),
            DriverSpec::Markov { a } => {
                if a.len() != n {
                    return Err(Error::InvalidDriver(format!(
                        "matrix has {} rows, expected {n}",
                        a.len()
                    )));
                }
                for (v, row) in a.iter().enumerate() {
                    check_dist(row, &format!("matrix row {v}"), false)?;
                }
                let d = DirectedDriverGraph::from_matrix_support(a)?;
                let report = d.check();
                if let Some(v) = (0..n).find(|&v| !d.has_arc(v, v)) {
                    return Err(Error::NotLazy(v));
                }
                if !report.irreducible {
                    return Err(Error::NotIrreducible);
                }
                Ok(())
            }
            DriverSpec::Layer { k, rho, q } => {
                if *k == 0 {
                    return Err(Error::InvalidDriver("window width k must be >= 1".into()));
                }
                if !(0.0..1.0).contains(rho) {
                    return Err(Error::InvalidDriver(format!(
                        "rho = {rho} must lie in [0, 1) so screening stays non-null"
                    )));
                }
                check_dist(q, "site distribution", true)
            }
        }
    }

    /// Support graph of a Markov driver.
    pub fn driver_graph(&self) -> Result<Option<DirectedDriverGraph>> {
        match self {
            DriverSpec::Markov { a } => Ok(Some(DirectedDriverGraph::from_matrix_support(a)?)),
            _ => Ok(None),
        }
    }

    /// Minimum probability of a screening deposit at any fixed site, the
    /// non-nullness margin of a layer driver.
    pub fn layer_screening_floor(&self) -> Option<f64> {
        match self {
            DriverSpec::Layer { rho, q, .. } => {
                q.iter().cloned().reduce(f64::min).map(|m| m * (1.0 - rho))
            }
            _ => None,
        }
    }
}

/// Samples an index from nonnegative weights that sum to ~1.
pub(crate) fn sample_index(weights: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// One i.i.d.-driven step: sample the site from `p`, deposit, renormalize.
/// Returns the new profile, the dropped site, and whether the maximum rose.
pub fn step_iid(
    x: &RelativeProfile,
    p: &[f64],
    g: &Graph,
    rng: &mut impl Rng,
) -> (RelativeProfile, usize, bool) {
    let i = sample_index(p, rng);
    let (next, raised) = x.deposit(g, i);
    (next, i, raised)
}

/// One Markov-driven step of the joint chain `(x, v)`: move the driver from
/// `v` by row `a[v]`, then deposit at the new position.
pub fn step_markov(
    x: &RelativeProfile,
    v: usize,
    a: &[Vec<f64>],
    g: &Graph,
    rng: &mut impl Rng,
) -> (RelativeProfile, usize, bool) {
    let w = sample_index(&a[v], rng);
    let (next, raised) = x.deposit(g, w);
    (next, w, raised)
}
