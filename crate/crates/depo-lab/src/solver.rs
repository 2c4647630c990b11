//! Invariant distributions of the relative-height chain, two ways.
//!
//! The exact route works on a truncated, leak-redistributed transition
//! matrix: watch the chain on its core, sum the off-core Neumann series to
//! get the watched kernel, take its Perron vector, and reconstruct the
//! off-core mass from the same series. The killing bound from the
//! communication certificate gates the computation and prices the truncated
//! tail. The Monte Carlo route needs no truncation at all: it splits one
//! long trajectory into independent excursions from an anchor state and
//! averages visit counts over them.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;
use serde_json::json;

use crate::chain::{sample_step, ChainState, CommunicationCertificate, StateSpace, TransitionModel};
use crate::deposition::DriverSpec;
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Absolute 1-norm threshold below which a Neumann summand is considered
/// exhausted.
const NEUMANN_TOL: f64 = 1e-14;

/// Iteration ceiling for Neumann series and the Perron power iteration.
const SERIES_CAP: usize = 1_000_000;

/// Tolerance for the watched-kernel row sums before renormalization.
const REDUCED_ROW_TOL: f64 = 1e-9;

/// How the distribution was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Exact,
    Regenerative,
}

/// A probability distribution over chain states, together with the honesty
/// accounting of what the method could not see.
///
/// `entries` is sorted by state and carries every state the method touched,
/// zeros included for exact solves. `tail_allocation` is the mass the method
/// actually assigned outside `entries` (always zero here — nothing is
/// silently renormalized away); `tail_bound` is the certified ceiling on the
/// true mass beyond the truncation, reported as the interval `[0, tail_bound]`
/// rather than folded into the numbers.
#[derive(Debug, Clone)]
pub struct InvariantDistribution {
    pub entries: Vec<(ChainState, f64)>,
    pub tail_allocation: f64,
    pub tail_bound: f64,
    pub method: SolveMethod,
    /// `‖πM − π‖₁` on the redistributed matrix, for exact solves.
    pub residual: Option<f64>,
    /// Stationary flow into the truncated tail, `Σ_x π(x)·leak(x)`: the
    /// discrepancy between the absorbing and redistributed treatments.
    pub leak_flow: Option<f64>,
    /// Worst watched-kernel row-sum defect before renormalization.
    pub reduced_row_defect: Option<f64>,
}

impl InvariantDistribution {
    /// Probability of one state (zero when absent).
    pub fn probability(&self, state: &ChainState) -> f64 {
        self.entries
            .binary_search_by(|(s, _)| s.cmp(state))
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    /// Expectation of a state functional under the distribution.
    pub fn expect(&self, f: impl Fn(&ChainState) -> f64) -> f64 {
        self.entries.iter().map(|(s, p)| p * f(s)).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p).sum()
    }

    /// JSON export keyed by the canonical state encoding.
    pub fn to_json(&self) -> serde_json::Value {
        let entries: serde_json::Map<String, serde_json::Value> = self
            .entries
            .iter()
            .map(|(s, p)| (s.encode(), json!(p)))
            .collect();
        json!({
            "method": self.method,
            "entries": entries,
            "tail_allocation": self.tail_allocation,
            "tail_bound": self.tail_bound,
            "residual": self.residual,
            "leak_flow": self.leak_flow,
            "reduced_row_defect": self.reduced_row_defect,
        })
    }
}

/// Total variation distance between two state distributions, taken over the
/// union of their supports.
pub fn tv_distance(a: &[(ChainState, f64)], b: &[(ChainState, f64)]) -> f64 {
    let mut merged: BTreeMap<&ChainState, (f64, f64)> = BTreeMap::new();
    for (s, p) in a {
        merged.entry(s).or_insert((0.0, 0.0)).0 += p;
    }
    for (s, p) in b {
        merged.entry(s).or_insert((0.0, 0.0)).1 += p;
    }
    0.5 * merged.values().map(|(pa, pb)| (pa - pb).abs()).sum::<f64>()
}

/// The transition rows with each row's leaked mass redistributed
/// proportionally over its kept targets, making the matrix exactly
/// stochastic on the truncated space. A row that leaks everything (none
/// arise from enumerated spaces, where states are reachable, but the
/// fallback keeps the construction total) is pointed at the first core
/// state.
pub fn redistributed_rows(model: &TransitionModel) -> Vec<Vec<(usize, f64)>> {
    let anchor = model.core[0];
    model
        .rows
        .iter()
        .zip(&model.leak)
        .map(|(row, &leak)| {
            if leak == 0.0 {
                row.clone()
            } else {
                let kept: f64 = row.iter().map(|&(_, p)| p).sum();
                if kept <= 0.0 {
                    vec![(anchor, 1.0)]
                } else {
                    row.iter().map(|&(y, p)| (y, p / kept)).collect()
                }
            }
        })
        .collect()
}

/// Runs `cur ← cur·B` on a sparse sub-matrix until the 1-norm of `cur`
/// drops below [`NEUMANN_TOL`], feeding each summand to `absorb`. Errors
/// with the surviving norm when the series fails to die out.
fn neumann_series(
    rows: &[Vec<(usize, f64)>],
    mut cur: Vec<f64>,
    mut absorb: impl FnMut(usize, &[f64]),
) -> Result<()> {
    for power in 0..SERIES_CAP {
        let norm: f64 = cur.iter().map(|v| v.abs()).sum();
        if norm < NEUMANN_TOL {
            return Ok(());
        }
        absorb(power, &cur);
        let mut next = vec![0.0; cur.len()];
        for (x, &mass) in cur.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for &(y, p) in &rows[x] {
                next[y] += mass * p;
            }
        }
        cur = next;
    }
    let norm: f64 = cur.iter().map(|v| v.abs()).sum();
    Err(Error::NeumannDivergence { power: SERIES_CAP, norm, bound: NEUMANN_TOL })
}

/// Exact invariant distribution on a truncated space.
///
/// Preconditions are checked against the certificate: the absorbing off-core
/// block must contract by at least the killing bound, otherwise the
/// truncation (or the certificate) is unusable. The solve itself runs on the
/// redistributed stochastic matrix: the watched kernel on the core is
/// accumulated through the off-core Neumann series, its Perron vector is
/// found by power iteration, off-core mass is reconstructed from the same
/// series, and the full vector is normalized once at the end. The residual,
/// the stationary leak flow, and the certified tail ceiling are all reported
/// rather than hidden.
pub fn solve_invariant_exact(
    space: &StateSpace,
    model: &TransitionModel,
    cert: &CommunicationCertificate,
) -> Result<InvariantDistribution> {
    let n = model.n_states();
    if space.n_states() != n {
        return Err(Error::Config(format!(
            "state space has {} states but the model has {n}",
            space.n_states()
        )));
    }
    let norm = model.neumann_norm(cert.killing_steps);
    let bound = 1.0 - cert.alpha;
    if norm > bound + 1e-9 {
        return Err(Error::NeumannDivergence { power: cert.killing_steps, norm, bound });
    }

    let rows_hat = redistributed_rows(model);
    let m = model.core.len();

    // Index split: core slots in vertex order, everything else in state order.
    let mut slot_of: Vec<Option<usize>> = vec![None; n];
    for (slot, &c) in model.core.iter().enumerate() {
        slot_of[c] = Some(slot);
    }
    let off: Vec<usize> = (0..n).filter(|&x| slot_of[x].is_none()).collect();
    let mut off_of: Vec<Option<usize>> = vec![None; n];
    for (k, &x) in off.iter().enumerate() {
        off_of[x] = Some(k);
    }
    let split = |full_row: &[(usize, f64)]| {
        let mut to_core = vec![0.0; m];
        let mut to_off = vec![0.0; off.len()];
        for &(y, p) in full_row {
            match slot_of[y] {
                Some(slot) => to_core[slot] += p,
                None => to_off[off_of[y].expect("indices partition the space")] += p,
            }
        }
        (to_core, to_off)
    };
    let off_rows: Vec<(Vec<f64>, Vec<(usize, f64)>)> = off
        .iter()
        .map(|&x| {
            let mut to_core = vec![0.0; m];
            let mut to_off = Vec::new();
            for &(y, p) in &rows_hat[x] {
                match slot_of[y] {
                    Some(slot) => to_core[slot] += p,
                    None => to_off.push((off_of[y].expect("partition"), p)),
                }
            }
            (to_core, to_off)
        })
        .collect();
    let off_block: Vec<Vec<(usize, f64)>> = off_rows.iter().map(|(_, r)| r.clone()).collect();

    // Watched kernel on the core: direct moves plus every off-core excursion.
    let mut reduced = vec![vec![0.0; m]; m];
    let mut defect = 0.0f64;
    for (slot, &c) in model.core.iter().enumerate() {
        let (direct, excursion) = split(&rows_hat[c]);
        reduced[slot] = direct;
        neumann_series(&off_block, excursion, |_, cur| {
            for (k, &mass) in cur.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                for (t, &p) in off_rows[k].0.iter().enumerate() {
                    if p > 0.0 {
                        reduced[slot][t] += mass * p;
                    }
                }
            }
        })?;
        let total: f64 = reduced[slot].iter().sum();
        defect = defect.max((total - 1.0).abs());
        if (total - 1.0).abs() > REDUCED_ROW_TOL {
            return Err(Error::NeumannDivergence {
                power: cert.killing_steps,
                norm: (total - 1.0).abs(),
                bound: REDUCED_ROW_TOL,
            });
        }
        for v in &mut reduced[slot] {
            *v /= total;
        }
    }

    // Perron vector of the watched kernel, with a lazy half-step for
    // aperiodicity.
    let mut pi1 = vec![1.0 / m as f64; m];
    let mut converged = false;
    for _ in 0..SERIES_CAP.min(100_000) {
        let mut next = vec![0.0; m];
        for (i, &w) in pi1.iter().enumerate() {
            next[i] += 0.5 * w;
            for (j, &p) in reduced[i].iter().enumerate() {
                next[j] += 0.5 * w * p;
            }
        }
        let total: f64 = next.iter().sum();
        for v in &mut next {
            *v /= total;
        }
        let delta: f64 = next.iter().zip(&pi1).map(|(a, b)| (a - b).abs()).sum();
        pi1 = next;
        if delta < 1e-12 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::PerronFailure(100_000));
    }

    // Off-core mass: π₂ = π₁·(core→off)·Σ_t (off→off)^t.
    let mut entering = vec![0.0; off.len()];
    for (slot, &c) in model.core.iter().enumerate() {
        let (_, excursion) = split(&rows_hat[c]);
        for (k, &p) in excursion.iter().enumerate() {
            entering[k] += pi1[slot] * p;
        }
    }
    let mut pi2 = vec![0.0; off.len()];
    neumann_series(&off_block, entering, |_, cur| {
        for (k, &mass) in cur.iter().enumerate() {
            pi2[k] += mass;
        }
    })?;

    let mut pi = vec![0.0; n];
    for (slot, &c) in model.core.iter().enumerate() {
        pi[c] = pi1[slot];
    }
    for (k, &x) in off.iter().enumerate() {
        pi[x] = pi2[k];
    }
    let total: f64 = pi.iter().sum();
    for v in &mut pi {
        *v /= total;
    }

    // Quality and honesty accounting.
    let mut flow = vec![0.0; n];
    for (x, row) in rows_hat.iter().enumerate() {
        for &(y, p) in row {
            flow[y] += pi[x] * p;
        }
    }
    let residual: f64 = flow.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
    let leak_flow: f64 = pi.iter().zip(&model.leak).map(|(p, l)| p * l).sum();
    let core_depth = model.core.iter().map(|&c| model.depths[c]).max().unwrap_or(0);
    let windows = (model.depth_bound - core_depth).max(0) as usize / cert.killing_steps.max(1);
    let tail_bound = (1.0 - cert.alpha).powi(windows as i32);

    Ok(InvariantDistribution {
        entries: space.states.iter().cloned().zip(pi).collect(),
        tail_allocation: 0.0,
        tail_bound,
        method: SolveMethod::Exact,
        residual: Some(residual),
        leak_flow: Some(leak_flow),
        reduced_row_defect: Some(defect),
    })
}

/// Independent-excursion statistics behind a regenerative estimate.
#[derive(Debug, Clone)]
pub struct RegenerationRecord {
    pub anchor: ChainState,
    pub cycles: u64,
    pub total_steps: u64,
    pub mean_return_time: f64,
    /// 95% half-width of the mean return time from batch means over whole
    /// excursions.
    pub half_width: f64,
    pub batches: usize,
}

impl RegenerationRecord {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "anchor": self.anchor.encode(),
            "cycles": self.cycles,
            "total_steps": self.total_steps,
            "mean_return_time": self.mean_return_time,
            "half_width": self.half_width,
            "batches": self.batches,
        })
    }
}

/// Invariant distribution by regeneration: run excursions from `anchor` back
/// to itself, average state occupation over them. Needs no truncation and
/// no certificate; by construction the estimate satisfies
/// `π̂(anchor)·mean_return_time = 1` exactly.
///
/// A single excursion longer than `step_cap` aborts with
/// [`Error::CycleTimeout`] rather than biasing the estimate by censoring.
pub fn solve_invariant_regenerative(
    g: &Graph,
    driver: &DriverSpec,
    anchor: &ChainState,
    n_cycles: u64,
    step_cap: u64,
    rng: &mut impl Rng,
) -> Result<(InvariantDistribution, RegenerationRecord)> {
    if n_cycles == 0 {
        return Err(Error::Config("need at least one regeneration cycle".into()));
    }
    let mut visits: BTreeMap<ChainState, u64> = BTreeMap::new();
    let mut cycle_lengths: Vec<u64> = Vec::with_capacity(n_cycles as usize);
    let mut state = anchor.clone();
    for _ in 0..n_cycles {
        let mut len = 0u64;
        loop {
            *visits.entry(state.clone()).or_insert(0) += 1;
            let (next, _, _) = sample_step(&state, g, driver, rng)?;
            state = next;
            len += 1;
            if state == *anchor {
                break;
            }
            if len >= step_cap {
                return Err(Error::CycleTimeout(step_cap));
            }
        }
        cycle_lengths.push(len);
    }
    let total_steps: u64 = cycle_lengths.iter().sum();
    let mean_return_time = total_steps as f64 / n_cycles as f64;

    // Batch means over whole excursions for the return-time uncertainty.
    let batches = (n_cycles as usize).min(20);
    let per = n_cycles as usize / batches;
    let batch_means: Vec<f64> = (0..batches)
        .map(|b| {
            let chunk = &cycle_lengths[b * per..(b + 1) * per];
            chunk.iter().sum::<u64>() as f64 / chunk.len() as f64
        })
        .collect();
    let grand = batch_means.iter().sum::<f64>() / batches as f64;
    let var = if batches > 1 {
        batch_means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (batches as f64 - 1.0)
    } else {
        0.0
    };
    let half_width = 1.96 * (var / batches as f64).sqrt();

    let entries: Vec<(ChainState, f64)> = visits
        .into_iter()
        .map(|(s, c)| (s, c as f64 / total_steps as f64))
        .collect();
    let dist = InvariantDistribution {
        entries,
        tail_allocation: 0.0,
        tail_bound: 0.0,
        method: SolveMethod::Regenerative,
        residual: None,
        leak_flow: None,
        reduced_row_defect: None,
    };
    let record = RegenerationRecord {
        anchor: anchor.clone(),
        cycles: n_cycles,
        total_steps,
        mean_return_time,
        half_width,
        batches,
    };
    Ok((dist, record))
}

/// Asymptotic growth rate of the running maximum: the stationary probability
/// that one step raises it.
///
/// A raise renormalizes the whole profile, moving at least `|V|−1 ≥ 2`
/// coordinates, while any other step moves at most one (exactly the dropped
/// site for plain chains; none for a fill). The rate is therefore read off
/// the profile components alone:
/// `1 − Σ_x π(x) Σ_y M(x,y)·1{at most one coordinate differs}`.
/// On one or two vertices that equivalence breaks down — on the two-path a
/// raise moves exactly one coordinate — so those sizes are refused with
/// [`Error::SmallGraph`] and must be measured from trajectories instead.
pub fn lln_rate(pi: &InvariantDistribution, g: &Graph, driver: &DriverSpec) -> Result<f64> {
    if g.n() <= 2 {
        return Err(Error::SmallGraph(g.n()));
    }
    let mut stay = 0.0;
    for (state, weight) in &pi.entries {
        if *weight == 0.0 {
            continue;
        }
        for (succ, p) in crate::chain::one_step_law(state, g, driver)? {
            let moved = state
                .profile()
                .x
                .iter()
                .zip(&succ.profile().x)
                .filter(|(a, b)| a != b)
                .count();
            if moved <= 1 {
                stay += weight * p;
            }
        }
    }
    Ok(1.0 - stay)
}
