//! Explicit state spaces for the relative-height chain and the communication
//! certificates that justify truncating them.
//!
//! Every driver variant owns a small distinguished set of *core* states, one
//! per vertex, rebuilt by replaying a deterministic dropping string from any
//! state whose maximum sits at that vertex. Replaying the string erases the
//! starting profile, so from anywhere the chain reaches any core state within
//! a bounded number of steps with probability bounded away from zero; a
//! [`CommunicationCertificate`] records those bounds together with the
//! witnessing strings, and [`verify_certificate`] rechecks them by exact
//! matrix powers. The same core seeds a breadth-first enumeration of all
//! states no deeper than a truncation bound, and [`assemble_transitions`]
//! turns that enumeration into a sparse row-stochastic matrix with an
//! explicit leakage column for everything deeper.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::Rng;
use serde::Serialize;
use serde_json::json;

use crate::deposition::layer::{layer_one_step_law, step_layer, LayerConfig};
use crate::deposition::{step_iid, step_markov, DriverSpec, RelativeProfile};
use crate::error::{Error, Result};
use crate::graph::{DirectedDriverGraph, Graph};

/// Hard ceiling on enumerated states before [`Error::StateCapExceeded`].
pub const DEFAULT_STATE_CAP: usize = 1_000_000;

/// Default truncation depth: a small multiple of the worst core depth, deep
/// enough that the mass beyond it is negligible on desk-scale graphs.
pub fn default_depth_bound(n: usize) -> i64 {
    4 * n.saturating_sub(1) as i64
}

/// One state of whichever chain the driver induces: the relative profile
/// alone, the profile paired with the walker's position, or a depth-`k`
/// window class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChainState {
    Sites(RelativeProfile),
    Driven(RelativeProfile, usize),
    Layered(LayerConfig),
}

impl ChainState {
    /// The relative top profile, whatever the driver tracks besides it.
    pub fn profile(&self) -> &RelativeProfile {
        match self {
            ChainState::Sites(x) => x,
            ChainState::Driven(x, _) => x,
            ChainState::Layered(c) => &c.top,
        }
    }

    /// Distance from the running maximum down to the lowest column.
    pub fn depth(&self) -> i64 {
        self.profile().depth()
    }

    /// Canonical text encoding used in exports and logs.
    pub fn encode(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ChainState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainState::Sites(x) => write!(f, "{x}"),
            ChainState::Driven(x, v) => write!(f, "{x}@{v}"),
            ChainState::Layered(c) => write!(f, "{c}"),
        }
    }
}

/// Applies screened deposits at `drops`, in order, and returns the endpoint.
pub fn replay_profile(start: &RelativeProfile, g: &Graph, drops: &[usize]) -> RelativeProfile {
    let mut x = start.clone();
    for &v in drops {
        x = x.deposit(g, v).0;
    }
    x
}

/// A deterministic spread of states whose maximum sits at `i`: flat, a lone
/// maximum, a staircase, and a deep pit. Rebuild strings are replayed from
/// all of them to check that they really erase the starting profile.
fn max_at_representatives(n: usize, i: usize) -> Vec<RelativeProfile> {
    let lone = (0..n).map(|v| if v == i { 0 } else { -1 }).collect();
    let ramp = (0..n).map(|v| -(((v + n - i) % n) as i64)).collect();
    let deep = (0..n)
        .map(|v| if v == i { 0 } else { -(n as i64 + v as i64) })
        .collect();
    vec![
        RelativeProfile::flat(n),
        RelativeProfile { x: lone },
        RelativeProfile { x: ramp },
        RelativeProfile { x: deep },
    ]
}

/// Per-vertex core profiles for site-only chains: replaying the growth
/// ordering of `i` from any state whose maximum sits at `i` always lands on
/// the same profile, returned here for each `i`.
///
/// The erasure claim is rechecked against the representative spread; a
/// mismatch means the deposition rule is broken and surfaces as
/// [`Error::ConstructionMismatch`].
pub fn core_profiles_iid(g: &Graph) -> Result<Vec<RelativeProfile>> {
    let n = g.n();
    let mut core = Vec::with_capacity(n);
    for i in 0..n {
        let order = g.growth_ordering(i)?.order;
        let target = replay_profile(&RelativeProfile::flat(n), g, &order);
        for y in max_at_representatives(n, i) {
            let z = replay_profile(&y, g, &order);
            if z != target {
                return Err(Error::ConstructionMismatch(format!(
                    "rebuilding from {y} along the growth ordering of {i} gave {z}, expected {target}"
                )));
            }
        }
        if target.depth() > n as i64 - 1 {
            return Err(Error::ConstructionMismatch(format!(
                "core profile {target} is deeper than {}",
                n - 1
            )));
        }
        core.push(target);
    }
    Ok(core)
}

/// Which driver family a certificate covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CertificateKind {
    Iid,
    Markov,
    Layer,
}

/// A dropping string whose replay was checked during construction: applied
/// from any state matching `from`, the chain ends at `to`, and the driver
/// realizes the drops with probability at least `probability`.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub from: String,
    pub to: String,
    pub drops: Vec<usize>,
    pub probability: f64,
}

/// Quantitative communication bounds for a driver on a fixed graph.
///
/// Within any window of `killing_steps` steps the chain enters the `core`
/// with probability at least `alpha`, from any state; after exactly `s`
/// steps it sits at any prescribed core state with probability at least
/// `alpha_prime`. Both constants come from the explicit dropping strings
/// kept in `construction_log`.
#[derive(Debug, Clone)]
pub struct CommunicationCertificate {
    pub kind: CertificateKind,
    pub s: usize,
    pub alpha: f64,
    pub killing_steps: usize,
    pub alpha_prime: f64,
    pub core: Vec<ChainState>,
    pub construction_log: Vec<Witness>,
}

impl CommunicationCertificate {
    /// JSON export with core states in their canonical text encoding.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "kind": self.kind,
            "s": self.s,
            "alpha": self.alpha,
            "killing_steps": self.killing_steps,
            "alpha_prime": self.alpha_prime,
            "core": self.core.iter().map(ChainState::encode).collect::<Vec<_>>(),
            "construction_log": self.construction_log,
        })
    }
}

/// Communication certificate for an i.i.d. driver with site weights `p`.
///
/// `alpha` prices the cheapest growth ordering (the one-window core entry);
/// `alpha_prime` the cheapest of the n² three-stage strings — rebuild at the
/// current maximum, force the maximum onto the target vertex with |V|−1
/// drops there, rebuild at the target — each stitched string replayed from
/// the representative spread before its probability is accepted.
pub fn certificate_iid(g: &Graph, p: &[f64]) -> Result<CommunicationCertificate> {
    DriverSpec::Iid { p: p.to_vec() }.validate(g)?;
    let n = g.n();
    let core = core_profiles_iid(g)?;
    let mut orders = Vec::with_capacity(n);
    for i in 0..n {
        orders.push(g.growth_ordering(i)?.order);
    }
    let product = |drops: &[usize]| drops.iter().map(|&v| p[v]).product::<f64>();
    let alpha = (0..n)
        .map(|i| product(&orders[i]))
        .fold(f64::INFINITY, f64::min);
    let s = 3 * (n - 1);
    let mut alpha_prime = f64::INFINITY;
    let mut construction_log = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let mut drops = orders[i].clone();
            drops.extend(std::iter::repeat(j).take(n - 1));
            drops.extend_from_slice(&orders[j]);
            for y in max_at_representatives(n, i) {
                let z = replay_profile(&y, g, &drops);
                if z != core[j] {
                    return Err(Error::ConstructionMismatch(format!(
                        "three-stage string {i}->{j} from {y} ended at {z}, expected {}",
                        core[j]
                    )));
                }
            }
            let probability = product(&drops);
            alpha_prime = alpha_prime.min(probability);
            construction_log.push(Witness {
                from: format!("max@{i}"),
                to: core[j].to_string(),
                drops,
                probability,
            });
        }
    }
    Ok(CommunicationCertificate {
        kind: CertificateKind::Iid,
        s,
        alpha,
        killing_steps: (n - 1).max(1),
        alpha_prime,
        core: core.into_iter().map(ChainState::Sites).collect(),
        construction_log,
    })
}

/// Rebuild data for one vertex when the dropping site follows a walk on an
/// arc set: the growth ordering is stitched together with shortest allowed
/// walks, and on replay the whole string is preceded by `s` drops at the
/// root so that no other column can surface while the walk detours.
#[derive(Debug, Clone, Serialize)]
pub struct MarkovString {
    pub root: usize,
    pub ordering: Vec<usize>,
    /// Walker positions after leaving the root: the stitched ordering.
    pub string: Vec<usize>,
    /// Arc hops in `string`; also the number of root drops prepended on
    /// replay, so a full rebuild takes `2s` steps.
    pub s: usize,
    /// Steps that suffice to park the walker on the root and lift its column
    /// back to the maximum from anywhere: twice the worst inbound distance.
    pub sigma: usize,
}

impl MarkovString {
    /// Root drops followed by the stitched string: the full rebuild replay.
    pub fn replay_drops(&self) -> Vec<usize> {
        let mut drops = vec![self.root; self.s];
        drops.extend_from_slice(&self.string);
        drops
    }
}

/// Core of the joint (profile, walker) chain: one rebuilt state per vertex,
/// the stitching data behind it, and the overall communication time.
#[derive(Debug, Clone)]
pub struct MarkovCore {
    pub per_vertex: Vec<MarkovString>,
    /// `(profile, walker position)` reached by each vertex's rebuild string.
    pub core: Vec<(RelativeProfile, usize)>,
    /// Steps after which any joint state reaches any core state with
    /// uniformly positive probability.
    pub comm_time: usize,
}

/// Builds the joint-chain core for a walk constrained to the arcs of `d`.
///
/// For each root `i`, consecutive vertices of the growth ordering are joined
/// by shortest directed walks; the stitched string, prepended with `s(i)`
/// root drops, is replayed from the representative spread and must land on
/// one profile no deeper than `2s(i)`.
pub fn markov_core(g: &Graph, d: &DirectedDriverGraph) -> Result<MarkovCore> {
    let n = g.n();
    if d.n() != n {
        return Err(Error::InvalidDriver(format!(
            "driver graph has {} vertices, site graph has {n}",
            d.n()
        )));
    }
    if let Some(v) = (0..n).find(|&v| !d.has_arc(v, v)) {
        return Err(Error::NotLazy(v));
    }
    if !d.check().irreducible {
        return Err(Error::NotIrreducible);
    }
    let dist: Vec<Vec<Option<usize>>> = (0..n).map(|v| d.distances_from(v)).collect();
    let mut per_vertex = Vec::with_capacity(n);
    let mut core = Vec::with_capacity(n);
    for i in 0..n {
        let ordering = g.growth_ordering(i)?.order;
        let mut stitched = Vec::new();
        let mut prev = i;
        for &w in &ordering {
            let c = d.connecting_string(prev, w)?;
            stitched.extend_from_slice(&c.path);
            prev = w;
        }
        if let Some(&last) = ordering.last() {
            stitched.push(last);
        }
        // Drop the leading root: `s` counts arc hops, not visited vertices.
        let string: Vec<usize> = stitched.into_iter().skip(1).collect();
        let s = string.len();
        let sigma = 2 * (0..n)
            .map(|v| dist[v][i].expect("irreducible drivers reach every vertex"))
            .max()
            .unwrap_or(0);
        let ms = MarkovString { root: i, ordering, string, s, sigma };
        let drops = ms.replay_drops();
        let mut at = i;
        for &w in &drops {
            if !d.has_arc(at, w) {
                return Err(Error::ConstructionMismatch(format!(
                    "rebuild string for {i} uses the missing arc {at}->{w}"
                )));
            }
            at = w;
        }
        let target = replay_profile(&RelativeProfile::flat(n), g, &drops);
        for y in max_at_representatives(n, i) {
            let z = replay_profile(&y, g, &drops);
            if z != target {
                return Err(Error::ConstructionMismatch(format!(
                    "rebuild string for {i} from {y} ended at {z}, expected {target}"
                )));
            }
        }
        if target.depth() > 2 * s as i64 {
            return Err(Error::ConstructionMismatch(format!(
                "rebuilt profile {target} is deeper than {}",
                2 * s
            )));
        }
        let parked = ms.string.last().copied().unwrap_or(i);
        core.push((target, parked));
        per_vertex.push(ms);
    }
    let comm_time = per_vertex.iter().map(|m| 6 * (m.s + m.sigma)).max().unwrap_or(0);
    Ok(MarkovCore { per_vertex, core, comm_time })
}

/// Communication certificate for a Markov driver with transition matrix `a`.
///
/// Constants use a uniform floor: every arc on a witness costs at least the
/// smallest positive matrix entry, so any admissible string of the common
/// length is priced at `a_min^len`. The logged witnesses are the explicit
/// core-to-core strings — steer the walker to the target root, lift that
/// column back to the maximum, pad with root drops to the common length,
/// rebuild — each replayed and checked before its probability is accepted.
pub fn certificate_markov(g: &Graph, a: &[Vec<f64>]) -> Result<CommunicationCertificate> {
    DriverSpec::Markov { a: a.to_vec() }.validate(g)?;
    let d = DirectedDriverGraph::from_matrix_support(a)?;
    let mc = markov_core(g, &d)?;
    let n = g.n();
    let a_min = a
        .iter()
        .flatten()
        .copied()
        .filter(|&p| p > 0.0)
        .fold(f64::INFINITY, f64::min);
    let killing_steps = mc
        .per_vertex
        .iter()
        .map(|m| m.sigma + 2 * m.s)
        .max()
        .unwrap_or(0)
        .max(1);
    let alpha = a_min.powi(killing_steps as i32);
    let s = mc.comm_time;
    let alpha_prime = a_min.powi(s as i32);
    let mut construction_log = Vec::with_capacity(n * n);
    for i in 0..n {
        let (from_profile, from_walker) = &mc.core[i];
        for j in 0..n {
            let mut drops: Vec<usize> = Vec::with_capacity(s);
            // Stage 1: steer the walker from its parked position to j.
            if *from_walker != j {
                let c = d.connecting_string(*from_walker, j)?;
                drops.extend(c.path.iter().skip(1));
                drops.push(j);
            }
            // Stage 2: lift column j back up to the running maximum.
            let mut x = replay_profile(from_profile, g, &drops);
            let mut guard = 0usize;
            while x.x[j] != 0 {
                drops.push(j);
                x = x.deposit(g, j).0;
                guard += 1;
                if guard > 4 * s + 4 {
                    return Err(Error::ConstructionMismatch(format!(
                        "column {j} failed to reach the maximum while building a witness"
                    )));
                }
            }
            // Stage 3: pad at j to the common length, then rebuild at j.
            let rebuild = mc.per_vertex[j].replay_drops();
            let used = drops.len() + rebuild.len();
            if used > s {
                return Err(Error::ConstructionMismatch(format!(
                    "witness {i}->{j} needs {used} steps, exceeding the communication time {s}"
                )));
            }
            drops.extend(std::iter::repeat(j).take(s - used));
            drops.extend_from_slice(&rebuild);
            // Replay the full string, pricing each arc, and check both the
            // endpoint profile and the walker's final position.
            let mut x = from_profile.clone();
            let mut at = *from_walker;
            let mut probability = 1.0;
            for &w in &drops {
                if !d.has_arc(at, w) {
                    return Err(Error::ConstructionMismatch(format!(
                        "witness {i}->{j} uses the missing arc {at}->{w}"
                    )));
                }
                probability *= a[at][w];
                x = x.deposit(g, w).0;
                at = w;
            }
            let (target_profile, target_walker) = &mc.core[j];
            if x != *target_profile || at != *target_walker || drops.len() != s {
                return Err(Error::ConstructionMismatch(format!(
                    "witness {i}->{j} ended at {x}@{at} after {} steps, expected {target_profile}@{target_walker} after {s}",
                    drops.len()
                )));
            }
            construction_log.push(Witness {
                from: format!("{from_profile}@{from_walker}"),
                to: format!("{target_profile}@{target_walker}"),
                drops,
                probability,
            });
        }
    }
    Ok(CommunicationCertificate {
        kind: CertificateKind::Markov,
        s,
        alpha,
        killing_steps,
        alpha_prime,
        core: mc
            .core
            .into_iter()
            .map(|(x, v)| ChainState::Driven(x, v))
            .collect(),
        construction_log,
    })
}

/// Core classes of the depth-`k` model: one deterministic class per vertex,
/// reached from any starting class by an all-screening witness string.
#[derive(Debug, Clone)]
pub struct LayerCore {
    pub core: Vec<LayerConfig>,
    /// Steps after which any class reaches any core class with uniformly
    /// positive probability.
    pub comm_time: usize,
}

/// The all-screening witness for rebuilding at `j` when the current maximum
/// sits at `m`: the three-stage top rebuild, then `k` sweeps over every
/// vertex, which rewrite every occupancy window from scratch.
fn layer_witness_drops(g: &Graph, m: usize, j: usize, k: usize) -> Result<Vec<usize>> {
    let n = g.n();
    let mut drops = g.growth_ordering(m)?.order;
    drops.extend(std::iter::repeat(j).take(n - 1));
    drops.extend(g.growth_ordering(j)?.order);
    for _ in 0..k {
        drops.extend(0..n);
    }
    Ok(drops)
}

/// Builds the depth-`k` core, checking that each witness endpoint does not
/// depend on where the starting maximum sat. Independent of the site weights
/// and of the fill probability: the witness event is all-screening.
pub fn layer_core(g: &Graph, k: usize) -> Result<LayerCore> {
    if k == 0 {
        return Err(Error::InvalidDriver("window width k must be >= 1".into()));
    }
    let n = g.n();
    let comm_time = 3 * (n - 1) + k * n;
    // A deterministic class with the maximum at m: screen at m until it tops.
    let rep = |m: usize| -> Result<LayerConfig> {
        let mut c = LayerConfig::seeded(g, k)?;
        let mut guard = 0usize;
        while c.top.x[m] != 0 {
            c = c.screening_deposit(g, m).0;
            guard += 1;
            if guard > 2 * n {
                return Err(Error::ConstructionMismatch(format!(
                    "vertex {m} failed to reach the maximum of the seeded class"
                )));
            }
        }
        Ok(c)
    };
    let screen_replay = |start: &LayerConfig, drops: &[usize]| -> LayerConfig {
        let mut c = start.clone();
        for &v in drops {
            c = c.screening_deposit(g, v).0;
        }
        c
    };
    let mut core = Vec::with_capacity(n);
    for j in 0..n {
        let mut target: Option<LayerConfig> = None;
        for m in 0..n {
            let z = screen_replay(&rep(m)?, &layer_witness_drops(g, m, j, k)?);
            match &target {
                None => target = Some(z),
                Some(t) if *t == z => {}
                Some(t) => {
                    return Err(Error::ConstructionMismatch(format!(
                        "window rebuild at {j} from max@{m} gave {z}, expected {t}"
                    )));
                }
            }
        }
        core.push(target.expect("graphs have at least one vertex"));
    }
    Ok(LayerCore { core, comm_time })
}

/// Communication certificate for a depth-`k` driver: every witness step is a
/// screening deposit at a prescribed site, which costs at least
/// `q(site)·(1−rho)` whatever the current class offers as fill slots.
pub fn certificate_layer(
    g: &Graph,
    k: usize,
    rho: f64,
    q: &[f64],
) -> Result<CommunicationCertificate> {
    DriverSpec::Layer { k, rho, q: q.to_vec() }.validate(g)?;
    let lc = layer_core(g, k)?;
    let n = g.n();
    let s = lc.comm_time;
    let mut alpha_prime = f64::INFINITY;
    let mut construction_log = Vec::with_capacity(n * n);
    for m in 0..n {
        for j in 0..n {
            let drops = layer_witness_drops(g, m, j, k)?;
            let probability = drops.iter().map(|&v| q[v] * (1.0 - rho)).product::<f64>();
            alpha_prime = alpha_prime.min(probability);
            construction_log.push(Witness {
                from: format!("max@{m}"),
                to: lc.core[j].to_string(),
                drops,
                probability,
            });
        }
    }
    Ok(CommunicationCertificate {
        kind: CertificateKind::Layer,
        s,
        // Entering the core takes the same full-window rewrite as targeted
        // communication, so both constants price the same witness family.
        alpha: alpha_prime,
        killing_steps: s.max(1),
        alpha_prime,
        core: lc.core.into_iter().map(ChainState::Layered).collect(),
        construction_log,
    })
}

/// The distinguished core states for a driver, in vertex order.
pub fn core_states(g: &Graph, driver: &DriverSpec) -> Result<Vec<ChainState>> {
    match driver {
        DriverSpec::Iid { .. } => {
            Ok(core_profiles_iid(g)?.into_iter().map(ChainState::Sites).collect())
        }
        DriverSpec::Markov { a } => {
            let d = DirectedDriverGraph::from_matrix_support(a)?;
            Ok(markov_core(g, &d)?
                .core
                .into_iter()
                .map(|(x, v)| ChainState::Driven(x, v))
                .collect())
        }
        DriverSpec::Layer { k, .. } => {
            Ok(layer_core(g, *k)?.core.into_iter().map(ChainState::Layered).collect())
        }
    }
}

/// Certificate dispatch across driver kinds.
pub fn certificate_for(g: &Graph, driver: &DriverSpec) -> Result<CommunicationCertificate> {
    match driver {
        DriverSpec::Iid { p } => certificate_iid(g, p),
        DriverSpec::Markov { a } => certificate_markov(g, a),
        DriverSpec::Layer { k, rho, q } => certificate_layer(g, *k, *rho, q),
    }
}

/// Canonical start state: the flat profile (with the walker parked at
/// `walker` for Markov drivers), or the seeded one-particle class.
pub fn start_state(g: &Graph, driver: &DriverSpec, walker: usize) -> Result<ChainState> {
    if walker >= g.n() {
        return Err(Error::VertexOutOfRange { vertex: walker, n: g.n() });
    }
    match driver {
        DriverSpec::Iid { .. } => Ok(ChainState::Sites(RelativeProfile::flat(g.n()))),
        DriverSpec::Markov { .. } => {
            Ok(ChainState::Driven(RelativeProfile::flat(g.n()), walker))
        }
        DriverSpec::Layer { k, .. } => Ok(ChainState::Layered(LayerConfig::seeded(g, *k)?)),
    }
}

/// Full one-step distribution from `state`, merged over coinciding targets.
pub fn one_step_law(
    state: &ChainState,
    g: &Graph,
    driver: &DriverSpec,
) -> Result<Vec<(ChainState, f64)>> {
    match (state, driver) {
        (ChainState::Sites(x), DriverSpec::Iid { p }) => {
            let mut law: BTreeMap<ChainState, f64> = BTreeMap::new();
            for (i, &pi) in p.iter().enumerate() {
                if pi > 0.0 {
                    *law.entry(ChainState::Sites(x.deposit(g, i).0)).or_insert(0.0) += pi;
                }
            }
            Ok(law.into_iter().collect())
        }
        (ChainState::Driven(x, v), DriverSpec::Markov { a }) => {
            let mut law: BTreeMap<ChainState, f64> = BTreeMap::new();
            for (w, &pw) in a[*v].iter().enumerate() {
                if pw > 0.0 {
                    *law.entry(ChainState::Driven(x.deposit(g, w).0, w)).or_insert(0.0) += pw;
                }
            }
            Ok(law.into_iter().collect())
        }
        (ChainState::Layered(c), DriverSpec::Layer { k, rho, q }) => {
            Ok(layer_one_step_law(c, g, *k, *rho, q)
                .into_iter()
                .map(|(c, p)| (ChainState::Layered(c), p))
                .collect())
        }
        _ => Err(Error::InvalidDriver(
            "state kind does not match the driver kind".into(),
        )),
    }
}

/// One sampled transition. Returns the new state, the site that received the
/// particle, and whether the running maximum rose.
pub fn sample_step(
    state: &ChainState,
    g: &Graph,
    driver: &DriverSpec,
    rng: &mut impl Rng,
) -> Result<(ChainState, usize, bool)> {
    match (state, driver) {
        (ChainState::Sites(x), DriverSpec::Iid { p }) => {
            let (next, site, raised) = step_iid(x, p, g, rng);
            Ok((ChainState::Sites(next), site, raised))
        }
        (ChainState::Driven(x, v), DriverSpec::Markov { a }) => {
            let (next, site, raised) = step_markov(x, *v, a, g, rng);
            Ok((ChainState::Driven(next, site), site, raised))
        }
        (ChainState::Layered(c), DriverSpec::Layer { .. }) => {
            let (next, site, raised, _filled) = step_layer(c, driver, g, rng);
            Ok((ChainState::Layered(next), site, raised))
        }
        _ => Err(Error::InvalidDriver(
            "state kind does not match the driver kind".into(),
        )),
    }
}

/// Truncated state space: every state reachable from the core without ever
/// sinking deeper than `depth_bound`, in canonical sorted order. Anything
/// deeper is lumped into one virtual tail class indexed [`Self::tail_class`].
#[derive(Debug, Clone)]
pub struct StateSpace {
    pub states: Vec<ChainState>,
    /// Indices of the core states, in vertex order.
    pub core: Vec<usize>,
    pub depth_bound: i64,
    pub driver: DriverSpec,
}

impl StateSpace {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    /// Index of the virtual class holding all states deeper than the bound.
    pub fn tail_class(&self) -> usize {
        self.states.len()
    }

    pub fn index_of(&self, state: &ChainState) -> Option<usize> {
        self.states.binary_search(state).ok()
    }

    /// Canonical text encodings, aligned with state indices.
    pub fn encodings(&self) -> Vec<String> {
        self.states.iter().map(ChainState::encode).collect()
    }

    /// Summary manifest for file exports.
    pub fn manifest(&self) -> serde_json::Value {
        json!({
            "states": self.states.len(),
            "tail_class": self.tail_class(),
            "depth_bound": self.depth_bound,
            "core_indices": self.core,
            "driver": self.driver,
        })
    }
}

/// [`enumerate_states_capped`] with the default state cap.
pub fn enumerate_states(g: &Graph, driver: &DriverSpec, depth_bound: i64) -> Result<StateSpace> {
    enumerate_states_capped(g, driver, depth_bound, DEFAULT_STATE_CAP)
}

/// Breadth-first closure of the core under one-step transitions, with
/// successors deeper than `depth_bound` routed to the tail class and a hard
/// cap on the number of kept states. Single-threaded and deterministic.
pub fn enumerate_states_capped(
    g: &Graph,
    driver: &DriverSpec,
    depth_bound: i64,
    cap: usize,
) -> Result<StateSpace> {
    driver.validate(g)?;
    let core = core_states(g, driver)?;
    let needed = core.iter().map(ChainState::depth).max().unwrap_or(0);
    if depth_bound < needed {
        return Err(Error::DepthBoundTooSmall { bound: depth_bound, needed });
    }
    if core.len() > cap {
        return Err(Error::StateCapExceeded(cap));
    }
    let mut seen: BTreeSet<ChainState> = core.iter().cloned().collect();
    let mut queue: VecDeque<ChainState> = core.iter().cloned().collect();
    while let Some(state) = queue.pop_front() {
        for (succ, prob) in one_step_law(&state, g, driver)? {
            if prob <= 0.0 || succ.depth() > depth_bound || seen.contains(&succ) {
                continue;
            }
            if seen.len() == cap {
                return Err(Error::StateCapExceeded(cap));
            }
            seen.insert(succ.clone());
            queue.push_back(succ);
        }
    }
    let states: Vec<ChainState> = seen.into_iter().collect();
    let core_indices = core
        .iter()
        .map(|c| states.binary_search(c).expect("core states are enumerated"))
        .collect();
    Ok(StateSpace { states, core: core_indices, depth_bound, driver: driver.clone() })
}

/// Sparse one-step matrix over an enumerated space. Row `x` lists the kept
/// targets; `leak[x]` is the mass falling past the depth bound into the
/// virtual tail class.
#[derive(Debug, Clone)]
pub struct TransitionModel {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub leak: Vec<f64>,
    /// Indices of the core states, in vertex order.
    pub core: Vec<usize>,
    pub is_core: Vec<bool>,
    /// Depth of each state, aligned with row indices.
    pub depths: Vec<i64>,
    pub depth_bound: i64,
    pub driver: DriverSpec,
}

/// Computes the sparse transition rows over `space`, checking each full row
/// (kept mass plus leak) for stochasticity.
pub fn assemble_transitions(g: &Graph, space: &StateSpace) -> Result<TransitionModel> {
    let n = space.states.len();
    let mut rows = Vec::with_capacity(n);
    let mut leak = vec![0.0; n];
    for (idx, state) in space.states.iter().enumerate() {
        let mut row: Vec<(usize, f64)> = Vec::new();
        for (succ, prob) in one_step_law(state, g, &space.driver)? {
            match space.index_of(&succ) {
                Some(j) => row.push((j, prob)),
                None => {
                    debug_assert!(succ.depth() > space.depth_bound);
                    leak[idx] += prob;
                }
            }
        }
        row.sort_unstable_by_key(|&(j, _)| j);
        let total: f64 = row.iter().map(|&(_, p)| p).sum::<f64>() + leak[idx];
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "transition row {idx} sums to {total}, expected 1"
            )));
        }
        rows.push(row);
    }
    let mut is_core = vec![false; n];
    for &c in &space.core {
        is_core[c] = true;
    }
    Ok(TransitionModel {
        rows,
        leak,
        core: space.core.clone(),
        is_core,
        depths: space.states.iter().map(ChainState::depth).collect(),
        depth_bound: space.depth_bound,
        driver: space.driver.clone(),
    })
}

impl TransitionModel {
    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    /// Right action `(Mv)(x) = Σ_y M(x,y)·v(y)`, with the tail contributing
    /// nothing — pessimistic for reach-probability computations.
    pub fn apply_to_column(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(y, p)| p * v[y]).sum())
            .collect()
    }

    /// Left action `(μM)(y)`, plus the total mass leaking to the tail.
    pub fn push_forward(&self, mu: &[f64]) -> (Vec<f64>, f64) {
        let mut out = vec![0.0; self.rows.len()];
        let mut leaked = 0.0;
        for (x, row) in self.rows.iter().enumerate() {
            if mu[x] == 0.0 {
                continue;
            }
            for &(y, p) in row {
                out[y] += mu[x] * p;
            }
            leaked += mu[x] * self.leak[x];
        }
        (out, leaked)
    }

    /// Sup-norm of the `m`-th power of the off-core block, leak excluded.
    /// The untruncated block dominates the truncated one entrywise, so a
    /// failure here falsifies the killing bound itself, not the truncation.
    pub fn neumann_norm(&self, m: usize) -> f64 {
        let n = self.rows.len();
        let mut v: Vec<f64> = self.is_core.iter().map(|&c| if c { 0.0 } else { 1.0 }).collect();
        for _ in 0..m {
            let mut next = vec![0.0; n];
            for (x, row) in self.rows.iter().enumerate() {
                if self.is_core[x] {
                    continue;
                }
                next[x] = row
                    .iter()
                    .filter(|&&(y, _)| !self.is_core[y])
                    .map(|&(y, p)| p * v[y])
                    .sum();
            }
            v = next;
        }
        v.iter().cloned().fold(0.0, f64::max)
    }

    /// Coordinate-format sparse text: a `rows cols nnz` header, then one
    /// `row col value` line per entry. The extra final column is the tail
    /// class receiving each row's leak.
    pub fn coordinate_text(&self) -> String {
        let n = self.rows.len();
        let nnz: usize = self.rows.iter().map(Vec::len).sum::<usize>()
            + self.leak.iter().filter(|&&l| l > 0.0).count();
        let mut out = String::with_capacity(32 * (nnz + 1));
        out.push_str(&format!("{} {} {}\n", n, n + 1, nnz));
        for (x, row) in self.rows.iter().enumerate() {
            for &(y, p) in row {
                out.push_str(&format!("{x} {y} {p}\n"));
            }
            if self.leak[x] > 0.0 {
                out.push_str(&format!("{x} {n} {}\n", self.leak[x]));
            }
        }
        out
    }
}

/// Outcome of an exact matrix-power check of a certificate: the smallest
/// `s`-step probability, over every checkable start, of sitting at each
/// core state.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub steps: usize,
    pub bound: f64,
    pub min_entry: f64,
    /// State index attaining the minimum, and the core slot it targets.
    pub worst_start: usize,
    pub worst_target: usize,
    /// How many enumerated starts were shallow enough to check exactly.
    pub checked_starts: usize,
}

/// Checks `min_{x,j} M^s(x, core_j) ≥ alpha_prime` by exact column powers on
/// the truncated space.
///
/// Leaked mass counts as failure, which keeps the check one-sided: every
/// truncated entry is dominated by the untruncated one. The minimum
/// therefore ranges only over starts no deeper than `depth_bound − s`: an
/// `s`-step path sinks by at most one level per step, so from those starts
/// nothing can leak, the truncated and untruncated powers agree exactly, and
/// a shortfall is a genuine counterexample rather than a truncation
/// artifact. (States on the truncation frontier can leak their entire row in
/// one step — on the three-path, a frontier state with its maximum at the
/// center does — so including them would fail vacuously at every bound.)
///
/// Errors with [`Error::DepthBoundTooSmall`] when not even the core is
/// shallow enough to check, and with [`Error::CertificateViolation`] when
/// the bound itself fails.
pub fn verify_certificate(
    model: &TransitionModel,
    cert: &CommunicationCertificate,
) -> Result<CertificateReport> {
    if model.core.len() != cert.core.len() {
        return Err(Error::Config(format!(
            "certificate lists {} core states, the model has {}",
            cert.core.len(),
            model.core.len()
        )));
    }
    let eligible: Vec<bool> = model
        .depths
        .iter()
        .map(|&d| d + cert.s as i64 <= model.depth_bound)
        .collect();
    if !model.core.iter().all(|&c| eligible[c]) {
        let core_depth = model.core.iter().map(|&c| model.depths[c]).max().unwrap_or(0);
        return Err(Error::DepthBoundTooSmall {
            bound: model.depth_bound,
            needed: core_depth + cert.s as i64,
        });
    }
    let n = model.n_states();
    let mut min_entry = f64::INFINITY;
    let mut worst = (0usize, 0usize);
    for (slot, &target) in model.core.iter().enumerate() {
        let mut col = vec![0.0; n];
        col[target] = 1.0;
        for _ in 0..cert.s {
            col = model.apply_to_column(&col);
        }
        for (x, &mass) in col.iter().enumerate() {
            if eligible[x] && mass < min_entry {
                min_entry = mass;
                worst = (x, slot);
            }
        }
    }
    if min_entry < cert.alpha_prime - 1e-15 {
        return Err(Error::CertificateViolation {
            steps: cert.s,
            found: min_entry,
            bound: cert.alpha_prime,
        });
    }
    Ok(CertificateReport {
        steps: cert.s,
        bound: cert.alpha_prime,
        min_entry,
        worst_start: worst.0,
        worst_target: worst.1,
        checked_starts: eligible.iter().filter(|&&e| e).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p3() -> Graph {
        Graph::path(3).unwrap()
    }

    fn p4() -> Graph {
        Graph::path(4).unwrap()
    }

    fn k3() -> Graph {
        Graph::complete(3).unwrap()
    }

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    fn profile(x: &[i64]) -> RelativeProfile {
        RelativeProfile { x: x.to_vec() }
    }

    /// Triangle with a pendant vertex, plus a hand-picked sparse arc set on
    /// which rebuild strings need genuine detours.
    fn paw_graph() -> Graph {
        Graph::new(4, &[(0, 1), (0, 2), (1, 2), (2, 3)]).unwrap()
    }

    fn paw_arcs() -> DirectedDriverGraph {
        DirectedDriverGraph::new(
            4,
            &[
                (1, 2),
                (1, 0),
                (0, 3),
                (0, 2),
                (2, 3),
                (2, 1),
                (3, 1),
                (0, 0),
                (1, 1),
                (2, 2),
                (3, 3),
            ],
        )
        .unwrap()
    }

    /// Row-stochastic matrix putting uniform mass on each out-neighborhood.
    fn uniform_rows(d: &DirectedDriverGraph) -> Vec<Vec<f64>> {
        (0..d.n())
            .map(|v| {
                let outs = d.out_neighbors(v);
                let mut row = vec![0.0; d.n()];
                for &w in outs {
                    row[w] = 1.0 / outs.len() as f64;
                }
                row
            })
            .collect()
    }

    #[test]
    fn core_profiles_frozen_on_path_and_triangle() {
        assert_eq!(
            core_profiles_iid(&p3()).unwrap(),
            vec![profile(&[-2, -1, 0]), profile(&[0, -1, 0]), profile(&[0, -1, -2])]
        );
        assert_eq!(
            core_profiles_iid(&k3()).unwrap(),
            vec![profile(&[-2, -1, 0]), profile(&[-1, -2, 0]), profile(&[-1, 0, -2])]
        );
    }

    #[test]
    fn rebuild_erases_history_only_from_matching_maxima() {
        // From a state whose maximum sits at the ordering's root, the replay
        // lands on the core profile whatever the rest of the profile was.
        let g = k3();
        let order = g.growth_ordering(0).unwrap().order;
        let z = replay_profile(&profile(&[0, -5, -3]), &g, &order);
        assert_eq!(z, profile(&[-2, -1, 0]));

        // From a state whose maximum sits elsewhere it does not.
        let g = p3();
        let order = g.growth_ordering(2).unwrap().order;
        let z = replay_profile(&profile(&[0, -9, -8]), &g, &order);
        assert_eq!(z, profile(&[0, -1, -10]));
        assert_ne!(z, core_profiles_iid(&g).unwrap()[2]);
    }

    #[test]
    fn single_vertex_chain_is_trivial() {
        let g = Graph::path(1).unwrap();
        let cert = certificate_iid(&g, &[1.0]).unwrap();
        assert_eq!(cert.s, 0);
        assert_eq!(cert.alpha, 1.0);
        assert_eq!(cert.alpha_prime, 1.0);
        assert_eq!(cert.killing_steps, 1);
        assert_eq!(cert.core, vec![ChainState::Sites(profile(&[0]))]);

        let space = enumerate_states(&g, &DriverSpec::Iid { p: vec![1.0] }, 0).unwrap();
        assert_eq!(space.states.len(), 1);
        let model = assemble_transitions(&g, &space).unwrap();
        assert_eq!(model.leak, vec![0.0]);
        let report = verify_certificate(&model, &cert).unwrap();
        assert_eq!(report.min_entry, 1.0);
    }

    #[test]
    fn uniform_path_certificate_constants() {
        let cert = certificate_iid(&p3(), &uniform(3)).unwrap();
        assert_eq!(cert.s, 6);
        assert_eq!(cert.killing_steps, 2);
        assert!((cert.alpha - 1.0 / 9.0).abs() < 1e-15);
        assert!((cert.alpha_prime - (1.0f64 / 3.0).powi(6)).abs() < 1e-18);
        assert_eq!(cert.construction_log.len(), 9);
        assert!(cert.construction_log.iter().all(|w| w.drops.len() == 6));
        // Uniform weights price every string identically.
        assert!(cert
            .construction_log
            .iter()
            .all(|w| (w.probability - cert.alpha_prime).abs() < 1e-18));
    }

    #[test]
    fn two_step_reachability_counts_from_flat() {
        // Exhaustive enumeration of all 9 two-drop strings from the flat
        // profile: exactly one lands on each end-vertex core profile and two
        // land on the middle one.
        let g = p3();
        let core = core_profiles_iid(&g).unwrap();
        let mut counts = [0usize; 3];
        for a in 0..3 {
            for b in 0..3 {
                let z = replay_profile(&RelativeProfile::flat(3), &g, &[a, b]);
                for (i, c) in core.iter().enumerate() {
                    if z == *c {
                        counts[i] += 1;
                    }
                }
            }
        }
        assert_eq!(counts, [1, 2, 1]);
    }

    #[test]
    fn concentrated_weights_shrink_alpha() {
        let cert = certificate_iid(&p3(), &[0.98, 0.01, 0.01]).unwrap();
        assert!((cert.alpha - 1e-4).abs() < 1e-16);
    }

    #[test]
    fn markov_strings_frozen_on_the_paw() {
        let mc = markov_core(&paw_graph(), &paw_arcs()).unwrap();
        let orderings: Vec<Vec<usize>> =
            mc.per_vertex.iter().map(|m| m.ordering.clone()).collect();
        assert_eq!(
            orderings,
            vec![vec![1, 2, 3], vec![0, 2, 3], vec![0, 1, 3], vec![2, 0, 1]]
        );
        let s: Vec<usize> = mc.per_vertex.iter().map(|m| m.s).collect();
        assert_eq!(s, vec![4, 3, 6, 6]);
        let sigma: Vec<usize> = mc.per_vertex.iter().map(|m| m.sigma).collect();
        assert_eq!(sigma, vec![4, 4, 4, 4]);
        assert_eq!(mc.comm_time, 60);
    }

    #[test]
    fn markov_core_frozen_on_the_directed_path() {
        // Path on four vertices; arcs steer 0→2→1→3→0 plus self-loops, so
        // every connecting string is a genuine detour.
        let d = DirectedDriverGraph::new(
            4,
            &[(0, 2), (1, 3), (2, 1), (3, 0), (0, 0), (1, 1), (2, 2), (3, 3)],
        )
        .unwrap();
        let mc = markov_core(&p4(), &d).unwrap();
        assert_eq!(mc.per_vertex[1].ordering, vec![0, 2, 3]);
        assert_eq!(mc.per_vertex[1].string, vec![3, 0, 2, 1, 3]);
        assert_eq!(mc.per_vertex[1].s, 5);
        assert_eq!(mc.core[1], (profile(&[-1, 0, -1, 0]), 3));
    }

    #[test]
    fn complete_arcs_degenerate_to_growth_orderings() {
        let g = p3();
        let d = DirectedDriverGraph::complete_with_loops(3).unwrap();
        let mc = markov_core(&g, &d).unwrap();
        for m in &mc.per_vertex {
            assert_eq!(m.s, 2);
            assert_eq!(m.string, m.ordering);
        }
        let profiles: Vec<RelativeProfile> = mc.core.iter().map(|(x, _)| x.clone()).collect();
        assert_eq!(profiles, core_profiles_iid(&g).unwrap());
    }

    #[test]
    fn cycle_driver_routes_around() {
        let d = DirectedDriverGraph::new(3, &[(0, 1), (1, 2), (2, 0), (0, 0), (1, 1), (2, 2)])
            .unwrap();
        let mc = markov_core(&k3(), &d).unwrap();
        let s: Vec<usize> = mc.per_vertex.iter().map(|m| m.s).collect();
        assert_eq!(s, vec![2, 4, 2]);
        let sigma: Vec<usize> = mc.per_vertex.iter().map(|m| m.sigma).collect();
        assert_eq!(sigma, vec![4, 4, 4]);
        assert_eq!(mc.comm_time, 48);
    }

    #[test]
    fn lazy_walk_certificate_on_the_path() {
        let g = p3();
        let spec = DriverSpec::lazy_walk_markov(&g);
        let a = match &spec {
            DriverSpec::Markov { a } => a.clone(),
            _ => unreachable!(),
        };
        let d = DirectedDriverGraph::from_matrix_support(&a).unwrap();
        let mc = markov_core(&g, &d).unwrap();
        let s: Vec<usize> = mc.per_vertex.iter().map(|m| m.s).collect();
        assert_eq!(s, vec![2, 3, 2]);
        let sigma: Vec<usize> = mc.per_vertex.iter().map(|m| m.sigma).collect();
        assert_eq!(sigma, vec![4, 2, 4]);
        assert_eq!(mc.comm_time, 36);

        let cert = certificate_markov(&g, &a).unwrap();
        assert_eq!(cert.s, 36);
        assert_eq!(cert.killing_steps, 8);
        assert!((cert.alpha - 0.25f64.powi(8)).abs() < 1e-18);
        assert!((cert.alpha_prime - 0.25f64.powi(36)).abs() < 1e-30);
        assert_eq!(cert.construction_log.len(), 9);
        for w in &cert.construction_log {
            assert_eq!(w.drops.len(), 36);
            assert!(w.probability >= cert.alpha_prime * (1.0 - 1e-12));
        }
    }

    #[test]
    fn paw_witnesses_have_uniform_length_and_positive_mass() {
        let cert = certificate_markov(&paw_graph(), &uniform_rows(&paw_arcs())).unwrap();
        assert_eq!(cert.s, 60);
        assert_eq!(cert.construction_log.len(), 16);
        for w in &cert.construction_log {
            assert_eq!(w.drops.len(), 60);
            assert!(w.probability > 0.0);
            assert!(w.probability >= cert.alpha_prime * (1.0 - 1e-12));
        }
    }

    #[test]
    fn layer_core_is_start_independent() {
        let g = p3();
        let lc = layer_core(&g, 2).unwrap();
        assert_eq!(lc.core.len(), 3);
        assert_eq!(lc.comm_time, 12);
        assert!(lc.core.iter().all(|c| c.exclusion_ok(&g)));

        // A deep, lopsided set of particles rebuilds to the same classes.
        let deep = LayerConfig::from_particles(&g, 2, &[vec![0], vec![-4], vec![-1]]).unwrap();
        assert_eq!(deep.top.x[0], 0);
        for j in 0..3 {
            let mut c = deep.clone();
            for v in layer_witness_drops(&g, 0, j, 2).unwrap() {
                c = c.screening_deposit(&g, v).0;
            }
            assert_eq!(c, lc.core[j]);
        }
    }

    #[test]
    fn layer_certificate_constants() {
        let g = p3();
        let cert = certificate_layer(&g, 2, 0.3, &uniform(3)).unwrap();
        assert_eq!(cert.s, 12);
        assert_eq!(cert.killing_steps, 12);
        let per_drop = (1.0f64 / 3.0) * 0.7;
        assert!((cert.alpha_prime - per_drop.powi(12)).abs() < 1e-20);
        assert_eq!(cert.alpha, cert.alpha_prime);
        assert_eq!(cert.construction_log.len(), 9);
        assert!(cert.construction_log.iter().all(|w| w.drops.len() == 12));
    }

    #[test]
    fn triangle_enumeration_matches_the_depth_rule() {
        let g = k3();
        let driver = DriverSpec::uniform_iid(3);
        let space = enumerate_states(&g, &driver, 2).unwrap();
        assert_eq!(space.states.len(), 6);
        // Exactly the six assignments of heights {0, −1, −2} to the corners.
        for state in &space.states {
            let mut sorted = state.profile().x.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, vec![-2, -1, 0]);
        }

        let deeper = enumerate_states(&g, &driver, 3).unwrap();
        assert!(deeper.states.len() > 6);
        for state in &space.states {
            assert!(deeper.index_of(state).is_some());
        }

        match enumerate_states(&g, &driver, 1) {
            Err(Error::DepthBoundTooSmall { bound: 1, needed: 2 }) => {}
            other => panic!("expected a depth-bound error, got {other:?}"),
        }
    }

    #[test]
    fn enumeration_respects_the_cap() {
        let g = p4();
        match enumerate_states_capped(&g, &DriverSpec::uniform_iid(4), 12, 50) {
            Err(Error::StateCapExceeded(50)) => {}
            other => panic!("expected a cap error, got {other:?}"),
        }
        // A cap met exactly is not an error.
        let space = enumerate_states_capped(&k3(), &DriverSpec::uniform_iid(3), 2, 6).unwrap();
        assert_eq!(space.states.len(), 6);
    }

    #[test]
    fn rows_are_stochastic_and_sparse() {
        let g = p4();
        let driver = DriverSpec::uniform_iid(4);
        let space = enumerate_states(&g, &driver, 8).unwrap();
        let model = assemble_transitions(&g, &space).unwrap();
        for (idx, row) in model.rows.iter().enumerate() {
            let total: f64 = row.iter().map(|&(_, p)| p).sum::<f64>() + model.leak[idx];
            assert!((total - 1.0).abs() < 1e-12);
            assert!(row.len() <= 4);
        }
        // One step from a core state cannot outrun a bound this deep.
        for &c in &model.core {
            assert_eq!(model.leak[c], 0.0);
        }

        let g = paw_graph();
        let driver = DriverSpec::Markov { a: uniform_rows(&paw_arcs()) };
        let space = enumerate_states(&g, &driver, 8).unwrap();
        let model = assemble_transitions(&g, &space).unwrap();
        assert!(model.rows.iter().enumerate().all(|(idx, row)| {
            let total: f64 = row.iter().map(|&(_, p)| p).sum::<f64>() + model.leak[idx];
            (total - 1.0).abs() < 1e-12
        }));

        let g = p3();
        let driver = DriverSpec::Layer { k: 2, rho: 0.3, q: uniform(3) };
        let space = enumerate_states(&g, &driver, 8).unwrap();
        let model = assemble_transitions(&g, &space).unwrap();
        assert!(model.rows.iter().enumerate().all(|(idx, row)| {
            let total: f64 = row.iter().map(|&(_, p)| p).sum::<f64>() + model.leak[idx];
            (total - 1.0).abs() < 1e-12
        }));
    }

    #[test]
    fn off_core_norm_respects_the_killing_bound() {
        let g = p3();
        let cert = certificate_iid(&g, &uniform(3)).unwrap();
        let space = enumerate_states(&g, &DriverSpec::uniform_iid(3), 8).unwrap();
        let model = assemble_transitions(&g, &space).unwrap();
        assert!(model.neumann_norm(cert.killing_steps) <= 1.0 - cert.alpha + 1e-12);

        let g = p4();
        let cert = certificate_iid(&g, &uniform(4)).unwrap();
        let space = enumerate_states(&g, &DriverSpec::uniform_iid(4), 10).unwrap();
        let model = assemble_transitions(&g, &space).unwrap();
        assert!(model.neumann_norm(cert.killing_steps) <= 1.0 - cert.alpha + 1e-12);
    }

    #[test]
    fn certificate_verification_passes_and_detects_inflation() {
        for g in [p3(), k3()] {
            let p = uniform(g.n());
            let cert = certificate_iid(&g, &p).unwrap();
            let space = enumerate_states(&g, &DriverSpec::Iid { p }, 8).unwrap();
            let model = assemble_transitions(&g, &space).unwrap();
            let report = verify_certificate(&model, &cert).unwrap();
            assert!(report.min_entry >= cert.alpha_prime - 1e-15);
            assert!(report.checked_starts >= g.n());

            let mut inflated = cert.clone();
            inflated.alpha_prime *= 1e3;
            match verify_certificate(&model, &inflated) {
                Err(Error::CertificateViolation { steps, .. }) => assert_eq!(steps, cert.s),
                other => panic!("expected a violation, got {other:?}"),
            }
        }
    }

    #[test]
    fn certificate_verification_needs_room_below_the_core() {
        // With s = 6 and a core two levels deep, a bound of 7 leaves no
        // start whose s-step excursions provably stay inside the truncation.
        let g = p3();
        let p = uniform(3);
        let cert = certificate_iid(&g, &p).unwrap();
        let space = enumerate_states(&g, &DriverSpec::Iid { p }, 7).unwrap();
        let model = assemble_transitions(&g, &space).unwrap();
        match verify_certificate(&model, &cert) {
            Err(Error::DepthBoundTooSmall { bound: 7, needed: 8 }) => {}
            other => panic!("expected a depth-bound error, got {other:?}"),
        }
    }

    #[test]
    fn certificate_verification_covers_walk_drivers() {
        let g = p3();
        let spec = DriverSpec::lazy_walk_markov(&g);
        let a = match &spec {
            DriverSpec::Markov { a } => a.clone(),
            _ => unreachable!(),
        };
        let cert = certificate_markov(&g, &a).unwrap();
        let space = enumerate_states(&g, &spec, 40).unwrap();
        let model = assemble_transitions(&g, &space).unwrap();
        let report = verify_certificate(&model, &cert).unwrap();
        assert!(report.min_entry >= cert.alpha_prime - 1e-15);
    }

    #[test]
    fn one_step_law_is_a_distribution_with_deposit_support() {
        let g = p3();
        let driver = DriverSpec::uniform_iid(3);
        let space = enumerate_states(&g, &driver, 6).unwrap();
        for state in &space.states {
            let law = one_step_law(state, &g, &driver).unwrap();
            let total: f64 = law.iter().map(|&(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-12);
            let support: BTreeSet<ChainState> = law.into_iter().map(|(s, _)| s).collect();
            let expect: BTreeSet<ChainState> = (0..3)
                .map(|i| ChainState::Sites(state.profile().deposit(&g, i).0))
                .collect();
            assert_eq!(support, expect);
        }

        // Under a walk driver the support pairs each deposit with its arc.
        let a = uniform_rows(&paw_arcs());
        let x = profile(&[0, -1, -1, -2]);
        let law = one_step_law(&ChainState::Driven(x.clone(), 0), &paw_graph(), &DriverSpec::Markov { a })
            .unwrap();
        let support: BTreeSet<ChainState> = law.into_iter().map(|(s, _)| s).collect();
        let expect: BTreeSet<ChainState> = [0usize, 2, 3]
            .iter()
            .map(|&w| ChainState::Driven(x.deposit(&paw_graph(), w).0, w))
            .collect();
        assert_eq!(support, expect);
    }

    #[test]
    fn sampling_matches_the_law() {
        let g = p3();
        let driver = DriverSpec::Iid { p: vec![0.2, 0.5, 0.3] };
        let state = ChainState::Sites(profile(&[0, -1, -2]));
        let law = one_step_law(&state, &g, &driver).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let trials = 40_000usize;
        let mut counts: BTreeMap<ChainState, usize> = BTreeMap::new();
        for _ in 0..trials {
            let (next, _, _) = sample_step(&state, &g, &driver, &mut rng).unwrap();
            *counts.entry(next).or_insert(0) += 1;
        }
        for (target, p) in law {
            let freq = *counts.get(&target).unwrap_or(&0) as f64 / trials as f64;
            let sigma = (p * (1.0 - p) / trials as f64).sqrt();
            assert!((freq - p).abs() < 4.0 * sigma + 1e-9, "{target}: {freq} vs {p}");
        }
    }

    #[test]
    fn dropped_site_is_recoverable_from_consecutive_profiles() {
        let g = p4();
        let driver = DriverSpec::uniform_iid(4);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut state = start_state(&g, &driver, 0).unwrap();
        for _ in 0..2_000 {
            let (next, site, raised) = sample_step(&state, &g, &driver, &mut rng).unwrap();
            let x = state.profile();
            let y = next.profile();
            if raised {
                // A raise renormalizes: the dropped site is the unique zero.
                assert_eq!(y.x[site], 0);
                assert_eq!(y.x.iter().filter(|&&v| v == 0).count(), 1);
            } else {
                let changed: Vec<usize> =
                    (0..4).filter(|&j| x.x[j] != y.x[j]).collect();
                assert_eq!(changed, vec![site]);
            }
            state = next;
        }
    }

    /// Standard-normal tail score of a chi-square statistic via the cube-root
    /// normalization, good to a few percent for moderate degrees of freedom.
    fn chi_square_z(chi2: f64, df: f64) -> f64 {
        let c = 2.0 / (9.0 * df);
        ((chi2 / df).powf(1.0 / 3.0) - (1.0 - c)) / c.sqrt()
    }

    /// Chi-square heterogeneity of next-state laws across previous states,
    /// pooled over current states: large values reject first-order Markov
    /// dependence of the sequence.
    fn memory_score<S: Clone + Ord>(seq: &[S]) -> f64 {
        let mut by_cur: BTreeMap<S, BTreeMap<(S, S), f64>> = BTreeMap::new();
        for w in seq.windows(3) {
            *by_cur
                .entry(w[1].clone())
                .or_default()
                .entry((w[0].clone(), w[2].clone()))
                .or_insert(0.0) += 1.0;
        }
        let mut chi2 = 0.0;
        let mut df = 0.0;
        for cells in by_cur.values() {
            let mut row_totals: BTreeMap<&S, f64> = BTreeMap::new();
            let mut col_totals: BTreeMap<&S, f64> = BTreeMap::new();
            for ((prev, next), &c) in cells {
                *row_totals.entry(prev).or_insert(0.0) += c;
                *col_totals.entry(next).or_insert(0.0) += c;
            }
            // Keep only well-populated rows and columns, then re-total the
            // surviving sub-table; independence survives the restriction.
            let rows: Vec<&S> =
                row_totals.iter().filter(|&(_, &t)| t >= 50.0).map(|(s, _)| *s).collect();
            let cols: Vec<&S> =
                col_totals.iter().filter(|&(_, &t)| t >= 50.0).map(|(s, _)| *s).collect();
            if rows.len() < 2 || cols.len() < 2 {
                continue;
            }
            let get = |r: &S, c: &S| cells.get(&(r.clone(), c.clone())).copied().unwrap_or(0.0);
            let rt: Vec<f64> =
                rows.iter().map(|r| cols.iter().map(|c| get(r, c)).sum()).collect();
            let ct: Vec<f64> =
                cols.iter().map(|c| rows.iter().map(|r| get(r, c)).sum()).collect();
            let total: f64 = rt.iter().sum();
            if total < 100.0 {
                continue;
            }
            for (ri, r) in rows.iter().enumerate() {
                for (ci, c) in cols.iter().enumerate() {
                    let expected = rt[ri] * ct[ci] / total;
                    if expected > 0.0 {
                        let diff = get(r, c) - expected;
                        chi2 += diff * diff / expected;
                    }
                }
            }
            df += (rows.len() as f64 - 1.0) * (cols.len() as f64 - 1.0);
        }
        if df == 0.0 {
            return 0.0;
        }
        chi_square_z(chi2, df)
    }

    #[test]
    fn marginal_profile_process_has_longer_memory_than_the_joint() {
        // Under a constrained walk the profile alone is not Markov: the pair
        // of consecutive profiles betrays the walker's position, which the
        // current profile hides. The joint chain is Markov by construction.
        let g = paw_graph();
        let driver = DriverSpec::Markov { a: uniform_rows(&paw_arcs()) };
        let mut rng = ChaCha8Rng::seed_from_u64(2026);
        let mut state = start_state(&g, &driver, 0).unwrap();
        let steps = 150_000usize;
        let mut marginal: Vec<RelativeProfile> = Vec::with_capacity(steps);
        let mut joint: Vec<(RelativeProfile, usize)> = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (next, _, _) = sample_step(&state, &g, &driver, &mut rng).unwrap();
            match &next {
                ChainState::Driven(x, v) => {
                    marginal.push(x.clone());
                    joint.push((x.clone(), *v));
                }
                _ => unreachable!(),
            }
            state = next;
        }
        let z_marginal = memory_score(&marginal);
        let z_joint = memory_score(&joint);
        assert!(
            z_marginal > 6.0,
            "marginal process looked Markov: z = {z_marginal}"
        );
        assert!(z_joint < 4.0, "joint chain failed its own property: z = {z_joint}");
    }

    #[test]
    fn exports_have_consistent_shapes() {
        let g = p3();
        let driver = DriverSpec::uniform_iid(3);
        let space = enumerate_states(&g, &driver, 6).unwrap();
        let model = assemble_transitions(&g, &space).unwrap();

        let text = model.coordinate_text();
        let mut lines = text.lines();
        let header: Vec<usize> = lines
            .next()
            .unwrap()
            .split_whitespace()
            .map(|t| t.parse().unwrap())
            .collect();
        assert_eq!(header[0], space.n_states());
        assert_eq!(header[1], space.n_states() + 1);
        assert_eq!(lines.count(), header[2]);

        let cert = certificate_iid(&g, &uniform(3)).unwrap();
        let js = cert.to_json();
        assert_eq!(js["core"].as_array().unwrap().len(), 3);
        assert_eq!(js["construction_log"].as_array().unwrap().len(), 9);
        assert!(js["alpha_prime"].as_f64().unwrap() > 0.0);

        let manifest = space.manifest();
        assert_eq!(manifest["states"].as_u64().unwrap() as usize, space.n_states());
        assert_eq!(manifest["tail_class"].as_u64().unwrap() as usize, space.tail_class());
    }
}
