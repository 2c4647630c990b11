//! Empirical verification tools: product couplings and the coupling matrix,
//! the additive-functional view of the maximal height, concentration tails,
//! and the stationary-vs-fixed-start bias gap.
//!
//! Everything here measures a simulated quantity against a certified bound.
//! The certified constants are deliberately loose — they price worst cases
//! through the communication certificate — so the interesting direction is
//! the machine-checked one: an empirical value exceeding its bound beyond
//! Monte Carlo noise flags a real defect.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;
use serde_json::json;

use crate::chain::{
    core_states, sample_step, start_state, ChainState, CommunicationCertificate,
};
use crate::deposition::layer::{layer_one_step_law, LayerConfig};
use crate::deposition::{DriverSpec, HeightProfile, RelativeProfile};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::solver::{tv_distance, InvariantDistribution};

/// One product-coupling experiment: two chains under the same driver, run
/// with independent randomness until they first agree, in lockstep after.
#[derive(Debug, Clone)]
pub struct CouplingRun {
    pub start_pair: (ChainState, ChainState),
    /// First step at which the two states were equal; `None` when the step
    /// cap expired first.
    pub meet_time: Option<u64>,
    /// Both trajectories, when tracing was requested.
    pub trajectory_pair: Option<Vec<(ChainState, ChainState)>>,
}

fn product_coupling(
    a: &ChainState,
    b: &ChainState,
    g: &Graph,
    driver: &DriverSpec,
    cap: u64,
    rng: &mut impl Rng,
    trace: bool,
) -> Result<CouplingRun> {
    let mut run = CouplingRun {
        start_pair: (a.clone(), b.clone()),
        meet_time: None,
        trajectory_pair: trace.then(|| vec![(a.clone(), b.clone())]),
    };
    let mut x = a.clone();
    let mut y = b.clone();
    let mut met: Option<u64> = (x == y).then_some(0);
    for t in 1..=cap {
        if met.is_some() && !trace {
            break;
        }
        let (nx, _, _) = sample_step(&x, g, driver, rng)?;
        // Independent randomness before the meeting, one shared move after.
        let ny = if met.is_some() { nx.clone() } else { sample_step(&y, g, driver, rng)?.0 };
        x = nx;
        y = ny;
        if met.is_none() && x == y {
            met = Some(t);
        }
        if let Some(tp) = run.trajectory_pair.as_mut() {
            tp.push((x.clone(), y.clone()));
        }
    }
    run.meet_time = met;
    Ok(run)
}

/// Runs the product coupling until the chains meet or `cap` steps elapse.
pub fn run_product_coupling(
    a: &ChainState,
    b: &ChainState,
    g: &Graph,
    driver: &DriverSpec,
    cap: u64,
    rng: &mut impl Rng,
) -> Result<CouplingRun> {
    product_coupling(a, b, g, driver, cap, rng, false)
}

/// [`run_product_coupling`] with both trajectories recorded, and the run
/// continued to the full cap so post-meeting lockstep is visible.
pub fn run_product_coupling_traced(
    a: &ChainState,
    b: &ChainState,
    g: &Graph,
    driver: &DriverSpec,
    cap: u64,
    rng: &mut impl Rng,
) -> Result<CouplingRun> {
    product_coupling(a, b, g, driver, cap, rng, true)
}

/// A state drawn by walking a random number of steps from a random core
/// state: always reachable, with naturally varied depth.
pub fn sample_reachable_state(
    g: &Graph,
    driver: &DriverSpec,
    burn: u64,
    rng: &mut impl Rng,
) -> Result<ChainState> {
    let core = core_states(g, driver)?;
    let mut state = core[rng.random_range(0..core.len())].clone();
    for _ in 0..burn {
        state = sample_step(&state, g, driver, rng)?.0;
    }
    Ok(state)
}

/// Empirical uncoupled-fraction curve against the certified decay.
///
/// `d_hat[ℓ]` estimates, over sampled start pairs, the probability that two
/// independent copies have not met within `ℓ` steps; `bound[ℓ]` is the
/// certificate's `(1 − (α′)²·|V|)^{⌊ℓ/s⌋}`; `sigma[ℓ]` the binomial standard
/// error of the estimate.
#[derive(Debug, Clone, Serialize)]
pub struct CouplingMatrixEstimate {
    pub horizon: u64,
    pub sample_pairs: usize,
    pub d_hat: Vec<f64>,
    pub bound: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl CouplingMatrixEstimate {
    /// One CSV row per lag: `lag,d_hat,bound,sigma`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lag,d_hat,bound,sigma\n");
        for lag in 0..self.d_hat.len() {
            out.push_str(&format!(
                "{lag},{},{},{}\n",
                self.d_hat[lag], self.bound[lag], self.sigma[lag]
            ));
        }
        out
    }
}

/// Estimates the coupling decay from `sample_pairs` random distinct start
/// pairs and checks it against the certified bound at every lag, allowing a
/// three-sigma Monte Carlo margin. A violation beyond that margin is an
/// implementation bug somewhere — the bound is a theorem — and errors with
/// [`Error::BoundViolationBeyondNoise`].
pub fn estimate_coupling_matrix(
    g: &Graph,
    driver: &DriverSpec,
    cert: &CommunicationCertificate,
    sample_pairs: usize,
    horizon: u64,
    rng: &mut impl Rng,
) -> Result<CouplingMatrixEstimate> {
    if sample_pairs == 0 {
        return Err(Error::Config("need at least one coupling pair".into()));
    }
    let mut uncoupled = vec![0u64; horizon as usize + 1];
    for _ in 0..sample_pairs {
        let a = sample_reachable_state(g, driver, rng.random_range(0..2 * cert.s as u64 + 2), rng)?;
        let mut b = a.clone();
        for _ in 0..50 {
            b = sample_reachable_state(g, driver, rng.random_range(0..2 * cert.s as u64 + 2), rng)?;
            if b != a {
                break;
            }
        }
        let run = run_product_coupling(&a, &b, g, driver, horizon, rng)?;
        let met_at = run.meet_time.unwrap_or(u64::MAX);
        for (lag, slot) in uncoupled.iter_mut().enumerate() {
            if met_at > lag as u64 {
                *slot += 1;
            }
        }
    }
    let n_pairs = sample_pairs as f64;
    let d_hat: Vec<f64> = uncoupled.iter().map(|&u| u as f64 / n_pairs).collect();
    let sigma: Vec<f64> = d_hat
        .iter()
        .map(|&d| (d * (1.0 - d) / n_pairs).sqrt())
        .collect();
    let per_window = 1.0 - cert.alpha_prime.powi(2) * g.n() as f64;
    let bound: Vec<f64> = (0..=horizon as usize)
        .map(|lag| {
            if cert.s == 0 {
                if lag == 0 { 1.0 } else { 0.0 }
            } else {
                per_window.powi((lag / cert.s) as i32)
            }
        })
        .collect();
    for lag in 0..=horizon as usize {
        if d_hat[lag] > bound[lag] + 3.0 * sigma[lag] + 1e-12 {
            return Err(Error::BoundViolationBeyondNoise(format!(
                "uncoupled fraction {} at lag {lag} exceeds the certified {} (sigma {})",
                d_hat[lag], bound[lag], sigma[lag]
            )));
        }
    }
    Ok(CouplingMatrixEstimate { horizon, sample_pairs, d_hat, bound, sigma })
}

/// A path functional with a declared per-coordinate variation bound: how
/// much the value may move when one state of the window is replaced.
pub struct PathObservable {
    pub name: String,
    pub variation_bound: f64,
    evaluator: Box<dyn Fn(&[RelativeProfile]) -> f64 + Send + Sync>,
}

impl PathObservable {
    pub fn new(
        name: impl Into<String>,
        variation_bound: f64,
        evaluator: impl Fn(&[RelativeProfile]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        PathObservable { name: name.into(), variation_bound, evaluator: Box::new(evaluator) }
    }

    pub fn evaluate(&self, window: &[RelativeProfile]) -> f64 {
        (self.evaluator)(window)
    }

    /// The canonical instance: growth of the running maximum over the
    /// window, read from coordinate changes alone. Replacing one interior
    /// state touches the two increments adjacent to it, hence the bound 2.
    pub fn max_growth(n: usize) -> Result<Self> {
        if n <= 2 {
            return Err(Error::SmallGraph(n));
        }
        Ok(PathObservable::new("max-height-growth", 2.0, |window| {
            window
                .windows(2)
                .filter(|pair| {
                    let moved =
                        pair[0].x.iter().zip(&pair[1].x).filter(|(a, b)| a != b).count();
                    moved > 1
                })
                .count() as f64
        }))
    }
}

impl std::fmt::Debug for PathObservable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PathObservable")
            .field("name", &self.name)
            .field("variation_bound", &self.variation_bound)
            .finish()
    }
}

/// Whether one step left the running maximum unchanged, read from the
/// relative profiles alone: at most one coordinate moved.
///
/// A raise renormalizes every other column, moving at least `|V|−1`
/// coordinates; a plain screening moves exactly the dropped one, and a fill
/// below the surface moves none. On two or fewer vertices the counts
/// collide — on the two-path a raise also moves exactly one coordinate — so
/// those sizes are refused with [`Error::SmallGraph`].
pub fn argmax_change_indicator(x: &RelativeProfile, x_next: &RelativeProfile) -> Result<bool> {
    if x.n() <= 2 {
        return Err(Error::SmallGraph(x.n()));
    }
    let moved = x.x.iter().zip(&x_next.x).filter(|(a, b)| a != b).count();
    Ok(moved <= 1)
}

/// Simulates `t_max` deposits from the absolute height profile `start` and
/// returns the running growth of the maximum, `m[t] = max h(t) − max h(0)`
/// for `t = 0..=t_max`.
///
/// The value is computed two independent ways on every step — direct
/// integer tracking of absolute heights, and the additive functional
/// `t − Σ 1{max unchanged}` with the indicator read from relative
/// coordinates alone on three or more vertices — and the computations must
/// agree exactly. Walk drivers start their walker at vertex 0; the depth-`k`
/// driver builds its start from one particle per column, so `start` must
/// have no adjacent equal heights there.
pub fn simulate_max_height(
    g: &Graph,
    driver: &DriverSpec,
    t_max: u64,
    start: &HeightProfile,
    rng: &mut impl Rng,
) -> Result<Vec<i64>> {
    let n = g.n();
    if start.h.len() != n {
        return Err(Error::VertexOutOfRange { vertex: start.h.len(), n });
    }
    let mut state = match driver {
        DriverSpec::Iid { .. } => ChainState::Sites(start.relativize()),
        DriverSpec::Markov { .. } => ChainState::Driven(start.relativize(), 0),
        DriverSpec::Layer { k, .. } => {
            let particles: Vec<Vec<i64>> = start.h.iter().map(|&h| vec![h]).collect();
            ChainState::Layered(LayerConfig::from_particles(g, *k, &particles)?)
        }
    };
    // The independent oracle: absolute top heights, deposited directly.
    let mut tops = start.h.clone();
    let start_max = *tops.iter().max().expect("graphs are nonempty");
    let mut direct_max = start_max;
    let mut m = Vec::with_capacity(t_max as usize + 1);
    m.push(0i64);
    let mut functional = 0i64;
    for t in 1..=t_max {
        let (next, site, raised) = sample_step(&state, g, driver, rng)?;
        // A fill leaves every top column alone; anything else deposits.
        let filled = matches!(driver, DriverSpec::Layer { .. })
            && state.profile() == next.profile();
        if !filled {
            let peak = g.closed_neighborhood_max(site, |v| tops[v]);
            tops[site] = peak + 1;
            direct_max = direct_max.max(tops[site]);
        }
        let unchanged = if n > 2 {
            argmax_change_indicator(state.profile(), next.profile())?
        } else {
            !raised
        };
        functional += i64::from(!unchanged);
        let direct = direct_max - start_max;
        if functional != direct {
            return Err(Error::ConstructionMismatch(format!(
                "additive functional {functional} disagrees with direct maximum {direct} at step {t}"
            )));
        }
        m.push(direct);
        state = next;
    }
    Ok(m)
}

/// One tail comparison row: observed `P(|m − mean| > y)` against the
/// certified `2·exp(−c y²/(2t))`.
#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationRow {
    pub y: f64,
    pub empirical: f64,
    pub bound: f64,
    pub sigma: f64,
    pub pass: bool,
}

/// Concentration of the maximum's growth at a fixed horizon.
#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationReport {
    pub t: u64,
    pub replicas: usize,
    /// The certified rate constant `|V|²(α′)⁴/s²`.
    pub c: f64,
    pub mean: f64,
    pub rows: Vec<ConcentrationRow>,
    pub all_pass: bool,
}

impl ConcentrationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("y,empirical,bound,sigma,pass\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.y, r.empirical, r.bound, r.sigma, r.pass
            ));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!(self)
    }
}

fn growth_replicas(
    g: &Graph,
    driver: &DriverSpec,
    start: Option<&ChainState>,
    t: u64,
    replicas: usize,
    rng: &mut impl Rng,
) -> Result<Vec<i64>> {
    let base = match start {
        Some(s) => s.clone(),
        None => start_state(g, driver, 0)?,
    };
    let mut out = Vec::with_capacity(replicas);
    for _ in 0..replicas {
        let mut state = base.clone();
        let mut raises = 0i64;
        for _ in 0..t {
            let (next, _, raised) = sample_step(&state, g, driver, rng)?;
            raises += i64::from(raised);
            state = next;
        }
        out.push(raises);
    }
    Ok(out)
}

/// Measures the tail of `m_V(t)` around its replica mean on the grid
/// `y = √t·j/4, j = 1..8` and compares each point against the certified
/// sub-Gaussian bound with a three-sigma binomial margin. The certified
/// constant is extremely loose, so failures indicate bugs, not sharpness.
pub fn concentration_report(
    g: &Graph,
    driver: &DriverSpec,
    cert: &CommunicationCertificate,
    t: u64,
    replicas: usize,
    rng: &mut impl Rng,
) -> Result<ConcentrationReport> {
    if replicas < 100 {
        return Err(Error::Config("too few replicas for meaningful tails".into()));
    }
    let samples = growth_replicas(g, driver, None, t, replicas, rng)?;
    let mean = samples.iter().map(|&m| m as f64).sum::<f64>() / replicas as f64;
    let s = cert.s.max(1) as f64;
    let c = (g.n() as f64 * cert.alpha_prime.powi(2) / s).powi(2);
    let mut rows = Vec::with_capacity(8);
    for j in 1..=8 {
        let y = (t as f64).sqrt() * j as f64 / 4.0;
        let hits = samples.iter().filter(|&&m| (m as f64 - mean).abs() > y).count();
        let empirical = hits as f64 / replicas as f64;
        let sigma = (empirical * (1.0 - empirical) / replicas as f64).sqrt();
        let bound = 2.0 * (-c * y * y / (2.0 * t as f64)).exp();
        rows.push(ConcentrationRow {
            y,
            empirical,
            bound,
            sigma,
            pass: empirical <= bound + 3.0 * sigma + 1e-12,
        });
    }
    let all_pass = rows.iter().all(|r| r.pass);
    Ok(ConcentrationReport { t, replicas, c, mean, rows, all_pass })
}

/// Stationary-start versus fixed-start expectation gap for `m_V(t)`.
#[derive(Debug, Clone, Serialize)]
pub struct BiasReport {
    pub t: u64,
    pub replicas: usize,
    pub stationary_mean: f64,
    pub fixed_mean: f64,
    pub gap: f64,
    /// 95% margin on the gap from the two replica samples.
    pub ci: f64,
    /// The certified ceiling `s/(|V|·(α′)²)`.
    pub bound: f64,
    pub pass: bool,
}

fn sample_from_distribution(
    pi: &InvariantDistribution,
    rng: &mut impl Rng,
) -> ChainState {
    let mut u: f64 = rng.random();
    for (state, p) in &pi.entries {
        u -= p;
        if u <= 0.0 {
            return state.clone();
        }
    }
    pi.entries.last().expect("distributions are nonempty").0.clone()
}

/// Compares the expected growth from (near-)equilibrium against the fixed
/// flat start. With an exact distribution available the equilibrium start
/// is sampled from it; otherwise each replica burns in for `10·s` steps.
/// The certified gap ceiling is constant in the horizon.
pub fn bias_check(
    g: &Graph,
    driver: &DriverSpec,
    cert: &CommunicationCertificate,
    pi: Option<&InvariantDistribution>,
    t: u64,
    replicas: usize,
    rng: &mut impl Rng,
) -> Result<BiasReport> {
    if replicas == 0 {
        return Err(Error::Config("need at least one replica".into()));
    }
    let fixed = growth_replicas(g, driver, None, t, replicas, rng)?;
    let mut stationary = Vec::with_capacity(replicas);
    let burn = 10 * cert.s as u64;
    for _ in 0..replicas {
        let start = match pi {
            Some(pi) => sample_from_distribution(pi, rng),
            None => {
                let mut s = start_state(g, driver, 0)?;
                for _ in 0..burn {
                    s = sample_step(&s, g, driver, rng)?.0;
                }
                s
            }
        };
        let mut state = start;
        let mut raises = 0i64;
        for _ in 0..t {
            let (next, _, raised) = sample_step(&state, g, driver, rng)?;
            raises += i64::from(raised);
            state = next;
        }
        stationary.push(raises);
    }
    let mean = |v: &[i64]| v.iter().map(|&m| m as f64).sum::<f64>() / v.len() as f64;
    let var = |v: &[i64], mu: f64| {
        if v.len() < 2 {
            0.0
        } else {
            v.iter().map(|&m| (m as f64 - mu).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
        }
    };
    let fixed_mean = mean(&fixed);
    let stationary_mean = mean(&stationary);
    let gap = (stationary_mean - fixed_mean).abs();
    let ci = 1.96
        * (var(&fixed, fixed_mean) / replicas as f64
            + var(&stationary, stationary_mean) / replicas as f64)
            .sqrt();
    let bound = cert.s.max(1) as f64 / (g.n() as f64 * cert.alpha_prime.powi(2));
    Ok(BiasReport {
        t,
        replicas,
        stationary_mean,
        fixed_mean,
        gap,
        ci,
        bound,
        pass: gap <= bound + ci,
    })
}

/// Exact law of the depth-`k` chain after each step, evolved by full
/// one-step pushforward with tiny-mass pruning (the pruned total is added
/// back as slack wherever the law is compared).
struct LayerLaw {
    mass: BTreeMap<LayerConfig, f64>,
    pruned: f64,
}

impl LayerLaw {
    fn point(start: LayerConfig) -> Self {
        LayerLaw { mass: BTreeMap::from([(start, 1.0)]), pruned: 0.0 }
    }

    fn step(&mut self, g: &Graph, k: usize, rho: f64, q: &[f64]) {
        let mut next: BTreeMap<LayerConfig, f64> = BTreeMap::new();
        for (cfg, &p) in &self.mass {
            for (succ, w) in layer_one_step_law(cfg, g, k, rho, q) {
                *next.entry(succ).or_insert(0.0) += p * w;
            }
        }
        next.retain(|_, p| {
            if *p < 1e-13 {
                self.pruned += *p;
                false
            } else {
                true
            }
        });
        self.mass = next;
    }
}

/// First horizon at which the laws of the depth-`k` chain from two starts
/// come within `target` in total variation, computed by exact pushforward.
/// Returns the horizon and the achieved distance (inflated by the pruning
/// slack), or `None` if `max_t` passes first.
pub fn layer_tv_horizon(
    g: &Graph,
    k: usize,
    rho: f64,
    q: &[f64],
    start_a: &LayerConfig,
    start_b: &LayerConfig,
    target: f64,
    max_t: usize,
) -> Result<Option<(usize, f64)>> {
    DriverSpec::Layer { k, rho, q: q.to_vec() }.validate(g)?;
    let mut a = LayerLaw::point(start_a.clone());
    let mut b = LayerLaw::point(start_b.clone());
    for t in 1..=max_t {
        a.step(g, k, rho, q);
        b.step(g, k, rho, q);
        let ea: Vec<(ChainState, f64)> = a
            .mass
            .iter()
            .map(|(c, &p)| (ChainState::Layered(c.clone()), p))
            .collect();
        let eb: Vec<(ChainState, f64)> = b
            .mass
            .iter()
            .map(|(c, &p)| (ChainState::Layered(c.clone()), p))
            .collect();
        let tv = tv_distance(&ea, &eb) + 0.5 * (a.pruned + b.pruned);
        if tv < target {
            return Ok(Some((t, tv)));
        }
    }
    Ok(None)
}
