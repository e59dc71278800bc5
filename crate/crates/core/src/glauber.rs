//! Heat-bath Glauber dynamics.
//!
//! Continuum mode resamples whole trajectories exactly; every free vertex has
//! its own rate-1 clock and rings are merged in a priority queue. Censored
//! vertices still ring but skip the update, so censored and uncensored runs
//! with the same seed see identical clocks.
//!
//! Grid mode is the Suzuki–Trotter discretization with `N` slices of width
//! `Δ = β/N`: a site state is an `N`-bit pattern (bit `k` set = `+` on slice
//! `k`) weighted by `e^{Δ Σ_k F_k s_k} Π_boundaries (p or 1−p)` with
//! `p = λΔ/(1+λΔ)`. Small systems get an exact generator.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::graph::{local_field, SiteGraph, SpinConfigMap};
use crate::order;
use crate::rng::{tag, Stream, StreamFactory};
use crate::site_sampler::sample_site;
use crate::trajectory::{ModelParams, Piecewise, Sign};
use crate::transfer::EndpointCondition;

/// Imaginary-time boundary imposed on every single-site resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeBc {
    Free,
    Periodic,
}

impl TimeBc {
    pub fn endpoint(self) -> EndpointCondition {
        match self {
            TimeBc::Free => EndpointCondition::Free,
            TimeBc::Periodic => EndpointCondition::Periodic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActiveSet {
    All,
    Only(BTreeSet<usize>),
}

impl ActiveSet {
    pub fn contains(&self, v: usize) -> bool {
        match self {
            ActiveSet::All => true,
            ActiveSet::Only(s) => s.contains(&v),
        }
    }

    fn subset_of(&self, other: &ActiveSet, free: &[usize]) -> bool {
        free.iter().all(|&v| !self.contains(v) || other.contains(v))
    }
}

/// Piecewise-constant active set: `A(t) = sets[i]` for `t ∈ [times[i], times[i+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pieces: Vec<(f64, ActiveSet)>,
}

impl Schedule {
    pub fn new(pieces: Vec<(f64, ActiveSet)>) -> Result<Self> {
        if pieces.first().map(|p| p.0) != Some(0.0) {
            return Err(Error::InvalidArgument("schedule must start at t = 0".into()));
        }
        if pieces.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::InvalidArgument("schedule times must increase".into()));
        }
        Ok(Self { pieces })
    }

    pub fn full() -> Self {
        Self { pieces: vec![(0.0, ActiveSet::All)] }
    }

    pub fn none() -> Self {
        Self { pieces: vec![(0.0, ActiveSet::Only(BTreeSet::new()))] }
    }

    pub fn only(set: impl IntoIterator<Item = usize>) -> Self {
        Self { pieces: vec![(0.0, ActiveSet::Only(set.into_iter().collect()))] }
    }

    pub fn active_at(&self, t: f64) -> &ActiveSet {
        let i = self.pieces.partition_point(|p| p.0 <= t).saturating_sub(1);
        &self.pieces[i].1
    }

    pub fn pieces(&self) -> &[(f64, ActiveSet)] {
        &self.pieces
    }

    /// `A(t) ⊂ B(t)` for all `t`.
    pub fn subset_of(&self, other: &Schedule, free: &[usize]) -> bool {
        let mut times: Vec<f64> = self.pieces.iter().chain(&other.pieces).map(|p| p.0).collect();
        times.sort_by(f64::total_cmp);
        times.iter().all(|&t| self.active_at(t).subset_of(other.active_at(t), free))
    }

    fn validate(&self, graph: &SiteGraph) -> Result<()> {
        for (_, set) in &self.pieces {
            if let ActiveSet::Only(s) = set {
                if let Some(&v) = s.iter().find(|&&v| v >= graph.n_vertices() || graph.is_frozen(v)) {
                    return Err(Error::InvalidArgument(format!("schedule vertex {v} is not free")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ring {
    time: f64,
    site: usize,
}

impl Eq for Ring {}

impl Ord for Ring {
    // Reversed so that `BinaryHeap` pops the earliest ring.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.site.cmp(&self.site))
    }
}

impl PartialOrd for Ring {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Continuum chain state: configuration, clock, counters and the per-site
/// clock streams.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub config: SpinConfigMap,
    pub time: f64,
    /// Clock rings processed.
    pub events: u64,
    /// Rings that produced an update (not censored).
    pub updates: u64,
    rings: Vec<u64>,
    queue: BinaryHeap<Ring>,
    clocks: Vec<Option<Stream>>,
}

/// Continuum heat-bath dynamics on a fixed graph.
#[derive(Debug, Clone)]
pub struct Dynamics<'a> {
    pub graph: &'a SiteGraph,
    pub params: &'a ModelParams,
    pub bc: TimeBc,
    pub schedule: Schedule,
    pub streams: StreamFactory,
}

impl<'a> Dynamics<'a> {
    pub fn new(
        graph: &'a SiteGraph,
        params: &'a ModelParams,
        bc: TimeBc,
        schedule: Schedule,
        streams: StreamFactory,
    ) -> Result<Self> {
        schedule.validate(graph)?;
        Ok(Self { graph, params, bc, schedule, streams })
    }

    pub fn start(&self, config: SpinConfigMap) -> Result<ChainState> {
        if config.trajectories().len() != self.graph.n_vertices() {
            return Err(Error::InvalidArgument("configuration does not match graph".into()));
        }
        if config.beta() != self.params.beta {
            return Err(Error::BetaMismatch(config.beta(), self.params.beta));
        }
        if self.bc == TimeBc::Periodic {
            for &v in self.graph.free_vertices() {
                let t = config.get(v);
                if t.initial_sign() != t.final_sign() {
                    return Err(Error::InvalidArgument(format!("vertex {v} violates periodic bc")));
                }
            }
        }
        let n = self.graph.n_vertices();
        let mut clocks: Vec<Option<Stream>> = vec![None; n];
        let mut queue = BinaryHeap::new();
        for &v in self.graph.free_vertices() {
            let mut s = self.streams.stream(&[tag::CLOCK, v as u64]);
            let dt: f64 = Exp1.sample(&mut s);
            queue.push(Ring { time: dt, site: v });
            clocks[v] = Some(s);
        }
        Ok(ChainState { config, time: 0.0, events: 0, updates: 0, rings: vec![0; n], queue, clocks })
    }

    /// Time of the next ring.
    pub fn next_ring(&self, state: &ChainState) -> Option<f64> {
        state.queue.peek().map(|r| r.time)
    }

    /// Processes the next ring; returns the site and whether it updated.
    pub fn step(&self, state: &mut ChainState) -> Result<Option<(usize, bool)>> {
        let Some(ring) = state.queue.pop() else { return Ok(None) };
        let x = ring.site;
        state.time = ring.time;
        state.events += 1;
        let k = state.rings[x];
        state.rings[x] += 1;
        let active = self.schedule.active_at(ring.time).contains(x);
        if active {
            let field = local_field(self.graph, &state.config, x, self.params)?;
            let mut rng = self.streams.stream(&[tag::UPDATE, x as u64, k]);
            let t = sample_site(&field, self.params, self.bc.endpoint(), &mut rng)?;
            state.config.set(x, t);
            state.updates += 1;
        }
        let clock = state.clocks[x].as_mut().expect("free vertex has a clock");
        let dt: f64 = Exp1.sample(clock);
        state.queue.push(Ring { time: ring.time + dt, site: x });
        Ok(Some((x, active)))
    }

    /// Runs all rings up to and including `t_end`, then sets the clock to `t_end`.
    pub fn advance(&self, state: &mut ChainState, t_end: f64) -> Result<()> {
        while self.next_ring(state).is_some_and(|t| t <= t_end) {
            self.step(state)?;
        }
        state.time = state.time.max(t_end);
        Ok(())
    }
}

pub fn run(
    graph: &SiteGraph,
    params: &ModelParams,
    bc: TimeBc,
    schedule: Schedule,
    t_end: f64,
    start: SpinConfigMap,
    streams: StreamFactory,
) -> Result<ChainState> {
    let dyns = Dynamics::new(graph, params, bc, schedule, streams)?;
    let mut state = dyns.start(start)?;
    dyns.advance(&mut state, t_end)?;
    Ok(state)
}

/// Chains from all-plus and all-minus driven by the same clocks and the same
/// per-event streams. In continuum mode the order is not guaranteed.
pub fn coupled_run_pm(
    graph: &SiteGraph,
    params: &ModelParams,
    bc: TimeBc,
    t_end: f64,
    streams: StreamFactory,
) -> Result<(ChainState, ChainState)> {
    let plus = SpinConfigMap::uniform(graph, Sign::Plus, params.beta)?;
    let minus = SpinConfigMap::uniform(graph, Sign::Minus, params.beta)?;
    let a = run(graph, params, bc, Schedule::full(), t_end, plus, streams)?;
    let b = run(graph, params, bc, Schedule::full(), t_end, minus, streams)?;
    Ok((a, b))
}

/// Mean root gap `σ⁺_r•1 − σ⁻_r•1` of the continuum plus/minus coupling at
/// each time in `ts`: `(t, mean, se)` over `n_reps` replicas.
pub fn coupled_root_gap(
    graph: &SiteGraph,
    params: &ModelParams,
    root: usize,
    ts: &[f64],
    n_reps: usize,
    streams: StreamFactory,
) -> Result<Vec<(f64, f64, f64)>> {
    let mut gaps = vec![Vec::with_capacity(n_reps); ts.len()];
    for r in 0..n_reps as u64 {
        let f = streams.child(&[tag::REPLICA, r]);
        let dyns = Dynamics::new(graph, params, TimeBc::Free, Schedule::full(), f)?;
        let mut up = dyns.start(SpinConfigMap::uniform(graph, Sign::Plus, params.beta)?)?;
        let mut down = dyns.start(SpinConfigMap::uniform(graph, Sign::Minus, params.beta)?)?;
        for (k, &t) in ts.iter().enumerate() {
            dyns.advance(&mut up, t)?;
            dyns.advance(&mut down, t)?;
            gaps[k].push(up.config.get(root).dot_one() - down.config.get(root).dot_one());
        }
    }
    Ok(ts.iter().zip(&gaps).map(|(&t, g)| {
        let (m, se) = mean_se_iid(g);
        (t, m, se)
    }).collect())
}

fn mean_se_iid(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

/// One depth of a gap scan.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GapRow {
    pub depth: usize,
    /// Integrated autocorrelation time of `σ_r•1`, in time units.
    pub tau: f64,
    pub se: f64,
    /// Samples per replica.
    pub n_samples: usize,
    /// Smallest ratio of series length to `τ` (in samples) over replicas.
    pub min_len_over_tau: f64,
}

/// Settings shared by every depth of a gap scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapScanConfig {
    pub burn_in: f64,
    pub t_total: f64,
    pub dt: f64,
    pub n_reps: usize,
}

/// Equilibrium autocorrelation time of the root magnetization on `b`-ary
/// trees of each depth. Replicas start from all-plus, discard `burn_in`,
/// then record `σ_r•1` every `dt` for `t_total`; `τ = dt · τ_int` per
/// replica, averaged with its standard error.
pub fn gap_scan(
    b: usize,
    depths: &[usize],
    boundary: &crate::graph::BoundaryKind,
    params: &ModelParams,
    cfg: GapScanConfig,
    streams: StreamFactory,
) -> Result<Vec<GapRow>> {
    let n_samples = (cfg.t_total / cfg.dt).round() as usize;
    let mut rows = Vec::new();
    for &depth in depths {
        let tree = crate::graph::build_tree(b, depth, boundary, params.beta, None)?;
        let mut taus = Vec::with_capacity(cfg.n_reps);
        let mut min_ratio = f64::INFINITY;
        for r in 0..cfg.n_reps as u64 {
            let f = streams.child(&[depth as u64, tag::REPLICA, r]);
            let dyns = Dynamics::new(&tree.graph, params, TimeBc::Free, Schedule::full(), f)?;
            let mut st = dyns.start(SpinConfigMap::uniform(&tree.graph, Sign::Plus, params.beta)?)?;
            let mut series = Vec::with_capacity(n_samples);
            for k in 0..n_samples {
                dyns.advance(&mut st, cfg.burn_in + k as f64 * cfg.dt)?;
                series.push(st.config.get(0).dot_one());
            }
            let tau_int = crate::estimators::integrated_autocorrelation(&series)?;
            min_ratio = min_ratio.min(n_samples as f64 / tau_int);
            taus.push(cfg.dt * tau_int);
        }
        let (tau, se) = mean_se_iid(&taus);
        rows.push(GapRow { depth, tau, se, n_samples, min_len_over_tau: min_ratio });
    }
    Ok(rows)
}

/// Coupling upper bound on mixing in grid mode: mean and standard error of
/// the time at which the plus and minus grid chains coalesce, over
/// `n_reps` replicas. Coalescence is checked every `check_dt`.
pub fn grid_coalescence_time(
    model: &GridModel,
    check_dt: f64,
    t_max: f64,
    n_reps: usize,
    streams: StreamFactory,
) -> Result<(f64, f64)> {
    model.check_monotone()?;
    let mut times = Vec::with_capacity(n_reps);
    for r in 0..n_reps as u64 {
        let mut plus = model.all(Sign::Plus);
        let mut minus = model.all(Sign::Minus);
        let mut chain = GridChain::new(model, Schedule::full(), streams.child(&[tag::REPLICA, r]));
        let mut t = 0.0;
        while plus != minus {
            if t >= t_max {
                return Err(Error::NoConvergence(chain.events as usize));
            }
            t += check_dt;
            chain.advance(&mut [&mut plus, &mut minus], t);
        }
        times.push(t);
    }
    Ok(mean_se_iid(&times))
}

/// Mean of `f` over slice `k` of a piecewise function.
fn slice_average<P: Piecewise>(f: &P, k: usize, delta: f64) -> f64 {
    let (a, b) = (k as f64 * delta, (k + 1) as f64 * delta);
    let mut total = 0.0;
    for s in f.segments() {
        let lo = s.start.max(a);
        let hi = s.end.min(b);
        if hi > lo {
            total += s.value * (hi - lo);
        }
    }
    total / delta
}

/// Discretized single-site weights: slice width, flip probability and time
/// boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceSpec {
    pub n: usize,
    pub delta: f64,
    pub p: f64,
    pub bc: TimeBc,
}

impl SliceSpec {
    pub fn new(n: usize, beta: f64, lambda: f64, bc: TimeBc) -> Result<Self> {
        if n == 0 || n > 24 {
            return Err(Error::InvalidArgument(format!("grid N must be in 1..=24, got {n}")));
        }
        let delta = beta / n as f64;
        Ok(Self { n, delta, p: lambda * delta / (1.0 + lambda * delta), bc })
    }

    pub fn n_states(&self) -> usize {
        1 << self.n
    }

    pub fn sign(pattern: usize, k: usize) -> f64 {
        if pattern >> k & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    /// `log Π_boundaries (p or 1−p)`.
    pub fn log_flip_weight(&self, pattern: usize) -> f64 {
        let (lp, lq) = (self.p.ln(), (1.0 - self.p).ln());
        let mut w = 0.0;
        let last = if self.bc == TimeBc::Periodic && self.n > 1 { self.n } else { self.n - 1 };
        for k in 0..last {
            let a = pattern >> k & 1;
            let b = pattern >> ((k + 1) % self.n) & 1;
            w += if a != b { lp } else { lq };
        }
        w
    }

    /// Unnormalized log weight of a pattern under per-slice fields `f`.
    pub fn log_weight(&self, pattern: usize, f: &[f64]) -> f64 {
        let mut w = self.log_flip_weight(pattern);
        for (k, &fk) in f.iter().enumerate() {
            w += self.delta * fk * Self::sign(pattern, k);
        }
        w
    }

    /// Normalized single-site law over all `2^N` patterns.
    pub fn site_law(&self, f: &[f64]) -> Vec<f64> {
        let logw: Vec<f64> = (0..self.n_states()).map(|s| self.log_weight(s, f)).collect();
        normalize_log(&logw)
    }

    /// Sequential per-slice inverse-CDF draw: slice `k` is `+` iff
    /// `u[k] < P(+ | earlier slices)`. Monotone in `f` and in `u` when
    /// `p < ½`.
    pub fn sample_pattern(&self, f: &[f64], u: &[f64]) -> usize {
        let n = self.n;
        let ed = |k: usize, s: usize| if s == 1 { (self.delta * f[k]).exp() } else { (-self.delta * f[k]).exp() };
        let psi = |a: usize, b: usize| if a == b { 1.0 - self.p } else { self.p };
        let periodic = self.bc == TimeBc::Periodic && n > 1;
        // back[s0][k][s]: weight of slices k+1.. given slice k = s (and, in
        // the periodic case, the wrap to s0).
        // Each row is rescaled for range; `log_scale[s0]` keeps the two
        // conditionings comparable for the first slice.
        let mut back = [vec![[0.0f64; 2]; n], vec![[0.0f64; 2]; n]];
        let mut log_scale = [0.0f64; 2];
        for (s0, b) in back.iter_mut().enumerate() {
            b[n - 1] = if periodic { [psi(0, s0), psi(1, s0)] } else { [1.0, 1.0] };
            for k in (0..n - 1).rev() {
                let mut m = [0.0; 2];
                for (s, ms) in m.iter_mut().enumerate() {
                    *ms = (0..2).map(|t| psi(s, t) * ed(k + 1, t) * b[k + 1][t]).sum();
                }
                let z = m[0] + m[1];
                log_scale[s0] += z.ln();
                b[k] = [m[0] / z, m[1] / z];
            }
        }
        let l0 = |s: usize| (self.delta * f[0] * if s == 1 { 1.0 } else { -1.0 }) + back[s][0][s].ln() + log_scale[s];
        let p_plus = 1.0 / (1.0 + (l0(0) - l0(1)).exp());
        let first = if u[0] < p_plus { 1 } else { 0 };
        let mut pattern = first;
        let mut prev = first;
        let b = &back[first];
        for k in 1..n {
            let w = |s: usize| psi(prev, s) * ed(k, s) * b[k][s];
            let s = if u[k] * (w(0) + w(1)) < w(1) { 1 } else { 0 };
            pattern |= s << k;
            prev = s;
        }
        pattern
    }
}

fn normalize_log(logw: &[f64]) -> Vec<f64> {
    let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Suzuki–Trotter discretization of a graph: per-slice base fields (base
/// field plus frozen neighbours) and couplings between free vertices.
#[derive(Debug, Clone)]
pub struct GridModel {
    pub slices: SliceSpec,
    /// Graph vertex of each free site.
    pub sites: Vec<usize>,
    /// Free-site neighbours of each free site (site indices).
    pub nbrs: Vec<Vec<usize>>,
    /// Per-site per-slice field from the base field and frozen neighbours.
    pub base: Vec<Vec<f64>>,
}

impl GridModel {
    pub fn new(graph: &SiteGraph, params: &ModelParams, n: usize, bc: TimeBc) -> Result<Self> {
        let slices = SliceSpec::new(n, params.beta, params.lambda, bc)?;
        let sites: Vec<usize> = graph.free_vertices().to_vec();
        let mut index = vec![usize::MAX; graph.n_vertices()];
        for (i, &v) in sites.iter().enumerate() {
            index[v] = i;
        }
        let mut nbrs = Vec::with_capacity(sites.len());
        let mut base = Vec::with_capacity(sites.len());
        for &v in &sites {
            let mut f: Vec<f64> = (0..n).map(|k| slice_average(&params.h, k, slices.delta)).collect();
            let mut nb = Vec::new();
            for &y in graph.neighbors(v) {
                match graph.boundary().get(y) {
                    Some(t) => {
                        if t.beta() != params.beta {
                            return Err(Error::BetaMismatch(t.beta(), params.beta));
                        }
                        for (k, fk) in f.iter_mut().enumerate() {
                            *fk += slice_average(t, k, slices.delta);
                        }
                    }
                    None => nb.push(index[y]),
                }
            }
            nbrs.push(nb);
            base.push(f);
        }
        Ok(Self { slices, sites, nbrs, base })
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    fn bits(&self) -> usize {
        self.slices.n * self.sites.len()
    }

    /// Local per-slice field of site `i` given the other sites' patterns.
    pub fn field(&self, i: usize, patterns: &[usize]) -> Vec<f64> {
        let mut f = self.base[i].clone();
        for &j in &self.nbrs[i] {
            for (k, fk) in f.iter_mut().enumerate() {
                *fk += SliceSpec::sign(patterns[j], k);
            }
        }
        f
    }

    pub fn unpack(&self, state: usize) -> Vec<usize> {
        let n = self.slices.n;
        (0..self.sites.len()).map(|i| (state >> (n * i)) & ((1 << n) - 1)).collect()
    }

    pub fn pack(&self, patterns: &[usize]) -> usize {
        patterns.iter().enumerate().map(|(i, &p)| p << (self.slices.n * i)).sum()
    }

    fn check_size(&self) -> Result<usize> {
        let bits = self.bits();
        if bits > 20 {
            return Err(Error::StateSpaceTooLarge(format!("2^{bits} states exceeds 2^20")));
        }
        Ok(1 << bits)
    }

    /// Exact discretized Gibbs measure over all joint states.
    pub fn gibbs(&self) -> Result<Vec<f64>> {
        let size = self.check_size()?;
        let s = &self.slices;
        let logw: Vec<f64> = (0..size)
            .map(|state| {
                let pats = self.unpack(state);
                let mut w = 0.0;
                for (i, &p) in pats.iter().enumerate() {
                    w += s.log_weight(p, &self.base[i]);
                    for &j in &self.nbrs[i] {
                        if j > i {
                            for k in 0..s.n {
                                w += s.delta * SliceSpec::sign(p, k) * SliceSpec::sign(pats[j], k);
                            }
                        }
                    }
                }
                w
            })
            .collect();
        Ok(normalize_log(&logw))
    }

    /// Exact generator `L_A = Σ_{x∈A} (μ_x − I)`; `active[i]` selects sites.
    pub fn generator(&self, active: &[bool]) -> Result<SparseGenerator> {
        let size = self.check_size()?;
        let n = self.slices.n;
        let m = 1usize << n;
        let mut row_ptr = vec![0usize];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut diag = vec![0.0; size];
        for state in 0..size {
            let pats = self.unpack(state);
            for i in (0..self.sites.len()).filter(|&i| active[i]) {
                let law = self.slices.site_law(&self.field(i, &pats));
                diag[state] -= 1.0 - law[pats[i]];
                let cleared = state & !((m - 1) << (n * i));
                for (q, &w) in law.iter().enumerate() {
                    if q != pats[i] && w > 0.0 {
                        cols.push(cleared | (q << (n * i)));
                        vals.push(w);
                    }
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(SparseGenerator { row_ptr, cols, vals, diag })
    }

    pub fn active_mask(&self, set: &ActiveSet) -> Vec<bool> {
        self.sites.iter().map(|&v| set.contains(v)).collect()
    }

    /// Heat-bath update of site `i` with per-slice uniforms `u`.
    pub fn update(&self, i: usize, patterns: &mut [usize], u: &[f64]) {
        let f = self.field(i, patterns);
        patterns[i] = self.slices.sample_pattern(&f, u);
    }
}

/// Generator in compressed rows (off-diagonal) plus its diagonal.
#[derive(Debug, Clone)]
pub struct SparseGenerator {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
}

impl SparseGenerator {
    pub fn size(&self) -> usize {
        self.diag.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.diag[i]
    }

    /// Row vector times generator: `v L`.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = v.iter().zip(&self.diag).map(|(a, d)| a * d).collect();
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                for (j, r) in self.row(i) {
                    out[j] += vi * r;
                }
            }
        }
        out
    }

    /// `v e^{tL}` by uniformization, truncated once the Poisson tail is
    /// below `1e-17`.
    pub fn evolve(&self, v: &[f64], t: f64) -> Vec<f64> {
        let q = self.diag.iter().fold(0.0f64, |a, d| a.max(-d));
        if t == 0.0 || q == 0.0 {
            return v.to_vec();
        }
        let qt = q * t;
        let mut term = v.to_vec();
        // log Poisson weights avoid underflow of e^{−qt} for large qt.
        let mut logw = -qt;
        let mut out: Vec<f64> = term.iter().map(|x| x * logw.exp()).collect();
        let mut mass = logw.exp();
        let mut k = 0usize;
        while 1.0 - mass > 1e-17 && (k as f64) < qt + 40.0 * qt.sqrt() + 50.0 {
            k += 1;
            let lv = self.left_mul(&term);
            for (a, b) in term.iter_mut().zip(lv) {
                *a += b / q;
            }
            logw += qt.ln() - (k as f64).ln();
            let w = logw.exp();
            mass += w;
            for (o, a) in out.iter_mut().zip(&term) {
                *o += w * a;
            }
        }
        out
    }

    /// Spectral gap of `−L` for a generator reversible w.r.t. `pi` (dense;
    /// for small state spaces).
    pub fn spectral_gap(&self, pi: &[f64]) -> f64 {
        let n = self.size();
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = -self.diag[i];
            for (j, r) in self.row(i) {
                m[(i, j)] -= r * (pi[i] / pi[j]).sqrt();
            }
        }
        let sym = (&m + m.transpose()) * 0.5;
        let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev.get(1).copied().unwrap_or(0.0)
    }
}

/// Grid-mode chain state: one pattern per free site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridState {
    pub patterns: Vec<usize>,
}

/// Event-driven grid-mode chain with the same clock structure as the
/// continuum chain.
pub struct GridChain<'a> {
    pub model: &'a GridModel,
    pub schedule: Schedule,
    pub streams: StreamFactory,
    queue: BinaryHeap<Ring>,
    clocks: Vec<Stream>,
    rings: Vec<u64>,
    pub time: f64,
    pub events: u64,
}

impl<'a> GridChain<'a> {
    pub fn new(model: &'a GridModel, schedule: Schedule, streams: StreamFactory) -> Self {
        let mut queue = BinaryHeap::new();
        let mut clocks = Vec::new();
        for i in 0..model.n_sites() {
            let mut s = streams.stream(&[tag::CLOCK, model.sites[i] as u64]);
            let dt: f64 = Exp1.sample(&mut s);
            queue.push(Ring { time: dt, site: i });
            clocks.push(s);
        }
        Self { model, schedule, streams, queue, clocks, rings: vec![0; model.n_sites()], time: 0.0, events: 0 }
    }

    /// Advances every given state with the same rings and uniforms, so
    /// several starting points form a grand coupling.
    pub fn advance(&mut self, states: &mut [&mut GridState], t_end: f64) {
        let n = self.model.slices.n;
        let mut u = vec![0.0; n];
        while self.queue.peek().is_some_and(|r| r.time <= t_end) {
            let ring = self.queue.pop().unwrap();
            let i = ring.site;
            self.time = ring.time;
            self.events += 1;
            let k = self.rings[i];
            self.rings[i] += 1;
            if self.schedule.active_at(ring.time).contains(self.model.sites[i]) {
                let mut rng = self.streams.stream(&[tag::UPDATE, self.model.sites[i] as u64, k]);
                for x in u.iter_mut() {
                    *x = rng.gen();
                }
                for st in states.iter_mut() {
                    self.model.update(i, &mut st.patterns, &u);
                }
            }
            let dt: f64 = Exp1.sample(&mut self.clocks[i]);
            self.queue.push(Ring { time: ring.time + dt, site: i });
        }
        self.time = self.time.max(t_end);
    }
}

impl GridModel {
    pub fn all(&self, sign: Sign) -> GridState {
        let full = (1usize << self.slices.n) - 1;
        GridState { patterns: vec![if sign == Sign::Plus { full } else { 0 }; self.n_sites()] }
    }

    /// Per-slice monotone coupling requires ferromagnetic time bonds.
    pub fn check_monotone(&self) -> Result<()> {
        if self.slices.p >= 0.5 {
            return Err(Error::InvalidParams("grid coupling needs lambda*delta < 1".into()));
        }
        Ok(())
    }
}

/// Grid-mode plus/minus coupling; asserts the order after every event.
pub fn coupled_run_pm_grid(
    model: &GridModel,
    t_end: f64,
    streams: StreamFactory,
) -> Result<(GridState, GridState)> {
    model.check_monotone()?;
    let mut plus = model.all(Sign::Plus);
    let mut minus = model.all(Sign::Minus);
    let mut chain = GridChain::new(model, Schedule::full(), streams);
    while chain.queue.peek().is_some_and(|r| r.time <= t_end) {
        let next = chain.queue.peek().unwrap().time;
        chain.advance(&mut [&mut plus, &mut minus], next);
        if !grid_leq(&minus, &plus) {
            return Err(Error::InvalidArgument("grid coupling lost monotonicity".into()));
        }
    }
    chain.time = t_end;
    Ok((plus, minus))
}

pub fn grid_leq(a: &GridState, b: &GridState) -> bool {
    a.patterns.iter().zip(&b.patterns).all(|(x, y)| x & !y == 0)
}

/// One time point of the exact censoring comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CensoringRow {
    pub t: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub ent_a: f64,
    pub ent_b: f64,
    pub tv_a: f64,
    pub tv_b: f64,
    /// `ν P_B ≼ ν P_A` (exact min-cut check).
    pub dominated: bool,
    /// Both densities increasing.
    pub monotone_densities: bool,
}

impl CensoringRow {
    pub fn holds(&self, tol: f64) -> bool {
        self.var_b <= self.var_a + tol
            && self.ent_b <= self.ent_a + tol
            && self.tv_b <= self.tv_a + tol
            && self.dominated
    }
}

/// `ν P_{A;t}` for the piecewise censored semigroup, evaluated at the sorted
/// times in `ts`.
fn evolve_schedule(
    model: &GridModel,
    schedule: &Schedule,
    nu: &[f64],
    ts: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let mut gens: Vec<(f64, SparseGenerator)> = Vec::new();
    for (t0, set) in schedule.pieces() {
        gens.push((*t0, model.generator(&model.active_mask(set))?));
    }
    let mut v = nu.to_vec();
    let mut now = 0.0;
    let mut out = Vec::with_capacity(ts.len());
    for &target in ts {
        while now < target {
            let i = gens.partition_point(|g| g.0 <= now) - 1;
            let stop = gens.get(i + 1).map_or(target, |g| g.0.min(target));
            v = gens[i].1.evolve(&v, stop - now);
            now = stop;
        }
        out.push(v.clone());
    }
    Ok(out)
}

fn var_ent_tv(p: &[f64], mu: &[f64]) -> (f64, f64, f64) {
    let mut var = -1.0;
    let mut ent = 0.0;
    let mut tv = 0.0;
    for (&a, &m) in p.iter().zip(mu) {
        var += a * a / m;
        if a > 0.0 {
            ent += a * (a / m).ln();
        }
        tv += (a - m).abs();
    }
    (var, ent, tv / 2.0)
}

/// Exact censoring comparison from `ν = δ_{all plus}` for schedules
/// `A ⊂ B`.
pub fn censoring_check_exact(
    model: &GridModel,
    sched_a: &Schedule,
    sched_b: &Schedule,
    ts: &[f64],
) -> Result<Vec<CensoringRow>> {
    if !sched_a.subset_of(sched_b, &model.sites) {
        return Err(Error::InvalidArgument("schedule A must be contained in B".into()));
    }
    if ts.windows(2).any(|w| w[0] > w[1]) || ts.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::InvalidArgument("time grid must be sorted and nonnegative".into()));
    }
    let mu = model.gibbs()?;
    let mut nu = vec![0.0; mu.len()];
    nu[mu.len() - 1] = 1.0;
    let pa = evolve_schedule(model, sched_a, &nu, ts)?;
    let pb = evolve_schedule(model, sched_b, &nu, ts)?;
    let mut rows = Vec::new();
    for (k, &t) in ts.iter().enumerate() {
        let (var_a, ent_a, tv_a) = var_ent_tv(&pa[k], &mu);
        let (var_b, ent_b, tv_b) = var_ent_tv(&pb[k], &mu);
        let density = |p: &[f64]| p.iter().zip(&mu).map(|(a, m)| a / m).collect::<Vec<_>>();
        let dens_a = density(&pa[k]);
        let dens_b = density(&pb[k]);
        let scale = dens_a.iter().chain(&dens_b).fold(1.0f64, |a, b| a.max(b.abs()));
        rows.push(CensoringRow {
            t,
            var_a,
            var_b,
            ent_a,
            ent_b,
            tv_a,
            tv_b,
            dominated: order::stoch_leq(&pb[k], &pa[k], 1e-12),
            monotone_densities: order::is_increasing(&dens_a, 1e-12 * scale)
                && order::is_increasing(&dens_b, 1e-12 * scale),
        });
    }
    Ok(rows)
}
