//! Error bars, autocorrelation times, projected total variation and the
//! property-test batteries.
//!
//! Inequality batteries report one row per statistic where the estimate
//! should be nonnegative; `z = estimate / se` and a row is flagged when `z`
//! falls below a Bonferroni-corrected threshold.

use rand::Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::glauber::{ActiveSet, ChainState, Dynamics, Schedule, TimeBc};
use crate::graph::{build_tree, BoundaryKind, SiteGraph, SpinConfigMap};
use crate::rng::{tag, StreamFactory};
use crate::site_sampler::{increasing_function_suite, sample_site, IncreasingFn};
use crate::trajectory::{ModelParams, Sign, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchMean {
    pub mean: f64,
    pub se: f64,
    /// `n · var(series) / (n · se²)`, i.e. sample variance over squared SE.
    pub n_eff: f64,
    /// `n_eff > n`: batch means vary less than independent draws would.
    pub anticorrelated: bool,
}

/// Batch-means estimate using `n_batches` equal batches (the tail that does
/// not fill a batch is dropped).
pub fn batch_mean(series: &[f64], n_batches: usize) -> Result<BatchMean> {
    if n_batches < 2 || series.len() < 2 * n_batches {
        return Err(Error::SeriesTooShort(format!(
            "{} samples for {} batches",
            series.len(),
            n_batches
        )));
    }
    let size = series.len() / n_batches;
    let used = &series[..size * n_batches];
    let n = used.len() as f64;
    let mean = used.iter().sum::<f64>() / n;
    let means: Vec<f64> = used.chunks(size).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let k = n_batches as f64;
    let bvar = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let se = (bvar / k).sqrt();
    let var = used.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let n_eff = if se > 0.0 {
        var / (se * se)
    } else if var > 0.0 {
        f64::INFINITY
    } else {
        n
    };
    Ok(BatchMean { mean, se, n_eff, anticorrelated: n_eff > n })
}

/// Window constant of the self-consistent truncation `W ≥ c·τ(W)`.
pub const SOKAL_C: f64 = 6.0;

/// Integrated autocorrelation time `τ = ½ + Σ_{k≥1} ρ_k` (so an iid series
/// has `τ = ½`), summed up to the first window `W ≥ 6 τ(W)`. Fails when the
/// series is shorter than `50 τ`.
pub fn integrated_autocorrelation(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 2 {
        return Err(Error::SeriesTooShort(format!("{n} samples")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let c0 = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return Ok(0.5);
    }
    let mut tau = 0.5;
    let mut w = 1;
    while w < n {
        let ck = x[..n - w].iter().zip(&x[w..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        tau += ck / c0;
        if w as f64 >= SOKAL_C * tau {
            break;
        }
        w += 1;
    }
    if (n as f64) < 50.0 * tau {
        return Err(Error::SeriesTooShort(format!("{n} samples for tau = {tau:.3}")));
    }
    Ok(tau)
}

/// Projected TV estimate with a bootstrap percentile interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectedTv {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn quantile_edges(pooled: &mut [f64], bins: usize) -> Vec<f64> {
    pooled.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = (1..bins).map(|k| pooled[k * pooled.len() / bins]).collect();
    edges.dedup();
    edges
}

fn histogram_tv(a: &[f64], b: &[f64], edges: &[f64]) -> f64 {
    let hist = |x: &[f64]| {
        let mut h = vec![0.0; edges.len() + 1];
        for &v in x {
            h[edges.partition_point(|&e| e <= v)] += 1.0 / x.len() as f64;
        }
        h
    };
    let (ha, hb) = (hist(a), hist(b));
    0.5 * ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn max_tv(a: &[Vec<f64>], b: &[Vec<f64>], ia: &[usize], ib: &[usize]) -> f64 {
    let mut best = 0.0f64;
    for (pa, pb) in a.iter().zip(b) {
        let xa: Vec<f64> = ia.iter().map(|&i| pa[i]).collect();
        let xb: Vec<f64> = ib.iter().map(|&i| pb[i]).collect();
        let bins = ((xa.len().min(xb.len()) as f64).cbrt().ceil() as usize).max(2);
        let mut pooled = [xa.as_slice(), xb.as_slice()].concat();
        let edges = quantile_edges(&mut pooled, bins);
        best = best.max(histogram_tv(&xa, &xb, &edges));
    }
    best
}

/// Lower bound on the TV distance between two ensembles: the maximum over
/// projections of the histogram TV of the projected samples, with
/// `n_boot` bootstrap resamples for a 95% interval. Bins are pooled
/// quantiles, `⌈n^{1/3}⌉` of them.
pub fn projected_tv<T>(
    ensemble_a: &[T],
    ensemble_b: &[T],
    projections: &[&dyn Fn(&T) -> f64],
    n_boot: usize,
    streams: StreamFactory,
) -> Result<ProjectedTv> {
    if projections.is_empty() {
        return Err(Error::InvalidArgument("projection list is empty".into()));
    }
    if ensemble_a.is_empty() || ensemble_b.is_empty() {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    let pa: Vec<Vec<f64>> = projections.iter().map(|f| ensemble_a.iter().map(|x| f(x)).collect()).collect();
    let pb: Vec<Vec<f64>> = projections.iter().map(|f| ensemble_b.iter().map(|x| f(x)).collect()).collect();
    let ia: Vec<usize> = (0..ensemble_a.len()).collect();
    let ib: Vec<usize> = (0..ensemble_b.len()).collect();
    let estimate = max_tv(&pa, &pb, &ia, &ib);
    let mut rng = streams.stream(&[tag::BOOTSTRAP]);
    let mut boots: Vec<f64> = (0..n_boot)
        .map(|_| {
            let ra: Vec<usize> = (0..ia.len()).map(|_| rng.gen_range(0..ia.len())).collect();
            let rb: Vec<usize> = (0..ib.len()).map(|_| rng.gen_range(0..ib.len())).collect();
            max_tv(&pa, &pb, &ra, &rb)
        })
        .collect();
    boots.sort_by(f64::total_cmp);
    let pick = |q: f64| if boots.is_empty() { estimate } else { boots[((boots.len() - 1) as f64 * q).round() as usize] };
    Ok(ProjectedTv { estimate, ci_low: pick(0.025), ci_high: pick(0.975) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Warn => "WARN",
            Verdict::Fail => "FAIL",
        }
    }
}

/// One-sided threshold whose family-wise tail over `m` tests equals the
/// single-test tail beyond `sigmas` standard errors.
pub fn bonferroni_threshold(sigmas: f64, m: usize) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    let tail = 1.0 - n.cdf(sigmas);
    n.inverse_cdf(1.0 - tail / m.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatRow {
    pub battery: String,
    pub statistic: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub verdict: Verdict,
}

/// Rows of one battery plus its overall verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatteryReport {
    pub battery: String,
    pub rows: Vec<StatRow>,
    pub fail_threshold: f64,
    pub warn_threshold: f64,
    pub verdict: Verdict,
}

impl BatteryReport {
    /// Assigns verdicts to `(statistic, estimate, se)` triples where the
    /// estimate should be `≥ 0`.
    pub fn from_estimates(battery: &str, stats: Vec<(String, f64, f64)>) -> Self {
        let m = stats.len();
        let fail_threshold = bonferroni_threshold(3.0, m);
        let warn_threshold = bonferroni_threshold(2.0, m);
        let rows: Vec<StatRow> = stats
            .into_iter()
            .map(|(statistic, estimate, se)| {
                let z = if se > 0.0 {
                    estimate / se
                } else if estimate < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    0.0
                };
                let verdict = if z < -fail_threshold {
                    Verdict::Fail
                } else if z < -warn_threshold {
                    Verdict::Warn
                } else {
                    Verdict::Pass
                };
                StatRow { battery: battery.to_string(), statistic, estimate, se, z, verdict }
            })
            .collect();
        let verdict = rows.iter().map(|r| r.verdict).max_by_key(|v| *v as u8).unwrap_or(Verdict::Pass);
        Self { battery: battery.to_string(), rows, fail_threshold, warn_threshold, verdict }
    }

    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| r.verdict == Verdict::Fail).count()
    }
}

/// Equilibrium samples of every vertex, taken every `spacing` time units
/// after `burn_in`.
pub fn equilibrium_samples(
    graph: &SiteGraph,
    params: &ModelParams,
    bc: TimeBc,
    n_samples: usize,
    burn_in: f64,
    spacing: f64,
    streams: StreamFactory,
) -> Result<Vec<Vec<Trajectory>>> {
    let dyns = Dynamics::new(graph, params, bc, Schedule::full(), streams)?;
    let mut state = dyns.start(SpinConfigMap::uniform(graph, Sign::Plus, params.beta)?)?;
    let mut out = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        dyns.advance(&mut state, burn_in + k as f64 * spacing)?;
        out.push(state.config.trajectories().to_vec());
    }
    Ok(out)
}

const N_BATCHES: usize = 50;

fn mean_se(series: &[f64]) -> Result<(f64, f64)> {
    let bm = batch_mean(series, N_BATCHES)?;
    Ok((bm.mean, bm.se))
}

/// FKG: `Cov(f(σ_x), g(σ_y)) ≥ 0` for all pairs of suite functions and all
/// pairs of free vertices, under the equilibrium measure.
pub fn fkg_battery(
    graph: &SiteGraph,
    params: &ModelParams,
    bc: TimeBc,
    n_samples: usize,
    streams: StreamFactory,
) -> Result<BatteryReport> {
    let samples = equilibrium_samples(graph, params, bc, n_samples, 10.0, 1.0, streams)?;
    let suite = increasing_function_suite();
    let free = graph.free_vertices();
    let cols: Vec<(usize, usize, Vec<f64>)> = free
        .iter()
        .flat_map(|&x| (0..suite.len()).map(move |i| (x, i)))
        .map(|(x, i)| (x, i, samples.iter().map(|s| suite[i].eval(&s[x])).collect()))
        .collect();
    let mut stats = Vec::new();
    for (a, (x, i, fa)) in cols.iter().enumerate() {
        for (y, j, fb) in &cols[a..] {
            let ma = fa.iter().sum::<f64>() / fa.len() as f64;
            let mb = fb.iter().sum::<f64>() / fb.len() as f64;
            let prod: Vec<f64> = fa.iter().zip(fb).map(|(u, v)| (u - ma) * (v - mb)).collect();
            let (cov, se) = mean_se(&prod)?;
            stats.push((format!("cov({}@{x},{}@{y})", suite[*i].name, suite[*j].name), cov, se));
        }
    }
    Ok(BatteryReport::from_estimates("fkg", stats))
}

/// Independent single-site draws of every suite statistic.
fn site_suite_series(
    params: &ModelParams,
    bc: TimeBc,
    n: usize,
    suite: &[IncreasingFn],
    streams: StreamFactory,
) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::with_capacity(n); suite.len()];
    for k in 0..n as u64 {
        let mut rng = streams.stream(&[tag::SAMPLE, k]);
        let t = sample_site(&params.h, params, bc.endpoint(), &mut rng)?;
        for (o, f) in out.iter_mut().zip(suite) {
            o.push(f.eval(&t));
        }
    }
    Ok(out)
}

/// Field monotonicity on a single site: `μ_{h+δ}(f) − μ_h(f) ≥ 0` over
/// the suite.
pub fn monotone_field_battery(
    params: &ModelParams,
    delta: f64,
    bc: TimeBc,
    n_samples: usize,
    streams: StreamFactory,
) -> Result<BatteryReport> {
    let suite = increasing_function_suite();
    let shifted = ModelParams::with_field(params.lambda, params.h.add(&crate::PiecewiseField::constant(delta, params.beta)?)?)?;
    let lo = site_suite_series(params, bc, n_samples, &suite, streams.child(&[0]))?;
    let hi = site_suite_series(&shifted, bc, n_samples, &suite, streams.child(&[1]))?;
    let mut stats = Vec::new();
    for (k, f) in suite.iter().enumerate() {
        let (ml, sl) = mean_se(&lo[k])?;
        let (mh, sh) = mean_se(&hi[k])?;
        stats.push((f.name.clone(), mh - ml, sl.hypot(sh)));
    }
    Ok(BatteryReport::from_estimates("monotone_field", stats))
}

/// Boundary monotonicity on a `b`-ary tree: equilibrium suite means under
/// the plus boundary dominate those under the minus boundary at every free
/// vertex.
pub fn monotone_bc_battery(
    b: usize,
    depth: usize,
    params: &ModelParams,
    bc: TimeBc,
    n_samples: usize,
    streams: StreamFactory,
) -> Result<BatteryReport> {
    let suite = increasing_function_suite();
    let plus = build_tree(b, depth, &BoundaryKind::Plus, params.beta, None)?;
    let minus = build_tree(b, depth, &BoundaryKind::Minus, params.beta, None)?;
    let sp = equilibrium_samples(&plus.graph, params, bc, n_samples, 10.0, 1.0, streams.child(&[0]))?;
    let sm = equilibrium_samples(&minus.graph, params, bc, n_samples, 10.0, 1.0, streams.child(&[1]))?;
    let mut stats = Vec::new();
    for x in 0..plus.n_free {
        for f in &suite {
            let a: Vec<f64> = sp.iter().map(|s| f.eval(&s[x])).collect();
            let c: Vec<f64> = sm.iter().map(|s| f.eval(&s[x])).collect();
            let (ma, sa) = mean_se(&a)?;
            let (mc, sc) = mean_se(&c)?;
            stats.push((format!("{}@{x}", f.name), ma - mc, sa.hypot(sc)));
        }
    }
    Ok(BatteryReport::from_estimates("monotone_bc", stats))
}

/// Censoring by simulation on a `b`-ary tree with plus boundary, started
/// from all-plus: the chain whose vertices below the root are censored until
/// `release` stays stochastically above the uncensored chain. Both chains
/// share clocks and update randomness, and the paired differences of the
/// suite means are tested at each time in `ts`.
pub fn censoring_mc_battery(
    b: usize,
    depth: usize,
    params: &ModelParams,
    release: f64,
    ts: &[f64],
    n_reps: usize,
    streams: StreamFactory,
) -> Result<BatteryReport> {
    let tree = build_tree(b, depth, &BoundaryKind::Plus, params.beta, None)?;
    let g = &tree.graph;
    let censored = Schedule::new(vec![(0.0, ActiveSet::Only([0].into())), (release, ActiveSet::All)])?;
    let suite = increasing_function_suite();
    // diffs[time][vertex][fn][rep]
    let mut diffs = vec![vec![vec![Vec::with_capacity(n_reps); suite.len()]; tree.n_free]; ts.len()];
    for r in 0..n_reps as u64 {
        let f = streams.child(&[tag::REPLICA, r]);
        let start = SpinConfigMap::uniform(g, Sign::Plus, params.beta)?;
        let da = Dynamics::new(g, params, TimeBc::Free, censored.clone(), f)?;
        let db = Dynamics::new(g, params, TimeBc::Free, Schedule::full(), f)?;
        let mut sa: ChainState = da.start(start.clone())?;
        let mut sb: ChainState = db.start(start)?;
        for (k, &t) in ts.iter().enumerate() {
            da.advance(&mut sa, t)?;
            db.advance(&mut sb, t)?;
            for x in 0..tree.n_free {
                for (i, fun) in suite.iter().enumerate() {
                    diffs[k][x][i].push(fun.eval(sa.config.get(x)) - fun.eval(sb.config.get(x)));
                }
            }
        }
    }
    let mut stats = Vec::new();
    for (k, &t) in ts.iter().enumerate() {
        for x in 0..tree.n_free {
            for (i, fun) in suite.iter().enumerate() {
                let d = &diffs[k][x][i];
                let n = d.len() as f64;
                let m = d.iter().sum::<f64>() / n;
                let v = d.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
                stats.push((format!("{}@{x},t={t}", fun.name), m, (v / n).sqrt()));
            }
        }
    }
    Ok(BatteryReport::from_estimates("censoring_mc", stats))
}

/// Monte Carlo magnetization gap along the leftmost spine of a tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaMcRow {
    pub depth: usize,
    /// `μ(σ_z•1 | σ_r ≡ +) − μ(σ_z•1 | σ_r ≡ −)`.
    pub gap: f64,
    pub se: f64,
}

/// Continuum estimate of the conditional magnetization gaps: the root is
/// frozen to the constant `+` (then `−`) path, equilibrium samples are taken
/// from the rest of the tree, and the spine vertex at each depth is
/// averaged. Returns the rows and the geometric rate fitted over depths
/// `>= 2` with a positive gap.
pub fn kappa_mc(
    b: usize,
    depth: usize,
    boundary: &BoundaryKind,
    params: &ModelParams,
    n_samples: usize,
    burn_in: f64,
    spacing: f64,
    streams: StreamFactory,
) -> Result<(Vec<KappaMcRow>, f64)> {
    let tree = build_tree(b, depth, boundary, params.beta, None)?;
    let spine = tree.spine();
    let mut means = Vec::new();
    for (k, sign) in [Sign::Plus, Sign::Minus].into_iter().enumerate() {
        let pin = crate::graph::BoundarySpec::new().with(0, Trajectory::constant(sign, params.beta)?);
        let g = tree.graph.freeze(&pin)?;
        let samples = equilibrium_samples(&g, params, TimeBc::Free, n_samples, burn_in, spacing, streams.child(&[k as u64]))?;
        let per_depth = spine
            .iter()
            .enumerate()
            .map(|(d, &v)| {
                if d == 0 {
                    return Ok((sign.value() * params.beta, 0.0));
                }
                let series: Vec<f64> = samples.iter().map(|s| s[v].dot_one()).collect();
                mean_se(&series)
            })
            .collect::<Result<Vec<_>>>()?;
        means.push(per_depth);
    }
    let rows: Vec<KappaMcRow> = (0..spine.len())
        .map(|d| {
            let (p, sp) = means[0][d];
            let (m, sm) = means[1][d];
            KappaMcRow { depth: d, gap: p - m, se: (sp * sp + sm * sm).sqrt() }
        })
        .collect();
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.depth >= 2 && r.gap > 0.0).map(|r| (r.depth as f64, r.gap)).collect();
    Ok((rows, crate::cavity::fit_rate(&pts)))
}
