//! Exact sampling from the single-site tilted measure `e^{h•σ} dφ / Z`.
//!
//! Endpoints are drawn from the transfer kernels, interior breakpoint signs by
//! forward sampling against suffix kernels, and each constant-field bridge by
//! recursive bisection down to a short piece that is then sampled exactly by
//! uniformization of the Feynman–Kac semigroup.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::trajectory::{ModelParams, Piecewise, PiecewiseField, Sign, Trajectory};
use crate::transfer::{endpoint_law_from_kernel, segment_kernels, EndpointCondition, IntervalKernel};

/// Pieces with `Ω·L` above this are bisected before uniformization.
const UNIFORMIZATION_CAP: f64 = 8.0;
const MAX_JUMPS: usize = 400;

/// Draw from the reference measure `φ`: Poisson(λβ) flips at uniform times
/// and a uniform initial sign.
pub fn sample_free_reference<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> Trajectory {
    let beta = params.beta;
    let sign = if rng.gen::<bool>() { Sign::Plus } else { Sign::Minus };
    let n = if params.lambda > 0.0 {
        Poisson::new(params.lambda * beta).unwrap().sample(rng) as usize
    } else {
        0
    };
    let times: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * beta).collect();
    Trajectory::from_flip_times(sign, times, beta).expect("times lie in [0, beta)")
}

/// Exact draw from the tilted single-site measure under `bc`.
pub fn sample_site<R: Rng + ?Sized>(
    field: &PiecewiseField,
    params: &ModelParams,
    bc: EndpointCondition,
    rng: &mut R,
) -> Result<Trajectory> {
    if field.beta() != params.beta {
        return Err(Error::BetaMismatch(field.beta(), params.beta));
    }
    sample_path(field, params.lambda, bc, rng)
}

fn pick2<R: Rng + ?Sized>(w_plus: f64, w_minus: f64, rng: &mut R) -> Result<Sign> {
    let z = w_plus + w_minus;
    if !(z > 0.0) {
        return Err(Error::ZeroProbability);
    }
    Ok(if rng.gen::<f64>() * z < w_plus { Sign::Plus } else { Sign::Minus })
}

pub(crate) fn sample_path<R: Rng + ?Sized>(
    field: &PiecewiseField,
    lambda: f64,
    bc: EndpointCondition,
    rng: &mut R,
) -> Result<Trajectory> {
    let segs: Vec<_> = field.segments().collect();
    let kernels = segment_kernels(field, lambda);
    let m = kernels.len();
    let mut suffix = vec![IntervalKernel::identity(); m + 1];
    for i in (0..m).rev() {
        suffix[i] = kernels[i].then(&suffix[i + 1]);
    }
    let law = endpoint_law_from_kernel(&suffix[0], bc)?;
    let (s0, s_end) = law.sample_with(rng.gen::<f64>());

    let mut flips = Vec::new();
    let mut x = s0;
    for (i, seg) in segs.iter().enumerate() {
        let y = if i + 1 == m {
            s_end
        } else {
            let k = &kernels[i];
            let s = &suffix[i + 1];
            pick2(
                k.scaled(x, Sign::Plus) * s.scaled(Sign::Plus, s_end),
                k.scaled(x, Sign::Minus) * s.scaled(Sign::Minus, s_end),
                rng,
            )?
        };
        sample_bridge(seg.value, lambda, seg.start, seg.len(), x, y, rng, &mut flips)?;
        x = y;
    }
    Trajectory::from_flip_times(s0, flips, field.beta())
}

/// Appends the flips of a bridge from `a` to `e` over `[offset, offset+len]`
/// under constant field `h`.
#[allow(clippy::too_many_arguments)]
pub fn sample_bridge<R: Rng + ?Sized>(
    h: f64,
    lambda: f64,
    offset: f64,
    len: f64,
    a: Sign,
    e: Sign,
    rng: &mut R,
    flips: &mut Vec<f64>,
) -> Result<()> {
    if lambda == 0.0 || len == 0.0 {
        return if a == e { Ok(()) } else { Err(Error::ZeroProbability) };
    }
    let omega = lambda + 2.0 * h.abs();
    if omega * len > UNIFORMIZATION_CAP {
        let half = IntervalKernel::constant(h, lambda, len / 2.0);
        let mid = pick2(
            half.scaled(a, Sign::Plus) * half.scaled(Sign::Plus, e),
            half.scaled(a, Sign::Minus) * half.scaled(Sign::Minus, e),
            rng,
        )?;
        sample_bridge(h, lambda, offset, len / 2.0, a, mid, rng, flips)?;
        return sample_bridge(h, lambda, offset + len / 2.0, len / 2.0, mid, e, rng, flips);
    }

    // exp(L·M) = e^{ΩL} Σ_n Pois(n; ΩL) Pⁿ with M = A + |h|I ≥ 0, P = M/Ω.
    let c = h.abs();
    let p = [[(h + c) / omega, lambda / omega], [lambda / omega, (c - h) / omega]];
    let mut cols: Vec<[f64; 2]> = Vec::with_capacity(16);
    let mut v = [0.0; 2];
    v[e.index()] = 1.0;
    cols.push(v);
    let k = IntervalKernel::constant(h, lambda, len);
    let total = k.scaled(a, e) * (k.log_scale() - c * len).exp();
    let target = rng.gen::<f64>() * total;
    let ol = omega * len;
    let mut pois = (-ol).exp();
    let mut cum = pois * v[a.index()];
    let mut n = 0;
    while cum <= target && n < MAX_JUMPS {
        n += 1;
        pois *= ol / n as f64;
        let prev = cols[n - 1];
        let next = [p[0][0] * prev[0] + p[0][1] * prev[1], p[1][0] * prev[0] + p[1][1] * prev[1]];
        cols.push(next);
        cum += pois * next[a.index()];
    }
    // Rounding can leave the target just out of reach; fall back to the
    // largest admissible jump count.
    while cols[n][a.index()] == 0.0 {
        n -= 1;
    }

    let mut times: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * len).collect();
    times.sort_by(f64::total_cmp);
    let mut x = a;
    for (k, &t) in times.iter().enumerate() {
        let rest = &cols[n - k - 1];
        let row = p[x.index()];
        let y = pick2(row[0] * rest[0], row[1] * rest[1], rng)?;
        if y != x {
            flips.push(offset + t);
        }
        x = y;
    }
    debug_assert_eq!(x, e);
    Ok(())
}

/// Monotone coupling of `μ(·|σ(β)=+)` and `μ(·|σ(β)=−)`.
///
/// Independent draws give last-flip times `T⁺`, `T⁻`; with `T = max`, both
/// outputs share one path on `[0, T)` conditioned on `σ(T−) = ε` (`ε = +`
/// when `T⁺ < T⁻`), and are constant `+` / `−` after `T`.
pub fn monotone_endpoint_coupling<R: Rng + ?Sized>(
    field: &PiecewiseField,
    params: &ModelParams,
    rng: &mut R,
) -> Result<(Trajectory, Trajectory)> {
    if !(params.lambda > 0.0) {
        return Err(Error::InvalidParams("coupling needs lambda > 0".into()));
    }
    let beta = params.beta;
    let t_plus = sample_site(field, params, EndpointCondition::End(Sign::Plus), rng)?.last_flip();
    let t_minus = sample_site(field, params, EndpointCondition::End(Sign::Minus), rng)?.last_flip();
    let t = t_plus.max(t_minus);
    if t == 0.0 {
        return Ok((Trajectory::constant(Sign::Plus, beta)?, Trajectory::constant(Sign::Minus, beta)?));
    }
    let eps = if t_plus < t_minus { Sign::Plus } else { Sign::Minus };
    let prefix = sample_path(&field.restrict_prefix(t)?, params.lambda, EndpointCondition::End(eps), rng)?;
    let mut up = prefix.flips().to_vec();
    let mut down = up.clone();
    match eps {
        Sign::Plus => down.push(t),
        Sign::Minus => up.push(t),
    }
    Ok((
        Trajectory::new(prefix.initial_sign(), up, beta)?,
        Trajectory::new(prefix.initial_sign(), down, beta)?,
    ))
}

/// Named increasing statistic of a trajectory.
pub struct IncreasingFn {
    pub name: String,
    pub f: Box<dyn Fn(&Trajectory) -> f64 + Send + Sync>,
}

impl IncreasingFn {
    pub fn eval(&self, t: &Trajectory) -> f64 {
        (self.f)(t)
    }
}

const GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn at(t: &Trajectory, frac: f64) -> f64 {
    t.evaluate(frac * t.beta()).expect("grid point inside [0, beta]").value()
}

/// Fixed library of increasing statistics shared by the monotonicity and
/// FKG tests. Time points are fractions of the trajectory's `beta`.
pub fn increasing_function_suite() -> Vec<IncreasingFn> {
    let mut v = vec![IncreasingFn { name: "dot_one".into(), f: Box::new(|t| t.dot_one()) }];
    for frac in GRID {
        v.push(IncreasingFn { name: format!("sigma_at_{frac}"), f: Box::new(move |t| at(t, frac)) });
    }
    v.push(IncreasingFn {
        name: "all_plus_on_grid".into(),
        f: Box::new(|t| if GRID.iter().all(|&g| at(t, g) > 0.0) { 1.0 } else { -1.0 }),
    });
    v.push(IncreasingFn {
        name: "min_on_grid".into(),
        f: Box::new(|t| GRID.iter().map(|&g| at(t, g)).fold(1.0, f64::min)),
    });
    v.push(IncreasingFn {
        name: "f_plus".into(),
        f: Box::new(|t| (t.initial_sign() == Sign::Plus && t.final_sign() == Sign::Plus) as u8 as f64),
    });
    v.push(IncreasingFn {
        name: "neg_f_minus".into(),
        f: Box::new(|t| -((t.initial_sign() == Sign::Minus && t.final_sign() == Sign::Minus) as u8 as f64)),
    });
    v
}
