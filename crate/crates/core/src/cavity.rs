//! Discretized cavity equation on `b`-ary trees.
//!
//! A site is an `N`-slice sign pattern (bit `k` set = `+` on slice `k`).
//! Measures on patterns are `Vec<f64>` of length `2^N`; kernels are one
//! measure per parent pattern. The sum of `r` neighbour patterns lives on the
//! lattice `{−r, −r+2, …, r}^N`, indexed in radix `r+1` with digit
//! `(s_k + r)/2` for slice `k`.
//!
//! Tree marginals have the form `ν^η(σ) = g(σ) e^{Δ η·σ} / Z(η)` with
//! `Z(η) = Σ_σ g(σ) e^{Δ η·σ}`, where `g` is the unnormalized weight of
//! the vertex and its subtree. The recursion `ν_{n+1} = Φ_{ν_n,…,ν_n}` is
//! then `g_{n+1}(σ) = w(σ) e^{Δ h·σ} Z_n(σ)^b`, and the resampling operator
//! with these kernels factors through transforms between patterns and the
//! sum lattice, which is what makes `N = 8` cheap.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::glauber::{SliceSpec, TimeBc};
use crate::order;
use crate::rng::{tag, StreamFactory};

/// Lipschitz constant of single-site measures in the field.
pub fn lipschitz_gamma() -> f64 {
    1.0 / 3f64.ln()
}

/// Memory budget for the explicit `2^N × (b+1)^N` lattice table.
pub const MEMORY_GUARD_BYTES: usize = 64 << 20;

pub type GridMeasure = Vec<f64>;
pub type GridKernel = Vec<Vec<f64>>;

/// Total variation distance, half the L1 distance.
pub fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// TV norm `|ρ|(Σ)/2` of a signed measure.
pub fn tv_norm(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|x| x.abs()).sum::<f64>()
}

pub use order::{stoch_leq, stoch_positive};

fn slice_sign(pattern: usize, k: usize) -> f64 {
    if pattern >> k & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Discretized single-site model shared by all cavity computations.
#[derive(Debug, Clone)]
pub struct CavityModel {
    pub slices: SliceSpec,
    pub beta: f64,
    pub lambda: f64,
    pub h: f64,
    pub b: usize,
    /// Flip weights `Π (p or 1−p)` per pattern.
    pub w: Vec<f64>,
    /// Reference measure `φ`: `w` normalized.
    pub phi: Vec<f64>,
    /// `e^{Δ(N − 2j)}` for Hamming distance `j`.
    pair: Vec<f64>,
}

impl CavityModel {
    pub fn new(n: usize, beta: f64, lambda: f64, h: f64, b: usize) -> Result<Self> {
        Self::with_bc(n, beta, lambda, h, b, TimeBc::Free)
    }

    pub fn with_bc(n: usize, beta: f64, lambda: f64, h: f64, b: usize, bc: TimeBc) -> Result<Self> {
        if n > 12 {
            return Err(Error::StateSpaceTooLarge(format!("grid N = {n} exceeds 12")));
        }
        if b == 0 {
            return Err(Error::InvalidArgument("branching number must be >= 1".into()));
        }
        if !(beta > 0.0 && beta.is_finite()) || !(lambda >= 0.0 && lambda.is_finite()) || !h.is_finite() {
            return Err(Error::InvalidParams(format!("beta={beta}, lambda={lambda}, h={h}")));
        }
        let slices = SliceSpec::new(n, beta, lambda, bc)?;
        let w: Vec<f64> = (0..slices.n_states()).map(|s| slices.log_flip_weight(s).exp()).collect();
        let z: f64 = w.iter().sum();
        let phi = w.iter().map(|x| x / z).collect();
        let d = slices.delta;
        let pair = (0..=n).map(|j| (d * (n as f64 - 2.0 * j as f64)).exp()).collect();
        Ok(Self { slices, beta, lambda, h, b, w, phi, pair })
    }

    pub fn n(&self) -> usize {
        self.slices.n
    }

    pub fn n_states(&self) -> usize {
        self.slices.n_states()
    }

    pub fn delta(&self) -> f64 {
        self.slices.delta
    }

    /// Same parameters on a different grid.
    pub fn regrid(&self, n: usize) -> Result<Self> {
        Self::with_bc(n, self.beta, self.lambda, self.h, self.b, self.slices.bc)
    }

    /// `σ•1 = Δ Σ_k σ_k`.
    pub fn dot_one(&self, pattern: usize) -> f64 {
        self.delta() * (2.0 * pattern.count_ones() as f64 - self.n() as f64)
    }

    /// `e^{Δ a·b}` for two patterns.
    pub fn pair_weight(&self, a: usize, b: usize) -> f64 {
        self.pair[(a ^ b).count_ones() as usize]
    }

    /// `Σ_σ w(σ) e^{Δ F·σ}` by a two-state transfer sweep.
    pub fn partition(&self, f: &[f64]) -> f64 {
        let (p, d) = (self.slices.p, self.delta());
        let n = self.n();
        let step = |v: [f64; 2], k: usize| -> [f64; 2] {
            let e = [(-d * f[k]).exp(), (d * f[k]).exp()];
            [(v[0] * (1.0 - p) + v[1] * p) * e[0], (v[0] * p + v[1] * (1.0 - p)) * e[1]]
        };
        if self.slices.bc == TimeBc::Periodic && n > 1 {
            let mut total = 0.0;
            for s0 in 0..2 {
                let mut v = [0.0; 2];
                v[s0] = if s0 == 1 { (d * f[0]).exp() } else { (-d * f[0]).exp() };
                for k in 1..n {
                    v = step(v, k);
                }
                total += v[s0] * (1.0 - p) + v[1 - s0] * p;
            }
            total
        } else {
            let mut v = [(-d * f[0]).exp(), (d * f[0]).exp()];
            for k in 1..n {
                v = step(v, k);
            }
            v[0] + v[1]
        }
    }

    /// Single-site law with per-slice field `h + f_k`.
    pub fn site_law(&self, f: &[f64]) -> GridMeasure {
        let full: Vec<f64> = f.iter().map(|x| x + self.h).collect();
        self.slices.site_law(&full)
    }

    fn lattice(&self, r: usize) -> Lattice {
        Lattice::new(self.n(), r)
    }

    /// `Σ_σ ρ(σ) e^{Δ s·σ}` for every `s` on the `r`-neighbour lattice.
    fn states_to_lattice(&self, f: &[f64], r: usize) -> Vec<f64> {
        let n = self.n();
        let d = self.delta();
        let mat: Vec<Vec<f64>> = (0..=r)
            .map(|j| (0..2).map(|bit| (d * (2.0 * j as f64 - r as f64) * (2.0 * bit as f64 - 1.0)).exp()).collect())
            .collect();
        let mut v = f.to_vec();
        let mut dims = vec![2; n];
        for k in 0..n {
            v = contract(&v, &dims, k, &mat);
            dims[k] = r + 1;
        }
        v
    }

    /// `Σ_s q(s) e^{Δ s·σ}` for every pattern `σ`.
    fn lattice_to_states(&self, q: &[f64], r: usize) -> Vec<f64> {
        let n = self.n();
        let d = self.delta();
        let mat: Vec<Vec<f64>> = (0..2)
            .map(|bit| (0..=r).map(|j| (d * (2.0 * j as f64 - r as f64) * (2.0 * bit as f64 - 1.0)).exp()).collect())
            .collect();
        let mut v = q.to_vec();
        let mut dims = vec![r + 1; n];
        for k in 0..n {
            v = contract(&v, &dims, k, &mat);
            dims[k] = 2;
        }
        v
    }

    /// `Zw(h + η + s)` for every `s` on the `b`-lattice.
    fn lattice_partitions(&self, eta: usize) -> Vec<f64> {
        let lat = self.lattice(self.b);
        let n = self.n();
        let mut f = vec![0.0; n];
        (0..lat.size)
            .map(|i| {
                for (k, fk) in f.iter_mut().enumerate() {
                    *fk = self.h + slice_sign(eta, k) + lat.value(i, k);
                }
                self.partition(&f)
            })
            .collect()
    }

    /// `w(σ) e^{Δ(h+η)·σ}`.
    fn prefactor(&self, eta: usize) -> Vec<f64> {
        let d = self.delta();
        (0..self.n_states())
            .map(|s| {
                let e: f64 = (0..self.n()).map(|k| (self.h + slice_sign(eta, k)) * slice_sign(s, k)).sum();
                self.w[s] * (d * e).exp()
            })
            .collect()
    }

    /// `Σ_s q(s) μ_{h+η+s}` for a (signed) weight `q` on the `b`-lattice.
    fn mixture(&self, eta: usize, q: &[f64], zw: &[f64]) -> GridMeasure {
        let scaled: Vec<f64> = q.iter().zip(zw).map(|(a, z)| a / z).collect();
        let t = self.lattice_to_states(&scaled, self.b);
        self.prefactor(eta).iter().zip(t).map(|(p, x)| p * x).collect()
    }
}

/// Mixed-radix lattice of `r`-neighbour sums.
#[derive(Debug, Clone, Copy)]
struct Lattice {
    n: usize,
    r: usize,
    size: usize,
}

impl Lattice {
    fn new(n: usize, r: usize) -> Self {
        Self { n, r, size: (r + 1).pow(n as u32) }
    }

    fn digit(&self, i: usize, k: usize) -> usize {
        i / (self.r + 1).pow(k as u32) % (self.r + 1)
    }

    fn value(&self, i: usize, k: usize) -> f64 {
        2.0 * self.digit(i, k) as f64 - self.r as f64
    }

    /// Index in the `r+1` lattice of `s + σ`, digit by digit.
    fn shifted_index(&self, i: usize, pattern: usize) -> usize {
        let (old, new) = (self.r + 1, self.r + 2);
        let (mut idx, mut mul, mut rest) = (0, 1, i);
        for k in 0..self.n {
            idx += (rest % old + (pattern >> k & 1)) * mul;
            rest /= old;
            mul *= new;
        }
        idx
    }
}

/// Contracts digit `k` of a mixed-radix vector with `mat` (new × old).
fn contract(v: &[f64], dims: &[usize], k: usize, mat: &[Vec<f64>]) -> Vec<f64> {
    let inner: usize = dims[..k].iter().product();
    let outer: usize = dims[k + 1..].iter().product();
    let (d_old, d_new) = (dims[k], mat.len());
    let mut out = vec![0.0; inner * d_new * outer];
    for o in 0..outer {
        for (i_new, row) in mat.iter().enumerate() {
            let dst = &mut out[(o * d_new + i_new) * inner..(o * d_new + i_new + 1) * inner];
            for (i_old, &m) in row.iter().enumerate().take(d_old) {
                let src = &v[(o * d_old + i_old) * inner..(o * d_old + i_old + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += m * s;
                }
            }
        }
    }
    out
}

/// Distribution of `s + σ` for `s` on the `r`-lattice with weights `lat`
/// and `σ` with weights `states`.
fn convolve(lat: &[f64], r: usize, states: &[f64], n: usize) -> Vec<f64> {
    let l = Lattice::new(n, r);
    let mut out = vec![0.0; Lattice::new(n, r + 1).size];
    // Offset of pattern σ in radix r+2.
    let rebased: Vec<usize> = (0..states.len())
        .map(|p| (0..n).map(|k| (p >> k & 1) * (r + 2).pow(k as u32)).sum())
        .collect();
    for (i, &a) in lat.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let base = l.shifted_index(i, 0);
        for (p, &s) in states.iter().enumerate() {
            out[base + rebased[p]] += a * s;
        }
    }
    out
}

/// Caches single-site laws by integer sum-field key.
#[derive(Debug, Default)]
pub struct SiteLawCache {
    map: HashMap<Vec<i32>, GridMeasure>,
}

impl SiteLawCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Law with per-slice field `h + s_k`; `s_k` must lie in `[−b−1, b+1]`.
    pub fn get(&mut self, model: &CavityModel, s: &[i32]) -> Result<&GridMeasure> {
        let bound = model.b as i32 + 1;
        if s.len() != model.n() || s.iter().any(|v| v.abs() > bound) {
            return Err(Error::InvalidArgument(format!("sum field {s:?} outside the admissible range")));
        }
        if !self.map.contains_key(s) {
            let f: Vec<f64> = s.iter().map(|&v| v as f64).collect();
            self.map.insert(s.to_vec(), model.site_law(&f));
        }
        Ok(&self.map[s])
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Single-site law for an integer sum field (neighbours plus parent).
pub fn grid_single_site(model: &CavityModel, s: &[i32]) -> Result<GridMeasure> {
    SiteLawCache::new().get(model, s).cloned()
}

/// `R^η_{ρ_1,…,ρ_b}` for arbitrary (possibly signed) kernels, through the
/// explicit table `P(s | σ_0)` on the `b`-lattice.
#[derive(Debug, Clone)]
pub struct ResamplingOperator<'a> {
    model: &'a CavityModel,
    /// `P[σ_0][s]`.
    table: DMatrix<f64>,
}

impl<'a> ResamplingOperator<'a> {
    pub fn new(model: &'a CavityModel, kernels: &[&GridKernel]) -> Result<Self> {
        if kernels.len() != model.b {
            return Err(Error::InvalidArgument(format!("need {} kernels, got {}", model.b, kernels.len())));
        }
        let ns = model.n_states();
        if kernels.iter().any(|k| k.len() != ns || k.iter().any(|r| r.len() != ns)) {
            return Err(Error::InvalidArgument("kernel shape does not match the grid".into()));
        }
        let size = model.lattice(model.b).size;
        let bytes = size.saturating_mul(ns).saturating_mul(8);
        if bytes > MEMORY_GUARD_BYTES {
            return Err(Error::StateSpaceTooLarge(format!("lattice table needs {bytes} bytes")));
        }
        let mut table = DMatrix::zeros(ns, size);
        for s0 in 0..ns {
            let mut lat = vec![1.0];
            for (r, k) in kernels.iter().enumerate() {
                lat = convolve(&lat, r, &k[s0], model.n());
            }
            for (j, v) in lat.into_iter().enumerate() {
                table[(s0, j)] = v;
            }
        }
        Ok(Self { model, table })
    }

    /// `q(s) = Σ_{σ_0} ρ(σ_0) P(s | σ_0)`.
    fn lattice_weights(&self, rho: &[f64]) -> Vec<f64> {
        let r = nalgebra::DVector::from_column_slice(rho);
        (self.table.transpose() * r).iter().copied().collect()
    }

    pub fn apply(&self, eta: usize, rho: &[f64]) -> GridMeasure {
        let zw = self.model.lattice_partitions(eta);
        self.apply_with(eta, rho, &zw)
    }

    fn apply_with(&self, eta: usize, rho: &[f64], zw: &[f64]) -> GridMeasure {
        self.model.mixture(eta, &self.lattice_weights(rho), zw)
    }

    /// Matrix of `R^η` acting on row vectors: row `σ_0` is `R^η(δ_{σ_0})`.
    pub fn matrix(&self, eta: usize) -> DMatrix<f64> {
        let ns = self.model.n_states();
        let zw = self.model.lattice_partitions(eta);
        let mut m = DMatrix::zeros(ns, ns);
        let mut e = vec![0.0; ns];
        for s0 in 0..ns {
            e[s0] = 1.0;
            for (j, v) in self.apply_with(eta, &e, &zw).into_iter().enumerate() {
                m[(s0, j)] = v;
            }
            e[s0] = 0.0;
        }
        m
    }
}

/// `apply_R` for one call; build a [`ResamplingOperator`] to reuse the table.
pub fn apply_r(model: &CavityModel, eta: usize, kernels: &[&GridKernel], rho: &[f64]) -> Result<GridMeasure> {
    Ok(ResamplingOperator::new(model, kernels)?.apply(eta, rho))
}

/// Fixed point of `R^η_{ρ_1,…,ρ_b}` by iteration from the uniform measure.
/// Returns the fixed point and the number of applications before the TV
/// increment fell below `tol`.
pub fn solve_cavity(
    model: &CavityModel,
    eta: usize,
    kernels: &[&GridKernel],
    tol: f64,
    max_iters: usize,
) -> Result<(GridMeasure, usize)> {
    let op = ResamplingOperator::new(model, kernels)?;
    let zw = model.lattice_partitions(eta);
    let ns = model.n_states();
    let mut x = vec![1.0 / ns as f64; ns];
    for it in 0..max_iters {
        let y = op.apply_with(eta, &x, &zw);
        let step = tv(&x, &y);
        x = y;
        if step < tol {
            return Ok((x, it));
        }
    }
    Err(Error::NoConvergence(max_iters))
}

/// Leaf boundary below the deepest free level of a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LeafBoundary {
    Plus,
    Minus,
    Free,
}

impl LeafBoundary {
    pub fn from_kind(kind: &crate::graph::BoundaryKind) -> Result<Self> {
        match kind {
            crate::graph::BoundaryKind::Plus => Ok(Self::Plus),
            crate::graph::BoundaryKind::Minus => Ok(Self::Minus),
            crate::graph::BoundaryKind::Free => Ok(Self::Free),
            crate::graph::BoundaryKind::Custom(_) => {
                Err(Error::InvalidArgument("custom boundaries are not supported at grid scale".into()))
            }
        }
    }
}

/// Kernel `ν^η(σ) = g(σ) e^{Δ η·σ} / Z(η)` stored through `g` (scaled to
/// max 1) and `Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpKernel {
    pub g: Vec<f64>,
    pub z: Vec<f64>,
}

impl ExpKernel {
    fn from_g(model: &CavityModel, g: Vec<f64>) -> Self {
        let mx = g.iter().cloned().fold(0.0, f64::max);
        let g: Vec<f64> = g.into_iter().map(|x| x / mx).collect();
        let z = model.states_to_lattice(&g, 1);
        Self { g, z }
    }

    /// `ν_0`: all rows are `δ_+` (plus), `δ_−` (minus); the free boundary
    /// has `Z ≡ 1` and no row form.
    fn leaf(model: &CavityModel, boundary: LeafBoundary) -> Self {
        let ns = model.n_states();
        let mut g = vec![0.0; ns];
        match boundary {
            LeafBoundary::Plus => g[ns - 1] = 1.0,
            LeafBoundary::Minus => g[0] = 1.0,
            LeafBoundary::Free => return Self { g, z: vec![1.0; ns] },
        }
        let z = model.states_to_lattice(&g, 1);
        Self { g, z }
    }

    /// Row `η`.
    pub fn row(&self, model: &CavityModel, eta: usize) -> GridMeasure {
        (0..self.g.len()).map(|s| self.g[s] * model.pair_weight(eta, s) / self.z[eta]).collect()
    }

    pub fn to_kernel(&self, model: &CavityModel) -> GridKernel {
        (0..self.g.len()).map(|eta| self.row(model, eta)).collect()
    }

    /// `g' = w e^{Δh·} Z^b`: the vertex one level up.
    pub fn parent(&self, model: &CavityModel) -> Self {
        let d = model.delta();
        let g: Vec<f64> = (0..model.n_states())
            .map(|s| model.w[s] * (d * model.h * (2.0 * s.count_ones() as f64 - model.n() as f64)).exp() * self.z[s].powi(model.b as i32))
            .collect();
        Self::from_g(model, g)
    }
}

/// `‖ρ‖_{∞,X} = max_η ‖ρ^η‖_TV`.
pub fn norm_inf_x(k: &GridKernel) -> f64 {
    k.iter().map(|r| tv_norm(r)).fold(0.0, f64::max)
}

/// `‖ρ‖_{1,X} = Σ_η φ(η) ‖ρ^η‖_TV`.
pub fn norm_one_x(model: &CavityModel, k: &GridKernel) -> f64 {
    k.iter().zip(&model.phi).map(|(r, p)| p * tv_norm(r)).sum()
}

fn kernel_diff_inf(model: &CavityModel, a: &ExpKernel, b: &ExpKernel) -> f64 {
    (0..model.n_states()).map(|eta| tv(&a.row(model, eta), &b.row(model, eta))).fold(0.0, f64::max)
}

/// Sequence `ν_0 = δ_+, ν_{n+1} = Φ_{ν_n,…,ν_n}` with its limit.
#[derive(Debug, Clone)]
pub struct NuRecursion {
    pub nus: Vec<ExpKernel>,
    /// `‖ν_{n+1} − ν_n‖_{∞,X}` for each step.
    pub increments: Vec<f64>,
    pub converged: bool,
    pub limit: ExpKernel,
}

/// Runs the recursion until the increment is below `tol` or `n_max` steps.
pub fn nu_recursion(model: &CavityModel, n_max: usize, tol: f64) -> NuRecursion {
    let mut nus = vec![ExpKernel::leaf(model, LeafBoundary::Plus)];
    let mut increments = Vec::new();
    let mut converged = false;
    for _ in 0..n_max {
        let next = nus.last().unwrap().parent(model);
        let inc = kernel_diff_inf(model, nus.last().unwrap(), &next);
        increments.push(inc);
        nus.push(next);
        if inc < tol {
            converged = true;
            break;
        }
    }
    let limit = nus.last().unwrap().clone();
    NuRecursion { nus, increments, converged, limit }
}

/// Smallest ratio bound `ĉ` with `ĉ ≤ dν_n^η/dφ ≤ 1/ĉ` over `n ≥ 1`.
pub fn density_bound(model: &CavityModel, rec: &NuRecursion) -> f64 {
    let mut c = f64::INFINITY;
    for nu in &rec.nus[1..] {
        for eta in 0..model.n_states() {
            for (v, p) in nu.row(model, eta).iter().zip(&model.phi) {
                let r = v / p;
                c = c.min(r).min(1.0 / r);
            }
        }
    }
    c
}

/// Derivative `D` of the cavity solution at the fixed point `ν_∞`.
pub struct Derivative<'a> {
    model: &'a CavityModel,
    nu: ExpKernel,
    /// `G_r` on the `r`-lattice for `r = b−1` and `r = b`.
    g_bm1: Vec<f64>,
    g_b: Vec<f64>,
    /// `Zw(h + η + s)` per `η`.
    zw: Vec<Vec<f64>>,
    prefactors: Vec<Vec<f64>>,
    nu_rows: GridKernel,
    pub neumann_tol: f64,
}

impl<'a> Derivative<'a> {
    pub fn new(model: &'a CavityModel, nu: &ExpKernel) -> Result<Self> {
        let ns = model.n_states();
        let size = model.lattice(model.b).size;
        let bytes = size.saturating_mul(ns).saturating_mul(8);
        if bytes > MEMORY_GUARD_BYTES {
            return Err(Error::StateSpaceTooLarge(format!("lattice tables need {bytes} bytes")));
        }
        let mut g_r = vec![1.0];
        let mut g_bm1 = g_r.clone();
        for r in 0..model.b {
            if r == model.b - 1 {
                g_bm1 = g_r.clone();
            }
            g_r = convolve(&g_r, r, &nu.g, model.n());
        }
        let zw = (0..ns).map(|eta| model.lattice_partitions(eta)).collect();
        let prefactors = (0..ns).map(|eta| model.prefactor(eta)).collect();
        let nu_rows = nu.to_kernel(model);
        Ok(Self { model, nu: nu.clone(), g_bm1, g_b: g_r, zw, prefactors, nu_rows, neumann_tol: 1e-14 })
    }

    pub fn nu(&self) -> &ExpKernel {
        &self.nu
    }

    /// `R^η_{ν_∞,…,ν_∞}(x)`.
    pub fn apply_r_nu(&self, eta: usize, x: &[f64]) -> GridMeasure {
        let b = self.model.b as i32;
        let scaled: Vec<f64> = x.iter().zip(&self.nu.z).map(|(v, z)| v / z.powi(b)).collect();
        let e = self.model.states_to_lattice(&scaled, self.model.b);
        let q: Vec<f64> = e.iter().zip(&self.g_b).zip(&self.zw[eta]).map(|((a, g), z)| a * g / z).collect();
        let t = self.model.lattice_to_states(&q, self.model.b);
        self.prefactors[eta].iter().zip(t).map(|(p, v)| p * v).collect()
    }

    /// `(I − R^η_{ν_∞,…})^{−1} y` by the Neumann series, for `y` of mass 0.
    pub fn resolvent(&self, eta: usize, y: &[f64]) -> Result<GridMeasure> {
        let scale = y.iter().map(|v| v.abs()).sum::<f64>();
        let fixed = &self.nu_rows[eta];
        let mut x = y.to_vec();
        let mut term = y.to_vec();
        for _ in 0..10_000 {
            if term.iter().map(|v| v.abs()).sum::<f64>() <= self.neumann_tol * scale {
                return Ok(x);
            }
            term = self.apply_r_nu(eta, &term);
            // Rounding leaves mass along the invariant vector `ν_∞^η`.
            let mass: f64 = term.iter().sum();
            for (t, f) in term.iter_mut().zip(fixed) {
                *t -= mass * f;
            }
            for (a, t) in x.iter_mut().zip(&term) {
                *a += t;
            }
        }
        Err(Error::NoConvergence(10_000))
    }

    /// `D(ρ)` for `ρ ∈ X_0`.
    pub fn apply(&self, rho: &GridKernel) -> Result<GridKernel> {
        let m = self.model;
        let ns = m.n_states();
        let n = m.n();
        let b = m.b;
        let lat_u = m.lattice(b - 1);
        let size = m.lattice(b).size;
        // Q[σ_0][s] = Σ_{σ_1} ρ^{σ_0}(σ_1) P_{b−1}(s − σ_1 | σ_0).
        let mut q = DMatrix::<f64>::zeros(ns, size);
        let d = m.delta();
        for s0 in 0..ns {
            let zb = self.nu.z[s0].powi(b as i32 - 1);
            let pu: Vec<f64> = (0..lat_u.size)
                .map(|u| {
                    let e: f64 = (0..n).map(|k| slice_sign(s0, k) * lat_u.value(u, k)).sum();
                    self.g_bm1[u] * (d * e).exp() / zb
                })
                .collect();
            let row = convolve(&pu, b - 1, &rho[s0], n);
            for (j, v) in row.into_iter().enumerate() {
                q[(s0, j)] = v;
            }
        }
        let nu_rows = DMatrix::from_fn(ns, ns, |eta, s0| self.nu_rows[eta][s0]);
        let weights = nu_rows * q;
        (0..ns)
            .map(|eta| {
                let w: Vec<f64> = weights.row(eta).iter().copied().collect();
                let y = m.mixture(eta, &w, &self.zw[eta]);
                self.resolvent(eta, &y)
            })
            .collect()
    }

    /// `D` on the tangent space of the kernel family at `ν_∞`: a direction
    /// `δg` maps to `g ⊙ (E δg) / Z`.
    pub fn tangent_step(&self, dg: &[f64]) -> Vec<f64> {
        let e = self.model.states_to_lattice(dg, 1);
        (0..dg.len()).map(|s| self.nu.g[s] * e[s] / self.nu.z[s]).collect()
    }

    /// Kernel of the tangent direction `δg`:
    /// `δν^η = ν^η ⊙ (δg/g − ν^η(δg/g))`.
    pub fn tangent_kernel(&self, dg: &[f64]) -> GridKernel {
        let ratio: Vec<f64> = dg.iter().zip(&self.nu.g).map(|(a, g)| a / g).collect();
        self.nu_rows
            .iter()
            .map(|row| {
                let mean: f64 = row.iter().zip(&ratio).map(|(a, r)| a * r).sum();
                row.iter().zip(&ratio).map(|(a, r)| a * (r - mean)).collect()
            })
            .collect()
    }
}

/// Geometric rate from a log-linear least-squares fit of `(k, value)`.
pub fn fit_rate(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.1 > 0.0).map(|&(k, v)| (k, v.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxy / sxx).exp()
}

/// `‖D^k‖` estimates for `k = 0..=k_max`.
#[derive(Debug, Clone, Serialize)]
pub struct DkScan {
    /// Max over directions of `‖D^k ρ‖_{∞,X} / ‖ρ‖_{1,X}`.
    pub norms: Vec<f64>,
    /// Same maximum restricted to tangent directions.
    pub tangent_norms: Vec<f64>,
    /// Fitted geometric rate over `k = 1..=k_max`.
    pub rate: f64,
    /// `b^k · norm_k`.
    pub scaled: Vec<f64>,
    pub n_directions: usize,
    /// `|rate − rate'|` where `rate'` is the tangent-direction rate with
    /// `ν_∞` solved only to `1e-8`.
    pub sensitivity: f64,
}

/// Options of [`dk_norm_scan`].
#[derive(Debug, Clone, Copy)]
pub struct DkOptions {
    pub k_max: usize,
    /// Number of general (non-tangent) directions through the full `D`.
    pub n_general: usize,
    pub nu_tol: f64,
}

impl Default for DkOptions {
    fn default() -> Self {
        Self { k_max: 6, n_general: 4, nu_tol: 1e-10 }
    }
}

fn tangent_norms(model: &CavityModel, dgen: &Derivative, k_max: usize) -> Vec<f64> {
    let ns = model.n_states();
    let mut best = vec![0.0f64; k_max + 1];
    for s in 0..ns {
        let mut dg = vec![0.0; ns];
        dg[s] = 1.0;
        let first = dgen.tangent_kernel(&dg);
        let base = norm_one_x(model, &first);
        if base < 1e-300 {
            continue;
        }
        best[0] = best[0].max(norm_inf_x(&first) / base);
        for b in best.iter_mut().skip(1) {
            dg = dgen.tangent_step(&dg);
            *b = b.max(norm_inf_x(&dgen.tangent_kernel(&dg)) / base);
        }
    }
    best
}

/// Random kernel in `X_0` with stochastically positive rows: each row moves
/// the mass of a random measure up the order.
pub fn random_positive_direction<R: Rng>(model: &CavityModel, rng: &mut R) -> GridKernel {
    let ns = model.n_states();
    (0..ns)
        .map(|_| {
            let q: Vec<f64> = (0..ns).map(|_| rng.gen::<f64>()).collect();
            let z: f64 = q.iter().sum();
            let mut row = vec![0.0; ns];
            for (s, &m) in q.iter().enumerate() {
                let up = s | (rng.gen::<usize>() & (ns - 1));
                row[up] += m / z;
                row[s] -= m / z;
            }
            row
        })
        .collect()
}

/// `‖D^k‖` from `(X_0, ‖·‖_{1,X})` to `(X_0, ‖·‖_{∞,X})` estimated over all
/// tangent basis directions `δ_s`, the direction `ν_1 − ν_∞`, single-row
/// directions `δ_s − δ_{s'}` and random stochastically positive kernels.
pub fn dk_norm_scan(model: &CavityModel, opts: DkOptions, streams: StreamFactory) -> Result<DkScan> {
    let rec = nu_recursion(model, 100_000, opts.nu_tol);
    let dgen = Derivative::new(model, &rec.limit)?;
    let tn = tangent_norms(model, &dgen, opts.k_max);
    let mut norms = tn.clone();
    let ns = model.n_states();
    let mut dirs: Vec<GridKernel> = Vec::new();
    let nu1 = rec.nus[1.min(rec.nus.len() - 1)].to_kernel(model);
    let nu_inf = rec.limit.to_kernel(model);
    dirs.push(nu1.iter().zip(&nu_inf).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect());
    let mut rng = streams.stream(&[tag::DIRECTION]);
    for i in 0..opts.n_general {
        if i % 2 == 0 {
            let mut k = vec![vec![0.0; ns]; ns];
            let eta = rng.gen_range(0..ns);
            let a = rng.gen_range(0..ns);
            let b = (a + 1 + rng.gen_range(0..ns - 1)) % ns;
            k[eta][a] = 1.0;
            k[eta][b] = -1.0;
            dirs.push(k);
        } else {
            dirs.push(random_positive_direction(model, &mut rng));
        }
    }
    for dir in &dirs {
        let base = norm_one_x(model, dir);
        let mut cur = dir.clone();
        for k in 0..=opts.k_max {
            norms[k] = norms[k].max(norm_inf_x(&cur) / base);
            if k < opts.k_max {
                cur = dgen.apply(&cur)?;
            }
        }
    }
    let fit: Vec<(f64, f64)> = (1..=opts.k_max).map(|k| (k as f64, norms[k])).collect();
    let rate = fit_rate(&fit);
    let loose = nu_recursion(model, 100_000, 1e-8);
    let dloose = Derivative::new(model, &loose.limit)?;
    let tl = tangent_norms(model, &dloose, opts.k_max);
    let rate_t = fit_rate(&(1..=opts.k_max).map(|k| (k as f64, tn[k])).collect::<Vec<_>>());
    let rate_l = fit_rate(&(1..=opts.k_max).map(|k| (k as f64, tl[k])).collect::<Vec<_>>());
    let scaled = norms.iter().enumerate().map(|(k, v)| v * (model.b as f64).powi(k as i32)).collect();
    Ok(DkScan {
        norms,
        tangent_norms: tn,
        rate,
        scaled,
        n_directions: ns + dirs.len(),
        sensitivity: (rate_t - rate_l).abs(),
    })
}

/// Tree-marginal kernels `g_m` for subtree heights `0..=height`.
fn tree_weights(model: &CavityModel, boundary: LeafBoundary, height: usize) -> Vec<ExpKernel> {
    let mut out = vec![ExpKernel::leaf(model, boundary)];
    for _ in 0..height {
        let next = out.last().unwrap().parent(model);
        out.push(next);
    }
    out
}

/// Conditional magnetization gaps along a root-to-leaf path.
#[derive(Debug, Clone, Serialize)]
pub struct KappaReport {
    /// `μ(σ_z•1 | σ_r = +) − μ(σ_z•1 | σ_r = −)` for `|z| = 0..=depth`.
    pub gaps: Vec<f64>,
    /// Geometric rate fitted over depths `2..=depth`.
    pub kappa_hat: f64,
    /// Same fit on the grid with `N/2` slices.
    pub kappa_half: f64,
    /// `|κ̂_N − κ̂_{N/2}|`.
    pub error_bar: f64,
    /// First-order Richardson extrapolation `2κ̂_N − κ̂_{N/2}`.
    pub kappa_extrapolated: f64,
}

/// Gaps of one grid: the root is pinned to all-plus or all-minus and the
/// path law is propagated down through the child kernels.
pub fn kappa_gaps(model: &CavityModel, depth: usize, boundary: LeafBoundary) -> Vec<f64> {
    let ns = model.n_states();
    // A free vertex at depth d has g = weights[depth − d + 1].
    let weights = tree_weights(model, boundary, depth + 1);
    let mut up = vec![0.0; ns];
    let mut down = vec![0.0; ns];
    up[ns - 1] = 1.0;
    down[0] = 1.0;
    let mag = |p: &[f64]| p.iter().enumerate().map(|(s, v)| v * model.dot_one(s)).sum::<f64>();
    let mut gaps = vec![mag(&up) - mag(&down)];
    for d in 1..=depth {
        let k = &weights[depth - d + 1];
        let step = |p: &[f64]| {
            let mut out = vec![0.0; ns];
            for (s0, &m) in p.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                for (o, v) in out.iter_mut().zip(k.row(model, s0)) {
                    *o += m * v;
                }
            }
            out
        };
        up = step(&up);
        down = step(&down);
        gaps.push(mag(&up) - mag(&down));
    }
    gaps
}

fn fit_kappa(gaps: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = gaps.iter().enumerate().skip(2).map(|(d, &g)| (d as f64, g)).collect();
    fit_rate(&pts)
}

pub fn kappa_exact(model: &CavityModel, depth: usize, boundary: LeafBoundary) -> Result<KappaReport> {
    if depth < 3 {
        return Err(Error::InvalidArgument("kappa fit needs depth >= 3".into()));
    }
    let gaps = kappa_gaps(model, depth, boundary);
    let kappa_hat = fit_kappa(&gaps);
    let half = model.regrid((model.n() / 2).max(1))?;
    let kappa_half = fit_kappa(&kappa_gaps(&half, depth, boundary));
    Ok(KappaReport {
        gaps,
        kappa_hat,
        kappa_half,
        error_bar: (kappa_hat - kappa_half).abs(),
        kappa_extrapolated: 2.0 * kappa_hat - kappa_half,
    })
}

/// Single-site envelope `γ̂`.
#[derive(Debug, Clone, Serialize)]
pub struct GammaReport {
    pub gamma_hat: f64,
    /// `‖h‖₁ + β(b+1)`.
    pub envelope_m: f64,
    /// Worst rest-sum (digits on the `b`-lattice) and the two values of
    /// the changed neighbour.
    pub worst_rest: usize,
    pub worst_pair: (usize, usize),
}

/// Maximum TV between single-site laws whose fields differ in one of the
/// `b+1` neighbours. The other `b` neighbours range over the whole sum
/// lattice with the changed neighbour all-minus versus all-plus, and
/// `n_random` further random triples are tried.
pub fn gamma_exact(model: &CavityModel, n_random: usize, streams: StreamFactory) -> Result<GammaReport> {
    let ns = model.n_states();
    let n = model.n();
    let lat = model.lattice(model.b);
    let law = |rest: usize, y: usize| {
        let f: Vec<f64> = (0..n).map(|k| lat.value(rest, k) + slice_sign(y, k)).collect();
        model.site_law(&f)
    };
    let mut best = (0.0, 0, (0, ns - 1));
    for rest in 0..lat.size {
        let t = tv(&law(rest, 0), &law(rest, ns - 1));
        if t > best.0 {
            best = (t, rest, (0, ns - 1));
        }
    }
    let mut rng = streams.stream(&[tag::SAMPLE]);
    for _ in 0..n_random {
        let rest = rng.gen_range(0..lat.size);
        let (a, c) = (rng.gen_range(0..ns), rng.gen_range(0..ns));
        let t = tv(&law(rest, a), &law(rest, c));
        if t > best.0 {
            best = (t, rest, (a, c));
        }
    }
    Ok(GammaReport {
        gamma_hat: best.0,
        envelope_m: model.h.abs() * model.beta + model.beta * (model.b as f64 + 1.0),
        worst_rest: best.1,
        worst_pair: best.2,
    })
}

/// Outcome of the Lipschitz check `TV ≤ Γ ‖h' − h‖₁`.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub n_pairs: usize,
    pub violations: usize,
    /// Largest `TV / ‖h' − h‖₁` seen.
    pub max_ratio: f64,
}

/// Random field pairs inside the envelope: per-slice fields in
/// `h + [−(b+1), b+1]`, perturbed on a random subset of slices by amounts
/// of random scale between `1e-3` and `2`, clipped back to the envelope.
pub fn lipschitz_check(model: &CavityModel, n_pairs: usize, streams: StreamFactory) -> LipschitzReport {
    let n = model.n();
    let bound = model.b as f64 + 1.0;
    let gamma = lipschitz_gamma();
    let mut rng = streams.stream(&[tag::SAMPLE, 1]);
    let mut violations = 0;
    let mut max_ratio = 0.0f64;
    for _ in 0..n_pairs {
        let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        let scale = 10f64.powf(rng.gen_range(-3.0..0.3));
        let g: Vec<f64> = f
            .iter()
            .map(|&x| if rng.gen_bool(0.5) { (x + scale * rng.gen_range(-1.0..1.0)).clamp(-bound, bound) } else { x })
            .collect();
        let dist: f64 = model.delta() * f.iter().zip(&g).map(|(a, b)| (a - b).abs()).sum::<f64>();
        if dist == 0.0 {
            continue;
        }
        let t = tv(&model.site_law(&f), &model.site_law(&g));
        max_ratio = max_ratio.max(t / dist);
        if t > gamma * dist + 1e-12 {
            violations += 1;
        }
    }
    LipschitzReport { n_pairs, violations, max_ratio }
}

/// Exact TV contraction coefficient of `R^η_{ν,…,ν}` on `M_0`: the largest
/// TV distance between two rows of its matrix.
pub fn contraction_coefficient(dgen: &Derivative, eta: usize) -> f64 {
    let ns = dgen.model.n_states();
    let rows: Vec<GridMeasure> = (0..ns)
        .map(|s| {
            let mut e = vec![0.0; ns];
            e[s] = 1.0;
            dgen.apply_r_nu(eta, &e)
        })
        .collect();
    let mut best = 0.0f64;
    for i in 0..ns {
        for j in i + 1..ns {
            best = best.max(tv(&rows[i], &rows[j]));
        }
    }
    best
}

/// Root-marginal TV between plus and minus leaf boundaries per depth.
#[derive(Debug, Clone, Serialize)]
pub struct UniquenessProbe {
    pub tv_by_depth: Vec<f64>,
    /// Last value below `1e-6` or shrinking by at least half over the scan.
    pub uniqueness: bool,
}

pub fn uniqueness_probe(model: &CavityModel, max_depth: usize) -> UniquenessProbe {
    let plus = tree_weights(model, LeafBoundary::Plus, max_depth + 1);
    let minus = tree_weights(model, LeafBoundary::Minus, max_depth + 1);
    let norm = |g: &[f64]| {
        let z: f64 = g.iter().sum();
        g.iter().map(|v| v / z).collect::<Vec<_>>()
    };
    // The root of a depth-d tree has weight g_{d+1}.
    let tv_by_depth: Vec<f64> = (0..=max_depth).map(|d| tv(&norm(&plus[d + 1].g), &norm(&minus[d + 1].g))).collect();
    let first = tv_by_depth[0];
    let last = *tv_by_depth.last().unwrap();
    UniquenessProbe { uniqueness: last < 1e-6 || (max_depth >= 4 && last < 0.5 * first), tv_by_depth }
}

/// Summary used by the CLI and the acceptance suite.
#[derive(Debug, Clone, Serialize)]
pub struct CavitySummary {
    pub b: usize,
    pub grid_n: usize,
    pub beta: f64,
    pub lambda: f64,
    pub h: f64,
    pub depth: usize,
    pub boundary: LeafBoundary,
    pub gamma_hat: f64,
    pub gamma_label: &'static str,
    pub kappa_hat: f64,
    pub kappa_half: f64,
    pub kappa_error_bar: f64,
    pub kappa_extrapolated: f64,
    pub kappa_gaps: Vec<f64>,
    pub kappa_note: &'static str,
    pub product_kgb: f64,
    pub mixing_hypothesis_holds: bool,
    pub dk_norms: Vec<f64>,
    pub dk_tangent_norms: Vec<f64>,
    pub dk_rate: f64,
    pub dk_sensitivity: f64,
    pub nu_convergence: Vec<f64>,
    pub uniqueness: UniquenessProbe,
}

pub const GAMMA_LABEL: &str = "single-site envelope";
pub const KAPPA_NOTE: &str = "geometric rate fitted from depths >= 2 on the rooted tree; no sup over subtrees";

pub fn cavity_summary(
    model: &CavityModel,
    depth: usize,
    boundary: LeafBoundary,
    k_max: usize,
    streams: StreamFactory,
) -> Result<CavitySummary> {
    let gamma = gamma_exact(model, 10_000, streams.child(&[1]))?;
    let kappa = kappa_exact(model, depth, boundary)?;
    let dk = dk_norm_scan(model, DkOptions { k_max, ..DkOptions::default() }, streams.child(&[2]))?;
    let rec = nu_recursion(model, 100_000, 1e-10);
    let product = kappa.kappa_hat * gamma.gamma_hat * model.b as f64;
    Ok(CavitySummary {
        b: model.b,
        grid_n: model.n(),
        beta: model.beta,
        lambda: model.lambda,
        h: model.h,
        depth,
        boundary,
        gamma_hat: gamma.gamma_hat,
        gamma_label: GAMMA_LABEL,
        kappa_hat: kappa.kappa_hat,
        kappa_half: kappa.kappa_half,
        kappa_error_bar: kappa.error_bar,
        kappa_extrapolated: kappa.kappa_extrapolated,
        kappa_gaps: kappa.gaps,
        kappa_note: KAPPA_NOTE,
        product_kgb: product,
        mixing_hypothesis_holds: product < 1.0,
        dk_norms: dk.norms,
        dk_tangent_norms: dk.tangent_norms,
        dk_rate: dk.rate,
        dk_sensitivity: dk.sensitivity,
        nu_convergence: rec.increments,
        uniqueness: uniqueness_probe(model, depth),
    })
}
