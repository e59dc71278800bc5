//! Exact diagonalization for graphs with at most four sites.
//!
//! Basis states are bitmasks where bit `i` set means site `i` is `−` in the
//! `σ^z` eigenbasis, so state 0 is all-plus.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::batch_mean;
use crate::glauber::{Dynamics, Schedule, TimeBc};
use crate::graph::{SiteGraph, SpinConfigMap};
use crate::rng::{tag, StreamFactory};
use crate::site_sampler::sample_site;
use crate::trajectory::{dot, ModelParams, PiecewiseField, Sign};
use crate::transfer::EndpointCondition;

pub type DenseOperator = DMatrix<f64>;

pub const MAX_SITES: usize = 4;

fn spin(state: usize, i: usize) -> f64 {
    if state >> i & 1 == 1 {
        -1.0
    } else {
        1.0
    }
}

pub fn identity(n_sites: usize) -> DenseOperator {
    DMatrix::identity(1 << n_sites, 1 << n_sites)
}

pub fn sigma_z(n_sites: usize, i: usize) -> DenseOperator {
    let d = 1 << n_sites;
    DMatrix::from_fn(d, d, |a, b| if a == b { spin(a, i) } else { 0.0 })
}

pub fn sigma_x(n_sites: usize, i: usize) -> DenseOperator {
    let d = 1 << n_sites;
    DMatrix::from_fn(d, d, |a, b| if a ^ b == 1 << i { 1.0 } else { 0.0 })
}

/// `H = −Σ_edges σ^z_i σ^z_j − h Σ σ^z_i − λ Σ σ^x_i`.
pub fn build_hamiltonian(graph: &SiteGraph, params: &ModelParams) -> Result<DenseOperator> {
    let n = graph.n_vertices();
    if n > MAX_SITES {
        return Err(Error::StateSpaceTooLarge(format!("{n} sites exceeds {MAX_SITES}")));
    }
    if !graph.boundary().is_empty() {
        return Err(Error::InvalidGraph("exact diagonalization needs all sites free".into()));
    }
    let h = params.h_const().ok_or_else(|| Error::InvalidField("ED needs a constant field".into()))?;
    let edges = graph.edges();
    let d = 1 << n;
    let mut m = DMatrix::zeros(d, d);
    for a in 0..d {
        let mut diag = 0.0;
        for &(i, j) in &edges {
            diag -= spin(a, i) * spin(a, j);
        }
        for i in 0..n {
            diag -= h * spin(a, i);
            m[(a, a ^ (1 << i))] -= params.lambda;
        }
        m[(a, a)] = diag;
    }
    Ok(m)
}

/// `Tr(O e^{−βH}) / Tr(e^{−βH})` through the eigendecomposition of `H`,
/// with the spectrum shifted by its minimum.
pub fn thermal_expectation(o: &DenseOperator, h: &DenseOperator, beta: f64) -> f64 {
    let eig = h.clone().symmetric_eigen();
    let e0 = eig.eigenvalues.min();
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, &e) in eig.eigenvalues.iter().enumerate() {
        let w = (-beta * (e - e0)).exp();
        let v = eig.eigenvectors.column(k);
        num += w * (v.transpose() * o * v)[(0, 0)];
        den += w;
    }
    num / den
}

/// `e^{−βH}` from the eigendecomposition.
pub fn gibbs_operator(h: &DenseOperator, beta: f64) -> DenseOperator {
    let eig = h.clone().symmetric_eigen();
    let w = eig.eigenvalues.map(|e| (-beta * e).exp());
    &eig.eigenvectors * DMatrix::from_diagonal(&w) * eig.eigenvectors.transpose()
}

/// Matrix exponential by scaling and squaring of a degree-18 Taylor
/// polynomial.
pub fn expm(a: &DenseOperator) -> DenseOperator {
    let norm = a.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(s);
    let n = a.nrows();
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=18 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Single-site closed forms `((h/r) tanh βr, (λ/r) tanh βr)`.
pub fn single_site_closed_form(beta: f64, h: f64, lambda: f64) -> (f64, f64) {
    let r = h.hypot(lambda);
    if r == 0.0 {
        return (0.0, 0.0);
    }
    let t = (beta * r).tanh();
    (h / r * t, lambda / r * t)
}

/// Monte Carlo estimate of one diagonal observable against its exact value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservableRow {
    pub observable: String,
    pub exact: f64,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub n_eff: f64,
}

impl ObservableRow {
    fn new(observable: String, exact: f64, series: &[f64], n_batches: usize) -> Result<Self> {
        let bm = batch_mean(series, n_batches)?;
        let z = if bm.se > 0.0 { (bm.mean - exact) / bm.se } else { 0.0 };
        Ok(Self { observable, exact, estimate: bm.mean, se: bm.se, z, n_eff: bm.n_eff })
    }
}

/// Periodic-bc Glauber estimates of `⟨σ^z_i⟩` and `⟨σ^z_i σ^z_j⟩` (edges
/// only) as time averages over `[0, β]`, recorded after every clock ring
/// once `burn_in` time units have elapsed.
pub fn path_integral_check(
    graph: &SiteGraph,
    params: &ModelParams,
    n_samples: usize,
    burn_in: f64,
    streams: StreamFactory,
) -> Result<Vec<ObservableRow>> {
    let h = build_hamiltonian(graph, params)?;
    let n = graph.n_vertices();
    let beta = params.beta;
    let dyns = Dynamics::new(graph, params, TimeBc::Periodic, Schedule::full(), streams)?;
    let mut state = dyns.start(SpinConfigMap::uniform(graph, Sign::Plus, beta)?)?;
    dyns.advance(&mut state, burn_in)?;
    let edges = graph.edges();
    let mut mags = vec![Vec::with_capacity(n_samples); n];
    let mut corr = vec![Vec::with_capacity(n_samples); edges.len()];
    for _ in 0..n_samples {
        dyns.step(&mut state)?;
        for (i, m) in mags.iter_mut().enumerate() {
            m.push(state.config.get(i).dot_one() / beta);
        }
        for (k, &(i, j)) in edges.iter().enumerate() {
            let fi = PiecewiseField::from_trajectory(state.config.get(i));
            corr[k].push(dot(&fi, state.config.get(j))? / beta);
        }
    }
    let mut rows = Vec::new();
    for (i, m) in mags.iter().enumerate() {
        let exact = thermal_expectation(&sigma_z(n, i), &h, beta);
        rows.push(ObservableRow::new(format!("sz_{i}"), exact, m, 100)?);
    }
    for (k, &(i, j)) in edges.iter().enumerate() {
        let exact = thermal_expectation(&(sigma_z(n, i) * sigma_z(n, j)), &h, beta);
        rows.push(ObservableRow::new(format!("szsz_{i}_{j}"), exact, &corr[k], 100)?);
    }
    Ok(rows)
}

/// Direct periodic single-site sampling of `σ•1/β` against the closed form.
pub fn single_site_check(
    beta: f64,
    h: f64,
    lambda: f64,
    n_samples: usize,
    streams: StreamFactory,
) -> Result<ObservableRow> {
    let params = ModelParams::new(beta, lambda, h)?;
    let series = (0..n_samples as u64)
        .map(|k| {
            let mut rng = streams.stream(&[tag::SAMPLE, k]);
            sample_site(&params.h, &params, EndpointCondition::Periodic, &mut rng).map(|t| t.dot_one() / beta)
        })
        .collect::<Result<Vec<_>>>()?;
    let exact = single_site_closed_form(beta, h, lambda).0;
    ObservableRow::new(format!("sz(h={h},lambda={lambda})"), exact, &series, 100)
}
