//! Subcommand bodies: each reads a resolved [`Config`] and returns tables,
//! JSON summaries and whether any battery failed.

use anyhow::Result;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use tfim_core::cavity::{self, CavityModel, LeafBoundary};
use tfim_core::ed;
use tfim_core::estimators::{bonferroni_threshold, kappa_mc};
use tfim_core::glauber::{self, Dynamics, GapScanConfig, GridChain, GridModel, Schedule, TimeBc};
use tfim_core::report::{fmt_num, Table};
use tfim_core::rng::tag;
use tfim_core::{ModelParams, Sign, SpinConfigMap, StreamFactory};

use crate::config::{Config, ConfigError, ConfigResult};
use crate::specs::{parse_boundary, parse_graph, parse_schedule, GraphSpec};

#[derive(Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub summaries: Vec<(String, Value)>,
    pub failed: bool,
    pub display: String,
}

fn cfg_err(key: &str, e: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("key `{key}`: {e}"))
}

fn params(cfg: &Config) -> ConfigResult<ModelParams> {
    let beta = cfg.get("beta")?;
    let lambda = cfg.get("lambda")?;
    let h = cfg.get("h")?;
    ModelParams::new(beta, lambda, h).map_err(|e| cfg_err("beta/lambda/h", e))
}

fn time_bc(cfg: &Config) -> ConfigResult<TimeBc> {
    match cfg.get_or("bc", "free".to_string())?.as_str() {
        "free" => Ok(TimeBc::Free),
        "periodic" => Ok(TimeBc::Periodic),
        other => Err(cfg_err("bc", format!("unknown time boundary `{other}`"))),
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn render(t: &Table) -> String {
    let mut out = t.header().join("\t");
    out.push('\n');
    for r in t.rows() {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    out
}

pub fn verify_ed(cfg: &Config, streams: StreamFactory) -> Result<Outcome> {
    let p = params(cfg)?;
    let spec = parse_graph(&cfg.get_str("graph")?, p.beta)?;
    let n_samples = cfg.get_or("n_samples", 100_000usize)?;
    let burn_in = cfg.get_or("burn_in", 50.0)?;
    let rows = ed::path_integral_check(&spec.graph, &p, n_samples, burn_in, streams)?;
    let threshold = bonferroni_threshold(3.0, 2 * rows.len());
    let mut t = Table::new("ed_check", &["observable", "exact", "estimate", "se", "z", "n_eff"]);
    for r in &rows {
        t.push(vec![r.observable.clone(), fmt_num(r.exact), fmt_num(r.estimate), fmt_num(r.se), fmt_num(r.z), fmt_num(r.n_eff)])?;
    }
    let failed = rows.iter().any(|r| r.z.abs() > threshold);
    let verdict = if failed { "FAIL" } else { "PASS" };
    Ok(Outcome {
        display: format!("{}verdict: {verdict} (|z| threshold {threshold:.3})\n", render(&t)),
        summaries: vec![("ed_check".into(), json!({ "rows": to_value(&rows)?, "z_threshold": threshold, "verdict": verdict }))],
        tables: vec![t],
        failed,
    })
}

pub fn verify_single_site(cfg: &Config, streams: StreamFactory) -> Result<Outcome> {
    let beta: f64 = cfg.get("beta")?;
    let n_samples = cfg.get_or("n_samples", 20_000usize)?;
    let points: Vec<String> = cfg.get_list_or("points", "0.4:0.6,0:1,1:0.5,-0.7:1.3,0.3:2")?;
    let mut rows = Vec::new();
    for (k, pt) in points.iter().enumerate() {
        let (h, l) = pt.split_once(':').ok_or_else(|| cfg_err("points", format!("expected h:lambda, got `{pt}`")))?;
        let h: f64 = h.parse().map_err(|_| cfg_err("points", format!("cannot parse `{pt}`")))?;
        let l: f64 = l.parse().map_err(|_| cfg_err("points", format!("cannot parse `{pt}`")))?;
        rows.push(ed::single_site_check(beta, h, l, n_samples, streams.child(&[k as u64]))?);
    }
    let threshold = bonferroni_threshold(3.0, 2 * rows.len());
    let mut t = Table::new("single_site", &["observable", "exact", "estimate", "se", "z", "n_eff"]);
    for r in &rows {
        t.push(vec![r.observable.clone(), fmt_num(r.exact), fmt_num(r.estimate), fmt_num(r.se), fmt_num(r.z), fmt_num(r.n_eff)])?;
    }
    let failed = rows.iter().any(|r| r.z.abs() > threshold);
    let verdict = if failed { "FAIL" } else { "PASS" };
    Ok(Outcome {
        display: format!("{}verdict: {verdict}\n", render(&t)),
        summaries: vec![("single_site".into(), json!({ "rows": to_value(&rows)?, "z_threshold": threshold, "verdict": verdict }))],
        tables: vec![t],
        failed,
    })
}

/// Absolute tolerance of the exact censoring inequalities.
const CENSORING_TOL: f64 = 1e-12;

pub fn verify_censoring(cfg: &Config) -> Result<Outcome> {
    let p = params(cfg)?;
    let spec = parse_graph(&cfg.get_str("graph")?, p.beta)?;
    let n: usize = cfg.get("grid_n")?;
    let model = GridModel::new(&spec.graph, &p, n, time_bc(cfg)?).map_err(|e| cfg_err("grid_n", e))?;
    let a = parse_schedule("schedule_a", &cfg.get_str("schedule_a")?, &spec)?;
    let b = parse_schedule("schedule_b", &cfg.get_str("schedule_b")?, &spec)?;
    let ts: Vec<f64> = cfg.get_list("times")?;
    let rows = glauber::censoring_check_exact(&model, &a, &b, &ts).map_err(|e| cfg_err("schedule_a/schedule_b/times", e))?;
    let mut t = Table::new(
        "censoring",
        &["t", "var_a", "var_b", "ent_a", "ent_b", "tv_a", "tv_b", "dominated", "monotone_densities", "holds"],
    );
    for r in &rows {
        t.push(vec![
            fmt_num(r.t),
            fmt_num(r.var_a),
            fmt_num(r.var_b),
            fmt_num(r.ent_a),
            fmt_num(r.ent_b),
            fmt_num(r.tv_a),
            fmt_num(r.tv_b),
            r.dominated.to_string(),
            r.monotone_densities.to_string(),
            r.holds(CENSORING_TOL).to_string(),
        ])?;
    }
    let failed = rows.iter().any(|r| !r.holds(CENSORING_TOL));
    let verdict = if failed { "FAIL" } else { "PASS" };
    Ok(Outcome {
        display: format!("{}verdict: {verdict}\n", render(&t)),
        summaries: vec![("censoring".into(), json!({ "tolerance": CENSORING_TOL, "verdict": verdict }))],
        tables: vec![t],
        failed,
    })
}

/// Per replica: for each sample time, `(σ⁺_v•1, σ⁻_v•1)` per reported
/// vertex and whether the two chains agree everywhere.
type ReplicaTrace = Vec<(Vec<(f64, f64)>, bool)>;

fn continuum_replica(
    spec: &GraphSpec,
    p: &ModelParams,
    bc: TimeBc,
    schedule: &Schedule,
    times: &[f64],
    f: StreamFactory,
) -> tfim_core::Result<ReplicaTrace> {
    let g = &spec.graph;
    let dyns = Dynamics::new(g, p, bc, schedule.clone(), f)?;
    let mut up = dyns.start(SpinConfigMap::uniform(g, Sign::Plus, p.beta)?)?;
    let mut down = dyns.start(SpinConfigMap::uniform(g, Sign::Minus, p.beta)?)?;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        dyns.advance(&mut up, t)?;
        dyns.advance(&mut down, t)?;
        let vals: Vec<(f64, f64)> =
            g.free_vertices().iter().map(|&v| (up.config.get(v).dot_one(), down.config.get(v).dot_one())).collect();
        out.push((vals, up.config == down.config));
    }
    Ok(out)
}

fn grid_replica(model: &GridModel, schedule: &Schedule, times: &[f64], f: StreamFactory) -> ReplicaTrace {
    let mut chain = GridChain::new(model, schedule.clone(), f);
    let mut up = model.all(Sign::Plus);
    let mut down = model.all(Sign::Minus);
    let (n, d) = (model.slices.n as f64, model.slices.delta);
    let mag = |pat: usize| d * (2.0 * pat.count_ones() as f64 - n);
    times
        .iter()
        .map(|&t| {
            chain.advance(&mut [&mut up, &mut down], t);
            let vals = up.patterns.iter().zip(&down.patterns).map(|(&a, &b)| (mag(a), mag(b))).collect();
            (vals, up == down)
        })
        .collect()
}

pub fn dynamics(cfg: &Config, streams: StreamFactory) -> Result<Outcome> {
    let p = params(cfg)?;
    let spec = parse_graph(&cfg.get_str("graph")?, p.beta)?;
    let schedule = parse_schedule("schedule", &cfg.get_or("schedule", "full".to_string())?, &spec)?;
    let t_end: f64 = cfg.get("t_end")?;
    let replicas: usize = cfg.get_or("replicas", 16)?;
    let n_times: usize = cfg.get_or("n_times", 10)?;
    if !(t_end > 0.0) || n_times == 0 || replicas == 0 {
        return Err(cfg_err("t_end/n_times/replicas", "must be positive").into());
    }
    let times: Vec<f64> = (1..=n_times).map(|k| t_end * k as f64 / n_times as f64).collect();
    let bc = time_bc(cfg)?;
    let mode = cfg.get_or("mode", "continuum".to_string())?;
    let traces: Vec<ReplicaTrace> = match mode.as_str() {
        "continuum" => (0..replicas as u64)
            .into_par_iter()
            .map(|r| continuum_replica(&spec, &p, bc, &schedule, &times, streams.child(&[tag::REPLICA, r])))
            .collect::<tfim_core::Result<_>>()?,
        "grid" => {
            let n: usize = cfg.get("grid_n")?;
            let model = GridModel::new(&spec.graph, &p, n, bc).map_err(|e| cfg_err("grid_n", e))?;
            (0..replicas as u64)
                .into_par_iter()
                .map(|r| grid_replica(&model, &schedule, &times, streams.child(&[tag::REPLICA, r])))
                .collect()
        }
        other => return Err(cfg_err("mode", format!("unknown mode `{other}`")).into()),
    };
    let sites = spec.graph.free_vertices().to_vec();
    let mut t = Table::new("dynamics", &["time", "site", "statistic", "value"]);
    let nr = replicas as f64;
    let mut final_gaps = Vec::new();
    let mut coalesced = 0.0;
    for (k, &time) in times.iter().enumerate() {
        for (i, &v) in sites.iter().enumerate() {
            let plus = traces.iter().map(|tr| tr[k].0[i].0).sum::<f64>() / nr;
            let minus = traces.iter().map(|tr| tr[k].0[i].1).sum::<f64>() / nr;
            for (name, val) in [("mean_plus", plus), ("mean_minus", minus), ("gap", plus - minus)] {
                t.push(vec![fmt_num(time), v.to_string(), name.into(), fmt_num(val)])?;
            }
            if k + 1 == times.len() {
                final_gaps.push(plus - minus);
            }
        }
        coalesced = traces.iter().filter(|tr| tr[k].1).count() as f64 / nr;
        t.push(vec![fmt_num(time), "all".into(), "coalesced_fraction".into(), fmt_num(coalesced)])?;
    }
    let summary = json!({
        "mode": mode,
        "replicas": replicas,
        "t_end": t_end,
        "final_gap_by_site": final_gaps,
        "final_coalesced_fraction": coalesced,
    });
    Ok(Outcome {
        display: format!("{} rows written; final coalesced fraction {}\n", t.rows().len(), fmt_num(coalesced)),
        summaries: vec![("dynamics".into(), summary)],
        tables: vec![t],
        failed: false,
    })
}

pub fn gap_scan(cfg: &Config, streams: StreamFactory) -> Result<Outcome> {
    let p = params(cfg)?;
    let b: usize = cfg.get_or("b", 2)?;
    let depths: Vec<usize> = cfg.get_list_or("depths", "1,2,3,4,5")?;
    let boundary = parse_boundary(&cfg.get_or("boundary", "plus".to_string())?)?;
    let sc = GapScanConfig {
        burn_in: cfg.get_or("burn_in", 20.0)?,
        t_total: cfg.get_or("t_total", 2000.0)?,
        dt: cfg.get_or("dt", 0.5)?,
        n_reps: cfg.get_or("replicas", 4)?,
    };
    let rows = glauber::gap_scan(b, &depths, &boundary, &p, sc, streams)?;
    let mut t = Table::new("gap_scan", &["depth", "tau", "se", "n_samples", "min_len_over_tau"]);
    for r in &rows {
        t.push(vec![r.depth.to_string(), fmt_num(r.tau), fmt_num(r.se), r.n_samples.to_string(), fmt_num(r.min_len_over_tau)])?;
    }
    let hi = rows.iter().map(|r| r.tau).fold(f64::MIN, f64::max);
    let lo = rows.iter().map(|r| r.tau).fold(f64::MAX, f64::min);
    Ok(Outcome {
        display: format!("{}max/min tau ratio: {}\n", render(&t), fmt_num(hi / lo)),
        summaries: vec![("gap_scan".into(), json!({ "rows": to_value(&rows)?, "tau_ratio": hi / lo }))],
        tables: vec![t],
        failed: false,
    })
}

pub fn cavity(cfg: &Config, streams: StreamFactory) -> Result<Outcome> {
    let b: usize = cfg.get_or("b", 2)?;
    let n: usize = cfg.get_or("grid_n", 8)?;
    let beta: f64 = cfg.get_or("beta", 1.0)?;
    let lambda: f64 = cfg.get_or("lambda", 1.0)?;
    let h: f64 = cfg.get_or("h", 0.0)?;
    let depth: usize = cfg.get_or("depth", 8)?;
    let k_max: usize = cfg.get_or("kmax", 6)?;
    let boundary = LeafBoundary::from_kind(&parse_boundary(&cfg.get_or("boundary", "plus".to_string())?)?)
        .map_err(|e| cfg_err("boundary", e))?;
    let model = CavityModel::new(n, beta, lambda, h, b).map_err(|e| cfg_err("grid_n/beta/lambda/h/b", e))?;
    let s = cavity::cavity_summary(&model, depth, boundary, k_max, streams)?;
    let mut gaps = Table::new("kappa_gaps", &["depth", "gap"]);
    for (d, g) in s.kappa_gaps.iter().enumerate() {
        gaps.push(vec![d.to_string(), fmt_num(*g)])?;
    }
    let mut dk = Table::new("dk_norms", &["k", "norm", "tangent_norm", "b_pow_k_norm"]);
    for k in 0..s.dk_norms.len() {
        dk.push(vec![k.to_string(), fmt_num(s.dk_norms[k]), fmt_num(s.dk_tangent_norms[k]), fmt_num(s.dk_norms[k] * (b as f64).powi(k as i32))])?;
    }
    let mut conv = Table::new("nu_convergence", &["n", "increment"]);
    for (i, v) in s.nu_convergence.iter().enumerate() {
        conv.push(vec![(i + 1).to_string(), fmt_num(*v)])?;
    }
    let mut uniq = Table::new("uniqueness", &["depth", "tv_plus_minus"]);
    for (d, v) in s.uniqueness.tv_by_depth.iter().enumerate() {
        uniq.push(vec![d.to_string(), fmt_num(*v)])?;
    }
    let display = format!(
        "gamma_hat ({}) = {}\nkappa_hat = {} (N/2: {}, error bar {})\nkappa*gamma*b = {} (hypothesis holds: {})\nD^k fitted rate = {}\n",
        s.gamma_label,
        fmt_num(s.gamma_hat),
        fmt_num(s.kappa_hat),
        fmt_num(s.kappa_half),
        fmt_num(s.kappa_error_bar),
        fmt_num(s.product_kgb),
        s.mixing_hypothesis_holds,
        fmt_num(s.dk_rate),
    );
    Ok(Outcome {
        display,
        summaries: vec![("cavity".into(), to_value(&s)?)],
        tables: vec![gaps, dk, conv, uniq],
        failed: false,
    })
}

pub fn kappa_mc_cmd(cfg: &Config, streams: StreamFactory) -> Result<Outcome> {
    let beta: f64 = cfg.get_or("beta", 1.0)?;
    let lambda: f64 = cfg.get_or("lambda", 1.0)?;
    let h: f64 = cfg.get_or("h", 0.0)?;
    let p = ModelParams::new(beta, lambda, h).map_err(|e| cfg_err("beta/lambda/h", e))?;
    let b: usize = cfg.get_or("b", 2)?;
    let depth: usize = cfg.get_or("depth", 4)?;
    let boundary = parse_boundary(&cfg.get_or("boundary", "plus".to_string())?)?;
    let n_samples: usize = cfg.get_or("n_samples", 4000)?;
    let burn_in: f64 = cfg.get_or("burn_in", 10.0)?;
    let spacing: f64 = cfg.get_or("spacing", 0.5)?;
    let (rows, kappa) = kappa_mc(b, depth, &boundary, &p, n_samples, burn_in, spacing, streams)?;
    let mut t = Table::new("kappa_mc", &["depth", "gap", "se"]);
    for r in &rows {
        t.push(vec![r.depth.to_string(), fmt_num(r.gap), fmt_num(r.se)])?;
    }
    Ok(Outcome {
        display: format!("{}kappa_hat (MC) = {}\n", render(&t), fmt_num(kappa)),
        summaries: vec![("kappa_mc".into(), json!({ "rows": to_value(&rows)?, "kappa_hat": kappa }))],
        tables: vec![t],
        failed: false,
    })
}
