//! Text forms of graphs, boundaries and censoring schedules.
//!
//! Graphs: `single`, `path:<n>`, `cycle:<n>`, `tree:<b>:<depth>[:<boundary>]`.
//! Boundaries: `plus`, `minus`, `free`.
//! Schedules: `;`-separated pieces `<t>@<set>` (a bare `<set>` starts at 0),
//! with sets `full`, `none`, `subtree:<v>` and `sites:<v>+<v>+…`.

use tfim_core::glauber::{ActiveSet, Schedule};
use tfim_core::graph::{build_tree, BoundaryKind, SiteGraph, Tree};

use crate::config::{ConfigError, ConfigResult};

pub struct GraphSpec {
    pub graph: SiteGraph,
    pub tree: Option<Tree>,
}

fn bad(key: &str, msg: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("key `{key}`: {msg}"))
}

fn num<T: std::str::FromStr>(key: &str, s: &str) -> ConfigResult<T> {
    s.trim().parse().map_err(|_| bad(key, format!("cannot parse `{s}`")))
}

pub fn parse_boundary(s: &str) -> ConfigResult<BoundaryKind> {
    match s.trim() {
        "plus" => Ok(BoundaryKind::Plus),
        "minus" => Ok(BoundaryKind::Minus),
        "free" => Ok(BoundaryKind::Free),
        other => Err(bad("boundary", format!("unknown boundary `{other}`"))),
    }
}

pub fn parse_graph(s: &str, beta: f64) -> ConfigResult<GraphSpec> {
    let parts: Vec<&str> = s.trim().split(':').collect();
    let plain = |g: tfim_core::Result<SiteGraph>| -> ConfigResult<GraphSpec> {
        Ok(GraphSpec { graph: g.map_err(|e| bad("graph", e))?, tree: None })
    };
    match parts.as_slice() {
        ["single"] => plain(SiteGraph::path(1)),
        ["path", n] => plain(SiteGraph::path(num("graph", n)?)),
        ["cycle", n] => plain(SiteGraph::cycle(num("graph", n)?)),
        ["tree", b, d, rest @ ..] => {
            let boundary = match rest {
                [] => BoundaryKind::Plus,
                [x] => parse_boundary(x)?,
                _ => return Err(bad("graph", format!("cannot parse `{s}`"))),
            };
            let tree = build_tree(num("graph", b)?, num("graph", d)?, &boundary, beta, None).map_err(|e| bad("graph", e))?;
            Ok(GraphSpec { graph: tree.graph.clone(), tree: Some(tree) })
        }
        _ => Err(bad("graph", format!("cannot parse `{s}`"))),
    }
}

fn parse_set(key: &str, s: &str, spec: &GraphSpec) -> ConfigResult<ActiveSet> {
    let s = s.trim();
    if s == "full" {
        return Ok(ActiveSet::All);
    }
    if s == "none" {
        return Ok(ActiveSet::Only(Default::default()));
    }
    if let Some(v) = s.strip_prefix("subtree:") {
        let tree = spec.tree.as_ref().ok_or_else(|| bad(key, "subtree presets need a tree graph"))?;
        let v: usize = num(key, v)?;
        if v >= tree.n_free {
            return Err(bad(key, format!("vertex {v} is not a free tree vertex")));
        }
        return Ok(ActiveSet::Only(tree.subtree(v).into_iter().collect()));
    }
    if let Some(list) = s.strip_prefix("sites:") {
        return Ok(ActiveSet::Only(list.split('+').map(|v| num(key, v)).collect::<ConfigResult<_>>()?));
    }
    Err(bad(key, format!("unknown site set `{s}`")))
}

pub fn parse_schedule(key: &str, s: &str, spec: &GraphSpec) -> ConfigResult<Schedule> {
    let mut pieces = Vec::new();
    for piece in s.split(';').filter(|p| !p.trim().is_empty()) {
        let (t, set) = match piece.split_once('@') {
            Some((t, set)) => (num::<f64>(key, t)?, set),
            None => (0.0, piece),
        };
        pieces.push((t, parse_set(key, set, spec)?));
    }
    Schedule::new(pieces).map_err(|e| bad(key, e))
}
