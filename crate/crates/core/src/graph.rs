//! Finite graphs with frozen (boundary) vertices, rooted b-ary trees, and
//! spin configurations.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::trajectory::{assemble_field, ModelParams, Piecewise, PiecewiseField, Sign, Trajectory};

/// Fixed trajectories of the frozen vertices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundarySpec {
    trajs: BTreeMap<usize, Trajectory>,
}

impl BoundarySpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, vertex: usize, traj: Trajectory) -> Self {
        self.trajs.insert(vertex, traj);
        self
    }

    pub fn get(&self, v: usize) -> Option<&Trajectory> {
        self.trajs.get(&v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Trajectory)> {
        self.trajs.iter().map(|(&v, t)| (v, t))
    }

    pub fn len(&self) -> usize {
        self.trajs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajs.is_empty()
    }
}

/// Undirected graph whose vertices are either free or frozen to a boundary
/// trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteGraph {
    adj: Vec<Vec<usize>>,
    boundary: BoundarySpec,
    free: Vec<usize>,
}

impl SiteGraph {
    pub fn new(n: usize, edges: &[(usize, usize)], boundary: BoundarySpec) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!("edge ({a},{b}) out of range")));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at {a}")));
            }
            if adj[a].contains(&b) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({a},{b})")));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut beta = None;
        for (v, t) in boundary.iter() {
            if v >= n {
                return Err(Error::InvalidGraph(format!("boundary vertex {v} out of range")));
            }
            match beta {
                None => beta = Some(t.beta()),
                Some(b) if b != t.beta() => return Err(Error::BetaMismatch(b, t.beta())),
                _ => {}
            }
        }
        let free = (0..n).filter(|v| boundary.get(*v).is_none()).collect();
        Ok(Self { adj, boundary, free })
    }

    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::new(n, &edges, BoundarySpec::new())
    }

    pub fn cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGraph("cycle needs at least 3 vertices".into()));
        }
        let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        edges.push((n - 1, 0));
        Self::new(n, &edges, BoundarySpec::new())
    }

    pub fn n_vertices(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn is_frozen(&self, v: usize) -> bool {
        self.boundary.get(v).is_some()
    }

    pub fn free_vertices(&self) -> &[usize] {
        &self.free
    }

    pub fn boundary(&self) -> &BoundarySpec {
        &self.boundary
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e = Vec::new();
        for (a, nb) in self.adj.iter().enumerate() {
            for &b in nb {
                if a < b {
                    e.push((a, b));
                }
            }
        }
        e
    }

    /// Copy of the graph with extra vertices frozen.
    pub fn freeze(&self, extra: &BoundarySpec) -> Result<Self> {
        let mut b = self.boundary.clone();
        for (v, t) in extra.iter() {
            b.trajs.insert(v, t.clone());
        }
        Self::new(self.n_vertices(), &self.edges(), b)
    }
}

/// One trajectory per vertex; frozen vertices carry their boundary path.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinConfigMap {
    trajs: Vec<Trajectory>,
}

impl SpinConfigMap {
    pub fn new(graph: &SiteGraph, trajs: Vec<Trajectory>) -> Result<Self> {
        if trajs.len() != graph.n_vertices() {
            return Err(Error::InvalidArgument("one trajectory per vertex required".into()));
        }
        let beta = trajs.first().map(|t| t.beta());
        for (v, t) in trajs.iter().enumerate() {
            if Some(t.beta()) != beta {
                return Err(Error::BetaMismatch(beta.unwrap(), t.beta()));
            }
            if let Some(b) = graph.boundary().get(v) {
                if b != t {
                    return Err(Error::InvalidArgument(format!("vertex {v} differs from its boundary")));
                }
            }
        }
        Ok(Self { trajs })
    }

    /// Free vertices constant at `sign`, frozen ones at their boundary.
    pub fn uniform(graph: &SiteGraph, sign: Sign, beta: f64) -> Result<Self> {
        let trajs = (0..graph.n_vertices())
            .map(|v| match graph.boundary().get(v) {
                Some(t) => Ok(t.clone()),
                None => Trajectory::constant(sign, beta),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(graph, trajs)
    }

    pub fn get(&self, v: usize) -> &Trajectory {
        &self.trajs[v]
    }

    pub(crate) fn set(&mut self, v: usize, t: Trajectory) {
        self.trajs[v] = t;
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajs
    }

    pub fn beta(&self) -> f64 {
        self.trajs[0].beta()
    }
}

/// DLR local field at free vertex `x`: base field plus all neighbour paths.
pub fn local_field(
    graph: &SiteGraph,
    config: &SpinConfigMap,
    x: usize,
    params: &ModelParams,
) -> Result<PiecewiseField> {
    if graph.is_frozen(x) {
        return Err(Error::FrozenVertex(x));
    }
    assemble_field(params, graph.neighbors(x).iter().map(|&y| config.get(y)), None)
}

/// Boundary placed on the ghost children below the deepest free level.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryKind {
    Plus,
    Minus,
    /// No ghost leaves (open boundary).
    Free,
    /// One trajectory per ghost leaf, in breadth-first order.
    Custom(Vec<Trajectory>),
}

/// Rooted regular tree: free vertices `0..n_free` in breadth-first order
/// (root 0), then ghost leaves, then the optional ghost parent.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub graph: SiteGraph,
    pub b: usize,
    pub depth: usize,
    pub n_free: usize,
    pub depth_of: Vec<usize>,
    pub parent: Vec<Option<usize>>,
    pub ghost_parent: Option<usize>,
}

pub fn build_tree(
    b: usize,
    depth: usize,
    boundary: &BoundaryKind,
    beta: f64,
    root_field: Option<Trajectory>,
) -> Result<Tree> {
    if b < 2 {
        return Err(Error::InvalidGraph(format!("branching b must be >= 2, got {b}")));
    }
    let pow = |k: usize| -> Result<usize> {
        b.checked_pow(k as u32).ok_or_else(|| Error::InvalidGraph("tree too large".into()))
    };
    let n_free = (pow(depth + 1)? - 1) / (b - 1);
    let n_ghost = if matches!(boundary, BoundaryKind::Free) { 0 } else { pow(depth + 1)? };
    if n_free + n_ghost > 1 << 24 {
        return Err(Error::InvalidGraph("tree too large".into()));
    }
    let mut depth_of = vec![0; n_free];
    let mut parent = vec![None; n_free];
    let mut edges = Vec::new();
    for v in 1..n_free {
        let p = (v - 1) / b;
        parent[v] = Some(p);
        depth_of[v] = depth_of[p] + 1;
        edges.push((p, v));
    }
    let first_leaf = n_free - pow(depth)?;
    let mut bspec = BoundarySpec::new();
    let ghost_trajs: Vec<Trajectory> = match boundary {
        BoundaryKind::Plus => vec![Trajectory::constant(Sign::Plus, beta)?; n_ghost],
        BoundaryKind::Minus => vec![Trajectory::constant(Sign::Minus, beta)?; n_ghost],
        BoundaryKind::Free => Vec::new(),
        BoundaryKind::Custom(t) => {
            if t.len() != n_ghost {
                return Err(Error::InvalidGraph(format!("need {n_ghost} boundary paths, got {}", t.len())));
            }
            t.clone()
        }
    };
    for (i, t) in ghost_trajs.into_iter().enumerate() {
        let g = n_free + i;
        let p = first_leaf + i / b;
        edges.push((p, g));
        depth_of.push(depth + 1);
        parent.push(Some(p));
        bspec = bspec.with(g, t);
    }
    let mut n = n_free + n_ghost;
    let ghost_parent = match root_field {
        Some(eta) => {
            edges.push((0, n));
            bspec = bspec.with(n, eta);
            depth_of.push(0);
            parent.push(None);
            n += 1;
            Some(n - 1)
        }
        None => None,
    };
    let graph = SiteGraph::new(n, &edges, bspec)?;
    Ok(Tree { graph, b, depth, n_free, depth_of, parent, ghost_parent })
}

impl Tree {
    /// Free vertices on the leftmost root-to-leaf path, by depth.
    pub fn spine(&self) -> Vec<usize> {
        let mut v = 0;
        let mut out = vec![0];
        for _ in 0..self.depth {
            v = v * self.b + 1;
            out.push(v);
        }
        out
    }

    /// Free vertices in the subtree rooted at `v` (including `v`).
    pub fn subtree(&self, v: usize) -> Vec<usize> {
        let mut out = vec![];
        let mut stack = vec![v];
        while let Some(x) = stack.pop() {
            if x >= self.n_free {
                continue;
            }
            out.push(x);
            for c in 1..=self.b {
                stack.push(x * self.b + c);
            }
        }
        out.sort_unstable();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tree_sizes() {
        let t = build_tree(2, 0, &BoundaryKind::Plus, 1.0, None).unwrap();
        assert_eq!((t.n_free, t.graph.n_vertices()), (1, 3));
        assert_eq!(t.graph.free_vertices(), &[0]);

        let t = build_tree(2, 3, &BoundaryKind::Plus, 1.0, None).unwrap();
        assert_eq!(t.n_free, 15);
        assert_eq!(t.graph.boundary().len(), 16);
        assert!(t.graph.boundary().iter().all(|(_, tr)| tr.is_constant(Sign::Plus)));
        for g in 15..31 {
            assert_eq!(t.graph.neighbors(g).len(), 1);
            assert!(t.graph.neighbors(g)[0] >= 7);
        }

        assert_eq!(build_tree(3, 2, &BoundaryKind::Minus, 1.0, None).unwrap().n_free, 13);
        assert!(build_tree(1, 2, &BoundaryKind::Plus, 1.0, None).is_err());
    }

    #[test]
    fn ghost_parent_and_subtree() {
        let eta = Trajectory::new(Sign::Minus, vec![0.5], 1.0).unwrap();
        let t = build_tree(2, 2, &BoundaryKind::Free, 1.0, Some(eta.clone())).unwrap();
        let g = t.ghost_parent.unwrap();
        assert_eq!(t.graph.boundary().get(g), Some(&eta));
        assert!(t.graph.neighbors(0).contains(&g));
        assert_eq!(t.subtree(1), vec![1, 3, 4]);
        assert_eq!(t.spine(), vec![0, 1, 3]);
    }

    #[test]
    fn local_field_examples() {
        let params = ModelParams::new(1.0, 1.0, 0.0).unwrap();
        let g = SiteGraph::path(1).unwrap();
        let c = SpinConfigMap::uniform(&g, Sign::Plus, 1.0).unwrap();
        assert_eq!(local_field(&g, &c, 0, &params).unwrap(), params.h);

        let t = build_tree(2, 0, &BoundaryKind::Plus, 1.0, None).unwrap();
        let c = SpinConfigMap::uniform(&t.graph, Sign::Minus, 1.0).unwrap();
        assert_eq!(local_field(&t.graph, &c, 0, &params).unwrap().values(), &[2.0]);
        assert_eq!(local_field(&t.graph, &c, 1, &params), Err(Error::FrozenVertex(1)));

        let kids = vec![
            Trajectory::new(Sign::Plus, vec![0.5], 1.0).unwrap(),
            Trajectory::new(Sign::Minus, vec![0.5], 1.0).unwrap(),
        ];
        let t = build_tree(2, 0, &BoundaryKind::Custom(kids), 1.0, None).unwrap();
        let c = SpinConfigMap::uniform(&t.graph, Sign::Plus, 1.0).unwrap();
        let f = local_field(&t.graph, &c, 0, &params).unwrap();
        assert_eq!(f.values(), &[0.0]);
    }

    #[test]
    fn invalid_graphs() {
        assert!(SiteGraph::new(2, &[(0, 2)], BoundarySpec::new()).is_err());
        assert!(SiteGraph::new(2, &[(0, 0)], BoundarySpec::new()).is_err());
        assert!(SiteGraph::new(2, &[(0, 1), (1, 0)], BoundarySpec::new()).is_err());
        let g = SiteGraph::path(2).unwrap();
        let bad = vec![Trajectory::constant(Sign::Plus, 1.0).unwrap(), Trajectory::constant(Sign::Plus, 2.0).unwrap()];
        assert!(SpinConfigMap::new(&g, bad).is_err());
    }

    proptest! {
        #[test]
        fn local_field_is_order_preserving(fa in prop::collection::vec(0.01f64..0.99, 0..5),
                                           fb in prop::collection::vec(0.01f64..0.99, 0..5),
                                           t in 0.0f64..1.0) {
            // Raising a neighbour pointwise (to its max with another path)
            // raises the field pointwise.
            let params = ModelParams::new(1.0, 1.0, 0.2).unwrap();
            let g = SiteGraph::path(3).unwrap();
            let a = Trajectory::from_flip_times(Sign::Minus, fa, 1.0).unwrap();
            let b = Trajectory::from_flip_times(Sign::Plus, fb, 1.0).unwrap();
            let plus = Trajectory::constant(Sign::Plus, 1.0).unwrap();
            let low = SpinConfigMap::new(&g, vec![a.clone(), plus.clone(), b.clone()]).unwrap();
            let high = SpinConfigMap::new(&g, vec![plus.clone(), plus.clone(), b]).unwrap();
            let fl = local_field(&g, &low, 1, &params).unwrap().value_at(t).unwrap();
            let fh = local_field(&g, &high, 1, &params).unwrap().value_at(t).unwrap();
            prop_assert!(fl <= fh);
        }
    }
}
