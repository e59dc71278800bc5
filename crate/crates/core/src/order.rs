//! Stochastic order on `{0,1}^n` (bitwise partial order, bit set = `+`).
//!
//! A signed measure `ρ` is stochastically positive when `ρ(U) ≥ 0` for every
//! up-set `U`. The minimum of `ρ(U)` over up-sets is a minimum-weight closure
//! problem, solved exactly as a minimum cut on the covering graph, so the
//! check is exhaustive for every `n`, not only where up-sets can be listed.

/// Minimum of `ρ(U)` over up-sets `U` of `{0,1}^n`; `ρ.len()` must be `2^n`.
pub fn min_upset_mass(rho: &[f64]) -> f64 {
    let size = rho.len();
    assert!(size.is_power_of_two(), "measure length must be a power of two");
    let nbits = size.trailing_zeros() as usize;
    // Maximum-weight closure with weights −ρ; closure = up-set.
    let src = size;
    let snk = size + 1;
    let mut g = FlowGraph::new(size + 2);
    let mut positive = 0.0;
    for (s, &r) in rho.iter().enumerate() {
        let w = -r;
        if w > 0.0 {
            positive += w;
            g.add_edge(src, s, w);
        } else if w < 0.0 {
            g.add_edge(s, snk, -w);
        }
        for b in 0..nbits {
            if s & (1 << b) == 0 {
                g.add_edge(s, s | (1 << b), f64::INFINITY);
            }
        }
    }
    let flow = g.max_flow(src, snk);
    -(positive - flow)
}

/// `ρ(f) ≥ −tol` for every increasing `f`.
pub fn stoch_positive(rho: &[f64], tol: f64) -> bool {
    min_upset_mass(rho) >= -tol
}

/// `μ ≼ ν`: `ν − μ` is stochastically positive.
pub fn stoch_leq(mu: &[f64], nu: &[f64], tol: f64) -> bool {
    assert_eq!(mu.len(), nu.len());
    let d: Vec<f64> = nu.iter().zip(mu).map(|(a, b)| a - b).collect();
    stoch_positive(&d, tol)
}

/// `f(s) ≤ f(s')` on every covering pair `s < s'`.
pub fn is_increasing(f: &[f64], tol: f64) -> bool {
    let nbits = f.len().trailing_zeros() as usize;
    (0..f.len()).all(|s| (0..nbits).all(|b| s & (1 << b) != 0 || f[s] <= f[s | (1 << b)] + tol))
}

struct Edge {
    to: usize,
    cap: f64,
}

/// Dinic max-flow with floating capacities.
struct FlowGraph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        Self { edges: Vec::new(), adj: vec![Vec::new(); n] }
    }

    fn add_edge(&mut self, a: usize, b: usize, cap: f64) {
        self.adj[a].push(self.edges.len());
        self.edges.push(Edge { to: b, cap });
        self.adj[b].push(self.edges.len());
        self.edges.push(Edge { to: a, cap: 0.0 });
    }

    fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        const EPS: f64 = 1e-300;
        let n = self.adj.len();
        let mut total = 0.0;
        loop {
            let mut level = vec![usize::MAX; n];
            level[s] = 0;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(v) = queue.pop_front() {
                for &e in &self.adj[v] {
                    let to = self.edges[e].to;
                    if self.edges[e].cap > EPS && level[to] == usize::MAX {
                        level[to] = level[v] + 1;
                        queue.push_back(to);
                    }
                }
            }
            if level[t] == usize::MAX {
                return total;
            }
            let mut it = vec![0usize; n];
            loop {
                let f = self.augment(s, t, f64::INFINITY, &level, &mut it);
                if f <= EPS {
                    break;
                }
                total += f;
            }
        }
    }

    fn augment(&mut self, v: usize, t: usize, pushed: f64, level: &[usize], it: &mut [usize]) -> f64 {
        if v == t {
            return pushed;
        }
        while it[v] < self.adj[v].len() {
            let e = self.adj[v][it[v]];
            let to = self.edges[e].to;
            if self.edges[e].cap > 1e-300 && level[to] == level[v] + 1 {
                let f = self.augment(to, t, pushed.min(self.edges[e].cap), level, it);
                if f > 0.0 {
                    self.edges[e].cap -= f;
                    self.edges[e ^ 1].cap += f;
                    return f;
                }
            }
            it[v] += 1;
        }
        0.0
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// All up-sets of `{0,1}^n` as bitmasks over the `2^n` states, built by
    /// splitting on the top bit: an up-set is a pair `(U0, U1)` of up-sets of
    /// the lower cube with `U0 ⊆ U1`.
    pub(crate) fn all_upsets(n: usize) -> Vec<u64> {
        assert!(n <= 5);
        if n == 0 {
            return vec![0, 1];
        }
        let lower = all_upsets(n - 1);
        let half = 1usize << (n - 1);
        let mut out = Vec::new();
        for &u0 in &lower {
            for &u1 in &lower {
                if u0 & !u1 == 0 {
                    out.push(u0 | (u1 << half));
                }
            }
        }
        out
    }

    fn brute_min(rho: &[f64]) -> f64 {
        let n = rho.len().trailing_zeros() as usize;
        all_upsets(n)
            .into_iter()
            .map(|u| (0..rho.len()).filter(|s| u >> s & 1 == 1).map(|s| rho[s]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn dedekind_counts() {
        let counts: Vec<usize> = (0..=4).map(|n| all_upsets(n).len()).collect();
        assert_eq!(counts, vec![2, 3, 6, 20, 168]);
    }

    #[test]
    fn examples() {
        // N=1: δ₊ − δ₋ with + = bit 1.
        assert!(stoch_positive(&[-1.0, 1.0], 1e-12));
        assert!(!stoch_positive(&[1.0, -1.0], 1e-12));
        let mu = [0.1, 0.2, 0.3, 0.4];
        assert!(stoch_leq(&mu, &mu, 1e-12));
        // N=2: 0b01 and 0b10 are incomparable, so their difference is not
        // positive; the up-set {10, 11} has mass −1.
        let mut d = [0.0; 4];
        d[0b01] = 1.0;
        d[0b10] = -1.0;
        assert!(!stoch_positive(&d, 1e-12));
        assert!((brute_min(&d) - -1.0).abs() < 1e-15);
        assert!((min_upset_mass(&d) - -1.0).abs() < 1e-12);
        // Moving mass from bottom to top is positive.
        let mut d = [0.0; 4];
        d[0] = -0.5;
        d[0b01] = 0.5;
        assert!(stoch_positive(&d, 1e-12));
    }

    #[test]
    fn increasing_check() {
        assert!(is_increasing(&[0.0, 1.0, 1.0, 2.0], 0.0));
        assert!(!is_increasing(&[0.0, 1.0, -1.0, 2.0], 0.0));
    }

    proptest! {
        #[test]
        fn mincut_matches_enumeration(n in 1usize..=4, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rho: Vec<f64> = (0..1 << n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            prop_assert!((min_upset_mass(&rho) - brute_min(&rho)).abs() < 1e-12);
        }
    }
}
