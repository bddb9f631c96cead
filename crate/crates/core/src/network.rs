//! Immunity-stratified Erdős–Rényi graphs, modularity over immunity-level
//! communities and the homophily-weighted edge-update process.
//!
//! A network owns its RNG state, so a `(structure, seed)` pair determines
//! every future update deterministically. Updates pick a uniform node,
//! remove one of its edges with probability proportional to
//! `(1-h) + h*d` (dissimilarity `d = |level difference| / 4`) and add an edge
//! to a previous non-neighbour with probability proportional to
//! `(1-h) + h*(1-d)`. Degenerate cases (isolated or saturated node) skip the
//! corresponding action.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the five immunity categories, ordered from very low (0) to very
/// high (4).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImmunityLevel(u8);

pub const LEVEL_COUNT: usize = 5;

impl ImmunityLevel {
    pub fn new(level: u8) -> Result<Self> {
        if (level as usize) < LEVEL_COUNT {
            Ok(Self(level))
        } else {
            Err(Error::InvalidArgument {
                name: "level",
                reason: format!("immunity level must be in 0..=4, got {level}"),
            })
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Normalised dissimilarity `|a - b| / 4` in `[0, 1]`.
    pub fn dissimilarity(self, other: Self) -> f64 {
        f64::from(self.0.abs_diff(other.0)) / 4.0
    }
}

/// Undirected graph with per-node immunity levels and an owned RNG.
#[derive(Debug, Clone)]
pub struct ImmunityNetwork {
    n: usize,
    adj: Vec<bool>,
    levels: Vec<ImmunityLevel>,
    edge_count: usize,
    rng: ChaCha8Rng,
}

/// Record of a single update: what changed and the statistics afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub index: usize,
    pub removed: Option<Edge>,
    pub added: Option<Edge>,
    pub modularity: f64,
    pub density: f64,
}

pub type UpdateTrace = Vec<UpdateRecord>;

/// An undirected edge as a normalised `(u, v)` pair with `u < v`.
pub type Edge = (usize, usize);

/// Weighted draw by cumulative scan; a non-positive total degrades to a
/// uniform draw so that "no preference" never stalls an update.
fn weighted_pick(r: f64, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return ((r * weights.len() as f64) as usize).min(weights.len() - 1);
    }
    let target = r * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if acc > target {
            return i;
        }
    }
    weights.len() - 1
}

impl ImmunityNetwork {
    /// Erdős–Rényi graph: every unordered pair is an edge independently with
    /// probability `p`. Immunity levels are the shuffled multiset described
    /// by `level_counts` (index = level).
    pub fn generate_er(n: usize, p: f64, level_counts: &[usize; 5], seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument {
                name: "p",
                reason: format!("edge probability must lie in [0,1], got {p}"),
            });
        }
        let sum: usize = level_counts.iter().sum();
        if sum != n {
            return Err(Error::InvalidPartition { sum, n });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut levels = Vec::with_capacity(n);
        for (level, count) in level_counts.iter().enumerate() {
            levels.extend(std::iter::repeat_n(ImmunityLevel(level as u8), *count));
        }
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            levels.swap(i, j);
        }
        let mut net = Self {
            n,
            adj: vec![false; n * n],
            levels,
            edge_count: 0,
            rng,
        };
        for i in 0..n {
            for j in (i + 1)..n {
                if net.rng.random::<f64>() < p {
                    net.set_edge(i, j, true);
                }
            }
        }
        Ok(net)
    }

    /// Builds a network from an explicit edge list and level assignment.
    pub fn from_parts(
        edges: &[(usize, usize)],
        levels: Vec<ImmunityLevel>,
        seed: u64,
    ) -> Result<Self> {
        let n = levels.len();
        let mut net = Self {
            n,
            adj: vec![false; n * n],
            levels,
            edge_count: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        for &(u, v) in edges {
            if u == v || u >= n || v >= n {
                return Err(Error::InvalidArgument {
                    name: "edges",
                    reason: format!("edge ({u},{v}) is not a valid pair for {n} nodes"),
                });
            }
            net.set_edge(u, v, true);
        }
        Ok(net)
    }

    fn set_edge(&mut self, u: usize, v: usize, present: bool) {
        let had = self.adj[u * self.n + v];
        if had != present {
            self.adj[u * self.n + v] = present;
            self.adj[v * self.n + u] = present;
            if present {
                self.edge_count += 1;
            } else {
                self.edge_count -= 1;
            }
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u * self.n + v]
    }

    pub fn degree(&self, v: usize) -> usize {
        (0..self.n).filter(|&w| self.adj[v * self.n + w]).count()
    }

    pub fn levels(&self) -> &[ImmunityLevel] {
        &self.levels
    }

    /// All edges as normalised `(u, v)` pairs with `u < v`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for u in 0..self.n {
            for v in (u + 1)..self.n {
                if self.adj[u * self.n + v] {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Modularity over the ordered-pair double sum with communities given by
    /// immunity level (self-pairs included through the null term).
    pub fn modularity(&self) -> Result<f64> {
        if self.edge_count == 0 {
            return Err(Error::UndefinedModularity);
        }
        let two_e = 2.0 * self.edge_count as f64;
        let mut within = [0.0f64; LEVEL_COUNT];
        let mut deg_sum = [0.0f64; LEVEL_COUNT];
        for u in 0..self.n {
            let cu = self.levels[u].value() as usize;
            for v in 0..self.n {
                if self.adj[u * self.n + v] {
                    deg_sum[cu] += 1.0;
                    if self.levels[v] == self.levels[u] {
                        within[cu] += 1.0;
                    }
                }
            }
        }
        let mut q = 0.0;
        for c in 0..LEVEL_COUNT {
            q += within[c] / two_e - (deg_sum[c] / two_e).powi(2);
        }
        Ok(q)
    }

    /// Edge count divided by the number of possible pairs.
    pub fn density(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.edge_count as f64 / (self.n * (self.n - 1) / 2) as f64
    }

    /// One homophily-weighted rewiring step; see the module docs. Returns the
    /// removed and added edges, either of which may be skipped.
    pub fn update_step(&mut self, homophily_weight: f64) -> (Option<Edge>, Option<Edge>) {
        self.update_step_with_activity(homophily_weight, 1.0)
    }

    /// [`Self::update_step`] with an extra activity scalar in `[0, 1]` that
    /// gates the edge-addition half (1.0 keeps it unconditional).
    pub fn update_step_with_activity(
        &mut self,
        homophily_weight: f64,
        activity: f64,
    ) -> (Option<Edge>, Option<Edge>) {
        debug_assert!(self.n >= 3, "update_step needs at least 3 nodes");
        let h = homophily_weight.clamp(0.0, 1.0);
        let v = self.rng.random_range(0..self.n);
        let lv = self.levels[v];

        let neighbors: Vec<usize> = (0..self.n).filter(|&w| self.adj[v * self.n + w]).collect();
        // addition candidates are evaluated against the pre-update adjacency,
        // so a just-removed neighbour is not immediately re-added
        let strangers: Vec<usize> = (0..self.n)
            .filter(|&w| w != v && !self.adj[v * self.n + w])
            .collect();

        let removed = if neighbors.is_empty() {
            None
        } else {
            let weights: Vec<f64> = neighbors
                .iter()
                .map(|&w| (1.0 - h) + h * lv.dissimilarity(self.levels[w]))
                .collect();
            let r = self.rng.random::<f64>();
            let w = neighbors[weighted_pick(r, &weights)];
            self.set_edge(v, w, false);
            Some((v.min(w), v.max(w)))
        };

        // the gate draw is consumed only when there are candidates and the
        // gate is active, keeping the default draw sequence unchanged
        let skip_addition =
            strangers.is_empty() || (activity < 1.0 && self.rng.random::<f64>() >= activity);
        let added = if skip_addition {
            None
        } else {
            let weights: Vec<f64> = strangers
                .iter()
                .map(|&w| (1.0 - h) + h * (1.0 - lv.dissimilarity(self.levels[w])))
                .collect();
            let r = self.rng.random::<f64>();
            let w = strangers[weighted_pick(r, &weights)];
            self.set_edge(v, w, true);
            Some((v.min(w), v.max(w)))
        };

        (removed, added)
    }

    /// Applies `n_updates` update steps, recording modularity and density
    /// after each one.
    pub fn run_updates(&mut self, n_updates: usize, homophily_weight: f64) -> Result<UpdateTrace> {
        self.run_updates_with_activity(n_updates, homophily_weight, 1.0)
    }

    pub fn run_updates_with_activity(
        &mut self,
        n_updates: usize,
        homophily_weight: f64,
        activity: f64,
    ) -> Result<UpdateTrace> {
        if !(0.0..=1.0).contains(&homophily_weight) {
            return Err(Error::InvalidArgument {
                name: "homophily_weight",
                reason: format!("must lie in [0,1], got {homophily_weight}"),
            });
        }
        if !(0.0..=1.0).contains(&activity) {
            return Err(Error::InvalidArgument {
                name: "activity",
                reason: format!("must lie in [0,1], got {activity}"),
            });
        }
        if self.n < 3 {
            return Err(Error::InvalidArgument {
                name: "n",
                reason: format!("updates need at least 3 nodes, got {}", self.n),
            });
        }
        let mut trace = Vec::with_capacity(n_updates);
        for index in 0..n_updates {
            let (removed, added) = self.update_step_with_activity(homophily_weight, activity);
            trace.push(UpdateRecord {
                index,
                removed,
                added,
                modularity: self.modularity()?,
                density: self.density(),
            });
        }
        Ok(trace)
    }

    /// Edge list as text, one `u v` pair per line, 0-indexed.
    pub fn to_edge_list_string(&self) -> String {
        let mut s = String::new();
        for (u, v) in self.edges() {
            s.push_str(&format!("{u} {v}\n"));
        }
        s
    }

    /// Level assignment as text, one `node level` pair per line.
    pub fn to_levels_string(&self) -> String {
        let mut s = String::new();
        for (node, level) in self.levels.iter().enumerate() {
            s.push_str(&format!("{node} {}\n", level.value()));
        }
        s
    }
}
