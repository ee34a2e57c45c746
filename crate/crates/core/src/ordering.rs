//! View-sequence recovery: traveling-salesman tours over a distance matrix and
//! greedy chaining of match counts.
//!
//! Tours are reported in canonical form so that equal tours compare equal:
//! cycles start at index 0 and continue toward the smaller of its two
//! neighbors; open paths run from the smaller endpoint to the larger.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metrics::{match_count_weight, DistanceMatrix};
use crate::pairs::{DisjointSets, MatchTable};

/// Largest instance accepted by the exact solver.
pub const EXACT_MAX_NODES: usize = 13;

/// Above this size the heuristic samples its start nodes.
const HEURISTIC_ALL_STARTS_MAX: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrderingError {
    #[error("instance has {n} nodes, exact solver handles at most {max}")]
    TooLarge { n: usize, max: usize },
    #[error("no tour with finite cost exists")]
    Infeasible,
    #[error("instance has no nodes")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tour {
    pub order: Vec<usize>,
    pub cyclic: bool,
    pub cost: f64,
}

impl Tour {
    fn new(order: Vec<usize>, cyclic: bool, weight: impl Fn(usize, usize) -> f64) -> Self {
        let mut cost = order.windows(2).fold(0.0, |acc, w| acc + weight(w[0], w[1]));
        if cyclic && order.len() > 1 {
            cost += weight(order[order.len() - 1], order[0]);
        }
        Self { order, cyclic, cost }
    }

    /// Undirected edges `(min, max)` of the tour, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.order.len();
        let mut edges: Vec<_> = self
            .order
            .windows(2)
            .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
            .collect();
        if self.cyclic && n > 2 {
            let (a, b) = (self.order[n - 1], self.order[0]);
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        edges
    }
}

fn canonical_cycle(mut order: Vec<usize>) -> Vec<usize> {
    if let Some(p) = order.iter().position(|&v| v == 0) {
        order.rotate_left(p);
    }
    let n = order.len();
    if n > 2 && order[n - 1] < order[1] {
        order[1..].reverse();
    }
    order
}

fn canonical_path(mut order: Vec<usize>) -> Vec<usize> {
    if order.len() > 1 && order[order.len() - 1] < order[0] {
        order.reverse();
    }
    order
}

/// Dense cost table, optionally extended by a zero-cost virtual node used to
/// turn path problems into cycle problems.
struct Costs {
    n: usize,
    w: Vec<f64>,
}

impl Costs {
    fn from_matrix(d: &DistanceMatrix) -> Self {
        let n = d.len();
        let w = (0..n).flat_map(|i| d.row(i).iter().copied()).collect();
        Self { n, w }
    }

    fn with_virtual_node(d: &DistanceMatrix) -> Self {
        let n = d.len() + 1;
        let mut w = vec![0.0; n * n];
        for i in 0..d.len() {
            for j in 0..d.len() {
                w[i * n + j] = d.get(i, j);
            }
        }
        Self { n, w }
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }
}

fn held_karp(c: &Costs) -> Result<Vec<usize>, OrderingError> {
    let n = c.n;
    match n {
        0 => return Err(OrderingError::Empty),
        1 => return Ok(vec![0]),
        _ => {}
    }
    // Node 0 is the fixed start; bit k of a mask stands for node k + 1.
    let m = n - 1;
    let full = 1usize << m;
    let mut dp = vec![f64::INFINITY; full * m];
    let mut parent = vec![usize::MAX; full * m];
    for k in 0..m {
        dp[(1 << k) * m + k] = c.get(0, k + 1);
    }
    for mask in 1..full {
        for last in 0..m {
            if mask & (1 << last) == 0 {
                continue;
            }
            let cur = dp[mask * m + last];
            if !cur.is_finite() {
                continue;
            }
            for next in 0..m {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let cand = cur + c.get(last + 1, next + 1);
                let slot = (mask | (1 << next)) * m + next;
                if cand < dp[slot] {
                    dp[slot] = cand;
                    parent[slot] = last;
                }
            }
        }
    }
    let mask = full - 1;
    let mut best = (f64::INFINITY, usize::MAX);
    for last in 0..m {
        let total = dp[mask * m + last] + c.get(last + 1, 0);
        if total < best.0 {
            best = (total, last);
        }
    }
    if !best.0.is_finite() {
        return Err(OrderingError::Infeasible);
    }
    let mut order = Vec::with_capacity(n);
    let (mut mask, mut last) = (mask, best.1);
    while last != usize::MAX {
        order.push(last + 1);
        let prev = parent[mask * m + last];
        mask &= !(1 << last);
        last = prev;
    }
    order.push(0);
    order.reverse();
    Ok(order)
}

fn nearest_neighbor(c: &Costs, start: usize) -> Option<Vec<usize>> {
    let mut visited = vec![false; c.n];
    let mut order = Vec::with_capacity(c.n);
    let mut cur = start;
    visited[cur] = true;
    order.push(cur);
    for _ in 1..c.n {
        let next = (0..c.n)
            .filter(|&j| !visited[j] && c.get(cur, j).is_finite())
            .min_by(|&a, &b| c.get(cur, a).total_cmp(&c.get(cur, b)).then(a.cmp(&b)))?;
        visited[next] = true;
        order.push(next);
        cur = next;
    }
    c.get(cur, start).is_finite().then_some(order)
}

/// Improving 2-opt moves must gain more than this fraction of the replaced edges.
const TWO_OPT_REL_EPS: f64 = 1e-12;

fn two_opt(c: &Costs, tour: &mut [usize]) {
    let n = tour.len();
    if n < 4 {
        return;
    }
    loop {
        let mut improved = false;
        for i in 0..n - 1 {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (a, b) = (tour[i], tour[i + 1]);
                let (p, q) = (tour[j], tour[(j + 1) % n]);
                let old = c.get(a, b) + c.get(p, q);
                let new = c.get(a, p) + c.get(b, q);
                if new - old < -TWO_OPT_REL_EPS * old.max(1.0) {
                    tour[i + 1..=j].reverse();
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

fn cycle_cost(c: &Costs, order: &[usize]) -> f64 {
    let n = order.len();
    (0..n).map(|k| c.get(order[k], order[(k + 1) % n])).sum()
}

fn heuristic(c: &Costs, seed: u64) -> Result<Vec<usize>, OrderingError> {
    if c.n == 0 {
        return Err(OrderingError::Empty);
    }
    let starts: Vec<usize> = if c.n <= HEURISTIC_ALL_STARTS_MAX {
        (0..c.n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = sample(&mut rng, c.n, HEURISTIC_ALL_STARTS_MAX).into_vec();
        s.sort_unstable();
        s
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for start in starts {
        let Some(mut tour) = nearest_neighbor(c, start) else {
            continue;
        };
        two_opt(c, &mut tour);
        let cost = cycle_cost(c, &tour);
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, tour));
        }
    }
    best.map(|(_, t)| t).ok_or(OrderingError::Infeasible)
}

fn finish_cycle(d: &DistanceMatrix, order: Vec<usize>) -> Tour {
    Tour::new(canonical_cycle(order), true, |i, j| d.get(i, j))
}

/// Drops the virtual node (index `n`) from a cycle, leaving the open path.
fn finish_path(d: &DistanceMatrix, mut cycle: Vec<usize>) -> Tour {
    let virt = d.len();
    let p = cycle.iter().position(|&v| v == virt).expect("virtual node in cycle");
    cycle.rotate_left(p);
    cycle.remove(0);
    Tour::new(canonical_path(cycle), false, |i, j| d.get(i, j))
}

/// Minimum-cost Hamiltonian cycle by dynamic programming over subsets.
pub fn tsp_exact(d: &DistanceMatrix) -> Result<Tour, OrderingError> {
    if d.len() > EXACT_MAX_NODES {
        return Err(OrderingError::TooLarge {
            n: d.len(),
            max: EXACT_MAX_NODES,
        });
    }
    Ok(finish_cycle(d, held_karp(&Costs::from_matrix(d))?))
}

/// Nearest-neighbor tours from each start (a seeded sample of starts on large
/// instances), each polished by 2-opt; the cheapest is returned.
///
/// Starts whose greedy construction runs into absent edges are skipped, so a
/// sparse instance may be reported infeasible even if some finite cycle exists.
pub fn tsp_heuristic(d: &DistanceMatrix, seed: u64) -> Result<Tour, OrderingError> {
    Ok(finish_cycle(d, heuristic(&Costs::from_matrix(d), seed)?))
}

/// Shortest Hamiltonian path, solved exactly.
pub fn tsp_exact_path(d: &DistanceMatrix) -> Result<Tour, OrderingError> {
    if d.is_empty() {
        return Err(OrderingError::Empty);
    }
    if d.len() + 1 > EXACT_MAX_NODES {
        return Err(OrderingError::TooLarge {
            n: d.len(),
            max: EXACT_MAX_NODES - 1,
        });
    }
    Ok(finish_path(d, held_karp(&Costs::with_virtual_node(d))?))
}

/// Short Hamiltonian path by the heuristic cycle solver.
pub fn tsp_heuristic_path(d: &DistanceMatrix, seed: u64) -> Result<Tour, OrderingError> {
    if d.is_empty() {
        return Err(OrderingError::Empty);
    }
    Ok(finish_path(d, heuristic(&Costs::with_virtual_node(d), seed)?))
}

/// Greedy chain over match counts.
///
/// Pairs are taken by decreasing count (ties in lexicographic index order)
/// whenever both endpoints still have degree below two and no cycle forms. If
/// the pairs run out before a spanning path exists, the path fragments are
/// concatenated in order of their smallest member. The tour cost uses
/// `1 / count` weights.
pub fn chain_order(m: &MatchTable, labels: &[String]) -> Tour {
    let n = labels.len();
    let index: std::collections::HashMap<&str, usize> =
        labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut candidates: Vec<(u64, usize, usize)> = m
        .entries()
        .filter_map(|(a, b, count)| {
            let (&i, &j) = (index.get(a)?, index.get(b)?);
            (count > 0).then_some((count, i.min(j), i.max(j)))
        })
        .collect();
    candidates.sort_by(|x, y| y.0.cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));

    let mut degree = vec![0u8; n];
    let mut sets = DisjointSets::new(n);
    let mut adjacent: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut placed = 0;
    for (_, i, j) in candidates {
        if placed + 1 >= n {
            break;
        }
        if degree[i] < 2 && degree[j] < 2 && sets.union(i, j) {
            degree[i] += 1;
            degree[j] += 1;
            adjacent[i].push(j);
            adjacent[j].push(i);
            placed += 1;
        }
    }

    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for first in 0..n {
        if seen[first] {
            continue;
        }
        // Find the fragment's endpoints and walk from the smaller one.
        let mut members = vec![first];
        seen[first] = true;
        let mut k = 0;
        while k < members.len() {
            for &nb in &adjacent[members[k]] {
                if !seen[nb] {
                    seen[nb] = true;
                    members.push(nb);
                }
            }
            k += 1;
        }
        let start = members
            .iter()
            .copied()
            .filter(|&v| adjacent[v].len() < 2)
            .min()
            .expect("acyclic fragment has an endpoint");
        let (mut prev, mut cur) = (usize::MAX, start);
        loop {
            order.push(cur);
            match adjacent[cur].iter().copied().find(|&nb| nb != prev) {
                Some(next) => {
                    prev = cur;
                    cur = next;
                }
                None => break,
            }
        }
    }
    Tour::new(order, false, |i, j| match_count_weight(m.count(&labels[i], &labels[j])))
}
