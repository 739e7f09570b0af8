//! Hierarchical navigable small-world graph over unit vectors.
//!
//! Similarity is the inner product (cosine on the sphere). Construction is
//! sequential and seeded, so the same rows and seed always give the same
//! graph. Neighbor lists are chosen with the diversity heuristic and padded
//! with pruned candidates up to the degree bound. Layer 0 allows `2M` links,
//! upper layers `M`.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabelMatrix;
use crate::encoder::score;

const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HnswParams {
    /// Maximum links per node on upper layers (twice this on layer 0).
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 32,
            ef_construction: 200,
            ef_search: 100,
        }
    }
}

/// A scored node; ordered so that "greater" means "better" (higher
/// similarity, then lower id).
#[derive(Debug, Clone, Copy)]
struct Cand {
    sim: f64,
    id: u32,
}

impl PartialEq for Cand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim.total_cmp(&other.sim).then(other.id.cmp(&self.id))
    }
}

trait Visited {
    /// Marks `id`; returns false if it was already marked.
    fn visit(&mut self, id: u32) -> bool;
}

impl Visited for HashSet<u32> {
    fn visit(&mut self, id: u32) -> bool {
        self.insert(id)
    }
}

/// Epoch-stamped visited marks, reused across insertions during build.
struct VisitedStamps {
    marks: Vec<u32>,
    epoch: u32,
}

impl VisitedStamps {
    fn new(n: usize) -> Self {
        Self {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.fill(0);
            self.epoch = 1;
        }
    }
}

impl Visited for VisitedStamps {
    fn visit(&mut self, id: u32) -> bool {
        let slot = &mut self.marks[id as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct HnswGraph {
    pub(crate) params: HnswParams,
    pub(crate) entry: u32,
    pub(crate) max_level: usize,
    /// `links[node][layer]`; a node has `level + 1` layers.
    pub(crate) links: Vec<Vec<Vec<u32>>>,
}

impl HnswGraph {
    pub(crate) fn build(data: &LabelMatrix, params: HnswParams, seed: u64) -> Self {
        let n = data.len();
        let m = params.m.max(2);
        let level_mult = 1.0 / (m as f64).ln();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut graph = Self {
            params,
            entry: 0,
            max_level: 0,
            links: Vec::with_capacity(n),
        };
        let mut visited = VisitedStamps::new(n);

        for i in 0..n {
            let u: f64 = rng.random();
            let level = ((-(1.0 - u).ln() * level_mult).floor() as usize).min(MAX_LEVEL);
            graph.links.push(vec![Vec::new(); level + 1]);
            if i == 0 {
                graph.max_level = level;
                continue;
            }
            let q = data.row(i);
            let mut ep = Cand {
                sim: score(q, data.row(graph.entry as usize)),
                id: graph.entry,
            };
            for layer in (level + 1..=graph.max_level).rev() {
                ep = graph.greedy(data, q, ep, layer);
            }
            let mut entry_points = vec![ep];
            for layer in (0..=level.min(graph.max_level)).rev() {
                visited.reset();
                let found = graph.search_layer(
                    data,
                    q,
                    &entry_points,
                    params.ef_construction.max(1),
                    layer,
                    &mut visited,
                );
                let cap = graph.capacity(layer);
                let chosen = select_neighbors(data, &found, cap);
                graph.links[i][layer] = chosen.iter().map(|c| c.id).collect();
                for c in &chosen {
                    graph.connect(data, c.id as usize, i as u32, layer, cap);
                }
                entry_points = found;
            }
            if level > graph.max_level {
                graph.max_level = level;
                graph.entry = i as u32;
            }
        }
        graph
    }

    fn capacity(&self, layer: usize) -> usize {
        let m = self.params.m.max(2);
        if layer == 0 {
            2 * m
        } else {
            m
        }
    }

    fn connect(&mut self, data: &LabelMatrix, node: usize, new: u32, layer: usize, cap: usize) {
        let list = &mut self.links[node][layer];
        list.push(new);
        if list.len() <= cap {
            return;
        }
        let base = data.row(node);
        let mut cands: Vec<Cand> = list
            .iter()
            .map(|&id| Cand {
                sim: score(base, data.row(id as usize)),
                id,
            })
            .collect();
        cands.sort_by(|a, b| b.cmp(a));
        *list = select_neighbors(data, &cands, cap).iter().map(|c| c.id).collect();
    }

    fn greedy(&self, data: &LabelMatrix, q: &[f64], mut cur: Cand, layer: usize) -> Cand {
        loop {
            let mut improved = false;
            for &nb in &self.links[cur.id as usize][layer] {
                let c = Cand {
                    sim: score(q, data.row(nb as usize)),
                    id: nb,
                };
                if c > cur {
                    cur = c;
                    improved = true;
                }
            }
            if !improved {
                return cur;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` nodes, best first.
    fn search_layer(
        &self,
        data: &LabelMatrix,
        q: &[f64],
        entry_points: &[Cand],
        ef: usize,
        layer: usize,
        visited: &mut impl Visited,
    ) -> Vec<Cand> {
        let mut frontier: BinaryHeap<Cand> = BinaryHeap::new();
        let mut best: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        for &ep in entry_points {
            if visited.visit(ep.id) {
                frontier.push(ep);
                best.push(Reverse(ep));
            }
        }
        while best.len() > ef {
            best.pop();
        }
        while let Some(c) = frontier.pop() {
            if best.len() >= ef && best.peek().is_some_and(|w| c < w.0) {
                break;
            }
            for &nb in &self.links[c.id as usize][layer] {
                if !visited.visit(nb) {
                    continue;
                }
                let cand = Cand {
                    sim: score(q, data.row(nb as usize)),
                    id: nb,
                };
                if best.len() < ef || best.peek().is_some_and(|w| cand > w.0) {
                    frontier.push(cand);
                    best.push(Reverse(cand));
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        let mut out: Vec<Cand> = best.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Up to `ef` `(id, sim)` pairs for the query, best first.
    pub(crate) fn search(&self, data: &LabelMatrix, q: &[f64], ef: usize) -> Vec<(u32, f64)> {
        if self.links.is_empty() {
            return Vec::new();
        }
        let mut ep = Cand {
            sim: score(q, data.row(self.entry as usize)),
            id: self.entry,
        };
        for layer in (1..=self.max_level).rev() {
            ep = self.greedy(data, q, ep, layer);
        }
        let mut visited = HashSet::new();
        self.search_layer(data, q, &[ep], ef.max(1), 0, &mut visited)
            .into_iter()
            .map(|c| (c.id, c.sim))
            .collect()
    }
}

/// Diversity heuristic: keep a candidate only if it is closer to the base
/// than to every neighbor kept so far; then pad with the pruned ones.
/// `cands` must be sorted best first.
fn select_neighbors(data: &LabelMatrix, cands: &[Cand], cap: usize) -> Vec<Cand> {
    let mut kept: Vec<Cand> = Vec::with_capacity(cap);
    let mut pruned = Vec::new();
    for &c in cands {
        if kept.len() >= cap {
            break;
        }
        let row = data.row(c.id as usize);
        let diverse = kept.iter().all(|k| score(row, data.row(k.id as usize)) < c.sim);
        if diverse {
            kept.push(c);
        } else {
            pruned.push(c);
        }
    }
    for c in pruned {
        if kept.len() >= cap {
            break;
        }
        kept.push(c);
    }
    kept
}
