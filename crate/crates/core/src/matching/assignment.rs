use serde::{Deserialize, Serialize};

/// Allowed pairing of left node `left` with right node `right`. Pairs without an
/// edge are forbidden.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub left: usize,
    pub right: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(left, right)`, sorted by left index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched1: Vec<usize>,
    pub unmatched2: Vec<usize>,
    /// Sum of the chosen edge costs in left-index order.
    pub total_cost: f64,
}

/// Minimum-cost matching among the maximum-cardinality matchings of a bipartite
/// graph with `n1` left and `n2` right nodes.
///
/// Successive shortest augmenting paths with Dijkstra on reduced costs. After
/// `k` augmentations the matching has minimum cost among all matchings of size
/// `k`; the loop ends when no augmenting path is left. Duplicate edges keep the
/// cheapest; negative or non-finite costs are rejected by panic.
pub fn solve_assignment(edges: &[Edge], n1: usize, n2: usize) -> Assignment {
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n1];
    for e in edges {
        assert!(e.left < n1 && e.right < n2, "edge ({}, {}) outside {n1}×{n2}", e.left, e.right);
        assert!(e.cost.is_finite() && e.cost >= 0.0, "edge cost {} must be finite and non-negative", e.cost);
        match adj[e.left].iter_mut().find(|(j, _)| *j == e.right) {
            Some(slot) => slot.1 = slot.1.min(e.cost),
            None => adj[e.left].push((e.right, e.cost)),
        }
    }
    for a in &mut adj {
        a.sort_by_key(|&(j, _)| j);
    }
    let cost_of = |i: usize, j: usize| adj[i].iter().find(|(r, _)| *r == j).map(|&(_, c)| c).expect("edge");

    let mut match_l: Vec<Option<usize>> = vec![None; n1];
    let mut match_r: Vec<Option<usize>> = vec![None; n2];
    let mut pot_l = vec![0.0f64; n1];
    let mut pot_r = vec![0.0f64; n2];

    loop {
        // Dijkstra over left nodes; right nodes are reached through non-matching
        // edges and left again through their matching edge (reduced cost 0).
        let mut dist_l = vec![f64::INFINITY; n1];
        let mut dist_r = vec![f64::INFINITY; n2];
        let mut prev_r: Vec<Option<usize>> = vec![None; n2];
        let mut done_l = vec![false; n1];
        for i in 0..n1 {
            if match_l[i].is_none() {
                dist_l[i] = 0.0;
            }
        }
        loop {
            let mut best: Option<usize> = None;
            for i in 0..n1 {
                if !done_l[i] && dist_l[i].is_finite() && best.is_none_or(|b| dist_l[i] < dist_l[b]) {
                    best = Some(i);
                }
            }
            let Some(i) = best else { break };
            done_l[i] = true;
            for &(j, c) in &adj[i] {
                if match_l[i] == Some(j) {
                    continue;
                }
                let d = dist_l[i] + (c + pot_l[i] - pot_r[j]).max(0.0);
                if d < dist_r[j] {
                    dist_r[j] = d;
                    prev_r[j] = Some(i);
                    if let Some(k) = match_r[j] {
                        if d < dist_l[k] {
                            dist_l[k] = d;
                        }
                    }
                }
            }
        }
        let mut sink: Option<usize> = None;
        for j in 0..n2 {
            if match_r[j].is_none() && dist_r[j].is_finite() && sink.is_none_or(|s| dist_r[j] < dist_r[s]) {
                sink = Some(j);
            }
        }
        let Some(sink) = sink else { break };
        let cap = dist_r[sink];
        for i in 0..n1 {
            pot_l[i] += dist_l[i].min(cap);
        }
        for j in 0..n2 {
            pot_r[j] += dist_r[j].min(cap);
        }
        // flip the path back to a free left node
        let mut j = sink;
        loop {
            let i = prev_r[j].expect("path");
            let next = match_l[i];
            match_l[i] = Some(j);
            match_r[j] = Some(i);
            match next {
                Some(jj) => j = jj,
                None => break,
            }
        }
    }

    let pairs: Vec<(usize, usize)> = (0..n1).filter_map(|i| match_l[i].map(|j| (i, j))).collect();
    let total_cost = pairs.iter().map(|&(i, j)| cost_of(i, j)).sum();
    Assignment {
        unmatched1: (0..n1).filter(|&i| match_l[i].is_none()).collect(),
        unmatched2: (0..n2).filter(|&j| match_r[j].is_none()).collect(),
        pairs,
        total_cost,
    }
}
