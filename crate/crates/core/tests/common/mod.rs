//! Brute-force oracles and random generators shared by the integration tests.
//! Nothing here calls into the matcher or canonicalizer under test.

#![allow(dead_code)]

use extrabench::graph::Graph;
use extrabench::isomorph::{AttrConstraint, AttributedPattern};
use rand::Rng;

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for v in 0..used.len() {
            if !used[v] {
                used[v] = true;
                cur.push(v);
                rec(cur, used, out);
                cur.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// All injective maps from `0..k` into `0..n`.
pub fn injective_maps(k: usize, n: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for v in 0..used.len() {
            if !used[v] {
                used[v] = true;
                cur.push(v);
                rec(k, cur, used, out);
                cur.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    if k <= n {
        rec(k, &mut Vec::new(), &mut vec![false; n], &mut out);
    }
    out
}

fn dense(g: &Graph) -> Vec<Option<u32>> {
    let n = g.node_count();
    let mut m = vec![None; n * n];
    for &(u, v, e) in g.edges() {
        m[u * n + v] = Some(e);
        m[v * n + u] = Some(e);
    }
    m
}

pub fn brute_induced(pattern: &Graph, host: &Graph) -> bool {
    let (k, n) = (pattern.node_count(), host.node_count());
    let (pm, hm) = (dense(pattern), dense(host));
    injective_maps(k, n).into_iter().any(|map| {
        (0..k).all(|a| {
            (0..k).all(|b| a == b || pm[a * k + b].is_some() == hm[map[a] * n + map[b]].is_some())
        })
    })
}

pub fn brute_mono(pattern: &AttributedPattern, host: &Graph) -> bool {
    let (k, n) = (pattern.nodes.len(), host.node_count());
    let hm = dense(host);
    injective_maps(k, n).into_iter().any(|map| {
        let nodes_ok = (0..k).all(|a| match pattern.nodes[a] {
            AttrConstraint::Any => true,
            AttrConstraint::Code(c) => host.node_attrs()[map[a]] == c,
        });
        nodes_ok
            && pattern.edges.iter().all(|&(u, v, c)| match hm[map[u] * n + map[v]] {
                None => false,
                Some(code) => match c {
                    AttrConstraint::Any => true,
                    AttrConstraint::Code(want) => code == want,
                },
            })
    })
}

/// Minimum upper-triangle bit string over every permutation.
pub fn brute_canonical(n: usize, adj: &[bool], perms: &[Vec<usize>]) -> Vec<bool> {
    perms
        .iter()
        .map(|p| {
            let mut bits = Vec::with_capacity(n * n / 2);
            for i in 0..n {
                for j in i + 1..n {
                    bits.push(adj[p[i] * n + p[j]]);
                }
            }
            bits
        })
        .min()
        .unwrap()
}

pub fn brute_connected(n: usize, adj: &[bool]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for v in 0..n {
            if adj[u * n + v] && !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

pub fn random_graph<R: Rng>(rng: &mut R, n: usize, p: f64, node_codes: u32, edge_codes: u32) -> Graph {
    let attrs = (0..n).map(|_| rng.random_range(0..node_codes)).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                edges.push((i, j, rng.random_range(0..edge_codes)));
            }
        }
    }
    Graph::new(attrs, edges).unwrap()
}

pub fn random_permutation<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
