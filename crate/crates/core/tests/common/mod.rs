#![allow(dead_code)]

use std::collections::BTreeSet;

use coolgraph::archgraph::{canonical_key, to_flat_graph, Architecture, Family, NodeKind};

/// Lah-number sum: ordered chains distributed over unordered parallel
/// branches, counted independently of the enumerator.
pub fn single_split_oracle(n: u64) -> u64 {
    let fact = |k: u64| (1..=k).product::<u64>();
    let binom = |a: u64, b: u64| fact(a) / (fact(b) * fact(a - b));
    (1..=n).map(|k| binom(n - 1, k - 1) * fact(n) / fact(k)).sum()
}

pub fn multi_split_oracle(n: u64) -> u64 {
    n.pow(n as u32 - 1)
}

/// Structural checks every enumerated population must pass. Returns the
/// first violation found.
pub fn validity_suite(family: Family, n: usize, archs: &[Architecture]) -> Result<(), String> {
    let keys: BTreeSet<String> = archs.iter().map(canonical_key).collect();
    if keys.len() != archs.len() {
        return Err(format!("{} duplicate keys", archs.len() - keys.len()));
    }
    for a in archs {
        let key = canonical_key(a);
        if a.family() != family || a.n_cphx() != n {
            return Err(format!("{key}: wrong family or size"));
        }
        let back: Architecture = key.parse().map_err(|e| format!("{key}: {e}"))?;
        if canonical_key(&back) != key {
            return Err(format!("{key}: key does not round-trip"));
        }
        if family == Family::SingleSplit && a.n_downstream_splits() != 0 {
            return Err(format!("{key}: downstream split in single-split family"));
        }
        let g = to_flat_graph(a);
        if !g.is_symmetric() || g.trace() != 0 || !g.is_connected() {
            return Err(format!("{key}: malformed flat graph"));
        }
        if g.edges().len() + 1 != g.n_vertices() {
            return Err(format!("{key}: flat graph is not a tree"));
        }
        if g.vertices()[0] != NodeKind::Tank || g.degree(0) != 1 {
            return Err(format!("{key}: tank must lead with one outlet"));
        }
        let mut cphx: Vec<usize> = g
            .vertices()
            .iter()
            .filter_map(|k| match k {
                NodeKind::Cphx(i) => Some(*i),
                _ => None,
            })
            .collect();
        cphx.sort_unstable();
        if cphx != (0..n).collect::<Vec<_>>() {
            return Err(format!("{key}: CPHX set is not 0..{n}"));
        }
        // every junction fans out to at least two branches
        for (v, k) in g.vertices().iter().enumerate() {
            if *k == NodeKind::Junction && g.degree(v) < 3 {
                return Err(format!("{key}: junction {v} has degree {}", g.degree(v)));
            }
        }
        // the population is closed under relabeling the CPHXs
        let rotate: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
        let r = canonical_key(&a.relabeled(&rotate).map_err(|e| e.to_string())?);
        if !keys.contains(&r) {
            return Err(format!("{key}: relabeled form {r} missing"));
        }
    }
    Ok(())
}
