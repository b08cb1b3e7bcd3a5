mod common;

use std::collections::BTreeSet;

use coolgraph::archgraph::{canonical_key, enumerate, enumerate_multi_split, enumerate_single_split, Family};
use proptest::prelude::*;

use common::{multi_split_oracle, single_split_oracle, validity_suite};

#[test]
fn oracle_reproduces_known_counts() {
    let got: Vec<u64> = (1..=6).map(single_split_oracle).collect();
    assert_eq!(got, vec![1, 3, 13, 73, 501, 4051]);
}

#[test]
fn single_split_counts_match_oracle() {
    for n in 1..=6 {
        assert_eq!(enumerate_single_split(n).unwrap().len() as u64, single_split_oracle(n as u64), "n = {n}");
    }
}

#[test]
fn multi_split_counts_match_oracle() {
    for n in 2..=4 {
        assert_eq!(enumerate_multi_split(n).unwrap().len() as u64, multi_split_oracle(n as u64), "n = {n}");
    }
}

#[test]
fn populations_are_valid() {
    for n in 1..=5 {
        validity_suite(Family::SingleSplit, n, &enumerate_single_split(n).unwrap()).unwrap();
    }
    for n in 2..=4 {
        validity_suite(Family::MultiSplit, n, &enumerate_multi_split(n).unwrap()).unwrap();
    }
}

#[test]
fn enumeration_order_is_stable() {
    let a: Vec<String> = enumerate_multi_split(4).unwrap().iter().map(canonical_key).collect();
    let b: Vec<String> = enumerate_multi_split(4).unwrap().iter().map(canonical_key).collect();
    assert_eq!(a, b);
}

#[test]
fn families_are_disjoint_beyond_chains() {
    // a multi-split population contains chains but never a tank-level fan-out
    let single: BTreeSet<String> = enumerate_single_split(4)
        .unwrap()
        .iter()
        .map(|a| canonical_key(a)[1..].to_string())
        .collect();
    for a in enumerate_multi_split(4).unwrap() {
        if a.branches().len() > 1 {
            panic!("{a} fans out at the tank");
        }
        if a.n_downstream_splits() == 0 {
            assert!(single.contains(&canonical_key(&a)[1..]));
        }
    }
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<usize>>()).prop_shuffle()
}

proptest! {
    #[test]
    fn relabeling_stays_in_population(
        (fam, idx, perm) in (prop::sample::select(vec![Family::SingleSplit, Family::MultiSplit]), 0usize..1000, permutation(4))
    ) {
        let pop = enumerate(fam, 4).unwrap();
        let keys: BTreeSet<String> = pop.iter().map(canonical_key).collect();
        let a = &pop[idx % pop.len()];
        let b = a.relabeled(&perm).unwrap();
        prop_assert!(keys.contains(&canonical_key(&b)));
        let mut inv = vec![0; 4];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        prop_assert_eq!(canonical_key(&b.relabeled(&inv).unwrap()), canonical_key(a));
    }
}
