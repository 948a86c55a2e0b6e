#![allow(clippy::needless_range_loop)]

use std::collections::{HashSet, VecDeque};

use grasp_nas::search_space::{
    attach_io, compose_adjacency, sample_arch, sample_submatrices, sample_unique, Adjacency,
    ArchJson, ArchSpec, Block, LayerType, SkeletonPair, SubMatrixPair, BLOCK, CORE_NODES, MAX_NODES,
};
use proptest::prelude::*;

fn brute_force_kronecker(k: &Block, r: &Block) -> Vec<Vec<u8>> {
    let n = BLOCK * BLOCK;
    let mut out = vec![vec![0u8; n]; n];
    for i in 0..BLOCK {
        for j in 0..BLOCK {
            for rr in 0..BLOCK {
                for c in 0..BLOCK {
                    out[BLOCK * i + rr][BLOCK * j + c] = k[i][j] * r[rr][c];
                }
            }
        }
    }
    out
}

fn oracle_adjacency(sub: &SubMatrixPair) -> Vec<Vec<bool>> {
    let sk = SkeletonPair::resnet();
    let a = brute_force_kronecker(&sk.k1, &sub.r1);
    let b = brute_force_kronecker(&sk.k2, &sub.r2);
    (0..CORE_NODES)
        .map(|i| (0..CORE_NODES).map(|j| a[i][j] + b[i][j] > 0).collect())
        .collect()
}

fn bfs(adj: &Adjacency, start: usize, forward: bool) -> Vec<bool> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(v) = queue.pop_front() {
        for u in 0..n {
            let edge = if forward { adj.get(v, u) } else { adj.get(u, v) };
            if edge && !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    seen
}

fn check_spec_invariants(spec: &ArchSpec) {
    let adj = spec.adjacency();
    let n = spec.len();
    assert!((2..=MAX_NODES).contains(&n));
    assert!(adj.is_strictly_upper());
    let from_input = bfs(adj, 0, true);
    let to_output = bfs(adj, n - 1, false);
    assert!(from_input.iter().all(|&b| b), "node unreachable from input");
    assert!(to_output.iter().all(|&b| b), "node cannot reach output");
    let types = spec.layer_types();
    assert_eq!(types[0], LayerType::Input);
    assert_eq!(types[n - 1], LayerType::Output);
    for v in 1..n - 1 {
        if types[v] == LayerType::StemConv3x3 {
            assert!(adj.get(0, v), "stem at node {v} not fed by input");
        }
        assert!(types[v].is_conv());
    }
}

fn block_strategy(strict_upper: bool) -> impl Strategy<Value = Block> {
    proptest::array::uniform4(proptest::array::uniform4(0u8..=1)).prop_map(move |mut b| {
        if strict_upper {
            for (i, row) in b.iter_mut().enumerate() {
                for v in row.iter_mut().take(i + 1) {
                    *v = 0;
                }
            }
        }
        b
    })
}

fn pair_strategy() -> impl Strategy<Value = SubMatrixPair> {
    (block_strategy(true), block_strategy(false)).prop_map(|(r1, r2)| SubMatrixPair::new(r1, r2).unwrap())
}

proptest! {
    #[test]
    fn composition_equals_brute_force(sub in pair_strategy()) {
        let a = compose_adjacency(&sub);
        let oracle = oracle_adjacency(&sub);
        for i in 0..CORE_NODES {
            for j in 0..CORE_NODES {
                prop_assert_eq!(a.get(i, j), oracle[i][j]);
            }
        }
    }

    #[test]
    fn composition_is_block_local_and_acyclic(sub in pair_strategy()) {
        let a = compose_adjacency(&sub);
        prop_assert!(a.is_strictly_upper());
        for bi in 0..BLOCK {
            for bj in 0..BLOCK {
                if bj == bi || bj == bi + 1 {
                    continue;
                }
                for r in 0..BLOCK {
                    for c in 0..BLOCK {
                        prop_assert!(!a.get(BLOCK * bi + r, BLOCK * bj + c));
                    }
                }
            }
        }
    }

    #[test]
    fn attached_graphs_are_connected(sub in pair_strategy()) {
        let adj = attach_io(&compose_adjacency(&sub));
        prop_assert!(adj.is_strictly_upper());
        let n = adj.len();
        prop_assert!(bfs(&adj, 0, true).iter().all(|&b| b));
        prop_assert!(bfs(&adj, n - 1, false).iter().all(|&b| b));
    }

    #[test]
    fn sampled_specs_satisfy_invariants(seed in any::<u64>(), p in 0.05f64..0.95) {
        let spec = sample_arch(seed, p).unwrap();
        check_spec_invariants(&spec);
        let back: ArchSpec = ArchJson::from(spec.clone()).try_into().unwrap();
        prop_assert_eq!(back.hash(), spec.hash());
    }
}

#[test]
fn random_submatrices_match_brute_force() {
    for seed in 0..100 {
        let sub = sample_submatrices(seed, 0.5).unwrap();
        let a = compose_adjacency(&sub);
        let oracle = oracle_adjacency(&sub);
        for (i, row) in oracle.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(a.get(i, j), v, "seed {seed} entry ({i}, {j})");
            }
        }
    }
}

#[test]
fn block_display_layout() {
    let sub = sample_submatrices(9, 0.5).unwrap();
    let a = compose_adjacency(&sub);
    for b in 0..BLOCK {
        for r in 0..BLOCK {
            for c in 0..BLOCK {
                assert_eq!(a.get(BLOCK * b + r, BLOCK * b + c), sub.r1[r][c] == 1);
                if b + 1 < BLOCK {
                    assert_eq!(a.get(BLOCK * b + r, BLOCK * (b + 1) + c), sub.r2[r][c] == 1);
                }
            }
        }
    }
}

#[test]
fn two_thousand_unique_valid_specs() {
    let specs = sample_unique(2000, 11, 0.5).unwrap();
    assert_eq!(specs.len(), 2000);
    let hashes: HashSet<_> = specs.iter().map(|s| s.hash()).collect();
    assert_eq!(hashes.len(), 2000);
    for s in &specs {
        check_spec_invariants(s);
    }
}

#[test]
fn sample_unique_is_deterministic() {
    assert_eq!(sample_unique(10, 3, 0.5).unwrap(), sample_unique(10, 3, 0.5).unwrap());
    assert_ne!(sample_unique(10, 3, 0.5).unwrap(), sample_unique(10, 4, 0.5).unwrap());
}

#[test]
fn stem_eligible_nodes_draw_all_seven_types() {
    let mut seen = HashSet::new();
    for seed in 0..300 {
        let spec = sample_arch(seed, 0.5).unwrap();
        for v in spec.adjacency().successors(0) {
            seen.insert(spec.layer_types()[v]);
        }
    }
    assert_eq!(seen.len(), LayerType::STEM_ELIGIBLE.len());
}
