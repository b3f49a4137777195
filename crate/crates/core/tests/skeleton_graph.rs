//! Topology, partition and normalization properties of the skeleton graph.

use agc_core::graph::{CENTRIFUGAL, CENTRIPETAL, ROOT_SUBSET};
use agc_core::{Layout, SkeletonGraph};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random connected graph: a random tree plus a few chords.
fn random_graph(seed: u64, max_n: usize) -> (usize, Vec<(usize, usize)>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_n);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    for _ in 0..rng.gen_range(0..=n / 2) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            edges.push((a, b));
        }
    }
    (n, edges, rng.gen_range(0..n))
}

fn floyd_warshall(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(a, b) in edges {
        d[a][b] = 1;
        d[b][a] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

#[test]
fn ntu_hop_distances_match_floyd_warshall() {
    let g = Layout::Ntu25.graph();
    let d = floyd_warshall(25, &Layout::Ntu25.edges());
    for i in 0..25 {
        for j in 0..25 {
            assert_eq!(g.hop_distance(i, j), d[i][j], "({i}, {j})");
        }
    }
    // Spine-shoulder root to either hand tip, then tip to tip.
    assert_eq!(g.hop_distance(20, 21), 6);
    assert_eq!(g.hop_distance(20, 23), 6);
    assert_eq!(g.hop_distance(21, 23), 12);
}

#[test]
fn ntu_stack_partitions_the_one_hop_neighborhoods() {
    let stack = Layout::Ntu25.graph().adjacency_stack().unwrap();
    let mut total = 0.0;
    for k in 0..3 {
        total += stack.raw(k).sum();
    }
    // 25 self loops plus both directions of 24 bones.
    assert_eq!(total, 25.0 + 48.0);
    assert_eq!(stack.raw(0).sum(), 25.0);
    // Every non-root joint has exactly one centripetal neighbor on a tree.
    assert_eq!(stack.raw(1).sum(), 24.0);
}

#[test]
fn disconnected_graph_names_the_joints() {
    let err = SkeletonGraph::new(4, &[(0, 1), (2, 3)], 0, 3, 1).unwrap_err();
    assert!(err.to_string().contains("[2, 3]"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn subsets_partition_every_neighbor_set(seed: u64, d in 1usize..=3) {
        let (n, edges, root) = random_graph(seed, 10);
        let g = SkeletonGraph::new(n, &edges, root, 3, d).unwrap();
        let hops = floyd_warshall(n, &edges);
        let stack = g.adjacency_stack().unwrap();
        for i in 0..n {
            for j in 0..n {
                let hits: Vec<usize> = (0..3).filter(|&k| stack.raw(k).get(i, j) == 1.0).collect();
                let covered: f64 = (0..3).map(|k| stack.raw(k).get(i, j)).sum();
                if hops[i][j] <= d {
                    prop_assert_eq!(hits.len(), 1);
                    let expected = if i == j {
                        ROOT_SUBSET
                    } else if hops[root][j] < hops[root][i] {
                        CENTRIPETAL
                    } else {
                        CENTRIFUGAL
                    };
                    prop_assert_eq!(hits[0] + 1, expected);
                } else {
                    prop_assert_eq!(covered, 0.0);
                }
            }
        }
        for k in 0..3 {
            prop_assert!(stack.normalized(k).is_finite());
        }
    }

    #[test]
    fn partition_ignores_edge_order_and_direction(seed: u64) {
        let (n, edges, root) = random_graph(seed, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut shuffled: Vec<(usize, usize)> = edges
            .iter()
            .map(|&(a, b)| if rng.gen() { (b, a) } else { (a, b) })
            .collect();
        shuffled.shuffle(&mut rng);
        let a = SkeletonGraph::new(n, &edges, root, 3, 1).unwrap();
        let b = SkeletonGraph::new(n, &shuffled, root, 3, 1).unwrap();
        prop_assert_eq!(a.label_partition().unwrap(), b.label_partition().unwrap());
        let (sa, sb) = (a.adjacency_stack().unwrap(), b.adjacency_stack().unwrap());
        for k in 0..3 {
            prop_assert_eq!(sa.raw(k), sb.raw(k));
            prop_assert_eq!(&**sa.normalized(k), &**sb.normalized(k));
        }
    }
}
