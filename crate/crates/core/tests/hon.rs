mod common;

use common::{brute_force_cises, er_graph, shared};
use motif_energy::hon::{enumerate_cises, exact_energy_sum, hon_neighbors, DEFAULT_ENUMERATION_CAP};
use motif_energy::{induced_subgraph, Graph, KSet};
use proptest::prelude::*;

fn naive_neighbors(all: &[Vec<usize>], c: &[usize]) -> Vec<Vec<usize>> {
    all.iter()
        .filter(|d| shared(d, c) == c.len() - 1)
        .cloned()
        .collect()
}

#[test]
fn neighbors_match_naive_filter() {
    for seed in 0..5 {
        let g = er_graph(12, 0.3, 0, seed);
        for k in 2..=4 {
            let all = brute_force_cises(&g, k);
            for c in &all {
                let nb = hon_neighbors(&g, &KSet::new(c.iter().copied()).unwrap()).unwrap();
                let got: Vec<Vec<usize>> = nb.neighbors.iter().map(|s| s.to_vec()).collect();
                assert_eq!(got, naive_neighbors(&all, c), "seed {seed}, k {k}, C {c:?}");
            }
        }
    }
}

#[test]
fn hon_is_symmetric_and_degrees_sum_to_twice_edges() {
    let g = er_graph(14, 0.3, 0, 9);
    let all = enumerate_cises(&g, 3, DEFAULT_ENUMERATION_CAP).unwrap();
    let mut degree_sum = 0;
    let mut pairs = 0;
    for c in &all {
        let nb = hon_neighbors(&g, c).unwrap();
        degree_sum += nb.degree();
        for d in &nb.neighbors {
            assert!(hon_neighbors(&g, d).unwrap().neighbors.contains(c));
            if d > c {
                pairs += 1;
            }
        }
    }
    assert_eq!(degree_sum, 2 * pairs);
}

#[test]
fn disconnected_set_rejected() {
    let g = Graph::from_edges(4, [(0, 1), (2, 3)]).unwrap();
    assert!(hon_neighbors(&g, &KSet::new([0, 1, 2]).unwrap()).is_err());
}

#[test]
fn enumeration_cap_refuses_large_spaces() {
    let g = er_graph(40, 0.5, 0, 1);
    assert!(enumerate_cises(&g, 5, 1000).is_err());
}

#[test]
fn k2_energy_sum_is_edge_sum() {
    let g = er_graph(25, 0.2, 2, 4);
    let phi = |m: &motif_energy::Motif| m.features(0)[0] * m.features(1)[1] + 1.0;
    let direct: f64 = g.edges().map(|(u, v)| phi(&induced_subgraph(&g, &[u, v]).unwrap())).sum();
    assert_eq!(exact_energy_sum(&g, 2, DEFAULT_ENUMERATION_CAP, phi).unwrap(), direct);
}

fn arb_graph() -> impl Strategy<Value = Graph> {
    (4usize..11).prop_flat_map(|n| {
        proptest::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |bits| {
            let mut edges = Vec::new();
            let mut i = 0;
            for u in 0..n {
                for v in u + 1..n {
                    if bits[i] {
                        edges.push((u, v));
                    }
                    i += 1;
                }
            }
            Graph::from_edges(n, edges).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn esu_equals_brute_force(g in arb_graph(), k in 2usize..5) {
        prop_assume!(k <= g.n());
        let esu: Vec<Vec<usize>> = enumerate_cises(&g, k, DEFAULT_ENUMERATION_CAP)
            .unwrap()
            .iter()
            .map(|s| s.to_vec())
            .collect();
        prop_assert_eq!(esu, brute_force_cises(&g, k));
    }

    #[test]
    fn neighbors_are_connected_and_share_k_minus_one(g in arb_graph(), k in 2usize..5) {
        prop_assume!(k <= g.n());
        for c in enumerate_cises(&g, k, DEFAULT_ENUMERATION_CAP).unwrap() {
            let nb = hon_neighbors(&g, &c).unwrap();
            prop_assert!(nb.neighbors.windows(2).all(|w| w[0] < w[1]));
            for d in &nb.neighbors {
                prop_assert_eq!(d.shared_count(&c), k - 1);
                prop_assert!(induced_subgraph(&g, d).unwrap().is_connected());
            }
        }
    }
}
