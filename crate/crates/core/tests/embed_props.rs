use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reachcast::embed::sgns::{initialize, mean_objective, pair_gradient, pair_objective, train_skipgram};
use reachcast::embed::walk::{generate_walks, next_step};
use reachcast::{embed_graph, synth, DirectedGraph, EmbeddingMatrix, WalkConfig};

fn vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.5f64..1.5, len)
}

proptest! {
    #[test]
    fn sgns_gradient_matches_finite_differences(
        (input, positive, negs) in (1usize..6).prop_flat_map(|d| {
            (vector(d), vector(d), proptest::collection::vec(vector(d), 0..4))
        })
    ) {
        let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        let grad = pair_gradient(&input, &positive, &refs);
        prop_assert!((grad.objective - pair_objective(&input, &positive, &refs)).abs() < 1e-12);
        let h = 1e-6;
        let check = |analytic: f64, plus: f64, minus: f64| {
            let numeric = (plus - minus) / (2.0 * h);
            (analytic - numeric).abs() <= 1e-6 * (1.0 + numeric.abs())
        };
        for i in 0..input.len() {
            let (mut a, mut b) = (input.clone(), input.clone());
            a[i] += h;
            b[i] -= h;
            prop_assert!(check(grad.input[i], pair_objective(&a, &positive, &refs), pair_objective(&b, &positive, &refs)));
            let (mut a, mut b) = (positive.clone(), positive.clone());
            a[i] += h;
            b[i] -= h;
            prop_assert!(check(grad.positive[i], pair_objective(&input, &a, &refs), pair_objective(&input, &b, &refs)));
            for k in 0..negs.len() {
                let mut plus = negs.clone();
                let mut minus = negs.clone();
                plus[k][i] += h;
                minus[k][i] -= h;
                let rp: Vec<&[f64]> = plus.iter().map(Vec::as_slice).collect();
                let rm: Vec<&[f64]> = minus.iter().map(Vec::as_slice).collect();
                prop_assert!(check(grad.negatives[k][i], pair_objective(&input, &positive, &rp), pair_objective(&input, &positive, &rm)));
            }
        }
    }

    #[test]
    fn walks_follow_out_edges(seed in any::<u64>()) {
        let g = synth::random_digraph(12, 30, seed).unwrap();
        let cfg = WalkConfig { walks_per_node: 2, walk_length: 8, p: 0.5, q: 2.0, ..Default::default() };
        let corpus = generate_walks(&g, &cfg, seed).unwrap();
        prop_assert_eq!(corpus.len(), 24);
        for walk in &corpus {
            prop_assert!(!walk.is_empty() && walk.len() <= 8);
            prop_assert!(walk.windows(2).all(|w| g.has_edge(w[0], w[1])));
            if walk.len() < 8 {
                prop_assert_eq!(g.out_degree(*walk.last().unwrap()), 0);
            }
        }
    }
}

/// Transition weights written out by hand for one (prev, cur) pair:
/// return to prev 1/p, neighbors of prev 1, everything else 1/q.
#[test]
fn second_order_transitions_match_hand_weights() {
    let edges = [(0, 1), (1, 0), (1, 2), (1, 3), (1, 4), (0, 2), (3, 4)];
    let g = DirectedGraph::from_edges(5, &edges).unwrap();
    let (p, q) = (0.5, 2.0);
    let weights = [(0usize, 2.0), (2, 1.0), (3, 0.5), (4, 0.5)];
    let total: f64 = weights.iter().map(|w| w.1).sum();
    let draws = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counts = [0usize; 5];
    for _ in 0..draws {
        counts[next_step(&g, Some(0), 1, p, q, &mut rng).unwrap()] += 1;
    }
    assert_eq!(counts[1], 0);
    for (x, w) in weights {
        let pr = w / total;
        let sigma = (draws as f64 * pr * (1.0 - pr)).sqrt();
        let expected = draws as f64 * pr;
        assert!(
            (counts[x] as f64 - expected).abs() <= 3.0 * sigma,
            "node {x}: {} vs {expected} +- {sigma}",
            counts[x]
        );
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn clique_cosines(emb: &EmbeddingMatrix, k: usize) -> (f64, f64) {
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
    for u in 0..2 * k {
        for v in (u + 1)..2 * k {
            let c = cosine(emb.vector(u), emb.vector(v));
            if (u < k) == (v < k) {
                intra += c;
                ni += 1;
            } else {
                inter += c;
                nx += 1;
            }
        }
    }
    (intra / ni as f64, inter / nx as f64)
}

#[test]
fn two_cliques_separate() {
    let k = 6;
    let g = synth::two_cliques(k);
    let cfg = WalkConfig { dimensions: 16, walks_per_node: 20, walk_length: 20, ..Default::default() };
    let emb = embed_graph(&g, &cfg, 5).unwrap();
    let (intra, inter) = clique_cosines(&emb, k);
    assert!(intra > inter, "intra {intra} inter {inter}");
}

#[test]
fn training_improves_the_objective() {
    let g = synth::random_digraph(15, 45, 8).unwrap();
    let cfg = WalkConfig { dimensions: 8, walks_per_node: 5, walk_length: 10, ..Default::default() };
    let corpus = generate_walks(&g, &cfg, 8).unwrap();
    let before = mean_objective(&initialize(15, 8, 8), &corpus, cfg.window, cfg.negatives, 1).unwrap();
    let trained = train_skipgram(&corpus, 15, &cfg, 8).unwrap();
    let after = mean_objective(&trained, &corpus, cfg.window, cfg.negatives, 1).unwrap();
    assert!(after > before, "{after} <= {before}");
}

#[test]
fn embedding_file_round_trips() {
    let g = synth::random_digraph(6, 12, 2).unwrap();
    let cfg = WalkConfig { dimensions: 4, walks_per_node: 2, epochs: 1, ..Default::default() };
    let emb = embed_graph(&g, &cfg, 2).unwrap();
    let mut buf = Vec::new();
    emb.save(&mut buf).unwrap();
    let back = EmbeddingMatrix::load(buf.as_slice()).unwrap();
    assert_eq!(back.labels, emb.labels);
    assert_eq!(back.input, emb.input);
}
