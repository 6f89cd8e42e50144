use proptest::prelude::*;
use reachcast::reach::{read_reach, write_reach};
use reachcast::{
    assign_probabilities, estimate_reach, exact_reach_bruteforce, generate_cascade_set, mae, synth, DivisorMode,
    MatrixKind, ReachMatrix,
};

fn arb_matrix(n: usize) -> impl Strategy<Value = ReachMatrix> {
    proptest::collection::vec(proptest::collection::vec((0..n, 0.0f64..=1.0), 0..n), n)
        .prop_map(move |rows| {
            let rows = rows
                .into_iter()
                .map(|mut r| {
                    r.sort_by_key(|e| e.0);
                    r.dedup_by_key(|e| e.0);
                    r
                })
                .collect();
            ReachMatrix::from_rows(rows, vec![0; n]).unwrap()
        })
}

fn dense_mae(a: &ReachMatrix, b: &ReachMatrix) -> f64 {
    let n = a.node_count();
    let mut s = 0.0;
    for u in 0..n {
        for v in (0..n).filter(|&v| v != u) {
            s += (a.get(u, v) - b.get(u, v)).abs();
        }
    }
    s / (n * (n - 1)) as f64
}

proptest! {
    #[test]
    fn mae_is_a_metric(a in arb_matrix(6), b in arb_matrix(6), c in arb_matrix(6)) {
        let ab = mae(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, mae(&b, &a).unwrap());
        prop_assert_eq!(mae(&a, &a).unwrap(), 0.0);
        prop_assert!(mae(&a, &c).unwrap() <= ab + mae(&b, &c).unwrap() + 1e-12);
        prop_assert!((ab - dense_mae(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn reach_file_round_trips(m in arb_matrix(5)) {
        let labels: Vec<String> = (0..5).map(|i| format!("n{i}")).collect();
        let mut buf = Vec::new();
        write_reach(&m, &labels, MatrixKind::Label, &mut buf).unwrap();
        let back = read_reach(buf.as_slice()).unwrap();
        prop_assert_eq!(back.kind, MatrixKind::Label);
        prop_assert_eq!(back.labels, labels);
        prop_assert_eq!(back.matrix, m);
    }

    #[test]
    fn estimates_are_probabilities_with_unit_diagonal(seed in any::<u64>()) {
        let g = synth::random_digraph(7, 14, seed).unwrap();
        let probs = assign_probabilities(&g, 0.6, seed).unwrap();
        let cs = generate_cascade_set(&g, &probs, 6, seed).unwrap();
        let nominal = estimate_reach(&cs, DivisorMode::NominalR).unwrap();
        let per_seed = estimate_reach(&cs, DivisorMode::PerSeedCount).unwrap();
        prop_assert_eq!(&nominal, &per_seed);
        nominal.validate_reachability(&g).unwrap();
        for u in 0..7 {
            prop_assert_eq!(nominal.get(u, u), 1.0);
            for &(_, p) in nominal.row(u) {
                prop_assert!(p > 0.0 && p <= 1.0);
            }
        }
    }
}

#[test]
fn monte_carlo_tracks_enumeration_on_a_small_graph() {
    let g = synth::random_digraph(5, 9, 4).unwrap();
    let probs = assign_probabilities(&g, 0.8, 4).unwrap();
    let cs = generate_cascade_set(&g, &probs, 20_000, 4).unwrap();
    let est = estimate_reach(&cs, DivisorMode::NominalR).unwrap();
    for u in 0..5 {
        let exact = exact_reach_bruteforce(&g, &probs, u).unwrap();
        for (v, &p) in exact.iter().enumerate() {
            assert!((est.get(u, v) - p).abs() < 0.02, "({u},{v}): {} vs {p}", est.get(u, v));
        }
    }
}
