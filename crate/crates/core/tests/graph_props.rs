use proptest::prelude::*;
use reachcast::{load_edge_list, DelimiterMode, DirectedGraph};

fn arb_graph() -> impl Strategy<Value = DirectedGraph> {
    (1usize..12).prop_flat_map(|n| {
        proptest::collection::vec((0..n, 0..n), 0..40)
            .prop_map(move |edges| DirectedGraph::from_edges(n, &edges).unwrap())
    })
}

proptest! {
    #[test]
    fn save_then_load_is_identity(g in arb_graph()) {
        let mut buf = Vec::new();
        g.save_edge_list(&mut buf).unwrap();
        let (back, _) = load_edge_list(buf.as_slice(), DelimiterMode::Auto).unwrap();
        prop_assert_eq!(back.labels(), g.labels());
        prop_assert_eq!(back.edges(), g.edges());
    }

    #[test]
    fn in_lists_are_the_transpose_of_out_lists(g in arb_graph()) {
        let n = g.node_count();
        let mut forward = Vec::new();
        let mut backward = Vec::new();
        for u in 0..n {
            let out = g.out_neighbors(u).unwrap();
            prop_assert!(out.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(!out.contains(&u));
            forward.extend(out.iter().map(|&v| (u, v)));
            backward.extend(g.in_neighbors(u).unwrap().iter().map(|&v| (v, u)));
        }
        forward.sort_unstable();
        backward.sort_unstable();
        prop_assert_eq!(&forward, &backward);
        prop_assert_eq!(forward.len(), g.edge_count());
        for &(u, v) in &forward {
            prop_assert!(g.has_edge(u, v));
        }
    }

    #[test]
    fn comma_and_whitespace_inputs_agree(edges in proptest::collection::vec((0u32..9, 0u32..9), 1..30)) {
        let ws: String = edges.iter().map(|(u, v)| format!("{u} {v}\n")).collect();
        let csv: String = edges.iter().map(|(u, v)| format!("{u},{v}\n")).collect();
        let (a, ra) = load_edge_list(ws.as_bytes(), DelimiterMode::Auto).unwrap();
        let (b, rb) = load_edge_list(csv.as_bytes(), DelimiterMode::Comma).unwrap();
        prop_assert_eq!(a.edges(), b.edges());
        prop_assert_eq!(a.labels(), b.labels());
        prop_assert_eq!(ra, rb);
    }
}

#[test]
fn parse_error_reports_line() {
    let text = "# header\n1 2\n3\n";
    match load_edge_list(text.as_bytes(), DelimiterMode::Auto) {
        Err(reachcast::Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }
}
