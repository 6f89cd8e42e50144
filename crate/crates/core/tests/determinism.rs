//! Parallel stages give identical bytes on one worker and on four.

use std::sync::Arc;

use reachcast::icm::write_cascades;
use reachcast::reach::write_reach;
use reachcast::regress::save_model;
use reachcast::{
    assign_probabilities, build_dataset, embed_graph, estimate_reach, generate_cascade_set, render_table,
    run_experiment_on, sample_portion, synth, train_gbrt, train_mlp, DivisorMode, ExecMode, ExperimentConfig,
    GbrtConfig, MatrixKind, MlpConfig, Model, TableFormat, WalkConfig,
};

fn pipeline_bytes() -> Vec<Vec<u8>> {
    let g = synth::scale_free_directed(25, 2, 3).unwrap();
    let probs = assign_probabilities(&g, 0.2, 1).unwrap();
    let cs = generate_cascade_set(&g, &probs, 10, 2).unwrap();
    let actual = estimate_reach(&cs, DivisorMode::NominalR).unwrap();
    let part = sample_portion(&cs, 0.3, 4).unwrap();
    let label = estimate_reach(&part, DivisorMode::PerSeedCount).unwrap();
    let cfg = WalkConfig { dimensions: 8, walks_per_node: 3, ..Default::default() };
    let emb = Arc::new(embed_graph(&g, &cfg, 5).unwrap());
    let ds = build_dataset(emb.clone(), &label, 0.5, 6).unwrap();
    let mlp = train_mlp(&ds, &MlpConfig { hidden: vec![8], epochs: 2, mode: ExecMode::Fast, ..Default::default() }, 7)
        .unwrap()
        .model;
    let gbrt = train_gbrt(&ds, &GbrtConfig { trees: 5, mode: ExecMode::Fast, ..Default::default() }, 8)
        .unwrap()
        .model;

    let mut out = Vec::new();
    let mut buf = Vec::new();
    write_cascades(&cs, &g, &mut buf).unwrap();
    out.push(std::mem::take(&mut buf));
    write_reach(&actual, g.labels(), MatrixKind::Actual, &mut buf).unwrap();
    out.push(std::mem::take(&mut buf));
    write_reach(&label, g.labels(), MatrixKind::Label, &mut buf).unwrap();
    out.push(std::mem::take(&mut buf));
    emb.save(&mut buf).unwrap();
    out.push(std::mem::take(&mut buf));
    reachcast::features::write_dataset(&ds, &mut buf).unwrap();
    out.push(std::mem::take(&mut buf));
    for m in [Model::Mlp(mlp), Model::Gbrt(gbrt)] {
        save_model(&m, serde_json::Value::Null, &mut buf).unwrap();
        out.push(std::mem::take(&mut buf));
    }
    out
}

fn with_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

#[test]
fn stages_ignore_worker_count() {
    let one = with_threads(1, pipeline_bytes);
    let four = with_threads(4, pipeline_bytes);
    assert_eq!(one.len(), four.len());
    for (i, (a, b)) in one.iter().zip(&four).enumerate() {
        assert!(a == b, "stage {i} differs between worker counts");
    }
    assert_eq!(one, pipeline_bytes());
}

#[test]
fn experiment_table_ignores_worker_count() {
    let g = synth::scale_free_directed(20, 2, 11).unwrap();
    let cfg = ExperimentConfig {
        max_p: vec![0.3],
        r: 10,
        portions: vec![0.1, 0.5],
        models: vec![reachcast::ModelKind::Mlp, reachcast::ModelKind::Gbrt],
        walk: WalkConfig { dimensions: 8, walks_per_node: 3, ..Default::default() },
        mlp: MlpConfig { hidden: vec![8], epochs: 2, ..Default::default() },
        gbrt: GbrtConfig { trees: 5, ..Default::default() },
        trials: 2,
        parallel_cells: 2,
        ..Default::default()
    };
    let render = || render_table(&run_experiment_on(&g, &cfg).unwrap().without_runtimes(), TableFormat::Tsv);
    let a = with_threads(1, render);
    let b = with_threads(4, render);
    assert_eq!(a, b);
}
