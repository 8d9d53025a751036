use graphkit::{load_graph, save_graph, Dataset, EdgeSpec, Graph, GraphError, GraphFormat};
use numkit::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synthetic(rng: &mut ChaCha8Rng, directed: bool) -> Graph {
    let n = rng.gen_range(1..12);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && (directed || i < j) && rng.gen_bool(0.3) {
                edges.push(EdgeSpec::with_feature(i, j, vec![rng.gen_range(-1.0..1.0), rng.gen()]));
            }
        }
    }
    let feats = Matrix::from_raw(n, 3, (0..3 * n).map(|_| rng.gen_range(-10.0..10.0)).collect());
    let labels = (0..n).map(|_| rng.gen::<f64>()).collect();
    Graph::from_edge_specs(n, directed, &edges, feats)
        .unwrap()
        .with_node_labels(labels)
        .unwrap()
        .with_graph_label(rng.gen())
}

#[test]
fn fifty_graph_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for directed in [false, true] {
        let mut rng = ChaCha8Rng::seed_from_u64(directed as u64);
        let ds = Dataset { directed, graphs: (0..50).map(|_| synthetic(&mut rng, directed)).collect() };
        let path = dir.path().join(format!("ds_{directed}.json"));
        save_graph(&path, &ds).unwrap();
        let back = load_graph(&path, GraphFormat::Json).unwrap();
        assert_eq!(back.graphs.len(), 50);
        assert_eq!(back, ds);
    }
}

#[test]
fn missing_file_is_io_error() {
    let err = load_graph("/nonexistent/graphs.json", GraphFormat::Json).unwrap_err();
    assert!(matches!(err, GraphError::Io { .. }));
}

#[test]
fn unknown_node_in_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"directed": false, "graphs": [{"num_nodes": 3, "edges": [[0, 5]], "node_features": [[0], [0], [0]]}]}"#,
    )
    .unwrap();
    let err = load_graph(&path, GraphFormat::Json).unwrap_err();
    assert!(matches!(err, GraphError::UnknownNode { node: 5, num_nodes: 3, .. }), "{err}");
}
