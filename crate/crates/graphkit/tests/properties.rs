use graphkit::{
    degrees, graph_kernel, hop_mask, normalized_laplacian, shadow_khop_sample, spd_matrix,
    Graph, KernelKind, UNREACHABLE,
};
use numkit::{sym_eig, Matrix};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_graph(directed: bool, max_n: usize) -> impl Strategy<Value = Graph> {
    (1..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(any::<bool>(), n * n).prop_map(move |bits| {
            let mut edges = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i != j && bits[i * n + j] && (directed || i < j) {
                        edges.push((i, j));
                    }
                }
            }
            Graph::new(n, directed, &edges, Matrix::ones(n, 1)).unwrap()
        })
    })
}

fn floyd_warshall(g: &Graph) -> Vec<Vec<i64>> {
    let n = g.num_nodes();
    let inf = i64::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        for &j in g.out_neighbors(i) {
            d[i][j] = 1;
        }
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
    d.into_iter()
        .map(|r| r.into_iter().map(|v| if v >= inf { UNREACHABLE } else { v }).collect())
        .collect()
}

proptest! {
    #[test]
    fn degrees_match_row_and_column_sums(g in random_graph(true, 10)) {
        let (indeg, outdeg) = degrees(&g);
        let a = g.adjacency();
        for i in 0..g.num_nodes() {
            prop_assert_eq!(outdeg[i] as f64, a.row(i).iter().sum::<f64>());
            prop_assert_eq!(indeg[i] as f64, a.column(i).iter().sum::<f64>());
        }
    }

    #[test]
    fn undirected_degrees_agree(g in random_graph(false, 10)) {
        let (indeg, outdeg) = degrees(&g);
        prop_assert_eq!(indeg, outdeg);
    }

    #[test]
    fn spd_matches_floyd_warshall(g in random_graph(true, 12)) {
        let spd = spd_matrix(&g);
        let fw = floyd_warshall(&g);
        for i in 0..g.num_nodes() {
            prop_assert_eq!(spd.row(i), fw[i].as_slice());
        }
    }

    #[test]
    fn spd_triangle_inequality(g in random_graph(false, 10)) {
        let s = spd_matrix(&g);
        prop_assert!(s.is_symmetric());
        let n = g.num_nodes();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let (ij, jk, ik) = (s.get(i, j), s.get(j, k), s.get(i, k));
                    if ij >= 0 && jk >= 0 {
                        prop_assert!(ik >= 0 && ik <= ij + jk);
                    }
                }
            }
        }
    }

    #[test]
    fn hop_masks_follow_spd(g in random_graph(false, 10), h in 1usize..5) {
        let s = spd_matrix(&g);
        let m = hop_mask(&g, h).unwrap();
        let bigger = hop_mask(&g, h + 1).unwrap();
        for i in 0..g.num_nodes() {
            for j in 0..g.num_nodes() {
                let d = s.get(i, j);
                let want = if d >= 0 && d as usize <= h { 1.0 } else { 0.0 };
                prop_assert_eq!(m.get(i, j), want);
                prop_assert!(m.get(i, j) <= bigger.get(i, j));
            }
        }
        if h == 1 {
            prop_assert_eq!(m, g.adjacency().add(&Matrix::identity(g.num_nodes())).unwrap());
        }
    }

    #[test]
    fn laplacian_spectrum_in_unit_band(g in random_graph(false, 8)) {
        let l = normalized_laplacian(&g).unwrap();
        prop_assert!(l.is_symmetric(0.0));
        for ev in sym_eig(&l).unwrap().eigenvalues {
            prop_assert!((-1e-8..=2.0 + 1e-8).contains(&ev));
        }
    }

    #[test]
    fn kernels_are_psd(g in random_graph(false, 8), p in 0u32..6, beta in 0.0f64..3.0) {
        for kind in [KernelKind::PStepRandomWalk { p }, KernelKind::Diffusion { beta }] {
            let k = graph_kernel(&g, kind).unwrap();
            prop_assert!(k.is_symmetric(1e-8));
            let min = sym_eig(&k).unwrap().eigenvalues[0];
            prop_assert!(min >= -1e-8, "min eigenvalue {}", min);
        }
    }

    #[test]
    fn sampled_subgraphs_are_induced(
        g in random_graph(false, 14),
        seed in any::<u64>(),
        hop in 1usize..3,
        cap in 1usize..4,
    ) {
        let v = (seed as usize) % g.num_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = shadow_khop_sample(&g, v, hop, cap, &mut rng).unwrap();
        prop_assert_eq!(s.nodes[s.target_index], v);
        let k = s.nodes.len();
        for a in 0..k {
            for b in 0..k {
                prop_assert_eq!(s.graph.has_edge(a, b), g.has_edge(s.nodes[a], s.nodes[b]));
            }
        }
        let replay = shadow_khop_sample(&g, v, hop, cap, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(replay, s);
    }
}
