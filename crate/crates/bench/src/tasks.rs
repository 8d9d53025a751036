//! Synthetic graph tasks with exact combinatorial targets.

use std::collections::VecDeque;

use graphkit::{shadow_khop_sample, Graph};
use numkit::Matrix;
use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::config::{SamplerConfig, TaskLevel, TaskName};
use crate::error::Result;

pub const MIN_NODES: usize = 6;
pub const MAX_NODES: usize = 20;
pub const MIN_EDGE_PROB: f64 = 0.15;
pub const MAX_EDGE_PROB: f64 = 0.5;
/// Bias column, anchor flag, then standard-normal noise columns.
pub const FEATURE_DIM: usize = 8;
/// The node whose distance `spd-to-anchor-reg` measures.
pub const ANCHOR: usize = 0;
/// Distances at or beyond this value share the top target.
pub const SPD_CAP: i64 = 4;
pub const TRIANGLE_SCALE: f64 = 50.0;

/// One generated graph with its raw targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub graph: Graph,
    /// One value per node for node-level tasks, one value otherwise.
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub name: TaskName,
    pub instances: Vec<Instance>,
}

pub fn degrees(g: &Graph) -> Vec<f64> {
    (0..g.num_nodes()).map(|i| g.out_neighbors(i).len() as f64).collect()
}

pub fn triangle_count(g: &Graph) -> usize {
    let n = g.num_nodes();
    let mut t = 0;
    for i in 0..n {
        for &j in g.out_neighbors(i).iter().filter(|&&j| j > i) {
            t += g.out_neighbors(j).iter().filter(|&&k| k > j && g.has_edge(i, k)).count();
        }
    }
    t
}

/// Hop distances from `src`; `-1` where unreachable.
pub fn bfs_distances(g: &Graph, src: usize) -> Vec<i64> {
    let mut dist = vec![-1; g.num_nodes()];
    dist[src] = 0;
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        for &w in g.out_neighbors(u) {
            if dist[w] < 0 {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

pub fn is_connected(g: &Graph) -> bool {
    g.num_nodes() == 0 || bfs_distances(g, 0).iter().all(|&d| d >= 0)
}

pub fn is_bipartite(g: &Graph) -> bool {
    let n = g.num_nodes();
    let mut color = vec![-1i8; n];
    for s in 0..n {
        if color[s] >= 0 {
            continue;
        }
        color[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &w in g.out_neighbors(u) {
                if color[w] < 0 {
                    color[w] = 1 - color[u];
                    queue.push_back(w);
                } else if color[w] == color[u] {
                    return false;
                }
            }
        }
    }
    true
}

/// Raw targets of `name` on `g`.
pub fn targets(name: TaskName, g: &Graph) -> Vec<f64> {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    match name {
        TaskName::NodeDegreeReg => degrees(g),
        TaskName::SpdToAnchorReg => bfs_distances(g, ANCHOR).into_iter().map(|d| d as f64).collect(),
        TaskName::TriangleCountReg => vec![triangle_count(g) as f64],
        TaskName::ConnectivityCls => vec![flag(is_connected(g))],
        TaskName::BipartiteCls => vec![flag(is_bipartite(g))],
    }
}

/// Raw target mapped to the scale the model is trained on.
pub fn normalize(name: TaskName, raw: f64) -> f64 {
    match name {
        TaskName::NodeDegreeReg => raw / (MAX_NODES - 1) as f64,
        TaskName::SpdToAnchorReg => {
            if raw < 0.0 {
                1.0
            } else {
                raw.min(SPD_CAP as f64) / SPD_CAP as f64
            }
        }
        TaskName::TriangleCountReg => raw / TRIANGLE_SCALE,
        TaskName::ConnectivityCls | TaskName::BipartiteCls => raw,
    }
}

fn node_features(n: usize, rng: &mut impl Rng) -> Matrix {
    let mut x = Matrix::zeros(n, FEATURE_DIM);
    for i in 0..n {
        x.set(i, 0, 1.0);
        x.set(i, 1, if i == ANCHOR { 1.0 } else { 0.0 });
        for c in 2..FEATURE_DIM {
            x.set(i, c, rng.sample(StandardNormal));
        }
    }
    x
}

/// Erdős–Rényi graph; with `bipartite`, edges only cross a random 2-colouring.
fn random_graph(rng: &mut impl Rng, bipartite: bool) -> Result<Graph> {
    let n = rng.gen_range(MIN_NODES..=MAX_NODES);
    let p = rng.gen_range(MIN_EDGE_PROB..=MAX_EDGE_PROB);
    let side: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen::<f64>() < p && !(bipartite && side[i] == side[j]) {
                edges.push((i, j));
            }
        }
    }
    let x = node_features(n, rng);
    Ok(Graph::new(n, false, &edges, x)?)
}

/// `n_instances` graphs for `name`. For `bipartite-cls` every even-indexed
/// instance is drawn bipartite so both classes are common.
pub fn gen_task(name: TaskName, n_instances: usize, rng: &mut impl Rng) -> Result<TaskDataset> {
    let instances = (0..n_instances)
        .map(|k| {
            let bip = name == TaskName::BipartiteCls && k % 2 == 0;
            let graph = random_graph(rng, bip)?;
            let targets = targets(name, &graph);
            Ok(Instance { graph, targets })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskDataset { name, instances })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = crate::error::BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(crate::error::BenchError::config("split", format!("unknown split `{s}`"))),
        }
    }
}

/// 80/10/10 split of graph `index` from a hash of the index and seed.
pub fn split_of(data_seed: u64, index: usize) -> Split {
    let mut h = Sha256::new();
    h.update(data_seed.to_le_bytes());
    h.update((index as u64).to_le_bytes());
    let d = h.finalize();
    let v = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    match v % 10 {
        0..=7 => Split::Train,
        8 => Split::Val,
        _ => Split::Test,
    }
}

/// One model input: a whole graph, or a sampled subgraph around a node.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub graph: Graph,
    /// Readout node for node-level tasks.
    pub target_node: Option<usize>,
    /// Normalized target.
    pub y: f64,
    /// Index of the source graph.
    pub source: usize,
}

/// Model inputs of one split. Node-level tasks draw one subgraph per node,
/// once, with the shadow k-hop sampler.
pub fn samples(
    data: &TaskDataset,
    level: TaskLevel,
    split: Split,
    data_seed: u64,
    sampler: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (k, inst) in data.instances.iter().enumerate() {
        if split_of(data_seed, k) != split {
            continue;
        }
        match level {
            TaskLevel::Graph => out.push(Sample {
                graph: inst.graph.clone(),
                target_node: None,
                y: normalize(data.name, inst.targets[0]),
                source: k,
            }),
            TaskLevel::Node => {
                for v in 0..inst.graph.num_nodes() {
                    let sub = shadow_khop_sample(&inst.graph, v, sampler.max_hop, sampler.max_nbrs, rng)?;
                    out.push(Sample {
                        graph: sub.graph,
                        target_node: Some(sub.target_index),
                        y: normalize(data.name, inst.targets[v]),
                        source: k,
                    });
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn with_features(g: Graph) -> Graph {
        let n = g.num_nodes();
        let edges = g.edges();
        Graph::new(n, false, &edges, Matrix::ones(n, FEATURE_DIM)).unwrap()
    }

    #[test]
    fn target_examples() {
        assert_eq!(targets(TaskName::NodeDegreeReg, &Graph::path(3)), vec![1.0, 2.0, 1.0]);
        assert_eq!(targets(TaskName::TriangleCountReg, &Graph::complete(4)), vec![4.0]);
        let two_edges = Graph::new(4, false, &[(0, 1), (2, 3)], Matrix::ones(4, 1)).unwrap();
        assert_eq!(targets(TaskName::ConnectivityCls, &two_edges), vec![0.0]);
        assert_eq!(targets(TaskName::BipartiteCls, &Graph::cycle(4)), vec![1.0]);
        assert_eq!(targets(TaskName::BipartiteCls, &Graph::cycle(5)), vec![0.0]);
        assert_eq!(targets(TaskName::SpdToAnchorReg, &two_edges), vec![0.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize(TaskName::SpdToAnchorReg, -1.0), 1.0);
        assert_eq!(normalize(TaskName::SpdToAnchorReg, 2.0), 0.5);
        assert_eq!(normalize(TaskName::SpdToAnchorReg, 7.0), 1.0);
        assert_eq!(normalize(TaskName::NodeDegreeReg, 19.0), 1.0);
    }

    #[test]
    fn generation_is_seeded_and_in_range() {
        let a = gen_task(TaskName::BipartiteCls, 30, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = gen_task(TaskName::BipartiteCls, 30, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        for (k, inst) in a.instances.iter().enumerate() {
            let n = inst.graph.num_nodes();
            assert!((MIN_NODES..=MAX_NODES).contains(&n));
            assert_eq!(inst.graph.node_features().shape(), (n, FEATURE_DIM));
            if k % 2 == 0 {
                assert_eq!(inst.targets, vec![1.0]);
            }
        }
    }

    #[test]
    fn node_samples_keep_their_root() {
        let data = gen_task(TaskName::NodeDegreeReg, 20, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let sc = SamplerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let train = samples(&data, TaskLevel::Node, Split::Train, 5, &sc, &mut rng).unwrap();
        assert!(!train.is_empty());
        for s in &train {
            assert!(split_of(5, s.source) == Split::Train);
            let t = s.target_node.unwrap();
            assert!(t < s.graph.num_nodes());
            let full = &data.instances[s.source].graph;
            assert!(s.graph.out_neighbors(t).len() <= full.num_nodes());
        }
    }

    #[test]
    fn triangle_count_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let g = with_features(random_graph(&mut rng, false).unwrap());
            let n = g.num_nodes();
            let mut brute = 0;
            for i in 0..n {
                for j in i + 1..n {
                    for k in j + 1..n {
                        if g.has_edge(i, j) && g.has_edge(j, k) && g.has_edge(i, k) {
                            brute += 1;
                        }
                    }
                }
            }
            assert_eq!(triangle_count(&g), brute);
        }
    }
}
