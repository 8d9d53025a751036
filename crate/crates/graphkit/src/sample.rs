//! Shadow k-hop subgraph sampling around a target node.

use rand::seq::index;
use rand::Rng;

use crate::error::{GraphError, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    /// Original node ids, ascending.
    pub nodes: Vec<usize>,
    pub graph: Graph,
    /// Position of the sampled root inside `nodes`.
    pub target_index: usize,
}

/// BFS from `v` out to `max_hop`, keeping at most `max_nbrs` new neighbours
/// per expanded node.
///
/// Neighbours that are already kept do not count toward the cap. Direction
/// is ignored when collecting neighbours.
pub fn shadow_khop_sample<R: Rng + ?Sized>(
    g: &Graph,
    v: usize,
    max_hop: usize,
    max_nbrs: usize,
    rng: &mut R,
) -> Result<Subgraph> {
    let n = g.num_nodes();
    if v >= n {
        return Err(GraphError::Invalid(format!("target {v} out of range for {n} nodes")));
    }
    let mut kept = vec![false; n];
    kept[v] = true;
    let mut frontier = vec![v];
    for _ in 0..max_hop {
        let mut next = Vec::new();
        for &u in &frontier {
            let fresh: Vec<usize> =
                g.neighbors_undirected(u).into_iter().filter(|&w| !kept[w]).collect();
            let chosen: Vec<usize> = if fresh.len() <= max_nbrs {
                fresh
            } else {
                let mut picks = index::sample(rng, fresh.len(), max_nbrs).into_vec();
                picks.sort_unstable();
                picks.into_iter().map(|k| fresh[k]).collect()
            };
            for w in chosen {
                kept[w] = true;
                next.push(w);
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    let nodes: Vec<usize> = (0..n).filter(|&i| kept[i]).collect();
    let target_index = nodes.binary_search(&v).expect("target is kept");
    let graph = g.induced(&nodes)?;
    Ok(Subgraph { nodes, graph, target_index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn star_under_cap_is_whole_star() {
        let g = Graph::star(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = shadow_khop_sample(&g, 0, 1, 10, &mut rng).unwrap();
        assert_eq!(s.nodes, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.target_index, 0);
    }

    #[test]
    fn path_is_truncated_at_max_hop() {
        let g = Graph::path(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = shadow_khop_sample(&g, 0, 2, 10, &mut rng).unwrap();
        assert_eq!(s.nodes, vec![0, 1, 2]);
        assert_eq!(s.graph.edges(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn capped_star_replays_with_seed() {
        let g = Graph::star(20);
        let a = shadow_khop_sample(&g, 0, 2, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = shadow_khop_sample(&g, 0, 2, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.nodes.len(), 11);
        assert!(a.nodes.contains(&0));
        assert_eq!(a, b);
    }

    #[test]
    fn target_index_points_at_root() {
        let g = Graph::path(6);
        let s = shadow_khop_sample(&g, 3, 1, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s.nodes, vec![2, 3, 4]);
        assert_eq!(s.nodes[s.target_index], 3);
    }
}
