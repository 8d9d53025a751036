use std::collections::BTreeMap;

use numkit::Matrix;

use crate::error::{GraphError, Result};

/// One edge as supplied by a caller or a file record.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSpec {
    pub src: usize,
    pub dst: usize,
    pub feature: Option<Vec<f64>>,
}

impl EdgeSpec {
    pub fn plain(src: usize, dst: usize) -> Self {
        Self { src, dst, feature: None }
    }

    pub fn with_feature(src: usize, dst: usize, feature: Vec<f64>) -> Self {
        Self { src, dst, feature: Some(feature) }
    }
}

/// A simple graph with dense adjacency and per-node raw features.
///
/// Undirected graphs store a symmetric adjacency; self-loops are never
/// stored. Edge features, when present, are keyed by `(min, max)` for
/// undirected graphs and by `(src, dst)` for directed ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    directed: bool,
    adjacency: Matrix,
    out_nbrs: Vec<Vec<usize>>,
    in_nbrs: Vec<Vec<usize>>,
    node_features: Matrix,
    edge_features: Option<BTreeMap<(usize, usize), Vec<f64>>>,
    node_labels: Option<Vec<f64>>,
    graph_label: Option<f64>,
}

impl Graph {
    pub fn new(
        num_nodes: usize,
        directed: bool,
        edges: &[(usize, usize)],
        node_features: Matrix,
    ) -> Result<Self> {
        let specs: Vec<EdgeSpec> = edges.iter().map(|&(s, d)| EdgeSpec::plain(s, d)).collect();
        Self::build(0, num_nodes, directed, &specs, node_features)
    }

    pub fn from_edge_specs(
        num_nodes: usize,
        directed: bool,
        edges: &[EdgeSpec],
        node_features: Matrix,
    ) -> Result<Self> {
        Self::build(0, num_nodes, directed, edges, node_features)
    }

    /// Validating constructor; `graph_index` only labels error messages.
    pub(crate) fn build(
        graph_index: usize,
        num_nodes: usize,
        directed: bool,
        edges: &[EdgeSpec],
        node_features: Matrix,
    ) -> Result<Self> {
        let malformed = |detail: String| GraphError::Malformed { graph: graph_index, detail };
        if node_features.rows() != num_nodes {
            return Err(malformed(format!(
                "{} feature rows for {num_nodes} nodes",
                node_features.rows()
            )));
        }
        let with_feat = edges.iter().filter(|e| e.feature.is_some()).count();
        if with_feat != 0 && with_feat != edges.len() {
            return Err(malformed("either every edge or no edge must carry features".into()));
        }
        let feat_dim = edges.iter().find_map(|e| e.feature.as_ref().map(|f| f.len()));

        let mut adjacency = Matrix::zeros(num_nodes, num_nodes);
        let mut feats: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        let mut seen: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
        for (k, e) in edges.iter().enumerate() {
            for node in [e.src, e.dst] {
                if node >= num_nodes {
                    return Err(GraphError::UnknownNode {
                        graph: graph_index,
                        edge: k,
                        node,
                        num_nodes,
                    });
                }
            }
            if e.src == e.dst {
                return Err(malformed(format!("edge {k} is a self-loop on node {}", e.src)));
            }
            if let Some(f) = &e.feature {
                if Some(f.len()) != feat_dim || f.iter().any(|v| !v.is_finite()) {
                    return Err(malformed(format!("edge {k} has an inconsistent feature vector")));
                }
            }
            let key = if directed { (e.src, e.dst) } else { (e.src.min(e.dst), e.src.max(e.dst)) };
            if let Some(&(ps, pd)) = seen.get(&key) {
                if directed || (ps, pd) == (e.src, e.dst) {
                    return Err(malformed(format!("edge {k} ({}, {}) is duplicated", e.src, e.dst)));
                }
                // Reverse listing of an undirected edge: features must agree.
                if feats.get(&key) != e.feature.as_ref() {
                    return Err(GraphError::AsymmetricUndirected {
                        graph: graph_index,
                        i: key.0,
                        j: key.1,
                    });
                }
                continue;
            }
            seen.insert(key, (e.src, e.dst));
            if let Some(f) = &e.feature {
                feats.insert(key, f.clone());
            }
            adjacency.set(e.src, e.dst, 1.0);
            if !directed {
                adjacency.set(e.dst, e.src, 1.0);
            }
        }

        let mut out_nbrs = vec![Vec::new(); num_nodes];
        let mut in_nbrs = vec![Vec::new(); num_nodes];
        for i in 0..num_nodes {
            for j in 0..num_nodes {
                if adjacency.get(i, j) != 0.0 {
                    out_nbrs[i].push(j);
                    in_nbrs[j].push(i);
                }
            }
        }
        Ok(Self {
            num_nodes,
            directed,
            adjacency,
            out_nbrs,
            in_nbrs,
            node_features,
            edge_features: feat_dim.map(|_| feats),
            node_labels: None,
            graph_label: None,
        })
    }

    pub fn with_node_labels(mut self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.num_nodes {
            return Err(GraphError::Invalid(format!(
                "{} node labels for {} nodes",
                labels.len(),
                self.num_nodes
            )));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn with_graph_label(mut self, label: f64) -> Self {
        self.graph_label = Some(label);
        self
    }

    pub fn with_node_features(mut self, features: Matrix) -> Result<Self> {
        if features.rows() != self.num_nodes {
            return Err(GraphError::Invalid("feature row count must equal node count".into()));
        }
        self.node_features = features;
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn node_features(&self) -> &Matrix {
        &self.node_features
    }

    pub fn node_labels(&self) -> Option<&[f64]> {
        self.node_labels.as_deref()
    }

    pub fn graph_label(&self) -> Option<f64> {
        self.graph_label
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency.get(i, j) != 0.0
    }

    /// Out-neighbours in ascending order.
    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        &self.out_nbrs[i]
    }

    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_nbrs[i]
    }

    /// Neighbours ignoring direction, ascending.
    pub fn neighbors_undirected(&self, i: usize) -> Vec<usize> {
        if !self.directed {
            return self.out_nbrs[i].clone();
        }
        let mut v: Vec<usize> = self.out_nbrs[i].iter().chain(&self.in_nbrs[i]).copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Canonical edge list: `(i, j)` with `i < j` for undirected graphs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.num_nodes {
            for &j in &self.out_nbrs[i] {
                if self.directed || i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.edges().len()
    }

    pub fn has_edge_features(&self) -> bool {
        self.edge_features.is_some()
    }

    pub fn edge_feature_dim(&self) -> Option<usize> {
        self.edge_features
            .as_ref()
            .map(|m| m.values().next().map(|v| v.len()).unwrap_or(0))
    }

    /// Feature vector of edge `(i, j)`, in either orientation for undirected graphs.
    pub fn edge_feature(&self, i: usize, j: usize) -> Option<&[f64]> {
        let key = if self.directed { (i, j) } else { (i.min(j), i.max(j)) };
        self.edge_features.as_ref()?.get(&key).map(|v| v.as_slice())
    }

    pub fn edge_specs(&self) -> Vec<EdgeSpec> {
        self.edges()
            .into_iter()
            .map(|(i, j)| EdgeSpec { src: i, dst: j, feature: self.edge_feature(i, j).map(|f| f.to_vec()) })
            .collect()
    }

    /// Relabelled copy in which new node `i` is old node `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes;
        let mut inv = vec![usize::MAX; n];
        if perm.len() != n {
            return Err(GraphError::Invalid("permutation length differs from node count".into()));
        }
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inv[old] != usize::MAX {
                return Err(GraphError::Invalid("not a permutation".into()));
            }
            inv[old] = new;
        }
        let edges: Vec<EdgeSpec> = self
            .edge_specs()
            .into_iter()
            .map(|e| EdgeSpec { src: inv[e.src], dst: inv[e.dst], feature: e.feature })
            .collect();
        let mut g = Self::build(0, n, self.directed, &edges, self.node_features.select_rows(perm))?;
        g.node_labels = self.node_labels.as_ref().map(|l| perm.iter().map(|&p| l[p]).collect());
        g.graph_label = self.graph_label;
        Ok(g)
    }

    /// Induced subgraph on `nodes` (kept in the given order).
    pub fn induced(&self, nodes: &[usize]) -> Result<Self> {
        let mut pos = vec![usize::MAX; self.num_nodes];
        for (k, &v) in nodes.iter().enumerate() {
            if v >= self.num_nodes {
                return Err(GraphError::Invalid(format!("node {v} out of range")));
            }
            pos[v] = k;
        }
        let edges: Vec<EdgeSpec> = self
            .edge_specs()
            .into_iter()
            .filter(|e| pos[e.src] != usize::MAX && pos[e.dst] != usize::MAX)
            .map(|e| EdgeSpec { src: pos[e.src], dst: pos[e.dst], feature: e.feature })
            .collect();
        let mut g =
            Self::build(0, nodes.len(), self.directed, &edges, self.node_features.select_rows(nodes))?;
        g.node_labels = self.node_labels.as_ref().map(|l| nodes.iter().map(|&v| l[v]).collect());
        g.graph_label = self.graph_label;
        Ok(g)
    }

    fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Self {
        Self::new(n, false, pairs, Matrix::ones(n, 1)).expect("well-formed named graph")
    }

    /// Path `0 - 1 - … - (n-1)` with a constant unit feature.
    pub fn path(n: usize) -> Self {
        let pairs: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_pairs(n, &pairs)
    }

    pub fn cycle(n: usize) -> Self {
        let mut pairs: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        if n > 2 {
            pairs.push((n - 1, 0));
        }
        Self::from_pairs(n, &pairs)
    }

    pub fn complete(n: usize) -> Self {
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                pairs.push((i, j));
            }
        }
        Self::from_pairs(n, &pairs)
    }

    /// Star with centre 0 and `leaves` leaves.
    pub fn star(leaves: usize) -> Self {
        let pairs: Vec<_> = (1..=leaves).map(|i| (0, i)).collect();
        Self::from_pairs(leaves + 1, &pairs)
    }

    pub fn edgeless(n: usize) -> Self {
        Self::from_pairs(n, &[])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_graph() {
        let g = Graph::new(2, false, &[(0, 1)], Matrix::ones(2, 1)).unwrap();
        assert_eq!(g.adjacency(), &Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap());
        assert_eq!(g.edges(), vec![(0, 1)]);
    }

    #[test]
    fn validation_errors() {
        let f = Matrix::ones(3, 1);
        assert!(matches!(
            Graph::new(3, false, &[(0, 5)], f.clone()),
            Err(GraphError::UnknownNode { node: 5, .. })
        ));
        assert!(matches!(Graph::new(3, false, &[(1, 1)], f.clone()), Err(GraphError::Malformed { .. })));
        assert!(matches!(
            Graph::new(3, true, &[(0, 1), (0, 1)], f.clone()),
            Err(GraphError::Malformed { .. })
        ));
        // both orientations of an undirected edge are fine when they agree
        assert!(Graph::new(3, false, &[(0, 1), (1, 0)], f.clone()).is_ok());
        let conflicting = [
            EdgeSpec::with_feature(0, 1, vec![1.0]),
            EdgeSpec::with_feature(1, 0, vec![2.0]),
        ];
        assert!(matches!(
            Graph::from_edge_specs(3, false, &conflicting, f),
            Err(GraphError::AsymmetricUndirected { i: 0, j: 1, .. })
        ));
    }

    #[test]
    fn relabel_and_induced() {
        let g = Graph::path(4);
        let r = g.relabel(&[3, 2, 1, 0]).unwrap();
        assert_eq!(r.edges(), vec![(0, 1), (1, 2), (2, 3)]);
        let s = g.induced(&[0, 1, 3]).unwrap();
        assert_eq!(s.edges(), vec![(0, 1)]);
        assert_eq!(s.num_nodes(), 3);
    }

    #[test]
    fn directed_neighbours() {
        let g = Graph::new(2, true, &[(0, 1)], Matrix::ones(2, 1)).unwrap();
        assert_eq!(g.out_neighbors(0), &[1]);
        assert_eq!(g.in_neighbors(1), &[0]);
        assert_eq!(g.neighbors_undirected(1), vec![0]);
        assert!(!g.has_edge(1, 0));
    }
}
