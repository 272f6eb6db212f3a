//! Undirected attributed graphs and the matrices derived from them.

mod eigen;
mod operators;
mod ppmi;
mod sbm;

use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{DftError, Result};
use crate::tensor::Tensor;

pub use eigen::{symmetric_eigen, SymmetricEigen};
pub use operators::{
    adjacency_with_self_loops, attention_mask, laplacian_positional_encoding,
    normalized_adjacency, positional_encoding_from_laplacian, GraphOperators, PpmiConfig,
};
pub use ppmi::{cooccurrence_counts, ppmi_matrix, ppmi_operator, ppmi_from_counts};
pub use sbm::{sbm_generate, SbmSpec};

/// An undirected graph with dense node features and optional labels.
///
/// Edges are stored once as `(u, v)` with `u < v`; self-loops are never
/// stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    features: Tensor,
    labels: Option<Vec<usize>>,
    num_classes: Option<usize>,
}

impl Graph {
    /// Builds a graph from possibly directed, possibly duplicated pairs.
    /// Pairs are symmetrised and self-loops dropped.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Tensor,
    ) -> Result<Self> {
        if features.rows() != n {
            return Err(DftError::contract(format!(
                "graph with {n} nodes given {} feature rows",
                features.rows()
            )));
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(DftError::contract(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u != v {
                set.insert((u.min(v), u.max(v)));
            }
        }
        Ok(Graph {
            n,
            edges: set,
            features,
            labels: None,
            num_classes: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != self.n {
            return Err(DftError::contract(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.n
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DftError::contract(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        self.labels = Some(labels);
        self.num_classes = Some(num_classes);
        Ok(self)
    }

    /// Separates the labels from the graph, leaving an unlabelled copy.
    pub fn split_labels(mut self) -> (Graph, Option<(Vec<usize>, usize)>) {
        let labels = self.labels.take();
        let c = self.num_classes.take();
        (self, labels.zip(c))
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u.min(v), u.max(v)))
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Sorted neighbour lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Dense 0/1 adjacency without self-loops.
    pub fn adjacency(&self) -> Tensor {
        let mut a = Tensor::zeros(self.n, self.n);
        for &(u, v) in &self.edges {
            a.set(u, v, 1.0);
            a.set(v, u, 1.0);
        }
        a
    }

    /// Number of connected components.
    pub fn num_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut count = self.n;
        for &(u, v) in &self.edges {
            let (a, b) = (find(&mut parent, u), find(&mut parent, v));
            if a != b {
                parent[a] = b;
                count -= 1;
            }
        }
        count
    }

    /// DropEdge: removes each edge independently with probability `rate`.
    /// Features and labels are carried over untouched.
    pub fn drop_edge<R: Rng + ?Sized>(&self, rate: f64, rng: &mut R) -> Result<Graph> {
        if !(0.0..1.0).contains(&rate) {
            return Err(DftError::Config(format!(
                "dropedge rate must lie in [0, 1), got {rate}"
            )));
        }
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|_| rate == 0.0 || rng.random::<f64>() >= rate)
            .collect();
        Ok(Graph {
            n: self.n,
            edges,
            features: self.features.clone(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        })
    }

    /// Subgraph induced by `nodes`, relabelled in the given order.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let mut index = vec![usize::MAX; self.n];
        for (new, &old) in nodes.iter().enumerate() {
            if old >= self.n || index[old] != usize::MAX {
                return Err(DftError::contract(format!(
                    "invalid or repeated node {old} in subgraph selection"
                )));
            }
            index[old] = new;
        }
        let mut feats = Tensor::zeros(nodes.len(), self.feature_dim());
        for (new, &old) in nodes.iter().enumerate() {
            feats.row_mut(new).copy_from_slice(self.features.row(old));
        }
        let edges = self.edges.iter().filter_map(|&(u, v)| {
            let (a, b) = (index[u], index[v]);
            (a != usize::MAX && b != usize::MAX).then_some((a, b))
        });
        let g = Graph::new(nodes.len(), edges, feats)?;
        match (&self.labels, self.num_classes) {
            (Some(l), Some(c)) => g.with_labels(nodes.iter().map(|&i| l[i]).collect(), c),
            _ => Ok(g),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triangle() -> Graph {
        Graph::new(3, [(0, 1), (2, 1), (1, 0), (0, 2), (1, 1)], Tensor::zeros(3, 2)).unwrap()
    }

    #[test]
    fn edges_are_symmetrised_and_deduplicated() {
        let g = triangle();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (0, 2), (1, 2)]);
        assert!(g.has_edge(2, 0));
    }

    #[test]
    fn out_of_range_edge_rejected() {
        assert!(Graph::new(2, [(0, 2)], Tensor::zeros(2, 1)).is_err());
    }

    #[test]
    fn labels_must_lie_in_class_range() {
        assert!(triangle().with_labels(vec![0, 1, 2], 2).is_err());
        assert!(triangle().with_labels(vec![0, 1, 1], 2).is_ok());
    }

    #[test]
    fn drop_edge_rate_zero_keeps_everything() {
        let g = triangle();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(g.drop_edge(0.0, &mut rng).unwrap(), g);
    }

    #[test]
    fn drop_edge_rejects_rate_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(triangle().drop_edge(1.0, &mut rng).is_err());
    }

    #[test]
    fn components() {
        let g = Graph::new(5, [(0, 1), (3, 4)], Tensor::zeros(5, 1)).unwrap();
        assert_eq!(g.num_components(), 3);
    }
}
