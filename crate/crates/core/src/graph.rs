//! Sparse weighted directed graphs, stochastic normalization and the
//! combinatorial Laplacian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Weighted directed graph in compressed row form.
///
/// Row `i` owns `targets[offsets[i]..offsets[i + 1]]`, sorted by column.
/// Self-loops are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

/// On-disk form: `{"n": 3, "edges": [[0, 1, 0.43], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl Graph {
    pub fn from_edge_list(edges: &[(usize, usize, f64)], n: usize) -> Result<Graph> {
        for &(src, dst, weight) in edges {
            if src >= n || dst >= n {
                return Err(Error::IndexOutOfRange { src, dst, n });
            }
            if !(weight >= 0.0) || !weight.is_finite() {
                return Err(Error::NegativeWeight { src, dst, weight });
            }
        }
        let mut sorted = edges.to_vec();
        sorted.sort_by_key(|e| (e.0, e.1));
        if let Some(w) = sorted.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::DuplicateEdge { src: w[0].0, dst: w[0].1 });
        }

        let mut offsets = vec![0usize; n + 1];
        for &(src, _, _) in &sorted {
            offsets[src + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Ok(Graph {
            n,
            offsets,
            targets: sorted.iter().map(|e| e.1).collect(),
            weights: sorted.iter().map(|e| e.2).collect(),
        })
    }

    /// Edges `(src, dst, w)` for every positive entry of a dense square matrix.
    pub fn from_dense(m: &Matrix) -> Result<Graph> {
        if !m.is_square() {
            return Err(Error::ShapeMismatch { op: "Graph::from_dense", detail: format!("{:?}", m.shape()) });
        }
        let mut edges = Vec::new();
        for i in 0..m.rows() {
            for (j, &w) in m.row(i).iter().enumerate() {
                if w < 0.0 {
                    return Err(Error::NegativeEntry { row: i, col: j, value: w });
                }
                if w > 0.0 {
                    edges.push((i, j, w));
                }
            }
        }
        Graph::from_edge_list(&edges, m.rows())
    }

    /// Fully connected graph without self-loops, unit weights.
    pub fn complete(n: usize) -> Graph {
        let edges: Vec<_> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j, 1.0))).collect();
        Graph::from_edge_list(&edges, n).expect("complete graph is valid")
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    /// `(target, weight)` pairs of row `i`, sorted by target.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[i]..self.offsets[i + 1];
        self.targets[range.clone()].iter().copied().zip(self.weights[range].iter().copied())
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.targets[self.offsets[i]..self.offsets[i + 1]].binary_search(&j).is_ok()
    }

    pub fn to_edge_list(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n).flat_map(|i| self.neighbors(i).map(move |(j, w)| (i, j, w))).collect()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for (i, j, w) in self.to_edge_list() {
            m[(i, j)] = w;
        }
        m
    }

    /// Weighted out-degrees `D_ii = sum_j A_ij`.
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.neighbors(i).map(|(_, w)| w).sum()).collect()
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile { n: self.n, edges: self.to_edge_list() }
    }

    pub fn from_json(text: &str) -> Result<Graph> {
        let f: GraphFile = serde_json::from_str(text)?;
        Graph::from_edge_list(&f.edges, f.n)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Graph> {
        Graph::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Scale every row to sum to one. Requires nonnegative entries and at
/// least one strictly positive entry per row.
pub fn row_normalize(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        if let Some((j, &v)) = row.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::NegativeEntry { row: i, col: j, value: v });
        }
        let sum: f64 = row.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::ZeroRow(i));
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

/// Combinatorial Laplacian `L = D - A` with `D_ii = sum_j A_ij`.
///
/// Diffusion kernels are written `dX/dt = -L X`, so `L` is positive
/// semidefinite for symmetric weights and `L 1 = 0`.
pub fn laplacian(g: &Graph) -> Matrix {
    laplacian_of(&g.to_dense())
}

/// Laplacian of a dense (square, nonnegative) adjacency matrix.
pub fn laplacian_of(a: &Matrix) -> Matrix {
    let n = a.rows();
    let mut l = a.scale(-1.0);
    for i in 0..n {
        // row sum of the off-diagonal part keeps L 1 = 0 even with self-loops
        let off: f64 = a.row(i).iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum();
        l[(i, i)] = off;
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{toy_adjacency, TOY_EDGES};
    use proptest::prelude::*;

    #[test]
    fn toy_graph_from_edges() {
        let g = Graph::from_edge_list(&TOY_EDGES, 3).unwrap();
        assert_eq!(g.edge_count(), 6);
        assert_eq!(g.to_dense(), toy_adjacency());
        assert!(g.has_edge(2, 1) && !g.has_edge(1, 1));
    }

    #[test]
    fn empty_and_self_loop_graphs() {
        let g = Graph::from_edge_list(&[], 2).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.to_dense(), Matrix::zeros(2, 2));
        let s = Graph::from_edge_list(&[(0, 0, 1.0)], 1).unwrap();
        assert_eq!(s.to_dense(), Matrix::identity(1));
    }

    #[test]
    fn edge_list_errors() {
        assert!(matches!(Graph::from_edge_list(&[(0, 2, 1.0)], 2), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(Graph::from_edge_list(&[(0, 1, -1.0)], 2), Err(Error::NegativeWeight { .. })));
        assert!(matches!(
            Graph::from_edge_list(&[(0, 1, 1.0), (0, 1, 2.0)], 2),
            Err(Error::DuplicateEdge { src: 0, dst: 1 })
        ));
    }

    #[test]
    fn row_normalize_examples() {
        let toy = toy_adjacency();
        let n = row_normalize(&toy).unwrap();
        for (a, b) in n.values().iter().zip(toy.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let m = Matrix::from_rows(&[[2.0, 2.0], [0.0, 5.0]]).unwrap();
        assert_eq!(row_normalize(&m).unwrap(), Matrix::from_rows(&[[0.5, 0.5], [0.0, 1.0]]).unwrap());
        assert!(matches!(row_normalize(&Matrix::zeros(2, 2)), Err(Error::ZeroRow(0))));
        let neg = Matrix::from_rows(&[[1.0, -1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(row_normalize(&neg), Err(Error::NegativeEntry { .. })));
    }

    #[test]
    fn laplacian_examples() {
        let g = Graph::from_edge_list(&TOY_EDGES, 3).unwrap();
        let l = laplacian(&g);
        let expected = Matrix::identity(3).sub(&toy_adjacency()).unwrap();
        for (a, b) in l.values().iter().zip(expected.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        for s in l.row_sums() {
            assert!(s.abs() <= 1e-12);
        }
        assert_eq!(laplacian(&Graph::from_edge_list(&[], 3).unwrap()), Matrix::zeros(3, 3));
        let two = Graph::from_edge_list(&[(0, 1, 1.0), (1, 0, 1.0)], 2).unwrap();
        assert_eq!(laplacian(&two), Matrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]).unwrap());
    }

    #[test]
    fn json_round_trip() {
        let g = Graph::from_edge_list(&TOY_EDGES, 3).unwrap();
        let text = g.to_json().unwrap();
        assert_eq!(Graph::from_json(&text).unwrap(), g);
        let parsed = Graph::from_json(r#"{"n": 2, "edges": [[1, 0, 0.5]]}"#).unwrap();
        assert_eq!(parsed.to_edge_list(), vec![(1, 0, 0.5)]);
    }

    fn nonneg_matrix() -> impl Strategy<Value = Matrix> {
        (1usize..7, 1usize..7).prop_flat_map(|(r, c)| {
            prop::collection::vec(0.0f64..10.0, r * c).prop_map(move |mut v| {
                // guarantee a positive entry per row
                for i in 0..r {
                    v[i * c + i % c] += 0.1;
                }
                Matrix::new(r, c, v).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn normalized_rows_sum_to_one(m in nonneg_matrix()) {
            let n = row_normalize(&m).unwrap();
            for (i, s) in n.row_sums().iter().enumerate() {
                prop_assert!((s - 1.0).abs() <= 1e-12);
                for (j, v) in n.row(i).iter().enumerate() {
                    prop_assert!(*v >= 0.0);
                    prop_assert_eq!(*v == 0.0, m[(i, j)] == 0.0);
                }
            }
        }

        #[test]
        fn laplacian_annihilates_ones(
            edges in prop::collection::btree_map((0usize..6, 0usize..6), 0.0f64..5.0, 0..30)
        ) {
            let list: Vec<_> = edges.iter().map(|(&(i, j), &w)| (i, j, w)).collect();
            let g = Graph::from_edge_list(&list, 6).unwrap();
            for s in laplacian(&g).row_sums() {
                prop_assert!(s.abs() <= 1e-12);
            }
            // sorted, deduplicated input comes back unchanged
            prop_assert_eq!(g.to_edge_list(), list);
        }
    }
}
