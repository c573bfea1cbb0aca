//! Multi-head dot-product attention producing the row-stochastic
//! communication (`Aa`) and option (`Ao`) adjacencies.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::{dot, Matrix};

/// Per-head key and query projections, each `dim x feature_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub w_k: Vec<Matrix>,
    pub w_q: Vec<Matrix>,
    /// Score divisor.
    pub d_k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionManifest {
    pub heads: usize,
    pub dim: usize,
    pub d_k: f64,
}

impl AttentionWeights {
    pub fn new(w_k: Vec<Matrix>, w_q: Vec<Matrix>, d_k: f64) -> Result<Self> {
        if w_k.is_empty() || w_k.len() != w_q.len() {
            return Err(Error::InvalidParameter(format!(
                "need matching nonempty key/query heads, got {} and {}",
                w_k.len(),
                w_q.len()
            )));
        }
        if !(d_k > 0.0) || !d_k.is_finite() {
            return Err(Error::InvalidParameter(format!("d_k must be positive, got {d_k}")));
        }
        let shape = w_k[0].shape();
        if let Some(bad) = w_k.iter().chain(&w_q).find(|m| m.shape() != shape) {
            return Err(Error::ShapeMismatch {
                op: "AttentionWeights",
                detail: format!("head shapes {:?} and {:?} differ", shape, bad.shape()),
            });
        }
        Ok(AttentionWeights { w_k, w_q, d_k })
    }

    /// Uniform entries in `[-1/sqrt(feature_dim), 1/sqrt(feature_dim)]`, `d_k = dim`.
    pub fn random<R: Rng + ?Sized>(heads: usize, dim: usize, feature_dim: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || dim == 0 || feature_dim == 0 {
            return Err(Error::InvalidParameter("heads, dim and feature_dim must be positive".into()));
        }
        let a = 1.0 / (feature_dim as f64).sqrt();
        let mut w_k = Vec::with_capacity(heads);
        let mut w_q = Vec::with_capacity(heads);
        for _ in 0..heads {
            w_k.push(Matrix::random_uniform(dim, feature_dim, -a, a, rng));
            w_q.push(Matrix::random_uniform(dim, feature_dim, -a, a, rng));
        }
        AttentionWeights::new(w_k, w_q, dim as f64)
    }

    /// One head with `W_K = W_Q = I`.
    pub fn identity(feature_dim: usize, d_k: f64) -> Result<Self> {
        AttentionWeights::new(vec![Matrix::identity(feature_dim)], vec![Matrix::identity(feature_dim)], d_k)
    }

    pub fn heads(&self) -> usize {
        self.w_k.len()
    }

    pub fn dim(&self) -> usize {
        self.w_k[0].rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.w_k[0].cols()
    }

    pub fn head(&self, h: usize) -> AttentionWeights {
        AttentionWeights { w_k: vec![self.w_k[h].clone()], w_q: vec![self.w_q[h].clone()], d_k: self.d_k }
    }

    pub fn manifest(&self) -> AttentionManifest {
        AttentionManifest { heads: self.heads(), dim: self.dim(), d_k: self.d_k }
    }

    /// Writes `manifest.json` and `w_k_<h>.csv`, `w_q_<h>.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest())?)?;
        for h in 0..self.heads() {
            self.w_k[h].write_csv(dir.join(format!("w_k_{h}.csv")))?;
            self.w_q[h].write_csv(dir.join(format!("w_q_{h}.csv")))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m: AttentionManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let mut w_k = Vec::with_capacity(m.heads);
        let mut w_q = Vec::with_capacity(m.heads);
        for h in 0..m.heads {
            w_k.push(Matrix::read_csv(dir.join(format!("w_k_{h}.csv")))?);
            w_q.push(Matrix::read_csv(dir.join(format!("w_q_{h}.csv")))?);
        }
        let w = AttentionWeights::new(w_k, w_q, m.d_k)?;
        if w.dim() != m.dim {
            return Err(Error::ShapeMismatch {
                op: "AttentionWeights::load",
                detail: format!("manifest dim {} but matrices have {} rows", m.dim, w.dim()),
            });
        }
        Ok(w)
    }
}

/// `Aa`: softmax over each node's out-neighbours plus itself.
pub fn build_communication_attention(x: &Matrix, w: &AttentionWeights, g: &Graph) -> Result<Matrix> {
    let n = x.rows();
    if g.node_count() != n {
        return Err(Error::ShapeMismatch {
            op: "build_communication_attention",
            detail: format!("graph has {} nodes, state has {n} rows", g.node_count()),
        });
    }
    let support: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut s: Vec<usize> = g.neighbors(i).map(|(j, _)| j).collect();
            if let Err(pos) = s.binary_search(&i) {
                s.insert(pos, i);
            }
            s
        })
        .collect();
    attend(x, w, &support, "build_communication_attention")
}

/// `Ao`: dense softmax over the columns of `x`.
pub fn build_option_attention(x: &Matrix, w: &AttentionWeights) -> Result<Matrix> {
    let xt = x.transpose();
    let n = xt.rows();
    let support: Vec<Vec<usize>> = (0..n).map(|_| (0..n).collect()).collect();
    attend(&xt, w, &support, "build_option_attention")
}

fn attend(feats: &Matrix, w: &AttentionWeights, support: &[Vec<usize>], op: &'static str) -> Result<Matrix> {
    if !feats.is_finite() {
        return Err(Error::NonFinite(op));
    }
    if feats.cols() != w.feature_dim() {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("features have width {}, weights expect {}", feats.cols(), w.feature_dim()),
        });
    }
    let n = feats.rows();
    let mut out = Matrix::zeros(n, n);
    for h in 0..w.heads() {
        // rows of K and Q are W_K x_i and W_Q x_i
        let k = feats.matmul_transposed(&w.w_k[h])?;
        let q = feats.matmul_transposed(&w.w_q[h])?;
        for (i, cols) in support.iter().enumerate() {
            if cols.is_empty() {
                return Err(Error::EmptySupport(i));
            }
            let scores: Vec<f64> = cols.iter().map(|&j| dot(k.row(i), q.row(j)) / w.d_k).collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (&j, e) in cols.iter().zip(&exps) {
                out[(i, j)] += e / z;
            }
        }
    }
    let heads = w.heads() as f64;
    Ok(out.map(|v| v / heads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{rng, toy_initial_state};
    use proptest::prelude::*;
    use rand::Rng;

    fn hand_softmax(scores: &[f64]) -> Vec<f64> {
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        scores.iter().map(|s| s.exp() / z).collect()
    }

    #[test]
    fn identity_weights_on_identity_features() {
        let w = AttentionWeights::identity(3, 1.0).unwrap();
        let a = build_communication_attention(&Matrix::identity(3), &w, &Graph::complete(3)).unwrap();
        let e = std::f64::consts::E;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { e / (e + 2.0) } else { 1.0 / (e + 2.0) };
                assert!((a[(i, j)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn option_attention_matches_hand_softmax() {
        let x = toy_initial_state();
        let w = AttentionWeights::identity(3, 1.0).unwrap();
        let ao = build_option_attention(&x, &w).unwrap();
        for j in 0..3 {
            let scores: Vec<f64> = (0..3).map(|l| (0..3).map(|i| x[(i, j)] * x[(i, l)]).sum()).collect();
            for (l, p) in hand_softmax(&scores).iter().enumerate() {
                assert!((ao[(j, l)] - p).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn option_edge_cases() {
        let mut r = rng(2);
        let w = AttentionWeights::random(2, 3, 4, &mut r).unwrap();
        let x = Matrix::random_uniform(4, 1, -1.0, 1.0, &mut r);
        assert_eq!(build_option_attention(&x, &w).unwrap(), Matrix::identity(1));
        let col: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
        let same = Matrix::new(4, 3, col.iter().flat_map(|&v| [v, v, v]).collect()).unwrap();
        let ao = build_option_attention(&same, &w).unwrap();
        for v in ao.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn heads_are_averaged() {
        let mut r = rng(4);
        let w = AttentionWeights::random(2, 3, 2, &mut r).unwrap();
        let x = Matrix::random_uniform(5, 2, -1.0, 1.0, &mut r);
        let g = crate::fixtures::random_connected_graph(5, 0.3, &mut r);
        let both = build_communication_attention(&x, &w, &g).unwrap();
        let h0 = build_communication_attention(&x, &w.head(0), &g).unwrap();
        let h1 = build_communication_attention(&x, &w.head(1), &g).unwrap();
        let mean = h0.add(&h1).unwrap().scale(0.5);
        assert!(both.sub(&mean).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn self_loop_keeps_isolated_nodes_valid() {
        let w = AttentionWeights::identity(2, 1.0).unwrap();
        let g = Graph::from_edge_list(&[], 3).unwrap();
        let a = build_communication_attention(&Matrix::zeros(3, 2), &w, &g).unwrap();
        assert_eq!(a, Matrix::identity(3));
    }

    #[test]
    fn shape_errors() {
        let w = AttentionWeights::identity(2, 1.0).unwrap();
        assert!(build_option_attention(&Matrix::zeros(3, 2), &w).is_err());
        assert!(build_communication_attention(&Matrix::zeros(3, 2), &w, &Graph::complete(4)).is_err());
        assert!(AttentionWeights::new(vec![], vec![], 1.0).is_err());
        assert!(AttentionWeights::new(vec![Matrix::identity(2)], vec![Matrix::identity(2)], 0.0).is_err());
        assert!(AttentionWeights::new(vec![Matrix::identity(2)], vec![Matrix::identity(3)], 1.0).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let w = AttentionWeights::random(3, 2, 5, &mut rng(8)).unwrap();
        w.save(dir.path()).unwrap();
        assert_eq!(AttentionWeights::load(dir.path()).unwrap(), w);
    }

    proptest! {
        #[test]
        fn outputs_are_stochastic_and_masked(na in 1usize..8, no in 1usize..5, heads in 1usize..4, seed in any::<u64>()) {
            let mut r = rng(seed);
            let x = Matrix::random_uniform(na, no, -3.0, 3.0, &mut r);
            let g = crate::fixtures::random_connected_graph(na, 0.3, &mut r);
            let wa = AttentionWeights::random(heads, 4, no, &mut r).unwrap();
            let wo = AttentionWeights::random(heads, 4, na, &mut r).unwrap();
            let aa = build_communication_attention(&x, &wa, &g).unwrap();
            let ao = build_option_attention(&x, &wo).unwrap();
            prop_assert!(aa.is_row_stochastic(1e-12));
            prop_assert!(ao.is_row_stochastic(1e-12));
            for m in [&aa, &ao] {
                prop_assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
            }
            for i in 0..na {
                for j in 0..na {
                    if aa[(i, j)] > 0.0 {
                        prop_assert!(i == j || g.has_edge(i, j));
                    }
                }
            }
        }
    }
}
