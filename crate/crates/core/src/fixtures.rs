//! Reference fixtures and seeded random generators shared by the CLI,
//! the verification suite and the tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::Graph;
use crate::matrix::Matrix;

/// Three-node fully connected toy graph; its adjacency is row-stochastic.
pub const TOY_EDGES: [(usize, usize, f64); 6] =
    [(0, 1, 0.43), (0, 2, 0.57), (1, 0, 0.64), (1, 2, 0.36), (2, 0, 0.70), (2, 1, 0.30)];

pub const TOY_INITIAL: [[f64; 3]; 3] = [[0.43, 0.29, 0.61], [0.14, 0.29, 0.37], [0.46, 0.79, 0.20]];

/// Default toy-run step and horizon.
pub const TOY_DT: f64 = 0.05;
pub const TOY_HORIZON: f64 = 20.0;

pub fn toy_graph() -> Graph {
    Graph::from_edge_list(&TOY_EDGES, 3).expect("toy edges are valid")
}

pub fn toy_adjacency() -> Matrix {
    toy_graph().to_dense()
}

pub fn toy_initial_state() -> Matrix {
    Matrix::from_rows(&TOY_INITIAL).expect("toy state is valid")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense random row-stochastic matrix with entries bounded away from zero.
pub fn random_row_stochastic<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix {
    let mut m = Matrix::random_uniform(n, n, 0.05, 1.0, rng);
    for i in 0..n {
        let row = m.row_mut(i);
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    m
}

/// Off-diagonal row-stochastic matrix, generated like the toy adjacency
/// (zero diagonal, random positive weights elsewhere).
pub fn random_hollow_row_stochastic<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix {
    if n == 1 {
        return Matrix::identity(1);
    }
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                m[(i, j)] = rng.gen_range(0.05..1.0);
            }
        }
        let row = m.row_mut(i);
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    m
}

/// Connected undirected graph: a random spanning path plus extra edges
/// drawn with probability `p`. Unit weights, no self-loops.
#[allow(clippy::needless_range_loop)]
pub fn random_connected_graph<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Graph {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut adj = vec![vec![false; n]; n];
    for w in order.windows(2) {
        adj[w[0]][w[1]] = true;
        adj[w[1]][w[0]] = true;
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                adj[i][j] = true;
                adj[j][i] = true;
            }
        }
    }
    let edges: Vec<_> = (0..n)
        .flat_map(|i| {
            let row = adj[i].clone();
            (0..n).filter(move |&j| row[j]).map(move |j| (i, j, 1.0))
        })
        .collect();
    Graph::from_edge_list(&edges, n).expect("generated edges are valid")
}

/// Connected undirected graph with random symmetric weights in `[0.5, 1.5)`.
pub fn random_weighted_symmetric_graph<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Graph {
    let base = random_connected_graph(n, p, rng);
    let mut w = Matrix::zeros(n, n);
    for (i, j, _) in base.to_edge_list() {
        if i < j {
            let v = rng.gen_range(0.5..1.5);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    Graph::from_dense(&w).expect("symmetric weights are valid")
}
