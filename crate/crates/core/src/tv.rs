//! Exact total-variation computations for small binary Bayesian networks.

use rand::{Rng, RngExt};

use crate::error::{Error, Result};

/// Binary network over `d ≤ 16` variables. `cpt[j][c]` is `P(X_j = 1 | pa_j = c)`,
/// with parent configuration `c` read as bits in the order of `parents[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryBayesNet {
    pub order: Vec<usize>,
    pub parents: Vec<Vec<usize>>,
    pub cpt: Vec<Vec<f64>>,
}

impl BinaryBayesNet {
    pub fn new(order: Vec<usize>, parents: Vec<Vec<usize>>, cpt: Vec<Vec<f64>>) -> Result<Self> {
        let d = order.len();
        if d == 0 || d > 16 || parents.len() != d || cpt.len() != d {
            return Err(Error::validation("network must have between 1 and 16 nodes with one parent list and table each"));
        }
        let mut pos = vec![usize::MAX; d];
        for (p, &j) in order.iter().enumerate() {
            if j >= d || pos[j] != usize::MAX {
                return Err(Error::validation("order must be a permutation"));
            }
            pos[j] = p;
        }
        for j in 0..d {
            if parents[j].iter().any(|&p| p >= d || pos[p] >= pos[j]) {
                return Err(Error::validation(format!("parents of node {j} must precede it in the order")));
            }
            if cpt[j].len() != 1 << parents[j].len() || cpt[j].iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::validation(format!("conditional table of node {j} is malformed")));
            }
        }
        Ok(BinaryBayesNet { order, parents, cpt })
    }

    /// Random network on `order`: each forward pair is an edge with probability
    /// `edge_prob`, table entries are uniform on (0, 1).
    pub fn random<R: Rng + ?Sized>(order: &[usize], edge_prob: f64, rng: &mut R) -> Self {
        let d = order.len();
        let mut parents = vec![Vec::new(); d];
        for (a, &j) in order.iter().enumerate() {
            for &p in &order[..a] {
                if rng.random::<f64>() < edge_prob {
                    parents[j].push(p);
                }
            }
        }
        let cpt = parents.iter().map(|ps| (0..1usize << ps.len()).map(|_| rng.random::<f64>()).collect()).collect();
        BinaryBayesNet { order: order.to_vec(), parents, cpt }
    }

    pub fn d(&self) -> usize {
        self.order.len()
    }

    /// `P(X_j = 1 | x)`; only the parents of `j` are read from `x`.
    pub fn prob_one(&self, j: usize, x: usize) -> f64 {
        let c = self.parents[j].iter().enumerate().fold(0, |c, (b, &p)| c | (((x >> p) & 1) << b));
        self.cpt[j][c]
    }

    /// Probability of every configuration; bit `j` of the index is `X_j`.
    pub fn joint(&self) -> Vec<f64> {
        (0..1usize << self.d())
            .map(|x| {
                (0..self.d())
                    .map(|j| {
                        let p = self.prob_one(j, x);
                        if (x >> j) & 1 == 1 { p } else { 1.0 - p }
                    })
                    .product()
            })
            .collect()
    }
}

pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `ε_j = E_{X_{<j} ~ P} TV(P_j(·|X_{<j}), Q_j(·|X_{<j}))` for each position of the
/// shared order, computed exactly.
pub fn conditional_tvs(p: &BinaryBayesNet, q: &BinaryBayesNet) -> Result<Vec<f64>> {
    if p.order != q.order {
        return Err(Error::validation("networks must share a topological order"));
    }
    let joint = p.joint();
    Ok(p.order
        .iter()
        .map(|&j| {
            // For binary variables the conditional TV is |p − q|. Summing over full
            // configurations weights each history by its P-probability.
            joint.iter().enumerate().map(|(x, w)| w * (p.prob_one(j, x) - q.prob_one(j, x)).abs()).sum::<f64>()
        })
        .collect())
}
