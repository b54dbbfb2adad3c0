//! Structural causal models with known ground truth.
//!
//! Three mechanism families are supported: linear-Gaussian (`LG`),
//! nonlinear-additive (`NLA`, tanh terms plus a small quadratic term) and
//! mixed-type (`MT`, half the nodes binary with a logistic link). Sampling is
//! ancestral along the stored topological order; interventions sever the
//! intervened node's mechanism and pin it to a value.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, RngExt};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnSchema, Provenance, Table};
use crate::error::{Error, Result};
use crate::linalg::sigmoid;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "LG")]
    LinearGaussian,
    #[serde(rename = "NLA")]
    NonlinearAdditive,
    #[serde(rename = "MT")]
    MixedType,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::LinearGaussian, Family::NonlinearAdditive, Family::MixedType];

    pub fn tag(self) -> &'static str {
        match self {
            Family::LinearGaussian => "LG",
            Family::NonlinearAdditive => "NLA",
            Family::MixedType => "MT",
        }
    }

    pub fn parse(s: &str) -> Result<Family> {
        match s.to_ascii_uppercase().as_str() {
            "LG" => Ok(Family::LinearGaussian),
            "NLA" => Ok(Family::NonlinearAdditive),
            "MT" => Ok(Family::MixedType),
            other => Err(Error::validation(format!("unknown SCM family '{other}' (expected LG, NLA or MT)"))),
        }
    }
}

/// Per-node structural equation. Parent lists hold `(node, coefficient)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Mechanism {
    /// `x = Σ c·x_p + ε`, `ε ~ N(0, noise_sd²)`.
    Linear { parents: Vec<(usize, f64)>, noise_sd: f64 },
    /// `x = Σ c·tanh(x_p) + q·(Σ x_p)² + ε`.
    NonlinearAdditive { parents: Vec<(usize, f64)>, quad_weight: f64, noise_sd: f64 },
    /// `x ~ Bernoulli(sigmoid(intercept + Σ c·x_p))`.
    LogisticBinary { parents: Vec<(usize, f64)>, intercept: f64 },
}

impl Mechanism {
    pub fn parents(&self) -> &[(usize, f64)] {
        match self {
            Mechanism::Linear { parents, .. }
            | Mechanism::NonlinearAdditive { parents, .. }
            | Mechanism::LogisticBinary { parents, .. } => parents,
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, Mechanism::LogisticBinary { .. })
    }

    /// Noise-free part of the equation; for binary nodes, `P(x = 1 | parents)`.
    pub fn mean_response(&self, row: &[f64]) -> f64 {
        match self {
            Mechanism::Linear { parents, .. } => parents.iter().map(|&(p, c)| c * row[p]).sum(),
            Mechanism::NonlinearAdditive { parents, quad_weight, .. } => {
                let tanh: f64 = parents.iter().map(|&(p, c)| c * row[p].tanh()).sum();
                let s: f64 = parents.iter().map(|&(p, _)| row[p]).sum();
                tanh + quad_weight * s * s
            }
            Mechanism::LogisticBinary { parents, intercept } => {
                sigmoid(intercept + parents.iter().map(|&(p, c)| c * row[p]).sum::<f64>())
            }
        }
    }

    /// Combine the mean response with an exogenous draw. Continuous nodes
    /// take additive noise; binary nodes take a uniform `u` and fire when
    /// `u < p`.
    fn realize(&self, row: &[f64], noise: f64) -> f64 {
        let m = self.mean_response(row);
        if self.is_binary() {
            if noise < m {
                1.0
            } else {
                0.0
            }
        } else {
            m + noise
        }
    }

    fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Mechanism::Linear { noise_sd, .. } | Mechanism::NonlinearAdditive { noise_sd, .. } => {
                let z: f64 = StandardNormal.sample(rng);
                noise_sd * z
            }
            Mechanism::LogisticBinary { .. } => rng.random::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub mechanism: Mechanism,
}

/// `do(node = value)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub node: usize,
    pub value: f64,
}

/// Coefficient and noise laws for [`random_scm`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScmParams {
    pub coef_min: f64,
    pub coef_max: f64,
    pub noise_sd: f64,
    pub quad_weight: f64,
}

impl Default for ScmParams {
    fn default() -> Self {
        ScmParams { coef_min: 0.5, coef_max: 1.5, noise_sd: 1.0, quad_weight: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scm {
    pub family: Family,
    pub nodes: Vec<Node>,
    /// Topological order; every parent precedes its child.
    pub order: Vec<usize>,
}

/// Monte-Carlo interventional contrast with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloAte {
    pub ate: f64,
    pub std_error: f64,
}

fn draw_coef<R: Rng + ?Sized>(rng: &mut R, p: &ScmParams) -> f64 {
    let mag = p.coef_min + (p.coef_max - p.coef_min) * rng.random::<f64>();
    if rng.random::<bool>() {
        mag
    } else {
        -mag
    }
}

/// Draw a random SCM: uniform random topological order, each forward pair
/// joined independently with probability `expected_degree / (d − 1)`.
pub fn random_scm<R: Rng + ?Sized>(
    family: Family,
    d: usize,
    expected_degree: f64,
    params: &ScmParams,
    rng: &mut R,
) -> Result<Scm> {
    if d < 2 {
        return Err(Error::validation("an SCM needs at least 2 nodes"));
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(rng);
    let p_edge = (expected_degree / (d - 1) as f64).clamp(0.0, 1.0);
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); d];
    for (a_pos, &a) in order.iter().enumerate() {
        for &b in &order[a_pos + 1..] {
            if rng.random::<f64>() < p_edge {
                parents[b].push(a);
            }
        }
    }
    let binary: BTreeSet<usize> = if family == Family::MixedType {
        let mut idx: Vec<usize> = (0..d).collect();
        idx.shuffle(rng);
        idx.into_iter().take(d / 2).collect()
    } else {
        BTreeSet::new()
    };
    let nodes = (0..d)
        .map(|j| {
            let mut ps = parents[j].clone();
            ps.sort_unstable();
            let ps: Vec<(usize, f64)> = ps.into_iter().map(|p| (p, draw_coef(rng, params))).collect();
            let mechanism = match family {
                Family::LinearGaussian => Mechanism::Linear { parents: ps, noise_sd: params.noise_sd },
                _ if binary.contains(&j) => Mechanism::LogisticBinary { parents: ps, intercept: 0.0 },
                _ => Mechanism::NonlinearAdditive {
                    parents: ps,
                    quad_weight: params.quad_weight,
                    noise_sd: params.noise_sd,
                },
            };
            Node { name: format!("x{}", j + 1), mechanism }
        })
        .collect();
    Ok(Scm { family, nodes, order })
}

impl Scm {
    /// Build an SCM from explicit nodes, checking that `order` is a valid
    /// topological order over the declared parents.
    pub fn new(family: Family, nodes: Vec<Node>, order: Vec<usize>) -> Result<Scm> {
        let d = nodes.len();
        let mut seen = vec![false; d];
        let mut pos = vec![usize::MAX; d];
        for (k, &j) in order.iter().enumerate() {
            if j >= d || seen[j] {
                return Err(Error::validation("order must be a permutation of the nodes"));
            }
            seen[j] = true;
            pos[j] = k;
        }
        if order.len() != d {
            return Err(Error::validation("order must list every node"));
        }
        for (j, n) in nodes.iter().enumerate() {
            for &(p, _) in n.mechanism.parents() {
                if p >= d || pos[p] >= pos[j] {
                    return Err(Error::validation(format!("parent {p} of node {j} does not precede it")));
                }
            }
        }
        Ok(Scm { family, nodes, order })
    }

    pub fn d(&self) -> usize {
        self.nodes.len()
    }

    pub fn parents(&self, j: usize) -> Vec<usize> {
        self.nodes[j].mechanism.parents().iter().map(|&(p, _)| p).collect()
    }

    pub fn coefficient(&self, p: usize, c: usize) -> Option<f64> {
        self.nodes[c].mechanism.parents().iter().find(|&&(q, _)| q == p).map(|&(_, w)| w)
    }

    /// All edges `(parent, child)`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> =
            (0..self.d()).flat_map(|c| self.parents(c).into_iter().map(move |p| (p, c))).collect();
        e.sort_unstable();
        e
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.coefficient(a, b).is_some()
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.d()).filter(|&j| self.nodes[j].mechanism.parents().is_empty()).collect()
    }

    pub fn is_binary(&self, j: usize) -> bool {
        self.nodes[j].mechanism.is_binary()
    }

    pub fn names(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.name.clone()).collect()
    }

    pub fn schema(&self) -> Vec<ColumnSchema> {
        self.nodes
            .iter()
            .map(|n| {
                if n.mechanism.is_binary() {
                    ColumnSchema::binary(n.name.clone())
                } else {
                    ColumnSchema::continuous(n.name.clone())
                }
            })
            .collect()
    }

    pub fn ancestors(&self, j: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack = self.parents(j);
        while let Some(p) = stack.pop() {
            if out.insert(p) {
                stack.extend(self.parents(p));
            }
        }
        out
    }

    fn position(&self) -> Vec<usize> {
        let mut pos = vec![0; self.d()];
        for (k, &j) in self.order.iter().enumerate() {
            pos[j] = k;
        }
        pos
    }

    /// Exogenous draws, one column per node, filled node by node in topological order.
    pub fn draw_noise<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let mut noise = DMatrix::zeros(n, self.d());
        for &j in &self.order {
            let mech = &self.nodes[j].mechanism;
            for i in 0..n {
                noise[(i, j)] = mech.draw_noise(rng);
            }
        }
        noise
    }

    /// Push exogenous draws through the equations under the given interventions.
    pub fn propagate(&self, noise: &DMatrix<f64>, interventions: &[Intervention]) -> DMatrix<f64> {
        let n = noise.nrows();
        let d = self.d();
        let mut x = DMatrix::zeros(n, d);
        let mut row = vec![0.0; d];
        for i in 0..n {
            for &j in &self.order {
                x[(i, j)] = match interventions.iter().find(|iv| iv.node == j) {
                    Some(iv) => iv.value,
                    None => self.nodes[j].mechanism.realize(&row, noise[(i, j)]),
                };
                row[j] = x[(i, j)];
            }
        }
        x
    }

    pub fn sample_matrix<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, interventions: &[Intervention]) -> DMatrix<f64> {
        let noise = self.draw_noise(n, rng);
        self.propagate(&noise, interventions)
    }

    /// Ancestral sampling, optionally under `do(·)`.
    pub fn ancestral_sample<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
        intervention: Option<Intervention>,
    ) -> Result<Table> {
        if let Some(iv) = intervention {
            if iv.node >= self.d() {
                return Err(Error::validation(format!("intervention on node {} out of range", iv.node)));
            }
        }
        let ivs: Vec<Intervention> = intervention.into_iter().collect();
        let x = self.sample_matrix(n, rng, &ivs);
        // An intervention may pin a binary node to a non-binary value.
        let schema = if ivs.iter().any(|iv| self.is_binary(iv.node) && iv.value != 0.0 && iv.value != 1.0) {
            let mut s = self.schema();
            s[ivs[0].node] = ColumnSchema::continuous(s[ivs[0].node].name.clone());
            s
        } else {
            self.schema()
        };
        Table::new(schema, x, Provenance::Real)
    }

    /// Outcome = last node in topological order; treatment = its ancestor
    /// that comes earliest in that order.
    pub fn choose_treatment_outcome(&self) -> Result<(usize, usize)> {
        let y = *self.order.last().expect("non-empty order");
        let anc = self.ancestors(y);
        let pos = self.position();
        let t = anc
            .iter()
            .copied()
            .min_by_key(|&a| pos[a])
            .ok_or_else(|| Error::validation("no causal path: the sink has no ancestors"))?;
        Ok((t, y))
    }

    /// `E[Y | do(T=treated)] − E[Y | do(T=control)]` from two independent
    /// Monte-Carlo runs of `n_mc` draws each.
    pub fn interventional_contrast(&self, t: usize, y: usize, treated: f64, control: f64, n_mc: usize, seed: u64) -> MonteCarloAte {
        let arm = |value: f64, tag: &str| {
            let mut r = rng::stream(seed, tag);
            let x = self.sample_matrix(n_mc, &mut r, &[Intervention { node: t, value }]);
            let col: Vec<f64> = x.column(y).iter().copied().collect();
            let m = crate::data::mean(&col);
            let s = crate::data::sample_std(&col);
            (m, s * s / n_mc as f64)
        };
        let ((m1, v1), (m0, v0)) = rayon::join(|| arm(treated, "do-treated"), || arm(control, "do-control"));
        MonteCarloAte { ate: m1 - m0, std_error: (v1 + v0).sqrt() }
    }

    /// Ground-truth ATE, `do(T=1)` versus `do(T=0)`.
    pub fn ground_truth_ate(&self, t: usize, y: usize, n_mc: usize, seed: u64) -> MonteCarloAte {
        self.interventional_contrast(t, y, 1.0, 0.0, n_mc, seed)
    }

    /// Observational rows plus each row's individual effect
    /// `Y(do T=1) − Y(do T=0)` under the same exogenous draws.
    pub fn sample_with_ite<R: Rng + ?Sized>(&self, n: usize, t: usize, y: usize, rng: &mut R) -> (DMatrix<f64>, Vec<f64>) {
        let noise = self.draw_noise(n, rng);
        let obs = self.propagate(&noise, &[]);
        let y1 = self.propagate(&noise, &[Intervention { node: t, value: 1.0 }]);
        let y0 = self.propagate(&noise, &[Intervention { node: t, value: 0.0 }]);
        let ite = (0..n).map(|i| y1[(i, y)] - y0[(i, y)]).collect();
        (obs, ite)
    }

    /// Average finite-difference effect of `parent` on `child`'s mechanism,
    /// `mean over rows of [m(x + δ e_parent) − m(x)] / δ`.
    pub fn partial_effect(&self, parent: usize, child: usize, rows: &DMatrix<f64>, delta: f64) -> f64 {
        let mech = &self.nodes[child].mechanism;
        let d = self.d();
        let mut total = 0.0;
        let mut buf = vec![0.0; d];
        for i in 0..rows.nrows() {
            for j in 0..d {
                buf[j] = rows[(i, j)];
            }
            let base = mech.mean_response(&buf);
            buf[parent] += delta;
            total += (mech.mean_response(&buf) - base) / delta;
        }
        total / rows.nrows() as f64
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scm> {
        let scm: Scm = serde_json::from_str(&fs::read_to_string(path)?)?;
        Scm::new(scm.family, scm.nodes, scm.order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin(parents: Vec<(usize, f64)>, sd: f64) -> Node {
        Node { name: String::new(), mechanism: Mechanism::Linear { parents, noise_sd: sd } }
    }

    fn chain3() -> Scm {
        Scm::new(
            Family::LinearGaussian,
            vec![lin(vec![], 1.0), lin(vec![(0, 1.0)], 1.0), lin(vec![(1, 1.0)], 1.0)],
            vec![0, 1, 2],
        )
        .unwrap()
    }

    #[test]
    fn zero_degree_gives_empty_dag() {
        let mut r = rng::seeded(1);
        let scm = random_scm(Family::LinearGaussian, 6, 0.0, &ScmParams::default(), &mut r).unwrap();
        assert!(scm.edges().is_empty());
        assert_eq!(scm.roots().len(), 6);
    }

    #[test]
    fn mixed_type_has_half_binary() {
        let mut r = rng::seeded(2);
        let scm = random_scm(Family::MixedType, 10, 2.0, &ScmParams::default(), &mut r).unwrap();
        assert_eq!((0..10).filter(|&j| scm.is_binary(j)).count(), 5);
        let t = scm.ancestral_sample(500, &mut r, None).unwrap();
        for j in (0..10).filter(|&j| scm.is_binary(j)) {
            assert!(t.column(j).iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn every_draw_is_acyclic() {
        let mut r = rng::seeded(3);
        for _ in 0..200 {
            let scm = random_scm(Family::NonlinearAdditive, 8, 3.0, &ScmParams::default(), &mut r).unwrap();
            assert!(Scm::new(scm.family, scm.nodes.clone(), scm.order.clone()).is_ok());
        }
    }

    #[test]
    fn noiseless_chain_intervention() {
        let scm = Scm::new(
            Family::LinearGaussian,
            vec![lin(vec![], 1.0), lin(vec![(0, 2.0)], 0.0)],
            vec![0, 1],
        )
        .unwrap();
        let t = scm.ancestral_sample(50, &mut rng::seeded(4), Some(Intervention { node: 0, value: 1.0 })).unwrap();
        assert!(t.column(1).iter().all(|&v| v == 2.0));
    }

    #[test]
    fn treatment_outcome_selection() {
        assert_eq!(chain3().choose_treatment_outcome().unwrap(), (0, 2));
        let only_23 = Scm::new(
            Family::LinearGaussian,
            vec![lin(vec![], 1.0), lin(vec![], 1.0), lin(vec![(1, 1.0)], 1.0)],
            vec![0, 1, 2],
        )
        .unwrap();
        assert_eq!(only_23.choose_treatment_outcome().unwrap(), (1, 2));
        let empty = Scm::new(Family::LinearGaussian, vec![lin(vec![], 1.0), lin(vec![], 1.0)], vec![0, 1]).unwrap();
        assert!(empty.choose_treatment_outcome().is_err());
    }

    #[test]
    fn linear_path_ate() {
        let scm = Scm::new(
            Family::LinearGaussian,
            vec![lin(vec![], 1.0), lin(vec![(0, 2.0)], 1.0), lin(vec![(1, 3.0)], 1.0)],
            vec![0, 1, 2],
        )
        .unwrap();
        let est = scm.ground_truth_ate(0, 2, 100_000, 11);
        assert!((est.ate - 6.0).abs() < 0.05, "{est:?}");
    }

    #[test]
    fn no_path_means_zero_effect() {
        let scm = Scm::new(
            Family::LinearGaussian,
            vec![lin(vec![], 1.0), lin(vec![], 1.0), lin(vec![(1, 1.0)], 1.0)],
            vec![0, 1, 2],
        )
        .unwrap();
        let est = scm.ground_truth_ate(0, 2, 100_000, 12);
        assert!(est.ate.abs() < 4.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn lg_ate_linear_in_dose() {
        let mut r = rng::seeded(5);
        let scm = random_scm(Family::LinearGaussian, 6, 2.5, &ScmParams::default(), &mut r).unwrap();
        let Ok((t, y)) = scm.choose_treatment_outcome() else { return };
        let one = scm.interventional_contrast(t, y, 1.0, 0.0, 100_000, 8);
        let two = scm.interventional_contrast(t, y, 2.0, 0.0, 100_000, 9);
        let se = (two.std_error.powi(2) + 4.0 * one.std_error.powi(2)).sqrt();
        assert!((two.ate - 2.0 * one.ate).abs() < 4.0 * se);
    }

    #[test]
    fn sink_intervention_leaves_others_alone() {
        let scm = chain3();
        let a = scm.ancestral_sample(20_000, &mut rng::seeded(6), None).unwrap();
        let b = scm.ancestral_sample(20_000, &mut rng::seeded(6), Some(Intervention { node: 2, value: 5.0 })).unwrap();
        // Same stream, so upstream columns coincide exactly.
        assert_eq!(a.column(0), b.column(0));
        assert_eq!(a.column(1), b.column(1));
        assert!(b.column(2).iter().all(|&v| v == 5.0));
    }

    #[test]
    fn ite_matches_linear_effect() {
        let scm = chain3();
        let (_, ite) = scm.sample_with_ite(100, 0, 2, &mut rng::seeded(7));
        assert!(ite.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn partial_effect_is_coefficient_for_linear() {
        let scm = chain3();
        let rows = scm.sample_matrix(100, &mut rng::seeded(8), &[]);
        assert!((scm.partial_effect(0, 1, &rows, 0.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let mut r = rng::seeded(9);
        let scm = random_scm(Family::MixedType, 10, 2.0, &ScmParams::default(), &mut r).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scm.json");
        scm.save(&p).unwrap();
        assert_eq!(Scm::load(&p).unwrap(), scm);
    }
}
