//! The residual correction map `f(x) = x + net(x)`, its reverse pass, and Adam.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden shape of the correction network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapShape {
    pub width: usize,
    pub depth: usize,
}

impl Default for MapShape {
    fn default() -> Self {
        MapShape { width: 64, depth: 2 }
    }
}

#[derive(Serialize, Deserialize)]
struct SerialLayer {
    rows: usize,
    cols: usize,
    /// Row-major `rows × cols`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Affine layer `W x + b` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SerialLayer", try_from = "SerialLayer")]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl From<Layer> for SerialLayer {
    fn from(l: Layer) -> Self {
        let (rows, cols) = l.weights.shape();
        let weights = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| l.weights[(i, j)]).collect();
        SerialLayer { rows, cols, weights, bias: l.bias.iter().copied().collect() }
    }
}

impl TryFrom<SerialLayer> for Layer {
    type Error = String;

    fn try_from(s: SerialLayer) -> std::result::Result<Self, String> {
        if s.weights.len() != s.rows * s.cols || s.bias.len() != s.rows {
            return Err(format!("layer {}x{} has {} weights and {} biases", s.rows, s.cols, s.weights.len(), s.bias.len()));
        }
        Ok(Layer {
            weights: DMatrix::from_row_slice(s.rows, s.cols, &s.weights),
            bias: DVector::from_vec(s.bias),
        })
    }
}

impl Layer {
    fn zeros(out: usize, inp: usize) -> Layer {
        Layer { weights: DMatrix::zeros(out, inp), bias: DVector::zeros(out) }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * self.weights.transpose();
        for mut row in z.row_iter_mut() {
            row += self.bias.transpose();
        }
        z
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Intermediates of one forward pass, tied to the parameter version that
/// produced them.
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    /// Input batch followed by each hidden activation.
    activations: Vec<DMatrix<f64>>,
}

/// Gradients with the same layout as the map parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrads {
    pub layers: Vec<Layer>,
}

impl ParamGrads {
    pub fn zeros_like(map: &CorrectionMap) -> ParamGrads {
        ParamGrads { layers: map.layers.iter().map(|l| Layer::zeros(l.weights.nrows(), l.weights.ncols())).collect() }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights *= s;
            l.bias *= s;
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Layer::values)
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `f(x) = x + net(x)`: `depth` tanh layers of `width` units, then a linear
/// layer back to `d` columns. The last layer starts at zero so `f` is the
/// identity until trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionMap {
    d: usize,
    shape: MapShape,
    layers: Vec<Layer>,
    #[serde(skip)]
    version: u64,
}

impl CorrectionMap {
    pub fn new<R: Rng + ?Sized>(d: usize, shape: MapShape, rng: &mut R) -> Result<CorrectionMap> {
        if d == 0 || shape.width == 0 {
            return Err(Error::validation("correction map needs d ≥ 1 and width ≥ 1"));
        }
        let mut layers = Vec::with_capacity(shape.depth + 1);
        let mut fan_in = d;
        for _ in 0..shape.depth {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut l = Layer::zeros(shape.width, fan_in);
            for v in l.values_mut() {
                *v = (2.0 * rng.random::<f64>() - 1.0) * bound;
            }
            layers.push(l);
            fan_in = shape.width;
        }
        layers.push(Layer::zeros(d, fan_in));
        Ok(CorrectionMap { d, shape, layers, version: 0 })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn shape(&self) -> MapShape {
        self.shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to the parameters; invalidates outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_width(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.d {
            return Err(Error::validation(format!("batch has {} columns, map expects {}", x.ncols(), self.d)));
        }
        Ok(())
    }

    /// Corrected batch and the tape needed to differentiate it.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Tape)> {
        self.check_width(x)?;
        let mut activations = Vec::with_capacity(self.layers.len());
        activations.push(x.clone());
        for l in &self.layers[..self.layers.len() - 1] {
            let z = l.apply(activations.last().expect("nonempty"));
            activations.push(z.map(f64::tanh));
        }
        let out = x + self.layers.last().expect("output layer").apply(activations.last().expect("nonempty"));
        Ok((out, Tape { version: self.version, activations }))
    }

    /// Forward pass without recording a tape.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_width(x)?;
        let mut h = x.clone();
        for l in &self.layers[..self.layers.len() - 1] {
            h = l.apply(&h).map(f64::tanh);
        }
        Ok(x + self.layers.last().expect("output layer").apply(&h))
    }

    /// Reverse pass for a scalar loss whose gradient wrt the output is
    /// `grad_out`. Returns parameter gradients and the gradient wrt the input.
    pub fn backward(&self, tape: &Tape, grad_out: &DMatrix<f64>) -> Result<(ParamGrads, DMatrix<f64>)> {
        if tape.version != self.version {
            return Err(Error::StaleTape { recorded: tape.version, current: self.version });
        }
        let x = &tape.activations[0];
        if grad_out.shape() != x.shape() {
            return Err(Error::validation("output gradient shape differs from the batch"));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        let mut grad_x = grad_out.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.activations[l];
            let weights = g.transpose() * input;
            let bias = DVector::from_iterator(g.ncols(), g.column_iter().map(|c| c.sum()));
            grads.push(Layer { weights, bias });
            let upstream = &g * &layer.weights;
            if l == 0 {
                grad_x += upstream;
            } else {
                g = upstream.zip_map(input, |u, a| u * (1.0 - a * a));
            }
        }
        grads.reverse();
        Ok((ParamGrads { layers: grads }, grad_x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 5e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: ParamGrads,
    pub v: ParamGrads,
    pub t: u64,
}

impl AdamState {
    pub fn new(map: &CorrectionMap, config: AdamConfig) -> AdamState {
        AdamState { config, m: ParamGrads::zeros_like(map), v: ParamGrads::zeros_like(map), t: 0 }
    }
}

/// One bias-corrected Adam update. Non-finite gradients abort without
/// touching the parameters.
pub fn adam_step(map: &mut CorrectionMap, state: &mut AdamState, grads: &ParamGrads) -> Result<()> {
    let shapes_match = |a: &ParamGrads| {
        a.layers.len() == map.layers.len()
            && a.layers.iter().zip(&map.layers).all(|(g, l)| g.weights.shape() == l.weights.shape() && g.bias.len() == l.bias.len())
    };
    if !shapes_match(grads) || !shapes_match(&state.m) || !shapes_match(&state.v) {
        return Err(Error::validation("gradient or moment shapes do not match the map"));
    }
    if let Some((k, _)) = grads.values().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(Error::numeric(format!("non-finite gradient at parameter {k} (step {})", state.t + 1)));
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let params = map.layers_mut().iter_mut().flat_map(Layer::values_mut);
    let m = state.m.layers.iter_mut().flat_map(Layer::values_mut);
    let v = state.v.layers.iter_mut().flat_map(Layer::values_mut);
    for (((p, m), v), &g) in params.zip(m).zip(v).zip(grads.values()) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut g = rng::seeded(seed);
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut g))
    }

    fn perturbed_map(d: usize, shape: MapShape, seed: u64) -> CorrectionMap {
        let mut map = CorrectionMap::new(d, shape, &mut rng::seeded(seed)).unwrap();
        let mut g = rng::seeded(seed + 1);
        for v in map.layers_mut().last_mut().unwrap().values_mut() {
            *v = StandardNormal.sample(&mut g);
        }
        map
    }

    #[test]
    fn identity_at_init() {
        let map = CorrectionMap::new(5, MapShape::default(), &mut rng::seeded(0)).unwrap();
        let x = randn(17, 5, 1);
        let (y, _) = map.forward(&x).unwrap();
        assert_eq!(y, x);
        assert_eq!(map.apply(&x).unwrap(), x);
    }

    #[test]
    fn final_bias_shifts_column() {
        let mut map = CorrectionMap::new(3, MapShape::default(), &mut rng::seeded(0)).unwrap();
        map.layers_mut().last_mut().unwrap().bias[0] = 1.0;
        let x = randn(4, 3, 2);
        let y = map.apply(&x).unwrap();
        for i in 0..4 {
            assert_eq!(y[(i, 0)], x[(i, 0)] + 1.0);
            assert_eq!(y[(i, 1)], x[(i, 1)]);
        }
    }

    #[test]
    fn one_hidden_unit_on_zeros() {
        let shape = MapShape { width: 1, depth: 1 };
        let map = perturbed_map(2, shape, 3);
        let l = map.layers();
        let h = l[0].bias[0].tanh();
        let expect = [l[1].weights[(0, 0)] * h + l[1].bias[0], l[1].weights[(1, 0)] * h + l[1].bias[1]];
        let y = map.apply(&DMatrix::zeros(1, 2)).unwrap();
        assert!((y[(0, 0)] - expect[0]).abs() < 1e-15);
        assert!((y[(0, 1)] - expect[1]).abs() < 1e-15);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let map = CorrectionMap::new(3, MapShape::default(), &mut rng::seeded(0)).unwrap();
        assert!(map.forward(&DMatrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn sum_loss_on_identity_map() {
        let map = CorrectionMap::new(3, MapShape { width: 8, depth: 2 }, &mut rng::seeded(4)).unwrap();
        let x = randn(6, 3, 5);
        let (_, tape) = map.forward(&x).unwrap();
        let (grads, gx) = map.backward(&tape, &DMatrix::from_element(6, 3, 1.0)).unwrap();
        let h = &tape.activations[2];
        let last = grads.layers.last().unwrap();
        for r in 0..3 {
            for k in 0..8 {
                let s: f64 = h.column(k).sum();
                assert!((last.weights[(r, k)] - s).abs() < 1e-12);
            }
            assert_eq!(last.bias[r], 6.0);
        }
        assert!(gx.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let map = perturbed_map(3, MapShape { width: 5, depth: 2 }, 6);
        let x = randn(4, 3, 7);
        let (_, tape) = map.forward(&x).unwrap();
        let (g, gx) = map.backward(&tape, &DMatrix::zeros(4, 3)).unwrap();
        assert!(g.values().all(|&v| v == 0.0));
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_linear() {
        let map = perturbed_map(3, MapShape { width: 5, depth: 2 }, 8);
        let x = randn(4, 3, 9);
        let (_, tape) = map.forward(&x).unwrap();
        let (g1, x1) = map.backward(&tape, &randn(4, 3, 10)).unwrap();
        let (g2, x2) = map.backward(&tape, &randn(4, 3, 11)).unwrap();
        let (g12, x12) = map.backward(&tape, &(randn(4, 3, 10) + randn(4, 3, 11))).unwrap();
        let mut sum = g1.clone();
        sum.add_assign(&g2);
        for (a, b) in sum.values().zip(g12.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(((x1 + x2) - x12).abs().max() < 1e-12);
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut map = perturbed_map(2, MapShape { width: 3, depth: 1 }, 12);
        let x = randn(3, 2, 13);
        let (_, tape) = map.forward(&x).unwrap();
        let mut state = AdamState::new(&map, AdamConfig::default());
        let (g, _) = map.backward(&tape, &DMatrix::from_element(3, 2, 1.0)).unwrap();
        adam_step(&mut map, &mut state, &g).unwrap();
        assert!(matches!(map.backward(&tape, &DMatrix::zeros(3, 2)), Err(Error::StaleTape { .. })));
    }

    // Weighted-sum loss L = Σ c ⊙ f(x), checked against central differences.
    #[test]
    fn gradients_match_finite_differences() {
        let map = perturbed_map(3, MapShape { width: 6, depth: 2 }, 14);
        let x = randn(5, 3, 15);
        let c = randn(5, 3, 16);
        let loss = |m: &CorrectionMap, x: &DMatrix<f64>| m.apply(x).unwrap().component_mul(&c).sum();
        let (_, tape) = map.forward(&x).unwrap();
        let (grads, gx) = map.backward(&tape, &c).unwrap();
        let h = 1e-5;
        let analytic: Vec<f64> = grads.values().copied().collect();
        let n = map.n_params();
        for k in 0..n {
            let mut plus = map.clone();
            *plus.layers_mut().iter_mut().flat_map(Layer::values_mut).nth(k).unwrap() += h;
            let mut minus = map.clone();
            *minus.layers_mut().iter_mut().flat_map(Layer::values_mut).nth(k).unwrap() -= h;
            let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
            let a = analytic[k];
            assert!((fd - a).abs() <= 1e-5 * a.abs().max(1.0), "param {k}: fd {fd} vs {a}");
        }
        for i in 0..5 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[(i, j)] += h;
                let mut xm = x.clone();
                xm[(i, j)] -= h;
                let fd = (loss(&map, &xp) - loss(&map, &xm)) / (2.0 * h);
                assert!((fd - gx[(i, j)]).abs() <= 1e-5 * gx[(i, j)].abs().max(1.0));
            }
        }
    }

    #[test]
    fn adam_zero_grads_leave_params() {
        let mut map = perturbed_map(2, MapShape { width: 3, depth: 1 }, 17);
        let before = map.clone();
        let mut state = AdamState::new(&map, AdamConfig::default());
        let zeros = ParamGrads::zeros_like(&map);
        adam_step(&mut map, &mut state, &zeros).unwrap();
        assert_eq!(state.t, 1);
        assert_eq!(map.layers(), before.layers());
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut map = perturbed_map(1, MapShape { width: 1, depth: 1 }, 18);
        let before: Vec<f64> = map.layers().iter().flat_map(|l| l.values().copied().collect::<Vec<_>>()).collect();
        let mut g = ParamGrads::zeros_like(&map);
        let gv = [0.3, -2.0, 1e-3, 4.0];
        for (slot, v) in g.layers.iter_mut().flat_map(Layer::values_mut).zip(gv) {
            *slot = v;
        }
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(&map, cfg);
        adam_step(&mut map, &mut state, &g).unwrap();
        let after: Vec<f64> = map.layers().iter().flat_map(|l| l.values().copied().collect::<Vec<_>>()).collect();
        for k in 0..4 {
            let expected = before[k] - cfg.lr * gv[k] / (gv[k].abs() + cfg.eps);
            assert!((after[k] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_descends_against_constant_gradient() {
        let mut map = perturbed_map(1, MapShape { width: 1, depth: 1 }, 19);
        let start = map.layers()[1].bias[0];
        let mut g = ParamGrads::zeros_like(&map);
        g.layers[1].bias[0] = 0.7;
        let mut state = AdamState::new(&map, AdamConfig::default());
        for _ in 0..50 {
            adam_step(&mut map, &mut state, &g).unwrap();
        }
        assert!(map.layers()[1].bias[0] < start - 1.0);
    }

    #[test]
    fn adam_rejects_nan() {
        let mut map = perturbed_map(1, MapShape { width: 1, depth: 1 }, 20);
        let before = map.clone();
        let mut g = ParamGrads::zeros_like(&map);
        g.layers[0].bias[0] = f64::NAN;
        let mut state = AdamState::new(&map, AdamConfig::default());
        assert!(matches!(adam_step(&mut map, &mut state, &g), Err(Error::Numeric(_))));
        assert_eq!(map.layers(), before.layers());
        assert_eq!(state.t, 0);
    }

    #[test]
    fn serde_round_trip_is_row_major() {
        let map = perturbed_map(2, MapShape { width: 3, depth: 2 }, 21);
        let json = serde_json::to_value(&map).unwrap();
        let w = &json["layers"][0]["weights"];
        assert_eq!(w[1].as_f64().unwrap(), map.layers()[0].weights[(0, 1)]);
        let back: CorrectionMap = serde_json::from_value(json).unwrap();
        assert_eq!(back.layers(), map.layers());
    }

    #[test]
    fn same_seed_same_training() {
        let run = || {
            let mut map = CorrectionMap::new(3, MapShape { width: 8, depth: 2 }, &mut rng::seeded(22)).unwrap();
            let mut state = AdamState::new(&map, AdamConfig::default());
            let x = randn(10, 3, 23);
            for _ in 0..5 {
                let (y, tape) = map.forward(&x).unwrap();
                let (g, _) = map.backward(&tape, &(y * 2.0)).unwrap();
                adam_step(&mut map, &mut state, &g).unwrap();
            }
            map
        };
        assert_eq!(run().layers(), run().layers());
    }
}
