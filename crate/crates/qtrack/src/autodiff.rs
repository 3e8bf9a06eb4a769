//! Minimal dense-tensor reverse-mode differentiation.
//!
//! A [`Tape`] records a static forward graph of 2-D f64 arrays (scalars are
//! 1x1, vectors n x 1) and replays it in reverse to accumulate gradients.
//! Parameters used at several forward sites receive summed gradients, which
//! is what the shared Edge/Node Network blocks rely on. The quantum circuit
//! enters the graph as a single opaque node whose backward pass is the exact
//! statevector adjoint from [`crate::quantum`].

use std::f64::consts::PI;
use std::rc::Rc;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{pqc_grad_exact, pqc_forward, CircuitSpec, EncodingKind, ReadoutKind};

/// Clamp bound applied inside the BCE logarithms.
pub const BCE_CLAMP: f64 = 1e-12;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Quantum block wiring used by the PQC tape node.
#[derive(Clone, Debug, PartialEq)]
pub struct PqcSpec {
    pub encoding: EncodingKind,
    pub circuit: CircuitSpec,
    pub readout: ReadoutKind,
}

impl PqcSpec {
    pub fn out_dim(&self) -> usize {
        self.readout.dim(self.circuit.n_qubits)
    }

    pub fn in_dim(&self) -> usize {
        self.encoding.n_features(self.circuit.n_qubits)
    }
}

enum Op {
    Leaf,
    /// x (n x a) . w (a x b)
    MatMul(usize, usize),
    /// broadcast-add a 1 x d bias to every row
    AddBias(usize, usize),
    Add(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Scale(usize, f64),
    ConcatCols(Vec<usize>),
    /// out[i] = x[idx[i]]
    GatherRows(usize, Rc<Vec<usize>>),
    /// out[idx[i]] += x[i], output has fixed row count
    ScatterRows(usize, Rc<Vec<usize>>),
    /// row k of x scaled by the scalar e[k] (e is n x 1)
    RowScale(usize, usize),
    /// mean binary cross-entropy against fixed targets (n x 1)
    BceMean(usize, Rc<Array2<f64>>),
    /// per-row circuit evaluation; thetas is a 1 x K leaf
    Pqc(usize, usize, Rc<PqcSpec>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Forward/backward recording for one model evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Array2<f64>>,
    /// Circuit evaluations performed by forward PQC nodes.
    pub circuit_evals: u64,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        debug_assert!(
            value.iter().all(|x| x.is_finite()),
            "non-finite tape value"
        );
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        self.nodes[v.0].value.view()
    }

    /// Gradient of the last backward() target w.r.t. `v`.
    pub fn grad(&self, v: Var) -> ArrayView2<'_, f64> {
        self.grads[v.0].view()
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.nodes[x.0].value.dim(), self.nodes[w.0].value.dim());
        if xs.1 != ws.0 {
            return Err(Error::Shape(format!(
                "matmul {}x{} . {}x{}",
                xs.0, xs.1, ws.0, ws.1
            )));
        }
        let value = self.nodes[x.0].value.dot(&self.nodes[w.0].value);
        Ok(self.push(value, Op::MatMul(x.0, w.0)))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.nodes[x.0].value.dim(), self.nodes[b.0].value.dim());
        if bs.0 != 1 || bs.1 != xs.1 {
            return Err(Error::Shape(format!(
                "bias 1x{} against activations {}x{}",
                bs.1, xs.0, xs.1
            )));
        }
        let value = &self.nodes[x.0].value + &self.nodes[b.0].value;
        Ok(self.push(value, Op::AddBias(x.0, b.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.nodes[a.0].value.dim() != self.nodes[b.0].value.dim() {
            return Err(Error::Shape("elementwise add".into()));
        }
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        Ok(self.push(value, Op::Add(a.0, b.0)))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(f64::tanh);
        self.push(value, Op::Tanh(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(value, Op::Sigmoid(x.0))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| v * c);
        self.push(value, Op::Scale(x.0, c))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<ArrayView2<f64>> =
            parts.iter().map(|v| self.nodes[v.0].value.view()).collect();
        let value = concatenate(Axis(1), &views)
            .map_err(|e| Error::Shape(format!("column concat: {e}")))?;
        Ok(self.push(value, Op::ConcatCols(parts.iter().map(|v| v.0).collect())))
    }

    pub fn gather_rows(&mut self, x: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let d = src.ncols();
        let mut value = Array2::zeros((idx.len(), d));
        for (row, &i) in idx.iter().enumerate() {
            if i >= src.nrows() {
                return Err(Error::Shape(format!("gather index {i} out of range")));
            }
            value.row_mut(row).assign(&src.row(i));
        }
        Ok(self.push(value, Op::GatherRows(x.0, idx)))
    }

    pub fn scatter_rows(&mut self, x: Var, idx: Rc<Vec<usize>>, n_rows: usize) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        if idx.len() != src.nrows() {
            return Err(Error::Shape("scatter index count != row count".into()));
        }
        let mut value = Array2::zeros((n_rows, src.ncols()));
        for (row, &i) in idx.iter().enumerate() {
            if i >= n_rows {
                return Err(Error::Shape(format!("scatter index {i} out of range")));
            }
            let mut target = value.row_mut(i);
            target += &src.row(row);
        }
        Ok(self.push(value, Op::ScatterRows(x.0, idx)))
    }

    pub fn row_scale(&mut self, x: Var, e: Var) -> Result<Var> {
        let (xs, es) = (self.nodes[x.0].value.dim(), self.nodes[e.0].value.dim());
        if es.1 != 1 || es.0 != xs.0 {
            return Err(Error::Shape(format!(
                "row scale {}x{} by {}x{}",
                xs.0, xs.1, es.0, es.1
            )));
        }
        let mut value = self.nodes[x.0].value.clone();
        for (mut row, &w) in value
            .rows_mut()
            .into_iter()
            .zip(self.nodes[e.0].value.column(0))
        {
            row *= w;
        }
        Ok(self.push(value, Op::RowScale(x.0, e.0)))
    }

    /// Mean of -[y ln s + (1-y) ln(1-s)] with s clamped away from {0, 1}
    /// inside the logarithms. `targets` is a fixed n x 1 array of {0, 1}.
    pub fn bce_mean(&mut self, scores: Var, targets: Rc<Array2<f64>>) -> Result<Var> {
        let s = &self.nodes[scores.0].value;
        if s.dim() != targets.dim() || s.ncols() != 1 {
            return Err(Error::Shape("bce scores/targets".into()));
        }
        if s.nrows() == 0 {
            return Err(Error::Shape("bce on empty score vector".into()));
        }
        let n = s.nrows() as f64;
        let mut loss = 0.0;
        for (si, yi) in s.column(0).iter().zip(targets.column(0).iter()) {
            let sc = si.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            loss -= yi * sc.ln() + (1.0 - yi) * (1.0 - sc).ln();
        }
        let value = Array2::from_elem((1, 1), loss / n);
        Ok(self.push(value, Op::BceMean(scores.0, targets)))
    }

    /// Apply the hybrid quantum block row-wise: each row of `input` is
    /// encoded, run through the circuit with the shared `thetas` (1 x K
    /// leaf), and read out.
    pub fn pqc(&mut self, input: Var, thetas: Var, spec: Rc<PqcSpec>) -> Result<Var> {
        let x = &self.nodes[input.0].value;
        if x.ncols() != spec.in_dim() {
            return Err(Error::Shape(format!(
                "pqc input width {} != encoding arity {}",
                x.ncols(),
                spec.in_dim()
            )));
        }
        let th = &self.nodes[thetas.0].value;
        if th.nrows() != 1 || th.ncols() != spec.circuit.theta_count() {
            return Err(Error::Shape(format!(
                "pqc thetas 1x{} expected, got {}x{}",
                spec.circuit.theta_count(),
                th.nrows(),
                th.ncols()
            )));
        }
        let angles: Vec<f64> = th.row(0).to_vec();
        let mut value = Array2::zeros((x.nrows(), spec.out_dim()));
        for (i, row) in x.rows().into_iter().enumerate() {
            let features: Vec<f64> = row.to_vec();
            let (vals, _) = pqc_forward(
                spec.encoding,
                &features,
                &spec.circuit,
                &angles,
                &spec.readout,
            )?;
            value
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(&vals));
            self.circuit_evals += 1;
        }
        let x0 = input.0;
        let t0 = thetas.0;
        Ok(self.push(value, Op::Pqc(x0, t0, spec)))
    }

    /// Reverse-mode accumulation from a scalar (1 x 1) node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.dim() != (1, 1) {
            return Err(Error::Shape("backward requires a scalar loss".into()));
        }
        self.grads = self
            .nodes
            .iter()
            .map(|n| Array2::zeros(n.value.dim()))
            .collect();
        self.grads[loss.0][(0, 0)] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let g = self.grads[i].clone();
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(x, w) => {
                    let gx = g.dot(&self.nodes[*w].value.t());
                    let gw = self.nodes[*x].value.t().dot(&g);
                    self.grads[*x] += &gx;
                    self.grads[*w] += &gw;
                }
                Op::AddBias(x, b) => {
                    self.grads[*x] += &g;
                    let col_sum = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.grads[*b] += &col_sum;
                }
                Op::Add(a, b) => {
                    self.grads[*a] += &g;
                    self.grads[*b] += &g;
                }
                Op::Tanh(x) => {
                    let d = self.nodes[i].value.mapv(|y| 1.0 - y * y);
                    self.grads[*x] += &(&g * &d);
                }
                Op::Sigmoid(x) => {
                    let d = self.nodes[i].value.mapv(|y| y * (1.0 - y));
                    self.grads[*x] += &(&g * &d);
                }
                Op::Scale(x, c) => {
                    self.grads[*x] += &(&g * *c);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.ncols();
                        let slice = g.slice(ndarray::s![.., offset..offset + w]);
                        self.grads[p] += &slice;
                        offset += w;
                    }
                }
                Op::GatherRows(x, idx) => {
                    let idx = Rc::clone(idx);
                    for (row, &src) in idx.iter().enumerate() {
                        let mut target = self.grads[*x].row_mut(src);
                        target += &g.row(row);
                    }
                }
                Op::ScatterRows(x, idx) => {
                    let idx = Rc::clone(idx);
                    for (row, &dst) in idx.iter().enumerate() {
                        let mut target = self.grads[*x].row_mut(row);
                        target += &g.row(dst);
                    }
                }
                Op::RowScale(x, e) => {
                    let weights = self.nodes[*e].value.column(0).to_owned();
                    let xv = self.nodes[*x].value.clone();
                    {
                        let gx = &mut self.grads[*x];
                        for ((mut row, grow), &w) in
                            gx.rows_mut().into_iter().zip(g.rows()).zip(&weights)
                        {
                            row.scaled_add(w, &grow);
                        }
                    }
                    let ge = &mut self.grads[*e];
                    for ((mut gei, grow), xrow) in
                        ge.rows_mut().into_iter().zip(g.rows()).zip(xv.rows())
                    {
                        gei[0] += grow.dot(&xrow);
                    }
                }
                Op::BceMean(scores, targets) => {
                    let targets = Rc::clone(targets);
                    let s = self.nodes[*scores].value.clone();
                    let n = s.nrows() as f64;
                    let scale = g[(0, 0)] / n;
                    let gs = &mut self.grads[*scores];
                    for ((mut gi, si), yi) in gs
                        .rows_mut()
                        .into_iter()
                        .zip(s.column(0))
                        .zip(targets.column(0))
                    {
                        let sc = si.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                        gi[0] += scale * (-yi / sc + (1.0 - yi) / (1.0 - sc));
                    }
                }
                Op::Pqc(x, t, spec) => {
                    let spec = Rc::clone(spec);
                    let input = self.nodes[*x].value.clone();
                    let angles: Vec<f64> = self.nodes[*t].value.row(0).to_vec();
                    let mut gx = Array2::zeros(input.dim());
                    let mut gt = vec![0.0; angles.len()];
                    for (row, xrow) in input.rows().into_iter().enumerate() {
                        let upstream: Vec<f64> = g.row(row).to_vec();
                        if upstream.iter().all(|&u| u == 0.0) {
                            continue;
                        }
                        let features: Vec<f64> = xrow.to_vec();
                        let grads = pqc_grad_exact(
                            spec.encoding,
                            &features,
                            &spec.circuit,
                            &angles,
                            &spec.readout,
                            &upstream,
                        )?;
                        for (a, b) in gt.iter_mut().zip(&grads.thetas) {
                            *a += b;
                        }
                        gx.row_mut(row)
                            .assign(&ndarray::ArrayView1::from(&grads.features));
                    }
                    self.grads[*x] += &gx;
                    let gt_arr =
                        Array2::from_shape_vec((1, gt.len()), gt).expect("theta grad shape");
                    self.grads[*t] += &gt_arr;
                }
            }
        }
        Ok(())
    }
}

/// Pointwise nonlinearity choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    /// pi * tanh(x): bounds angle-encoder outputs to (-pi, pi).
    TanhPi,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::TanhPi => {
                let t = tape.tanh(x);
                tape.scale(t, PI)
            }
        }
    }
}

/// Fully-connected network shape: `widths[0]` inputs through dense layers to
/// `widths.last()` outputs, `hidden` after every inner layer and `output`
/// after the last.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!("invalid MLP widths {widths:?}")));
        }
        Ok(MlpSpec {
            widths,
            hidden,
            output,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Glorot-uniform weights, zero biases, one (weight, bias) pair per layer.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<(Array2<f64>, Array2<f64>)> {
        self.widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-limit..limit));
                (weight, Array2::zeros((1, fan_out)))
            })
            .collect()
    }

    /// Row-wise forward through the dense stack. `layers` pairs (weight,
    /// bias) vars in layer order.
    pub fn forward(&self, tape: &mut Tape, input: Var, layers: &[(Var, Var)]) -> Result<Var> {
        if layers.len() != self.n_layers() {
            return Err(Error::Shape(format!(
                "MLP expects {} layers, got {}",
                self.n_layers(),
                layers.len()
            )));
        }
        let mut h = input;
        for (i, &(w, b)) in layers.iter().enumerate() {
            let z = tape.matmul(h, w)?;
            let z = tape.add_bias(z, b)?;
            h = if i + 1 == layers.len() {
                self.output.apply(tape, z)
            } else {
                self.hidden.apply(tape, z)
            };
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_identity_weights_is_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0, -2.0], [0.5, 3.0]]);
        let w = tape.leaf(Array2::eye(2));
        let b = tape.leaf(Array2::zeros((1, 2)));
        let z = tape.matmul(x, w).unwrap();
        let z = tape.add_bias(z, b).unwrap();
        assert_eq!(tape.value(z), tape.value(x));
    }

    #[test]
    fn dense_zero_weights_gives_bias_rows() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0, -2.0, 3.0], [0.0, 0.0, 0.0]]);
        let w = tape.leaf(Array2::zeros((3, 2)));
        let b = tape.leaf(array![[0.7, -0.3]]);
        let z = tape.matmul(x, w).unwrap();
        let z = tape.add_bias(z, b).unwrap();
        for row in tape.value(z).rows() {
            assert_eq!(row.to_vec(), vec![0.7, -0.3]);
        }
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(Array2::zeros((2, 3)));
        let w = tape.leaf(Array2::zeros((4, 2)));
        assert!(tape.matmul(x, w).is_err());
    }

    #[test]
    fn backward_of_constant_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[2.0]]);
        let c = tape.leaf(array![[5.0]]);
        // loss depends only on c
        let loss = tape.scale(c, 1.0);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x)[(0, 0)], 0.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Array2::zeros((2, 2)));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn shared_parameter_gradients_sum() {
        // f(w) = w.a + w.b => df/dw = a + b
        let mut tape = Tape::new();
        let w = tape.leaf(array![[1.5]]);
        let a = tape.leaf(array![[2.0]]);
        let b = tape.leaf(array![[-0.5]]);
        let wa = tape.matmul(w, a).unwrap();
        let wb = tape.matmul(w, b).unwrap();
        let loss = tape.add(wa, wb).unwrap();
        tape.backward(loss).unwrap();
        assert_abs_diff_eq!(tape.grad(w)[(0, 0)], 1.5, epsilon = 1e-15);
    }

    #[test]
    fn bce_half_scores_is_ln_two() {
        let mut tape = Tape::new();
        let s = tape.leaf(array![[0.5], [0.5], [0.5]]);
        let y = Rc::new(array![[1.0], [0.0], [1.0]]);
        let loss = tape.bce_mean(s, y).unwrap();
        assert_abs_diff_eq!(tape.value(loss)[(0, 0)], 2.0f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn bce_perfect_scores_is_near_zero() {
        let mut tape = Tape::new();
        let s = tape.leaf(array![[1.0 - 1e-12], [1e-12]]);
        let y = Rc::new(array![[1.0], [0.0]]);
        let loss = tape.bce_mean(s, y).unwrap();
        assert!(tape.value(loss)[(0, 0)] < 1e-10);
    }

    #[test]
    fn mlp_sigmoid_output_in_open_unit_interval() {
        let spec = MlpSpec::new(vec![3, 4, 1], Activation::Tanh, Activation::Sigmoid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = spec.init(&mut rng);
        let mut tape = Tape::new();
        let x = tape.leaf(Array2::from_shape_fn((5, 3), |_| rng.gen_range(-9.0..9.0)));
        let layers: Vec<(Var, Var)> = params
            .iter()
            .map(|(w, b)| (tape.leaf(w.clone()), tape.leaf(b.clone())))
            .collect();
        let out = spec.forward(&mut tape, x, &layers).unwrap();
        for &v in tape.value(out).iter() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn mlp_zero_final_layer_sigmoid_outputs_half() {
        let spec = MlpSpec::new(vec![2, 4, 1], Activation::Tanh, Activation::Sigmoid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = spec.init(&mut rng);
        params[1].0.fill(0.0);
        let mut tape = Tape::new();
        let x = tape.leaf(array![[0.4, -1.0], [2.0, 0.1]]);
        let layers: Vec<(Var, Var)> = params
            .iter()
            .map(|(w, b)| (tape.leaf(w.clone()), tape.leaf(b.clone())))
            .collect();
        let out = spec.forward(&mut tape, x, &layers).unwrap();
        for &v in tape.value(out).iter() {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn mlp_shape_algebra() {
        let spec = MlpSpec::new(vec![64, 64, 64, 1], Activation::Tanh, Activation::Sigmoid)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = spec.init(&mut rng);
        let mut tape = Tape::new();
        let x = tape.leaf(Array2::zeros((8, 64)));
        let layers: Vec<(Var, Var)> = params
            .iter()
            .map(|(w, b)| (tape.leaf(w.clone()), tape.leaf(b.clone())))
            .collect();
        let out = spec.forward(&mut tape, x, &layers).unwrap();
        assert_eq!(tape.value(out).dim(), (8, 1));
    }

    /// Builds a small composite graph exercising every op and checks every
    /// leaf gradient against central finite differences.
    fn composite_loss(leaves: &[Array2<f64>]) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|a| tape.leaf(a.clone())).collect();
        composite_forward(&mut tape, &vars)
    }

    fn composite_forward(tape: &mut Tape, vars: &[Var]) -> f64 {
        let loss = composite_graph(tape, vars);
        tape.value(loss)[(0, 0)]
    }

    fn composite_graph(tape: &mut Tape, vars: &[Var]) -> Var {
        let (x, w, b, e) = (vars[0], vars[1], vars[2], vars[3]);
        let idx = Rc::new(vec![0usize, 2, 1, 2]);
        let g = tape.gather_rows(x, Rc::clone(&idx)).unwrap();
        let gw = tape.row_scale(g, e).unwrap();
        let sc = tape.scatter_rows(gw, idx, 3).unwrap();
        let cat = tape.concat_cols(&[sc, x]).unwrap();
        let z = tape.matmul(cat, w).unwrap();
        let z = tape.add_bias(z, b).unwrap();
        let h = tape.tanh(z);
        let h = tape.scale(h, 0.7);
        let s = tape.sigmoid(h);
        let targets = Rc::new(array![[1.0], [0.0], [1.0]]);
        tape.bce_mean(s, targets).unwrap()
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let leaves = vec![
            Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0)),
            Array2::from_shape_fn((8, 1), |_| rng.gen_range(-1.0..1.0)),
            Array2::from_shape_fn((1, 1), |_| rng.gen_range(-0.5..0.5)),
            Array2::from_shape_fn((4, 1), |_| rng.gen_range(-1.0..1.0)),
        ];
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|a| tape.leaf(a.clone())).collect();
        let loss = composite_graph(&mut tape, &vars);
        tape.backward(loss).unwrap();

        let step = 1e-5;
        for (li, leaf) in leaves.iter().enumerate() {
            for ((r, c), _) in leaf.indexed_iter() {
                let mut plus = leaves.clone();
                plus[li][(r, c)] += step;
                let mut minus = leaves.clone();
                minus[li][(r, c)] -= step;
                let fd = (composite_loss(&plus) - composite_loss(&minus)) / (2.0 * step);
                let analytic = tape.grad(vars[li])[(r, c)];
                let denom = analytic.abs().max(1e-8);
                assert!(
                    (analytic - fd).abs() / denom <= 1e-6,
                    "leaf {li} ({r},{c}): analytic {analytic} fd {fd}"
                );
            }
        }
    }

    #[test]
    fn pqc_node_matches_finite_differences() {
        use crate::quantum::{CircuitSpec, EncodingKind, ReadoutKind};
        let spec = Rc::new(PqcSpec {
            encoding: EncodingKind::Amplitude,
            circuit: CircuitSpec::new(2, 1),
            readout: ReadoutKind::Probabilities { measured: 2 },
        });
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x0 = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
        let t0 = Array2::from_shape_fn((1, 4), |_| rng.gen_range(-1.0..1.0));
        let w0 = Array2::from_shape_fn((4, 1), |_| rng.gen_range(-1.0..1.0));

        let eval = |x: &Array2<f64>, t: &Array2<f64>, w: &Array2<f64>| -> (f64, Option<Tape>, Vec<Var>) {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let tv = tape.leaf(t.clone());
            let wv = tape.leaf(w.clone());
            let out = tape.pqc(xv, tv, Rc::clone(&spec)).unwrap();
            let z = tape.matmul(out, wv).unwrap();
            let s = tape.sigmoid(z);
            let targets = Rc::new(array![[1.0], [0.0], [1.0]]);
            let loss = tape.bce_mean(s, targets).unwrap();
            let v = tape.value(loss)[(0, 0)];
            (v, Some(tape), vec![xv, tv, wv])
        };

        let (_, tape, vars) = eval(&x0, &t0, &w0);
        let mut tape = tape.unwrap();
        let loss_var = Var(tape.nodes.len() - 1);
        tape.backward(loss_var).unwrap();

        let step = 1e-5;
        let arrays = [&x0, &t0, &w0];
        for (li, arr) in arrays.iter().enumerate() {
            for ((r, c), _) in arr.indexed_iter() {
                let perturb = |delta: f64| {
                    let mut xs = [x0.clone(), t0.clone(), w0.clone()];
                    xs[li][(r, c)] += delta;
                    eval(&xs[0], &xs[1], &xs[2]).0
                };
                let fd = (perturb(step) - perturb(-step)) / (2.0 * step);
                let analytic = tape.grad(vars[li])[(r, c)];
                let denom = analytic.abs().max(1e-8);
                assert!(
                    (analytic - fd).abs() / denom <= 1e-5,
                    "array {li} ({r},{c}): analytic {analytic} fd {fd}"
                );
            }
        }
    }

    #[test]
    fn deterministic_gradients() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(40);
            let leaves = vec![
                Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0)),
                Array2::from_shape_fn((8, 1), |_| rng.gen_range(-1.0..1.0)),
                Array2::from_shape_fn((1, 1), |_| rng.gen_range(-0.5..0.5)),
                Array2::from_shape_fn((4, 1), |_| rng.gen_range(-1.0..1.0)),
            ];
            let mut tape = Tape::new();
            let vars: Vec<Var> = leaves.iter().map(|a| tape.leaf(a.clone())).collect();
            let loss = composite_graph(&mut tape, &vars);
            tape.backward(loss).unwrap();
            vars.iter()
                .flat_map(|&v| tape.grad(v).iter().map(|x| x.to_bits()).collect::<Vec<_>>())
                .collect::<Vec<u64>>()
        };
        assert_eq!(run(), run());
    }
}
