//! Fixed-architecture MLP with optional pre-activation layer normalization.
//!
//! Every hidden layer computes `act(LN(x·Wᵀ + b))`, where `LN` normalizes each
//! row to zero mean and unit variance and then applies a per-unit gain and
//! offset. The output layer is affine only.
//!
//! Parameters live in a single flat vector so that optimizers, Polyak
//! averaging and checkpoints all operate on one slice. The order is
//! layer-major; within a layer: weight (`out×in`, row-major), bias, then the
//! layer-norm gain and offset when present.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, CoreError, Result};
use crate::matrix::{acc_tn, affine_nt, mul_nn, Matrix};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// ELU with unit scale; continuously differentiable.
    Elu,
}

impl Activation {
    #[inline(always)]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Elu => {
                let neg = x.min(T::zero()).fast_exp_m1();
                if x > T::zero() {
                    x
                } else {
                    neg
                }
            }
        }
    }

    /// Derivative at pre-activation `x` given the output `y = apply(x)`.
    #[inline(always)]
    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Elu => {
                if x > T::zero() {
                    T::one()
                } else {
                    y + T::one()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpLayout {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    pub layer_norm: bool,
    pub ln_eps: f64,
}

impl MlpLayout {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        Self {
            input,
            hidden: hidden.to_vec(),
            output,
            activation: Activation::Elu,
            layer_norm: true,
            ln_eps: 1e-6,
        }
    }

    pub fn with_layer_norm(mut self, on: bool) -> Self {
        self.layer_norm = on;
        self
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden.len() + 2);
        d.push(self.input);
        d.extend_from_slice(&self.hidden);
        d.push(self.output);
        d
    }

    fn spans(&self) -> (Vec<Span>, usize) {
        let dims = self.dims();
        let n_layers = dims.len() - 1;
        let mut spans = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            let (inp, out) = (dims[l], dims[l + 1]);
            let w = off;
            off += inp * out;
            let b = off;
            off += out;
            let ln = if self.layer_norm && l + 1 < n_layers {
                let g = off;
                off += 2 * out;
                Some(g)
            } else {
                None
            };
            spans.push(Span { inp, out, w, b, ln });
        }
        (spans, off)
    }

    pub fn num_params(&self) -> usize {
        self.spans().1
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(CoreError::Invalid {
                what: "mlp layout",
                reason: "all layer widths must be positive".into(),
            });
        }
        if !(self.ln_eps > 0.0) {
            return Err(CoreError::Invalid {
                what: "mlp layout",
                reason: "layer-norm eps must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Span {
    inp: usize,
    out: usize,
    w: usize,
    b: usize,
    /// Offset of the layer-norm gain; the offset vector follows it.
    ln: Option<usize>,
}

/// Initialization gains. Hidden layers get orthogonal weights times
/// `hidden_gain`; the output layer uses `output_gain`.
#[derive(Debug, Clone, Copy)]
pub struct InitScale {
    pub hidden_gain: f64,
    pub output_gain: f64,
}

impl Default for InitScale {
    fn default() -> Self {
        Self {
            hidden_gain: std::f64::consts::SQRT_2,
            output_gain: 1.0,
        }
    }
}

/// Parameter store plus forward/backward for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layout: MlpLayout,
    spans: Vec<Span>,
    params: Vec<T>,
}

/// Cached activations of a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    batch: usize,
    num_params: usize,
    /// Input to each layer (the network input, then each hidden activation).
    inputs: Vec<Matrix<T>>,
    /// Hidden pre-activations after normalization and gain/offset.
    pre: Vec<Matrix<T>>,
    /// Normalized rows before gain/offset (empty when layer norm is off).
    normed: Vec<Matrix<T>>,
    inv_std: Vec<Vec<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Normalized (pre gain/offset) rows of hidden layer `l`, if layer norm is on.
    pub fn normalized(&self, l: usize) -> Option<&Matrix<T>> {
        self.normed.get(l)
    }
}

#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: Vec<T>,
    pub input: Matrix<T>,
}

fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut (impl Rng + ?Sized)) -> Vec<f64> {
    // Orthonormalize the shorter side with modified Gram-Schmidt.
    let (n, k) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let mut q: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..n).map(|_| f64::sample_normal(rng)).collect())
        .collect();
    for i in 0..k {
        for j in 0..i {
            let dot: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
            let (head, tail) = q.split_at_mut(i);
            for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                *a -= dot * b;
            }
        }
        let norm = q[i].iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        for a in &mut q[i] {
            *a /= norm;
        }
    }
    let mut w = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            w[r * cols + c] = gain * if rows >= cols { q[c][r] } else { q[r][c] };
        }
    }
    w
}

impl<T: Scalar> Mlp<T> {
    /// All weights and biases zero, layer-norm gains one.
    pub fn zeros(layout: MlpLayout) -> Result<Self> {
        layout.validate()?;
        let (spans, n) = layout.spans();
        let mut params = vec![T::zero(); n];
        for s in &spans {
            if let Some(g) = s.ln {
                params[g..g + s.out].fill(T::one());
            }
        }
        Ok(Self { layout, spans, params })
    }

    pub fn new(layout: MlpLayout, init: InitScale, rng: &mut (impl Rng + ?Sized)) -> Result<Self> {
        let mut net = Self::zeros(layout)?;
        let last = net.spans.len() - 1;
        for (l, s) in net.spans.clone().iter().enumerate() {
            let gain = if l == last { init.output_gain } else { init.hidden_gain };
            let w = orthogonal(s.out, s.inp, gain, rng);
            for (p, v) in net.params[s.w..s.w + s.out * s.inp].iter_mut().zip(w) {
                *p = T::lit(v);
            }
        }
        Ok(net)
    }

    pub fn layout(&self) -> &MlpLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn num_layers(&self) -> usize {
        self.spans.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input
    }

    pub fn output_dim(&self) -> usize {
        self.layout.output
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn flatten(&self) -> Vec<T> {
        self.params.clone()
    }

    pub fn unflatten(layout: MlpLayout, params: Vec<T>) -> Result<Self> {
        layout.validate()?;
        let (spans, n) = layout.spans();
        if params.len() != n {
            return Err(CoreError::Shape {
                what: "flat parameters",
                expected: n,
                got: params.len(),
            });
        }
        check_finite("flat parameters", &params)?;
        Ok(Self { layout, spans, params })
    }

    pub fn set_params(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(CoreError::Shape {
                what: "flat parameters",
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn weight(&self, l: usize) -> &[T] {
        let s = self.spans[l];
        &self.params[s.w..s.w + s.inp * s.out]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut [T] {
        let s = self.spans[l];
        &mut self.params[s.w..s.w + s.inp * s.out]
    }

    pub fn bias(&self, l: usize) -> &[T] {
        let s = self.spans[l];
        &self.params[s.b..s.b + s.out]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [T] {
        let s = self.spans[l];
        &mut self.params[s.b..s.b + s.out]
    }

    /// Layer-norm (gain, offset) of hidden layer `l`.
    pub fn ln_params(&self, l: usize) -> Option<(&[T], &[T])> {
        let s = self.spans[l];
        s.ln.map(|g| (&self.params[g..g + s.out], &self.params[g + s.out..g + 2 * s.out]))
    }

    pub fn ln_params_mut(&mut self, l: usize) -> Option<(&mut [T], &mut [T])> {
        let s = self.spans[l];
        s.ln.map(|g| {
            let (gain, off) = self.params[g..g + 2 * s.out].split_at_mut(s.out);
            (gain, off)
        })
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.layout.input {
            return Err(CoreError::Shape {
                what: "mlp input width",
                expected: self.layout.input,
                got: x.cols(),
            });
        }
        check_finite("mlp input", x.as_slice())
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x)?;
        Ok(self.run(x, None))
    }

    pub fn forward_train(&self, x: &Matrix<T>) -> Result<(Matrix<T>, Tape<T>)> {
        self.check_input(x)?;
        let mut tape = Tape {
            batch: x.rows(),
            num_params: self.params.len(),
            inputs: Vec::with_capacity(self.spans.len()),
            pre: Vec::new(),
            normed: Vec::new(),
            inv_std: Vec::new(),
        };
        let y = self.run(x, Some(&mut tape));
        Ok((y, tape))
    }

    fn run(&self, x: &Matrix<T>, mut tape: Option<&mut Tape<T>>) -> Matrix<T> {
        let last = self.spans.len() - 1;
        let eps = T::lit(self.layout.ln_eps);
        let act = self.layout.activation;
        let mut cur = x.clone();
        for (l, s) in self.spans.iter().enumerate() {
            let mut z = affine_nt(
                &cur,
                &self.params[s.w..s.w + s.inp * s.out],
                &self.params[s.b..s.b + s.out],
                s.out,
            );
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(cur);
            }
            if l == last {
                return z;
            }
            if let Some(g) = s.ln {
                let gain = &self.params[g..g + s.out];
                let off = &self.params[g + s.out..g + 2 * s.out];
                let n = T::lit(s.out as f64);
                let mut normed = tape.as_ref().map(|_| Matrix::zeros(z.rows(), s.out));
                let mut inv = Vec::with_capacity(z.rows());
                for r in 0..z.rows() {
                    let row = z.row_mut(r);
                    let mean = row.iter().copied().sum::<T>() / n;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                    let is = T::one() / (var + eps).sqrt();
                    inv.push(is);
                    for (j, v) in row.iter_mut().enumerate() {
                        let zh = (*v - mean) * is;
                        if let Some(nm) = normed.as_mut() {
                            nm.set(r, j, zh);
                        }
                        *v = zh * gain[j] + off[j];
                    }
                }
                if let Some(t) = tape.as_deref_mut() {
                    t.normed.push(normed.expect("allocated with tape"));
                    t.inv_std.push(inv);
                }
            }
            let mut a = z.clone();
            for v in a.as_mut_slice() {
                *v = act.apply(*v);
            }
            if let Some(t) = tape.as_deref_mut() {
                t.pre.push(z);
            }
            cur = a;
        }
        unreachable!("output layer returns inside the loop")
    }

    fn check_tape(&self, tape: &Tape<T>, dy: &Matrix<T>) -> Result<()> {
        if tape.num_params != self.params.len() || tape.inputs.len() != self.spans.len() {
            return Err(CoreError::Layout("tape was produced by a different network".into()));
        }
        if dy.rows() != tape.batch || dy.cols() != self.layout.output {
            return Err(CoreError::Shape {
                what: "output gradient",
                expected: tape.batch * self.layout.output,
                got: dy.rows() * dy.cols(),
            });
        }
        Ok(())
    }

    /// Gradients of `Σ_batch ⟨dy, y⟩` with respect to the parameters and the input.
    pub fn backward(&self, tape: &Tape<T>, dy: &Matrix<T>) -> Result<Gradients<T>> {
        self.check_tape(tape, dy)?;
        let mut grads = vec![T::zero(); self.params.len()];
        let input = self.backprop(tape, dy, Some(&mut grads));
        Ok(Gradients { params: grads, input })
    }

    /// Input gradient only; skips the weight-gradient GEMMs.
    pub fn backward_input(&self, tape: &Tape<T>, dy: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_tape(tape, dy)?;
        Ok(self.backprop(tape, dy, None))
    }

    fn backprop(&self, tape: &Tape<T>, dy: &Matrix<T>, mut grads: Option<&mut Vec<T>>) -> Matrix<T> {
        let act = self.layout.activation;
        let mut d = dy.clone();
        for l in (0..self.spans.len()).rev() {
            let s = self.spans[l];
            if l + 1 < self.spans.len() {
                // d currently holds dL/d(activation output) of layer l.
                let pre = &tape.pre[l];
                let post = &tape.inputs[l + 1];
                for ((g, &h), &y) in d.as_mut_slice().iter_mut().zip(pre.as_slice()).zip(post.as_slice()) {
                    *g *= act.derivative(h, y);
                }
                if let Some(goff) = s.ln {
                    let gain = &self.params[goff..goff + s.out];
                    let normed = &tape.normed[l];
                    let inv = &tape.inv_std[l];
                    let n = T::lit(s.out as f64);
                    if let Some(gr) = grads.as_deref_mut() {
                        for r in 0..d.rows() {
                            let dr = d.row(r);
                            let nr = normed.row(r);
                            for j in 0..s.out {
                                gr[goff + j] += dr[j] * nr[j];
                                gr[goff + s.out + j] += dr[j];
                            }
                        }
                    }
                    for r in 0..d.rows() {
                        let nr = normed.row(r);
                        let row = d.row_mut(r);
                        let mut mean_d = T::zero();
                        let mut mean_dn = T::zero();
                        for j in 0..s.out {
                            let dz = row[j] * gain[j];
                            row[j] = dz;
                            mean_d += dz;
                            mean_dn += dz * nr[j];
                        }
                        mean_d /= n;
                        mean_dn /= n;
                        for j in 0..s.out {
                            row[j] = inv[r] * (row[j] - mean_d - nr[j] * mean_dn);
                        }
                    }
                }
            }
            let x = &tape.inputs[l];
            if let Some(gr) = grads.as_deref_mut() {
                acc_tn(&d, x, &mut gr[s.w..s.w + s.out * s.inp]);
                let gb = &mut gr[s.b..s.b + s.out];
                for row in d.iter_rows() {
                    for (g, &v) in gb.iter_mut().zip(row) {
                        *g += v;
                    }
                }
            }
            d = mul_nn(&d, &self.params[s.w..s.w + s.out * s.inp], s.inp);
        }
        d
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layout: self.layout.clone(),
            spans: self.spans.clone(),
            params: self.params.iter().map(|p| U::lit(p.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |_, _| f64::sample_normal(rng))
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let net = Mlp::<f64>::zeros(MlpLayout::new(3, &[4], 2)).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]]).unwrap();
        let y = net.forward(&x).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_norm_row() {
        let mut net = Mlp::<f64>::zeros(MlpLayout::new(3, &[3], 1)).unwrap();
        for i in 0..3 {
            net.weight_mut(0)[i * 3 + i] = 1.0;
        }
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let (_, tape) = net.forward_train(&x).unwrap();
        // Scalar reference: mean 2, population variance 2/3.
        let sd = (2.0f64 / 3.0 + 1e-6).sqrt();
        let want = [-1.0 / sd, 0.0, 1.0 / sd];
        let got = tape.normalized(0).unwrap().row(0);
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
        assert!((got[2] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn duplicated_rows_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::<f64>::new(MlpLayout::new(5, &[16, 8], 3), InitScale::default(), &mut rng).unwrap();
        let row: Vec<f64> = (0..5).map(|i| i as f64 * 0.3 - 0.7).collect();
        let x = Matrix::from_rows(&vec![row; 6]).unwrap();
        let y = net.forward(&x).unwrap();
        for r in 1..6 {
            assert_eq!(y.row(r), y.row(0));
        }
    }

    #[test]
    fn rejects_bad_input() {
        let net = Mlp::<f64>::zeros(MlpLayout::new(3, &[4], 2)).unwrap();
        assert!(matches!(
            net.forward(&Matrix::zeros(2, 4)),
            Err(CoreError::Shape { .. })
        ));
        let mut x = Matrix::zeros(1, 3);
        x.set(0, 1, f64::NAN);
        assert!(matches!(net.forward(&x), Err(CoreError::NonFinite { index: 1, .. })));
    }

    #[test]
    fn zero_and_doubled_output_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::<f64>::new(MlpLayout::new(4, &[8, 8], 3), InitScale::default(), &mut rng).unwrap();
        let x = random_input(5, 4, &mut rng);
        let (_, tape) = net.forward_train(&x).unwrap();
        let g0 = net.backward(&tape, &Matrix::zeros(5, 3)).unwrap();
        assert!(g0.params.iter().all(|&g| g == 0.0));
        let dy = random_input(5, 3, &mut rng);
        let mut dy2 = dy.clone();
        dy2.scale(2.0);
        let g1 = net.backward(&tape, &dy).unwrap();
        let g2 = net.backward(&tape, &dy2).unwrap();
        for (a, b) in g1.params.iter().zip(&g2.params) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn tape_from_other_network_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Mlp::<f64>::new(MlpLayout::new(4, &[8], 2), InitScale::default(), &mut rng).unwrap();
        let b = Mlp::<f64>::new(MlpLayout::new(4, &[6], 2), InitScale::default(), &mut rng).unwrap();
        let (_, tape) = a.forward_train(&random_input(2, 4, &mut rng)).unwrap();
        assert!(matches!(
            b.backward(&tape, &Matrix::zeros(2, 2)),
            Err(CoreError::Layout(_))
        ));
    }

    #[test]
    fn orthogonal_init_has_orthonormal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = orthogonal(4, 9, 1.0, &mut rng);
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = (0..9).map(|k| w[i * 9 + k] * w[j * 9 + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn flatten_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::<f32>::new(MlpLayout::new(6, &[10, 7], 4), InitScale::default(), &mut rng).unwrap();
        let back = Mlp::unflatten(net.layout().clone(), net.flatten()).unwrap();
        assert_eq!(back, net);
        assert!(Mlp::<f32>::unflatten(net.layout().clone(), vec![0.0; 3]).is_err());
    }
}
