use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{precondition, Error, Result};
use crate::math;

/// Layer widths `[input, hidden…, output]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 3 || widths.contains(&0) {
            return Err(precondition(
                "an MLP needs at least one hidden layer and nonzero widths",
            ));
        }
        Ok(Self { widths })
    }

    /// `input → hidden × depth → output`.
    pub fn uniform(input: usize, hidden: usize, depth: usize, output: usize) -> Result<Self> {
        let mut w = vec![input];
        w.extend(core::iter::repeat(hidden).take(depth));
        w.push(output);
        Self::new(w)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    pub fn last_hidden_dim(&self) -> usize {
        self.widths[self.widths.len() - 2]
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    n_in: usize,
    n_out: usize,
    /// Offset of the `[n_in][n_out]` weight block.
    w: usize,
    /// Offset of the bias vector.
    b: usize,
}

/// Parameters are one flat vector. Each layer stores its weights input-major
/// (`W[i][o]` at `w + i·n_out + o`) followed by its biases; the forward pass
/// and the weight gradient are then contiguous axpy updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
    params: Vec<f64>,
    version: u64,
}

/// Activations recorded by [`Mlp::forward`] for the reverse pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    version: u64,
    valid: bool,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    /// SoftPlus slope (the logistic sigmoid) at each hidden pre-activation.
    slopes: Vec<Vec<f64>>,
    scratch: [Vec<f64>; 4],
}

/// Primal and tangent activations recorded by [`Mlp::forward_tangent`].
#[derive(Debug, Clone, Default)]
pub struct TangentTrace {
    primal: Trace,
    /// Tangents of `acts`.
    dacts: Vec<Vec<f64>>,
    /// Tangents of the hidden pre-activations.
    dpre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], Vec::as_slice)
    }

    /// Activations of the last hidden layer.
    pub fn last_hidden(&self) -> &[f64] {
        &self.acts[self.acts.len() - 2]
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }
}

impl TangentTrace {
    pub fn output(&self) -> &[f64] {
        self.primal.output()
    }

    pub fn output_tangent(&self) -> &[f64] {
        self.dacts.last().map_or(&[], Vec::as_slice)
    }

    pub fn last_hidden(&self) -> &[f64] {
        self.primal.last_hidden()
    }

    pub fn last_hidden_tangent(&self) -> &[f64] {
        &self.dacts[self.dacts.len() - 2]
    }

    pub fn primal(&self) -> &Trace {
        &self.primal
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn resize_all(bufs: &mut Vec<Vec<f64>>, widths: impl Iterator<Item = usize>) {
    let widths: Vec<usize> = widths.collect();
    bufs.resize_with(widths.len(), Vec::new);
    for (b, w) in bufs.iter_mut().zip(widths) {
        b.resize(w, 0.0);
    }
}

impl Mlp {
    /// All-zero parameters.
    pub fn zeros(spec: MlpSpec) -> Self {
        let mut layers = Vec::new();
        let mut off = 0;
        for w in spec.widths.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            layers.push(Layer {
                n_in,
                n_out,
                w: off,
                b: off + n_in * n_out,
            });
            off += n_in * n_out + n_out;
        }
        Self {
            params: vec![0.0; off],
            spec,
            layers,
            version: 0,
        }
    }

    /// Weights uniform on `±√(6/(fan_in + fan_out))`, biases zero.
    pub fn xavier<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let mut m = Self::zeros(spec);
        for l in m.layers.clone() {
            let limit = math::sqrt(6.0 / (l.n_in + l.n_out) as f64);
            for p in &mut m.params[l.w..l.b] {
                *p = limit * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        m
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(spec);
        if params.len() != m.params.len() {
            return Err(Error::Shape {
                context: "mlp parameters",
                expected: m.params.len(),
                got: params.len(),
            });
        }
        m.params = params;
        Ok(m)
    }

    /// Sets the output layer's weights and biases to zero.
    pub fn zero_output_layer(&mut self) {
        let l = *self.layers.last().expect("at least one layer");
        self.params_mut()[l.w..l.b + l.n_out].fill(0.0);
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access; invalidates outstanding traces.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Weight block of layer `l` as `[n_in][n_out]` plus its bias.
    pub fn layer_params(&self, l: usize) -> (&[f64], &[f64]) {
        let layer = self.layers[l];
        (
            &self.params[layer.w..layer.b],
            &self.params[layer.b..layer.b + layer.n_out],
        )
    }

    pub fn trace(&self) -> Trace {
        Trace::default()
    }

    pub fn tangent_trace(&self) -> TangentTrace {
        TangentTrace::default()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.spec.input_dim() {
            return Err(Error::Shape {
                context: "mlp input",
                expected: self.spec.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    fn check_trace(&self, t: &Trace) -> Result<()> {
        if !t.valid || t.version != self.version || t.acts.len() != self.layers.len() + 1 {
            return Err(precondition(
                "trace is stale: parameters changed after the forward pass",
            ));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64], trace: &mut Trace) -> Result<()> {
        self.check_input(input)?;
        let nl = self.layers.len();
        resize_all(&mut trace.acts, self.spec.widths.iter().copied());
        resize_all(&mut trace.slopes, self.spec.widths[1..nl].iter().copied());
        trace.acts[0].copy_from_slice(input);
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = trace.acts.split_at_mut(l + 1);
            let x = &head[l];
            let y = &mut tail[0];
            y.copy_from_slice(&self.params[layer.b..layer.b + layer.n_out]);
            for (i, &xi) in x.iter().enumerate() {
                let row = layer.w + i * layer.n_out;
                axpy(xi, &self.params[row..row + layer.n_out], y);
            }
            if l + 1 < nl {
                for (yo, s) in y.iter_mut().zip(trace.slopes[l].iter_mut()) {
                    let (sp, sig) = math::softplus_and_sigmoid(*yo);
                    *yo = sp;
                    *s = sig;
                }
            }
        }
        trace.version = self.version;
        trace.valid = true;
        Ok(())
    }

    /// Forward pass into a fresh allocation.
    pub fn eval(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut t = self.trace();
        self.forward(input, &mut t)?;
        Ok(t.output().to_vec())
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂output`, and optionally
    /// `∂L/∂input` into `input_cot`.
    pub fn backward(
        &self,
        trace: &mut Trace,
        out_cot: &[f64],
        grad: &mut [f64],
        mut input_cot: Option<&mut [f64]>,
    ) -> Result<()> {
        self.check_trace(trace)?;
        if out_cot.len() != self.spec.output_dim() || grad.len() != self.params.len() {
            return Err(Error::Shape {
                context: "mlp backward",
                expected: self.spec.output_dim(),
                got: out_cot.len(),
            });
        }
        let nl = self.layers.len();
        let [abar, xbar, _, _] = &mut trace.scratch;
        abar.clear();
        abar.extend_from_slice(out_cot);
        for l in (0..nl).rev() {
            let layer = self.layers[l];
            if l + 1 < nl {
                for (a, s) in abar.iter_mut().zip(&trace.slopes[l]) {
                    *a *= s;
                }
            }
            axpy(1.0, abar, &mut grad[layer.b..layer.b + layer.n_out]);
            let x = &trace.acts[l];
            for (i, &xi) in x.iter().enumerate() {
                if xi != 0.0 {
                    let row = layer.w + i * layer.n_out;
                    axpy(xi, abar, &mut grad[row..row + layer.n_out]);
                }
            }
            if l == 0 && input_cot.is_none() {
                break;
            }
            xbar.clear();
            xbar.extend((0..layer.n_in).map(|i| {
                let row = layer.w + i * layer.n_out;
                dot(&self.params[row..row + layer.n_out], abar)
            }));
            if l == 0 {
                if let Some(ic) = input_cot.as_deref_mut() {
                    axpy(1.0, xbar, ic);
                }
                break;
            }
            core::mem::swap(abar, xbar);
        }
        Ok(())
    }

    /// Forward pass together with the directional derivative along
    /// `tangent` in input space.
    pub fn forward_tangent(
        &self,
        input: &[f64],
        tangent: &[f64],
        tt: &mut TangentTrace,
    ) -> Result<()> {
        self.check_input(tangent)?;
        self.forward(input, &mut tt.primal)?;
        let nl = self.layers.len();
        resize_all(&mut tt.dacts, self.spec.widths.iter().copied());
        resize_all(&mut tt.dpre, self.spec.widths[1..nl].iter().copied());
        tt.dacts[0].copy_from_slice(tangent);
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = tt.dacts.split_at_mut(l + 1);
            let dx = &head[l];
            let dy = &mut tail[0];
            dy.fill(0.0);
            for (i, &di) in dx.iter().enumerate() {
                if di != 0.0 {
                    let row = layer.w + i * layer.n_out;
                    axpy(di, &self.params[row..row + layer.n_out], dy);
                }
            }
            if l + 1 < nl {
                tt.dpre[l].copy_from_slice(dy);
                for (d, s) in dy.iter_mut().zip(&tt.primal.slopes[l]) {
                    *d *= s;
                }
            }
        }
        Ok(())
    }

    /// Reverse pass through a tangent trace. Given cotangents of the output
    /// and of the output tangent, accumulates parameter gradients and, if
    /// requested, cotangents of the input and of the input tangent.
    pub fn backward_tangent(
        &self,
        tt: &mut TangentTrace,
        out_cot: &[f64],
        out_tangent_cot: &[f64],
        grad: &mut [f64],
        mut input_cots: Option<(&mut [f64], &mut [f64])>,
    ) -> Result<()> {
        self.check_trace(&tt.primal)?;
        let od = self.spec.output_dim();
        if out_cot.len() != od || out_tangent_cot.len() != od || grad.len() != self.params.len() {
            return Err(Error::Shape {
                context: "mlp tangent backward",
                expected: od,
                got: out_cot.len(),
            });
        }
        let nl = self.layers.len();
        let [abar, dabar, xbar, dxbar] = &mut tt.primal.scratch;
        abar.clear();
        abar.extend_from_slice(out_cot);
        dabar.clear();
        dabar.extend_from_slice(out_tangent_cot);
        for l in (0..nl).rev() {
            let layer = self.layers[l];
            if l + 1 < nl {
                let s = &tt.primal.slopes[l];
                let da = &tt.dpre[l];
                for o in 0..layer.n_out {
                    let curv = s[o] * (1.0 - s[o]);
                    abar[o] = s[o] * abar[o] + curv * da[o] * dabar[o];
                    dabar[o] *= s[o];
                }
            }
            axpy(1.0, abar, &mut grad[layer.b..layer.b + layer.n_out]);
            let x = &tt.primal.acts[l];
            let dx = &tt.dacts[l];
            for i in 0..layer.n_in {
                let row = layer.w + i * layer.n_out;
                let g = &mut grad[row..row + layer.n_out];
                if x[i] != 0.0 {
                    axpy(x[i], abar, g);
                }
                if dx[i] != 0.0 {
                    axpy(dx[i], dabar, g);
                }
            }
            if l == 0 && input_cots.is_none() {
                break;
            }
            xbar.clear();
            dxbar.clear();
            for i in 0..layer.n_in {
                let row = &self.params[layer.w + i * layer.n_out..layer.w + (i + 1) * layer.n_out];
                xbar.push(dot(row, abar));
                dxbar.push(dot(row, dabar));
            }
            if l == 0 {
                if let Some((ic, itc)) = input_cots.as_mut() {
                    axpy(1.0, xbar, ic);
                    axpy(1.0, dxbar, itc);
                }
                break;
            }
            core::mem::swap(abar, xbar);
            core::mem::swap(dabar, dxbar);
        }
        Ok(())
    }

    /// Adds the first-layer contribution of the input slice starting at
    /// coordinate `start` to `pre`. With the bias from
    /// [`Mlp::layer_params`] this splits the first pre-activation into
    /// parts that can be cached separately.
    pub fn accumulate_first_layer(
        &self,
        start: usize,
        values: &[f64],
        pre: &mut [f64],
    ) -> Result<()> {
        let layer = self.layers[0];
        if start + values.len() > layer.n_in || pre.len() != layer.n_out {
            return Err(Error::Shape {
                context: "first-layer slice",
                expected: layer.n_in,
                got: start + values.len(),
            });
        }
        for (i, &v) in values.iter().enumerate() {
            let row = layer.w + (start + i) * layer.n_out;
            axpy(v, &self.params[row..row + layer.n_out], pre);
        }
        Ok(())
    }

    /// Completes a forward pass from the first-layer pre-activation `pre`;
    /// the output ends up in `out`.
    pub fn finish_from_preactivation(
        &self,
        pre: &[f64],
        out: &mut Vec<f64>,
        scratch: &mut Vec<f64>,
    ) {
        let nl = self.layers.len();
        out.clear();
        out.extend_from_slice(pre);
        if nl == 1 {
            return;
        }
        out.iter_mut().for_each(|v| *v = math::softplus(*v));
        for (l, layer) in self.layers.iter().enumerate().skip(1) {
            scratch.clear();
            scratch.extend_from_slice(&self.params[layer.b..layer.b + layer.n_out]);
            for (i, &xi) in out.iter().enumerate() {
                let row = layer.w + i * layer.n_out;
                axpy(xi, &self.params[row..row + layer.n_out], scratch);
            }
            if l + 1 < nl {
                scratch.iter_mut().for_each(|v| *v = math::softplus(*v));
            }
            core::mem::swap(out, scratch);
        }
    }

    /// `∂output/∂input[coord]` for every output.
    pub fn input_gradient(&self, input: &[f64], coord: usize) -> Result<Vec<f64>> {
        if coord >= self.spec.input_dim() {
            return Err(precondition("input coordinate out of range"));
        }
        let mut tangent = vec![0.0; self.spec.input_dim()];
        tangent[coord] = 1.0;
        let mut tt = self.tangent_trace();
        self.forward_tangent(input, &tangent, &mut tt)?;
        Ok(tt.output_tangent().to_vec())
    }
}
