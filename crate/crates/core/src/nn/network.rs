//! Dueling Q-network with a decision-value head.
//!
//! Layout: an unpadded ReLU convolution stack over an NHWC frame, flattened
//! into two 128-wide ReLU streams. The advantage stream feeds `|A|` outputs,
//! the state stream feeds the scalar state score `V`, and the decision head
//! is a single linear neuron on the state stream. Q-values use the dueling
//! combination `Q = V + A - mean(A)`. Two free scalars `alpha`, `beta` hold
//! the decision-value scaling and take no part in the forward graph.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ParamSet, Real};
use crate::error::NnError;

/// Lower bound applied to `beta` wherever it divides.
pub const BETA_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input frame as (height, width, channels).
    pub input: [usize; 3],
    pub convs: Vec<ConvSpec>,
    pub hidden: usize,
    pub actions: usize,
}

impl NetworkSpec {
    /// The Cleaner agent's network: 50×50×1 input, three conv layers, 128 hidden, 3 actions.
    pub fn cleaner() -> Self {
        Self {
            input: [50, 50, 1],
            convs: vec![
                ConvSpec { filters: 32, kernel: 8, stride: 4 },
                ConvSpec { filters: 64, kernel: 4, stride: 2 },
                ConvSpec { filters: 64, kernel: 3, stride: 1 },
            ],
            hidden: 128,
            actions: 3,
        }
    }

    /// A conv-free network over a flat feature vector (one-hot encoders and the like).
    pub fn flat(features: usize, hidden: usize, actions: usize) -> Self {
        Self { input: [1, features, 1], convs: Vec::new(), hidden, actions }
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    /// Spatial geometry of every conv layer, validated.
    pub fn conv_geometry(&self) -> Result<Vec<ConvGeometry>, NnError> {
        let [mut h, mut w, mut c] = self.input;
        let mut out = Vec::with_capacity(self.convs.len());
        for (i, conv) in self.convs.iter().enumerate() {
            if conv.kernel == 0 || conv.stride == 0 || conv.filters == 0 {
                return Err(NnError::Config(format!("conv{i} has a zero dimension")));
            }
            if conv.kernel > h || conv.kernel > w {
                return Err(NnError::Config(format!(
                    "conv{i} kernel {} exceeds its {h}x{w} input",
                    conv.kernel
                )));
            }
            let g = ConvGeometry {
                in_h: h,
                in_w: w,
                in_c: c,
                out_h: (h - conv.kernel) / conv.stride + 1,
                out_w: (w - conv.kernel) / conv.stride + 1,
                kernel: conv.kernel,
                stride: conv.stride,
                filters: conv.filters,
            };
            h = g.out_h;
            w = g.out_w;
            c = g.filters;
            out.push(g);
        }
        Ok(out)
    }

    pub fn flat_len(&self) -> Result<usize, NnError> {
        Ok(match self.conv_geometry()?.last() {
            Some(g) => g.out_h * g.out_w * g.filters,
            None => self.input_len(),
        })
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input.contains(&0) || self.hidden == 0 || self.actions == 0 {
            return Err(NnError::Config("zero-sized input, hidden or action dimension".into()));
        }
        self.conv_geometry().map(|_| ())
    }

    /// Parameter names and shapes in canonical order.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>, NnError> {
        self.validate()?;
        let mut shapes = Vec::new();
        for (i, g) in self.conv_geometry()?.iter().enumerate() {
            shapes.push((format!("conv{i}.weight"), vec![g.patch_len(), g.filters]));
            shapes.push((format!("conv{i}.bias"), vec![g.filters]));
        }
        let flat = self.flat_len()?;
        let h = self.hidden;
        shapes.push(("advantage_hidden.weight".into(), vec![flat, h]));
        shapes.push(("advantage_hidden.bias".into(), vec![h]));
        shapes.push(("advantage.weight".into(), vec![h, self.actions]));
        shapes.push(("advantage.bias".into(), vec![self.actions]));
        shapes.push(("state_hidden.weight".into(), vec![flat, h]));
        shapes.push(("state_hidden.bias".into(), vec![h]));
        shapes.push(("state_score.weight".into(), vec![h, 1]));
        shapes.push(("state_score.bias".into(), vec![1]));
        shapes.push(("decision.weight".into(), vec![h, 1]));
        shapes.push(("decision.bias".into(), vec![1]));
        shapes.push(("alpha".into(), vec![1]));
        shapes.push(("beta".into(), vec![1]));
        Ok(shapes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub filters: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_c
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

// Index of each parameter tensor inside the canonical ordering.
#[derive(Debug, Clone, Copy)]
struct Slots {
    convs: usize,
}

impl Slots {
    fn conv_w(i: usize) -> usize {
        2 * i
    }
    fn conv_b(i: usize) -> usize {
        2 * i + 1
    }
    fn base(&self) -> usize {
        2 * self.convs
    }
    fn adv_hidden_w(&self) -> usize {
        self.base()
    }
    fn adv_hidden_b(&self) -> usize {
        self.base() + 1
    }
    fn adv_w(&self) -> usize {
        self.base() + 2
    }
    fn adv_b(&self) -> usize {
        self.base() + 3
    }
    fn state_hidden_w(&self) -> usize {
        self.base() + 4
    }
    fn state_hidden_b(&self) -> usize {
        self.base() + 5
    }
    fn score_w(&self) -> usize {
        self.base() + 6
    }
    fn score_b(&self) -> usize {
        self.base() + 7
    }
    fn decision_w(&self) -> usize {
        self.base() + 8
    }
    fn decision_b(&self) -> usize {
        self.base() + 9
    }
    fn alpha(&self) -> usize {
        self.base() + 10
    }
    fn beta(&self) -> usize {
        self.base() + 11
    }
}

/// Outputs of one batched forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    pub batch: usize,
    pub actions: usize,
    /// `batch × actions`, row-major.
    pub q: Vec<T>,
    /// State score `V` per sample.
    pub value: Vec<T>,
    /// Unscaled decision value `D` per sample.
    pub d_raw: Vec<T>,
    pub alpha: T,
    pub beta: T,
}

impl<T: Real> ForwardOutput<T> {
    pub fn q_row(&self, b: usize) -> &[T] {
        &self.q[b * self.actions..(b + 1) * self.actions]
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    batch: usize,
    input: Vec<T>,
    conv_cols: Vec<Vec<T>>,
    conv_out: Vec<Vec<T>>,
    adv_hidden: Vec<T>,
    state_hidden: Vec<T>,
}

impl<T: Real> ForwardCache<T> {
    /// Which rectified units were active, in a fixed order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.conv_out
            .iter()
            .flatten()
            .chain(&self.adv_hidden)
            .chain(&self.state_hidden)
            .map(|v| *v > T::zero())
            .collect()
    }
}

/// A network specification bound to its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    geometry: Vec<ConvGeometry>,
    flat: usize,
    params: ParamSet<T>,
}

impl<T: Real> Network<T> {
    /// Fan-in scaled uniform weights and biases, `alpha = 0`, `beta = 1`.
    pub fn init<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self, NnError> {
        let shapes = spec.param_shapes()?;
        let mut params = ParamSet::zeros(&shapes);
        let slots = Slots { convs: spec.convs.len() };
        for (idx, (name, shape)) in shapes.iter().enumerate() {
            if idx == slots.alpha() {
                continue;
            }
            if idx == slots.beta() {
                params.tensor_mut(idx).fill(T::one());
                continue;
            }
            // Biases share the fan-in of their weight matrix.
            let fan_in = if name.ends_with(".bias") { shapes[idx - 1].1[0] } else { shape[0] };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for x in params.tensor_mut(idx).data_mut() {
                *x = T::of(rng.gen_range(-bound..bound));
            }
        }
        Self::from_params(spec, params)
    }

    /// All weights zero, `alpha = 0`, `beta = 1`.
    pub fn zeroed(spec: NetworkSpec) -> Result<Self, NnError> {
        let shapes = spec.param_shapes()?;
        let mut params = ParamSet::zeros(&shapes);
        let beta = Slots { convs: spec.convs.len() }.beta();
        params.tensor_mut(beta).fill(T::one());
        Self::from_params(spec, params)
    }

    pub fn from_params(spec: NetworkSpec, params: ParamSet<T>) -> Result<Self, NnError> {
        let shapes = spec.param_shapes()?;
        params.check_shapes(&shapes)?;
        let geometry = spec.conv_geometry()?;
        let flat = spec.flat_len()?;
        Ok(Self { spec, geometry, flat, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Overwrites `target`'s parameters with a copy of this network's.
    pub fn copy_into(&self, target: &mut Network<T>) -> Result<(), NnError> {
        if self.spec != target.spec {
            return Err(NnError::Config("copy between networks of different specs".into()));
        }
        target.params.clone_from(&self.params);
        Ok(())
    }

    fn slots(&self) -> Slots {
        Slots { convs: self.spec.convs.len() }
    }

    pub fn alpha(&self) -> T {
        self.params.tensor(self.slots().alpha()).data()[0]
    }

    pub fn beta(&self) -> T {
        self.params.tensor(self.slots().beta()).data()[0]
    }

    /// Raises `beta` to `BETA_MIN` if an update pushed it lower.
    pub fn clamp_beta(&mut self) {
        let slot = self.slots().beta();
        let b = &mut self.params.tensor_mut(slot).data_mut()[0];
        if !(*b >= T::of(BETA_MIN)) {
            *b = T::of(BETA_MIN);
        }
    }

    /// Indices of `alpha` and `beta` in the parameter list.
    pub fn scaling_slots(&self) -> (usize, usize) {
        (self.slots().alpha(), self.slots().beta())
    }

    /// Index range of the decision head's weight and bias.
    pub fn decision_slots(&self) -> (usize, usize) {
        (self.slots().decision_w(), self.slots().decision_b())
    }

    pub fn forward(&self, input: &[T], batch: usize) -> Result<ForwardOutput<T>, NnError> {
        self.forward_cached(input, batch).map(|(out, _)| out)
    }

    pub fn forward_cached(
        &self,
        input: &[T],
        batch: usize,
    ) -> Result<(ForwardOutput<T>, ForwardCache<T>), NnError> {
        let in_len = self.spec.input_len();
        if batch == 0 || input.len() != batch * in_len {
            return Err(NnError::Shape {
                what: "network input".into(),
                expected: format!("batch >= 1 of {} values", in_len),
                found: format!("{} values for batch {}", input.len(), batch),
            });
        }
        let s = self.slots();
        let p = &self.params;

        let mut conv_cols = Vec::with_capacity(self.geometry.len());
        let mut conv_out: Vec<Vec<T>> = Vec::with_capacity(self.geometry.len());
        for (i, g) in self.geometry.iter().enumerate() {
            let x = if i == 0 { input } else { &conv_out[i - 1] };
            let cols = im2col(x, batch, g);
            let rows = batch * g.positions();
            let mut out = vec![T::zero(); rows * g.filters];
            dense(
                &cols,
                rows,
                g.patch_len(),
                p.tensor(Slots::conv_w(i)).data(),
                p.tensor(Slots::conv_b(i)).data(),
                &mut out,
            );
            relu(&mut out);
            conv_cols.push(cols);
            conv_out.push(out);
        }
        let flat: &[T] = conv_out.last().map(Vec::as_slice).unwrap_or(input);

        let h = self.spec.hidden;
        let a = self.spec.actions;
        let mut adv_hidden = vec![T::zero(); batch * h];
        dense(
            flat,
            batch,
            self.flat,
            p.tensor(s.adv_hidden_w()).data(),
            p.tensor(s.adv_hidden_b()).data(),
            &mut adv_hidden,
        );
        relu(&mut adv_hidden);
        let mut state_hidden = vec![T::zero(); batch * h];
        dense(
            flat,
            batch,
            self.flat,
            p.tensor(s.state_hidden_w()).data(),
            p.tensor(s.state_hidden_b()).data(),
            &mut state_hidden,
        );
        relu(&mut state_hidden);

        let mut adv = vec![T::zero(); batch * a];
        dense(&adv_hidden, batch, h, p.tensor(s.adv_w()).data(), p.tensor(s.adv_b()).data(), &mut adv);
        let mut value = vec![T::zero(); batch];
        dense(
            &state_hidden,
            batch,
            h,
            p.tensor(s.score_w()).data(),
            p.tensor(s.score_b()).data(),
            &mut value,
        );
        let mut d_raw = vec![T::zero(); batch];
        dense(
            &state_hidden,
            batch,
            h,
            p.tensor(s.decision_w()).data(),
            p.tensor(s.decision_b()).data(),
            &mut d_raw,
        );

        let inv_a = T::one() / T::of(a as f64);
        let mut q = adv;
        for b in 0..batch {
            let row = &mut q[b * a..(b + 1) * a];
            let mean = row.iter().copied().sum::<T>() * inv_a;
            for x in row.iter_mut() {
                *x = value[b] + *x - mean;
            }
        }

        let out = ForwardOutput {
            batch,
            actions: a,
            q,
            value,
            d_raw,
            alpha: self.alpha(),
            beta: self.beta(),
        };
        if !(out.q.iter().all(|x| x.is_finite()) && out.d_raw.iter().all(|x| x.is_finite())) {
            return Err(NnError::NonFinite("network output".into()));
        }
        let cache = ForwardCache {
            batch,
            input: if self.geometry.is_empty() { input.to_vec() } else { Vec::new() },
            conv_cols,
            conv_out,
            adv_hidden,
            state_hidden,
        };
        Ok((out, cache))
    }

    /// Reverse pass. `dq` is dLoss/dQ (`batch × actions`), `dd` is dLoss/dD.
    ///
    /// Returns gradients shaped like the parameters; `alpha` and `beta`
    /// receive nothing here since they are outside the forward graph.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        dq: &[T],
        dd: &[T],
    ) -> Result<ParamSet<T>, NnError> {
        let batch = cache.batch;
        let h = self.spec.hidden;
        let a = self.spec.actions;
        if dq.len() != batch * a || dd.len() != batch {
            return Err(NnError::Shape {
                what: "loss gradients".into(),
                expected: format!("{} q-grads and {} d-grads", batch * a, batch),
                found: format!("{} and {}", dq.len(), dd.len()),
            });
        }
        let s = self.slots();
        let p = &self.params;
        let mut grads = self.params.zeros_like();

        // Dueling split.
        let inv_a = T::one() / T::of(a as f64);
        let mut d_adv = vec![T::zero(); batch * a];
        let mut d_value = vec![T::zero(); batch];
        for b in 0..batch {
            let row = &dq[b * a..(b + 1) * a];
            let total: T = row.iter().copied().sum();
            d_value[b] = total;
            let mean = total * inv_a;
            for j in 0..a {
                d_adv[b * a + j] = row[j] - mean;
            }
        }

        // Output heads.
        let mut d_adv_hidden = vec![T::zero(); batch * h];
        dense_backward(
            &cache.adv_hidden,
            batch,
            h,
            p.tensor(s.adv_w()).data(),
            &d_adv,
            a,
            &mut grads,
            s.adv_w(),
            s.adv_b(),
            Some(&mut d_adv_hidden),
        );
        let mut d_state_hidden = vec![T::zero(); batch * h];
        dense_backward(
            &cache.state_hidden,
            batch,
            h,
            p.tensor(s.score_w()).data(),
            &d_value,
            1,
            &mut grads,
            s.score_w(),
            s.score_b(),
            Some(&mut d_state_hidden),
        );
        dense_backward(
            &cache.state_hidden,
            batch,
            h,
            p.tensor(s.decision_w()).data(),
            dd,
            1,
            &mut grads,
            s.decision_w(),
            s.decision_b(),
            Some(&mut d_state_hidden),
        );
        relu_mask(&mut d_adv_hidden, &cache.adv_hidden);
        relu_mask(&mut d_state_hidden, &cache.state_hidden);

        // Hidden streams back into the flattened trunk output.
        let flat_in: &[T] = cache.conv_out.last().map(Vec::as_slice).unwrap_or(&cache.input);
        let want_flat_grad = !self.geometry.is_empty();
        let mut d_flat = if want_flat_grad { vec![T::zero(); batch * self.flat] } else { Vec::new() };
        dense_backward(
            flat_in,
            batch,
            self.flat,
            p.tensor(s.adv_hidden_w()).data(),
            &d_adv_hidden,
            h,
            &mut grads,
            s.adv_hidden_w(),
            s.adv_hidden_b(),
            want_flat_grad.then_some(&mut d_flat),
        );
        dense_backward(
            flat_in,
            batch,
            self.flat,
            p.tensor(s.state_hidden_w()).data(),
            &d_state_hidden,
            h,
            &mut grads,
            s.state_hidden_w(),
            s.state_hidden_b(),
            want_flat_grad.then_some(&mut d_flat),
        );

        // Conv stack, last layer first.
        let mut d_out = d_flat;
        for i in (0..self.geometry.len()).rev() {
            let g = &self.geometry[i];
            relu_mask(&mut d_out, &cache.conv_out[i]);
            let rows = batch * g.positions();
            let need_input_grad = i > 0;
            let mut d_cols = if need_input_grad { vec![T::zero(); rows * g.patch_len()] } else { Vec::new() };
            dense_backward(
                &cache.conv_cols[i],
                rows,
                g.patch_len(),
                p.tensor(Slots::conv_w(i)).data(),
                &d_out,
                g.filters,
                &mut grads,
                Slots::conv_w(i),
                Slots::conv_b(i),
                need_input_grad.then_some(&mut d_cols),
            );
            if need_input_grad {
                d_out = col2im(&d_cols, batch, g);
            }
        }

        for (name, t) in grads.iter() {
            if !t.is_finite() {
                return Err(NnError::NonFinite(format!("gradient of {name}")));
            }
        }
        Ok(grads)
    }
}

fn relu<T: Real>(x: &mut [T]) {
    for v in x.iter_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

fn relu_mask<T: Real>(grad: &mut [T], activated: &[T]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if !(*a > T::zero()) {
            *g = T::zero();
        }
    }
}

/// `out = x·W + b` with `x: rows×k`, `W: k×n`.
fn dense<T: Real>(x: &[T], rows: usize, k: usize, w: &[T], b: &[T], out: &mut [T]) {
    let n = b.len();
    for row in out.chunks_exact_mut(n) {
        row.copy_from_slice(b);
    }
    T::gemm(rows, k, n, T::one(), x, (k as isize, 1), w, (n as isize, 1), T::one(), out, (n as isize, 1));
}

/// Accumulates `dW += xᵀ·dy`, `db += Σ dy`, and optionally `dx += dy·Wᵀ`.
#[allow(clippy::too_many_arguments)]
fn dense_backward<T: Real>(
    x: &[T],
    rows: usize,
    k: usize,
    w: &[T],
    dy: &[T],
    n: usize,
    grads: &mut ParamSet<T>,
    w_slot: usize,
    b_slot: usize,
    dx: Option<&mut Vec<T>>,
) {
    T::gemm(
        k,
        rows,
        n,
        T::one(),
        x,
        (1, k as isize),
        dy,
        (n as isize, 1),
        T::one(),
        grads.tensor_mut(w_slot).data_mut(),
        (n as isize, 1),
    );
    let db = grads.tensor_mut(b_slot).data_mut();
    for row in dy.chunks_exact(n) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += *v;
        }
    }
    if let Some(dx) = dx {
        T::gemm(rows, n, k, T::one(), dy, (n as isize, 1), w, (1, n as isize), T::one(), dx, (k as isize, 1));
    }
}

/// Unfolds NHWC input into rows of (ky, kx, c) patches, one row per output position.
fn im2col<T: Real>(x: &[T], batch: usize, g: &ConvGeometry) -> Vec<T> {
    let patch = g.patch_len();
    let span = g.kernel * g.in_c;
    let mut cols = vec![T::zero(); batch * g.positions() * patch];
    let mut row = 0;
    for b in 0..batch {
        let img = &x[b * g.in_h * g.in_w * g.in_c..(b + 1) * g.in_h * g.in_w * g.in_c];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kernel {
                    let y = oy * g.stride + ky;
                    let start = (y * g.in_w + ox * g.stride) * g.in_c;
                    dst[ky * span..(ky + 1) * span].copy_from_slice(&img[start..start + span]);
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto the input grid.
fn col2im<T: Real>(cols: &[T], batch: usize, g: &ConvGeometry) -> Vec<T> {
    let patch = g.patch_len();
    let span = g.kernel * g.in_c;
    let img_len = g.in_h * g.in_w * g.in_c;
    let mut out = vec![T::zero(); batch * img_len];
    let mut row = 0;
    for b in 0..batch {
        let img = &mut out[b * img_len..(b + 1) * img_len];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let src = &cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kernel {
                    let y = oy * g.stride + ky;
                    let start = (y * g.in_w + ox * g.stride) * g.in_c;
                    for (d, s) in img[start..start + span].iter_mut().zip(&src[ky * span..(ky + 1) * span]) {
                        *d += *s;
                    }
                }
                row += 1;
            }
        }
    }
    out
}

/// Converts 8-bit gray frames into network input scaled to [0, 1].
pub fn frames_to_input<T: Real>(frames: &[&[u8]]) -> Vec<T> {
    let scale = 1.0 / 255.0;
    frames.iter().flat_map(|f| f.iter().map(move |&p| T::of(p as f64 * scale))).collect()
}

impl<T: Real> Network<T> {
    /// Parameter tensors converted to another element type.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            geometry: self.geometry.clone(),
            flat: self.flat,
            params: self.params.cast(),
        }
    }
}
