//! One objective's learner: online and target dueling networks with a
//! decision-value head, trained on the sum of the Q, D and scaling losses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, TrainError};
use crate::nn::{frames_to_input, AdamConfig, AdamState, Network, NetworkSpec, ParamSet, Real, BETA_MIN};
use crate::replay::Transition;

/// `sigmoid((d_raw - alpha) / max(beta, BETA_MIN))`.
pub fn scale_decision(d_raw: f64, alpha: f64, beta: f64) -> f64 {
    sigmoid((d_raw - alpha) / beta.max(BETA_MIN))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Double-Q targets: the online network picks the next action, the target network values it.
///
/// `q_next_online` and `q_next_target` are `batch × actions`, row-major.
pub fn double_q_targets(
    rewards: &[f64],
    terminal: &[bool],
    q_next_online: &[f64],
    q_next_target: &[f64],
    actions: usize,
    gamma: f64,
) -> Vec<f64> {
    rewards
        .iter()
        .zip(terminal)
        .enumerate()
        .map(|(b, (&r, &done))| {
            if done {
                return r;
            }
            let row = b * actions..(b + 1) * actions;
            let a = argmax(&q_next_online[row.clone()]);
            r + gamma * q_next_target[row][a]
        })
        .collect()
}

/// Scaling loss on a batch of raw decision values and its gradient with respect to `alpha` and `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingLoss {
    pub loss: f64,
    pub d_alpha: f64,
    pub d_beta: f64,
}

/// `mean((0.5 - d)^2) + (1 - max d - min d)^2` with `d` the scaled decision values.
///
/// Raw values are constants here; only `alpha` and `beta` receive gradient.
pub fn scaling_loss(d_raw: &[f64], alpha: f64, beta: f64) -> ScalingLoss {
    let n = d_raw.len();
    assert!(n > 0, "scaling loss needs a nonempty batch");
    let b = beta.max(BETA_MIN);
    let d: Vec<f64> = d_raw.iter().map(|&x| sigmoid((x - alpha) / b)).collect();
    let (mut hi, mut lo) = (0, 0);
    for i in 1..n {
        if d[i] > d[hi] {
            hi = i;
        }
        if d[i] < d[lo] {
            lo = i;
        }
    }
    let spread = 1.0 - d[hi] - d[lo];
    let center: f64 = d.iter().map(|v| (0.5 - v).powi(2)).sum::<f64>() / n as f64;

    // dL/dd_i for every sample, then chain through d = sigmoid(z), z = (x - alpha) / b.
    let mut dl_dd: Vec<f64> = d.iter().map(|v| -2.0 * (0.5 - v) / n as f64).collect();
    dl_dd[hi] -= 2.0 * spread;
    dl_dd[lo] -= 2.0 * spread;
    let beta_live = beta >= BETA_MIN;
    let (mut d_alpha, mut d_beta) = (0.0, 0.0);
    for i in 0..n {
        let slope = dl_dd[i] * d[i] * (1.0 - d[i]);
        d_alpha -= slope / b;
        if beta_live {
            d_beta -= slope * (d_raw[i] - alpha) / (b * b);
        }
    }
    ScalingLoss { loss: center + spread * spread, d_alpha, d_beta }
}

/// Network inputs and per-objective reward columns for one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateBatch<T> {
    pub size: usize,
    pub states: Vec<T>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<T>,
    pub terminal: Vec<bool>,
}

impl<T: Real> UpdateBatch<T> {
    /// Extracts reward component `objective` from sampled transitions.
    pub fn from_transitions(sample: &[&Transition], objective: usize) -> Self {
        let frames: Vec<&[u8]> = sample.iter().map(|t| t.state.pixels.as_slice()).collect();
        let next: Vec<&[u8]> = sample.iter().map(|t| t.next_state.pixels.as_slice()).collect();
        Self {
            size: sample.len(),
            states: frames_to_input(&frames),
            actions: sample.iter().map(|t| t.action).collect(),
            rewards: sample.iter().map(|t| t.rewards.0[objective]).collect(),
            next_states: frames_to_input(&next),
            terminal: sample.iter().map(|t| t.terminal).collect(),
        }
    }

    /// Decision rewards `|r|`.
    pub fn decision_rewards(&self) -> Vec<f64> {
        self.rewards.iter().map(|r| r.abs()).collect()
    }
}

/// Loss values of one update, each averaged over the batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub q: f64,
    pub d: f64,
    pub scaling: f64,
    pub total: f64,
}

/// Selects which loss terms contribute gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub q: bool,
    pub d: bool,
    pub scaling: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms { q: true, d: true, scaling: true };
}

/// Q-values and decision values of one state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Readout {
    pub q: Vec<f64>,
    pub d_raw: f64,
    pub d: f64,
}

/// Q-values and scaled decision values of `net` for a batch of prepared inputs.
pub fn readout<T: Real>(net: &Network<T>, input: &[T], batch: usize) -> Result<Vec<Readout>, NnError> {
    let out = net.forward(input, batch)?;
    let (alpha, beta) = (out.alpha.as_f64(), out.beta.as_f64());
    Ok((0..batch)
        .map(|b| {
            let d_raw = out.d_raw[b].as_f64();
            Readout { q: out.q_row(b).iter().map(|v| v.as_f64()).collect(), d_raw, d: scale_decision(d_raw, alpha, beta) }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub gamma: f64,
    /// Updates between target-network refreshes.
    pub target_sync: u64,
    pub adam: AdamConfig,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { gamma: 0.99, target_sync: 1000, adam: AdamConfig::default() }
    }
}

#[derive(Debug, Clone)]
pub struct ObjectiveDqn<T: Real> {
    name: String,
    config: ObjectiveConfig,
    online: Network<T>,
    target: Network<T>,
    adam: AdamState<T>,
    updates: u64,
}

impl<T: Real> ObjectiveDqn<T> {
    pub fn new<R: Rng + ?Sized>(
        name: impl Into<String>,
        spec: NetworkSpec,
        config: ObjectiveConfig,
        rng: &mut R,
    ) -> Result<Self, TrainError> {
        let online = Network::init(spec, rng)?;
        Ok(Self::from_network(name, online, config))
    }

    /// Wraps trained parameters; the target starts as a copy and the optimizer fresh.
    pub fn from_network(name: impl Into<String>, online: Network<T>, config: ObjectiveConfig) -> Self {
        let adam = AdamState::new(config.adam, online.params());
        Self { name: name.into(), config, target: online.clone(), online, adam, updates: 0 }
    }

    /// Restores full training state.
    pub fn from_parts(
        name: impl Into<String>,
        config: ObjectiveConfig,
        online: Network<T>,
        target: Network<T>,
        adam: AdamState<T>,
        updates: u64,
    ) -> Self {
        Self { name: name.into(), config, online, target, adam, updates }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.config
    }

    pub fn online(&self) -> &Network<T> {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut Network<T> {
        &mut self.online
    }

    pub fn target(&self) -> &Network<T> {
        &self.target
    }

    pub fn adam(&self) -> &AdamState<T> {
        &self.adam
    }

    /// Number of optimizer updates performed so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn sync_target(&mut self) {
        self.online.copy_into(&mut self.target).expect("online and target share a spec");
    }

    /// Q-values and decision values for a batch of prepared inputs.
    pub fn readout(&self, input: &[T], batch: usize) -> Result<Vec<Readout>, TrainError> {
        Ok(readout(&self.online, input, batch)?)
    }

    pub fn q_values(&self, input: &[T]) -> Result<Vec<f64>, TrainError> {
        Ok(self.readout(input, 1)?.remove(0).q)
    }

    pub fn decision_value_raw(&self, input: &[T]) -> Result<f64, TrainError> {
        Ok(self.readout(input, 1)?[0].d_raw)
    }

    pub fn decision_value_scaled(&self, input: &[T]) -> Result<f64, TrainError> {
        Ok(self.readout(input, 1)?[0].d)
    }

    /// Loss values and the gradient of the selected terms, without touching parameters.
    pub fn gradients(&self, batch: &UpdateBatch<T>, terms: LossTerms) -> Result<(LossReport, ParamSet<T>), TrainError> {
        let n = batch.size;
        let actions = self.online.spec().actions;
        let gamma = self.config.gamma;
        let (out, cache) = self.online.forward_cached(&batch.states, n)?;
        let next_online = self.online.forward(&batch.next_states, n)?;
        let next_target = self.target.forward(&batch.next_states, n)?;

        let to64 = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
        let q = to64(&out.q);
        let d_raw = to64(&out.d_raw);
        let y = double_q_targets(
            &batch.rewards,
            &batch.terminal,
            &to64(&next_online.q),
            &to64(&next_target.q),
            actions,
            gamma,
        );
        let d_next = to64(&next_target.d_raw);

        let inv = 1.0 / n as f64;
        let mut dq = vec![T::zero(); n * actions];
        let mut dd = vec![T::zero(); n];
        let (mut q_loss, mut d_loss) = (0.0, 0.0);
        for b in 0..n {
            let a = batch.actions[b];
            let err = q[b * actions + a] - y[b];
            q_loss += err * err * inv;
            if terms.q {
                dq[b * actions + a] = T::of(2.0 * err * inv);
            }
            let bootstrap = if batch.terminal[b] { 0.0 } else { gamma * d_next[b] };
            let d_err = d_raw[b] - (batch.rewards[b].abs() + bootstrap);
            d_loss += d_err * d_err * inv;
            if terms.d {
                dd[b] = T::of(2.0 * d_err * inv);
            }
        }
        let scaling = scaling_loss(&d_raw, out.alpha.as_f64(), out.beta.as_f64());

        let mut grads = self.online.backward(&cache, &dq, &dd)?;
        if terms.scaling {
            let (ia, ib) = self.online.scaling_slots();
            grads.tensor_mut(ia).data_mut()[0] = T::of(scaling.d_alpha);
            grads.tensor_mut(ib).data_mut()[0] = T::of(scaling.d_beta);
        }
        let report = LossReport { q: q_loss, d: d_loss, scaling: scaling.loss, total: q_loss + d_loss + scaling.loss };
        Ok((report, grads))
    }

    /// One Adam step on the summed loss, then a target refresh every `target_sync` updates.
    pub fn combined_update(&mut self, batch: &UpdateBatch<T>) -> Result<LossReport, TrainError> {
        let (report, grads) = self.gradients(batch, LossTerms::ALL)?;
        if !report.total.is_finite() {
            return Err(self.non_finite(format!("{report:?}")));
        }
        let online = &mut self.online;
        self.adam.step(online.params_mut(), &grads).map_err(|e| TrainError::NonFinite {
            objective: self.name.clone(),
            update: self.updates + 1,
            detail: e.to_string(),
        })?;
        self.online.clamp_beta();
        self.updates += 1;
        if self.config.target_sync > 0 && self.updates.is_multiple_of(self.config.target_sync) {
            self.sync_target();
        }
        Ok(report)
    }

    fn non_finite(&self, detail: String) -> TrainError {
        TrainError::NonFinite { objective: self.name.clone(), update: self.updates + 1, detail }
    }
}
