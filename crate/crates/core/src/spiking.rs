//! Bernoulli spike encoding and integrate-and-fire decoding.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum SpikingError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error: {0}")]
    Shape(String),
}

/// Binary spikes, one row per neuron and one column per time step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeTrain {
    neurons: usize,
    steps: usize,
    bits: Vec<bool>,
}

impl SpikeTrain {
    pub fn new(neurons: usize, steps: usize, bits: Vec<bool>) -> Result<Self, SpikingError> {
        if steps == 0 {
            return Err(SpikingError::Domain("a spike train needs T >= 1".into()));
        }
        if bits.len() != neurons * steps {
            return Err(SpikingError::Shape(format!(
                "{} bits for {neurons} neurons x {steps} steps",
                bits.len()
            )));
        }
        Ok(Self {
            neurons,
            steps,
            bits,
        })
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn get(&self, neuron: usize, step: usize) -> bool {
        self.bits[neuron * self.steps + step]
    }

    pub fn neuron(&self, neuron: usize) -> &[bool] {
        &self.bits[neuron * self.steps..(neuron + 1) * self.steps]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Input currents per step, `neurons x T`, with spikes as 1.0.
    pub fn as_currents(&self) -> Tensor {
        Tensor::from_vec(
            self.neurons,
            self.steps,
            self.bits.iter().map(|&b| f64::from(u8::from(b))).collect(),
        )
    }
}

pub fn spike_probability(x: &Tensor) -> Tensor {
    x.map(|v| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    })
}

/// Identifies an independent random stream: `(seed, layer, component)`.
/// Draws inside a stream are addressed by `(neuron, step)`, so any
/// partitioning of the neurons yields the same bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub layer: u32,
    pub component: u32,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            layer: 0,
            component: 0,
        }
    }

    pub fn at(seed: u64, layer: usize, component: usize) -> Self {
        Self {
            seed,
            layer: layer as u32,
            component: component as u32,
        }
    }

    fn stream_id(self) -> u64 {
        (u64::from(self.layer) << 32) | u64::from(self.component)
    }
}

fn check_probabilities(p: &[f64]) -> Result<(), SpikingError> {
    match p.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(i) => Err(SpikingError::Domain(format!(
            "probability {} at neuron {i} outside [0, 1]",
            p[i]
        ))),
        None => Ok(()),
    }
}

/// Independent Bernoulli(p) draws per neuron and step. A spike fires when a
/// uniform draw in [0, 1) falls below `p`, so `p = 0` never fires and `p = 1`
/// always does.
pub fn sample_spike_train_keyed(
    p: &[f64],
    steps: usize,
    key: StreamKey,
) -> Result<SpikeTrain, SpikingError> {
    check_probabilities(p)?;
    if steps == 0 {
        return Err(SpikingError::Domain("a spike train needs T >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(key.seed);
    rng.set_stream(key.stream_id());
    let mut bits = Vec::with_capacity(p.len() * steps);
    for (i, &pi) in p.iter().enumerate() {
        // Each neuron's draws are contiguous, two 32-bit words per step.
        rng.set_word_pos((i * steps * 2) as u128);
        for _ in 0..steps {
            let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            bits.push(u < pi);
        }
    }
    SpikeTrain::new(p.len(), steps, bits)
}

pub fn sample_spike_train(p: &[f64], steps: usize, seed: u64) -> Result<SpikeTrain, SpikingError> {
    sample_spike_train_keyed(p, steps, StreamKey::new(seed))
}

/// Threshold, decay and bias of an integrate-and-fire population.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IfParams {
    v_th: f64,
    lambda: f64,
    bias: f64,
}

impl Default for IfParams {
    fn default() -> Self {
        Self {
            v_th: 1.0,
            lambda: 1.0,
            bias: 0.0,
        }
    }
}

impl IfParams {
    pub fn new(v_th: f64, lambda: f64, bias: f64) -> Result<Self, SpikingError> {
        if !(v_th > 0.0 && v_th.is_finite()) {
            return Err(SpikingError::Domain(format!(
                "threshold {v_th} must be > 0"
            )));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(SpikingError::Domain(format!(
                "decay {lambda} outside [0, 1]"
            )));
        }
        if !bias.is_finite() {
            return Err(SpikingError::Domain("bias must be finite".into()));
        }
        Ok(Self { v_th, lambda, bias })
    }

    pub fn v_th(&self) -> f64 {
        self.v_th
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IfNeuronState {
    pub u: Vec<f64>,
    pub params: IfParams,
}

impl IfNeuronState {
    pub fn resting(neurons: usize, params: IfParams) -> Self {
        Self {
            u: vec![0.0; neurons],
            params,
        }
    }
}

/// One step of `u' = lambda (u - V_th s_prev) + input + b`, firing when `u' >= V_th`.
pub fn if_step(
    state: &IfNeuronState,
    input: &[f64],
    prev_spike: &[bool],
) -> Result<(IfNeuronState, Vec<bool>), SpikingError> {
    let n = state.u.len();
    if input.len() != n || prev_spike.len() != n {
        return Err(SpikingError::Shape(format!(
            "state has {n} neurons, input {} and previous spikes {}",
            input.len(),
            prev_spike.len()
        )));
    }
    let IfParams { v_th, lambda, bias } = state.params;
    let u: Vec<f64> = state
        .u
        .iter()
        .zip(input)
        .zip(prev_spike)
        .map(|((&u, &x), &s)| lambda * (u - if s { v_th } else { 0.0 }) + x + bias)
        .collect();
    let spikes = u.iter().map(|&v| v >= v_th).collect();
    Ok((
        IfNeuronState {
            u,
            params: state.params,
        },
        spikes,
    ))
}

/// Runs the neuron over per-step currents (`neurons x T`) from `state` and
/// returns the firing rate `count / T` of each neuron.
pub fn if_integrate_currents(
    currents: &Tensor,
    state: &IfNeuronState,
) -> Result<Vec<f64>, SpikingError> {
    let (n, steps) = currents.shape();
    if steps == 0 {
        return Err(SpikingError::Domain(
            "cannot integrate over T = 0 steps".into(),
        ));
    }
    if n != state.u.len() {
        return Err(SpikingError::Shape(format!(
            "{n} current rows for {} neurons",
            state.u.len()
        )));
    }
    let mut state = state.clone();
    let mut prev = vec![false; n];
    let mut counts = vec![0usize; n];
    let mut input = vec![0.0; n];
    for t in 0..steps {
        for (i, x) in input.iter_mut().enumerate() {
            *x = currents.get(i, t);
        }
        let (next, spikes) = if_step(&state, &input, &prev)?;
        for (c, &s) in counts.iter_mut().zip(&spikes) {
            *c += usize::from(s);
        }
        state = next;
        prev = spikes;
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / steps as f64)
        .collect())
}

/// Feeds the train into the neuron as per-step input and decodes rates.
pub fn if_integrate(train: &SpikeTrain, state: &IfNeuronState) -> Result<Vec<f64>, SpikingError> {
    if_integrate_currents(&train.as_currents(), state)
}

/// Samples a train from `p`, integrates it and returns `(rates, output spike
/// count per neuron)`.
pub fn rate_code(
    p: &[f64],
    steps: usize,
    key: StreamKey,
    params: IfParams,
) -> Result<(Vec<f64>, Vec<u32>), SpikingError> {
    let train = sample_spike_train_keyed(p, steps, key)?;
    let rates = if_integrate(&train, &IfNeuronState::resting(p.len(), params))?;
    let counts = rates
        .iter()
        .map(|r| (r * steps as f64).round() as u32)
        .collect();
    Ok((rates, counts))
}
