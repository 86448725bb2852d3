//! Backpropagation through time and plain minibatch SGD.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{sigmoid, LstmParams, ModelConfig, ModelError};
use crate::dataset::WindowedDataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds both the initial weights and the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 120,
            batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: LstmParams<f64>,
    /// Mean per-pair training loss of each epoch, measured before each
    /// batch's update.
    pub losses: Vec<f64>,
}

/// Per-timestep values kept for the backward pass.
struct Tape {
    /// Post-activation gates per step, `seq_len × 4h` in i, f, g, o order.
    gates: Vec<f64>,
    /// Cell state after each step, `(seq_len + 1) × h`; row 0 is the zero
    /// initial state.
    c: Vec<f64>,
    /// Hidden state after each step, same layout as `c`.
    h: Vec<f64>,
    y: Vec<f64>,
}

impl Tape {
    fn new(config: &ModelConfig) -> Self {
        let h = config.hidden_dim;
        Self {
            gates: vec![0.0; config.seq_len * 4 * h],
            c: vec![0.0; (config.seq_len + 1) * h],
            h: vec![0.0; (config.seq_len + 1) * h],
            y: vec![0.0; config.output_dim],
        }
    }
}

/// Buffers for the reverse sweep.
struct Backward {
    dh: Vec<f64>,
    dc: Vec<f64>,
    dz: Vec<f64>,
    dy: Vec<f64>,
}

impl Backward {
    fn new(config: &ModelConfig) -> Self {
        let h = config.hidden_dim;
        Self {
            dh: vec![0.0; h],
            dc: vec![0.0; h],
            dz: vec![0.0; 4 * h],
            dy: vec![0.0; config.output_dim],
        }
    }
}

fn record(params: &LstmParams<f64>, config: &ModelConfig, input: &[f64], tape: &mut Tape) {
    let (n_in, n_h) = (config.input_dim, config.hidden_dim);
    for (t, x) in input.chunks_exact(n_in).enumerate() {
        let (past, future) = tape.h.split_at_mut((t + 1) * n_h);
        let h_prev = &past[t * n_h..];
        let h_next = &mut future[..n_h];
        let (c_past, c_future) = tape.c.split_at_mut((t + 1) * n_h);
        let c_prev = &c_past[t * n_h..];
        let c_next = &mut c_future[..n_h];
        let gates = &mut tape.gates[t * 4 * n_h..(t + 1) * 4 * n_h];

        for (r, z) in gates.iter_mut().enumerate() {
            let wx: f64 = params.w_ih[r * n_in..(r + 1) * n_in].iter().zip(x).map(|(w, v)| w * v).sum();
            let wh: f64 = params.w_hh[r * n_h..(r + 1) * n_h].iter().zip(h_prev).map(|(w, v)| w * v).sum();
            *z = wx + wh + params.b[r];
        }
        for j in 0..n_h {
            let i = sigmoid(gates[j]);
            let f = sigmoid(gates[n_h + j]);
            let g = gates[2 * n_h + j].tanh();
            let o = sigmoid(gates[3 * n_h + j]);
            gates[j] = i;
            gates[n_h + j] = f;
            gates[2 * n_h + j] = g;
            gates[3 * n_h + j] = o;
            c_next[j] = f * c_prev[j] + i * g;
            h_next[j] = o * c_next[j].tanh();
        }
    }
    let h_last = &tape.h[config.seq_len * n_h..];
    for (k, y) in tape.y.iter_mut().enumerate() {
        *y = params.b_out[k]
            + params.w_out[k * n_h..(k + 1) * n_h].iter().zip(h_last).map(|(w, v)| w * v).sum::<f64>();
    }
}

/// Adds the gradient of the MSE loss for one pair to `grad` and returns the
/// loss. `input` is `seq_len × input_dim`, timestep-major.
pub fn accumulate_gradient(
    params: &LstmParams<f64>,
    config: &ModelConfig,
    input: &[f64],
    target: &[f64],
    grad: &mut LstmParams<f64>,
) -> Result<f64, ModelError> {
    params.check_shape(config)?;
    grad.check_shape(config)?;
    if input.len() != config.seq_len * config.input_dim || target.len() != config.output_dim {
        return Err(ModelError::Shape(format!(
            "pair has {} inputs and {} targets for {config:?}",
            input.len(),
            target.len()
        )));
    }
    let mut tape = Tape::new(config);
    let mut back = Backward::new(config);
    Ok(backprop(params, config, input, target, grad, &mut tape, &mut back))
}

fn backprop(
    params: &LstmParams<f64>,
    config: &ModelConfig,
    input: &[f64],
    target: &[f64],
    grad: &mut LstmParams<f64>,
    tape: &mut Tape,
    back: &mut Backward,
) -> f64 {
    let (n_in, n_h, n_out) = (config.input_dim, config.hidden_dim, config.output_dim);
    record(params, config, input, tape);

    let mut loss = 0.0;
    for k in 0..n_out {
        let e = tape.y[k] - target[k];
        loss += e * e;
        back.dy[k] = 2.0 * e / n_out as f64;
    }
    loss /= n_out as f64;

    let h_last = &tape.h[config.seq_len * n_h..];
    back.dh.fill(0.0);
    back.dc.fill(0.0);
    for k in 0..n_out {
        let dy = back.dy[k];
        grad.b_out[k] += dy;
        for j in 0..n_h {
            grad.w_out[k * n_h + j] += dy * h_last[j];
            back.dh[j] += dy * params.w_out[k * n_h + j];
        }
    }

    for t in (0..config.seq_len).rev() {
        let gates = &tape.gates[t * 4 * n_h..(t + 1) * 4 * n_h];
        let c_prev = &tape.c[t * n_h..(t + 1) * n_h];
        let c_now = &tape.c[(t + 1) * n_h..(t + 2) * n_h];
        let h_prev = &tape.h[t * n_h..(t + 1) * n_h];
        let x = &input[t * n_in..(t + 1) * n_in];

        for j in 0..n_h {
            let (i, f, g, o) = (gates[j], gates[n_h + j], gates[2 * n_h + j], gates[3 * n_h + j]);
            let tc = c_now[j].tanh();
            let dh = back.dh[j];
            let dc = back.dc[j] + dh * o * (1.0 - tc * tc);
            back.dz[j] = dc * g * i * (1.0 - i);
            back.dz[n_h + j] = dc * c_prev[j] * f * (1.0 - f);
            back.dz[2 * n_h + j] = dc * i * (1.0 - g * g);
            back.dz[3 * n_h + j] = dh * tc * o * (1.0 - o);
            back.dc[j] = dc * f;
        }

        back.dh.fill(0.0);
        for (r, &dz) in back.dz.iter().enumerate() {
            grad.b[r] += dz;
            for (g, &v) in grad.w_ih[r * n_in..(r + 1) * n_in].iter_mut().zip(x) {
                *g += dz * v;
            }
            let w_row = &params.w_hh[r * n_h..(r + 1) * n_h];
            for j in 0..n_h {
                grad.w_hh[r * n_h + j] += dz * h_prev[j];
                back.dh[j] += dz * w_row[j];
            }
        }
    }
    loss
}

fn check_dataset(dataset: &WindowedDataset, config: &ModelConfig) -> Result<(), ModelError> {
    config.validate()?;
    if dataset.n_pairs == 0 {
        return Err(ModelError::EmptyDataset);
    }
    if dataset.input_len != config.seq_len
        || dataset.n_input_channels != config.input_dim
        || dataset.output_len != config.output_dim
    {
        return Err(ModelError::Shape(format!(
            "dataset windows are {}×{} → {}, model is {config:?}",
            dataset.input_len, dataset.n_input_channels, dataset.output_len
        )));
    }
    Ok(())
}

/// Trains from a seeded initialization.
pub fn train(
    dataset: &WindowedDataset,
    config: &ModelConfig,
    hyper: &TrainHyper,
) -> Result<TrainOutcome, ModelError> {
    train_from(LstmParams::init(config, hyper.seed), dataset, config, hyper)
}

/// Trains starting from `params`.
pub fn train_from(
    mut params: LstmParams<f64>,
    dataset: &WindowedDataset,
    config: &ModelConfig,
    hyper: &TrainHyper,
) -> Result<TrainOutcome, ModelError> {
    check_dataset(dataset, config)?;
    params.check_shape(config)?;
    let batch_size = hyper.batch_size.max(1);

    let inputs: Vec<f64> = dataset.inputs.iter().map(|&v| v as f64).collect();
    let targets: Vec<f64> = dataset.targets.iter().map(|&v| v as f64).collect();
    let in_w = config.seq_len * config.input_dim;
    let out_w = config.output_dim;

    // Shuffles use their own stream so they do not depend on the model size.
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..dataset.n_pairs).collect();
    let mut grad = LstmParams::zeros(config);
    let mut tape = Tape::new(config);
    let mut back = Backward::new(config);
    let mut losses = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(batch_size) {
            for g in grad.tensors_mut() {
                g.fill(0.0);
            }
            for &p in batch {
                total += backprop(
                    &params,
                    config,
                    &inputs[p * in_w..(p + 1) * in_w],
                    &targets[p * out_w..(p + 1) * out_w],
                    &mut grad,
                    &mut tape,
                    &mut back,
                );
            }
            let step = hyper.lr / batch.len() as f64;
            for (w, g) in params.tensors_mut().into_iter().zip(grad.tensors()) {
                for (w, g) in w.iter_mut().zip(g) {
                    *w -= step * g;
                }
            }
        }
        let mean = total / dataset.n_pairs as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(ModelError::Divergence { epoch, loss: mean });
        }
        losses.push(mean);
    }
    Ok(TrainOutcome { params, losses })
}

/// Mean loss of `params` over a dataset, evaluated through the inference path.
pub fn evaluate(params: &LstmParams<f64>, config: &ModelConfig, dataset: &WindowedDataset) -> Result<f64, ModelError> {
    check_dataset(dataset, config)?;
    let mut scratch = super::InferenceScratch::new(config);
    let mut input = vec![0.0; config.seq_len * config.input_dim];
    let mut target = vec![0.0; config.output_dim];
    let mut total = 0.0;
    for p in 0..dataset.n_pairs {
        for (d, &s) in input.iter_mut().zip(dataset.input(p)) {
            *d = s as f64;
        }
        for (d, &s) in target.iter_mut().zip(dataset.target(p)) {
            *d = s as f64;
        }
        let y = super::forward(params, config, &input, &mut scratch)?;
        total += super::loss_mse(y, &target)?;
    }
    Ok(total / dataset.n_pairs as f64)
}
