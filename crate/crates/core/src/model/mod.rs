//! Single-layer LSTM with a linear head over the last hidden state.
//!
//! Per timestep, with gate rows stacked in the order input, forget, cell
//! candidate, output:
//!
//! ```text
//! z = W_ih x_t + W_hh h + b
//! i = σ(z_i)   f = σ(z_f)   g = tanh(z_g)   o = σ(z_o)
//! c = f ⊙ c + i ⊙ g
//! h = o ⊙ tanh(c)
//! ```
//!
//! starting from `h = c = 0`; after the last step `y = W_out h + b_out`.
//!
//! Training runs in `f64` ([`train`]); deployed weights are `f32`
//! ([`weights`]). [`forward`] is generic so both go through the same code.

pub mod train;
pub mod weights;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use train::{train, TrainHyper, TrainOutcome};
pub use weights::{load_weights, save_weights, ModelBundle};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dataset has no pairs")]
    EmptyDataset,
    #[error("training diverged in epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },
    #[error("malformed weight file: {0}")]
    Format(String),
    #[error("truncated weight file: expected {expected} bytes, got {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 2,
            hidden_dim: 16,
            output_dim: 96,
            seq_len: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 || self.seq_len == 0 {
            return Err(ModelError::Shape(format!("all dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    fn gates(&self) -> usize {
        4 * self.hidden_dim
    }
}

/// LSTM weights. Matrices are row-major; gate blocks of `hidden_dim` rows in
/// the order i, f, g, o.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T = f32> {
    /// `4h × input_dim`
    pub w_ih: Vec<T>,
    /// `4h × h`
    pub w_hh: Vec<T>,
    /// `4h`, one combined bias.
    pub b: Vec<T>,
    /// `output_dim × h`
    pub w_out: Vec<T>,
    /// `output_dim`
    pub b_out: Vec<T>,
}

impl<T: Float> LstmParams<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden_dim;
        Self {
            w_ih: vec![T::zero(); 4 * h * config.input_dim],
            w_hh: vec![T::zero(); 4 * h * h],
            b: vec![T::zero(); 4 * h],
            w_out: vec![T::zero(); config.output_dim * h],
            b_out: vec![T::zero(); config.output_dim],
        }
    }

    pub fn check_shape(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let (h, o) = (config.hidden_dim, config.output_dim);
        let parts = [
            ("W_ih", self.w_ih.len(), 4 * h * config.input_dim),
            ("W_hh", self.w_hh.len(), 4 * h * h),
            ("b", self.b.len(), 4 * h),
            ("W_out", self.w_out.len(), o * h),
            ("b_out", self.b_out.len(), o),
        ];
        for (name, got, want) in parts {
            if got != want {
                return Err(ModelError::Shape(format!("{name} has {got} values, config needs {want}")));
            }
        }
        Ok(())
    }

    /// The five tensors in file order.
    pub fn tensors(&self) -> [&[T]; 5] {
        [&self.w_ih, &self.w_hh, &self.b, &self.w_out, &self.b_out]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 5] {
        [
            &mut self.w_ih,
            &mut self.w_hh,
            &mut self.b,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

impl LstmParams<f64> {
    /// Uniform in `[-1/√h, 1/√h]`, drawn from ChaCha8 seeded with `seed`, in
    /// file tensor order.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (config.hidden_dim as f64).sqrt();
        let mut params = Self::zeros(config);
        for tensor in params.tensors_mut() {
            for v in tensor.iter_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        }
        params
    }

    pub fn to_f32(&self) -> LstmParams<f32> {
        let cast = |v: &Vec<f64>| v.iter().map(|&x| x as f32).collect();
        LstmParams {
            w_ih: cast(&self.w_ih),
            w_hh: cast(&self.w_hh),
            b: cast(&self.b),
            w_out: cast(&self.w_out),
            b_out: cast(&self.b_out),
        }
    }
}

impl LstmParams<f32> {
    pub fn to_f64(&self) -> LstmParams<f64> {
        let cast = |v: &Vec<f32>| v.iter().map(|&x| x as f64).collect();
        LstmParams {
            w_ih: cast(&self.w_ih),
            w_hh: cast(&self.w_hh),
            b: cast(&self.b),
            w_out: cast(&self.w_out),
            b_out: cast(&self.b_out),
        }
    }
}

/// Working memory for [`forward`]. Allocated once; never grows.
#[derive(Debug, Clone)]
pub struct InferenceScratch<T = f32> {
    config: ModelConfig,
    h: Vec<T>,
    c: Vec<T>,
    gates: Vec<T>,
    output: Vec<T>,
}

impl<T: Float> InferenceScratch<T> {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            config: *config,
            h: vec![T::zero(); config.hidden_dim],
            c: vec![T::zero(); config.hidden_dim],
            gates: vec![T::zero(); config.gates()],
            output: vec![T::zero(); config.output_dim],
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Hidden state after the last [`forward`] call.
    pub fn hidden(&self) -> &[T] {
        &self.h
    }

    pub fn output(&self) -> &[T] {
        &self.output
    }
}

#[inline]
pub(crate) fn sigmoid<T: Float>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `out = m · v + bias` for a row-major `out.len() × v.len()` matrix.
#[inline]
fn affine<T: Float>(m: &[T], v: &[T], bias: &[T], out: &mut [T]) {
    let cols = v.len();
    for ((row, &b), o) in m.chunks_exact(cols).zip(bias).zip(out.iter_mut()) {
        *o = row.iter().zip(v).fold(b, |acc, (&w, &x)| acc + w * x);
    }
}

/// `out += m · v`.
#[inline]
fn accumulate<T: Float>(m: &[T], v: &[T], out: &mut [T]) {
    let cols = v.len();
    for (row, o) in m.chunks_exact(cols).zip(out.iter_mut()) {
        *o = row.iter().zip(v).fold(*o, |acc, (&w, &x)| acc + w * x);
    }
}

/// Runs the network over one `seq_len × input_dim` window (timestep-major).
///
/// All shapes are checked before any arithmetic. On success nothing is
/// allocated; the result lives in `scratch`.
pub fn forward<'s, T: Float>(
    params: &LstmParams<T>,
    config: &ModelConfig,
    input: &[T],
    scratch: &'s mut InferenceScratch<T>,
) -> Result<&'s [T], ModelError> {
    if scratch.config != *config {
        return Err(ModelError::Shape(format!(
            "scratch built for {:?}, model is {config:?}",
            scratch.config
        )));
    }
    params.check_shape(config)?;
    let expected = config.seq_len * config.input_dim;
    if input.len() != expected {
        return Err(ModelError::Shape(format!(
            "input has {} values, expected {expected} ({} × {})",
            input.len(),
            config.seq_len,
            config.input_dim
        )));
    }

    let h_dim = config.hidden_dim;
    let InferenceScratch {
        h, c, gates, output, ..
    } = scratch;
    h.fill(T::zero());
    c.fill(T::zero());
    for x in input.chunks_exact(config.input_dim) {
        affine(&params.w_ih, x, &params.b, gates);
        accumulate(&params.w_hh, h, gates);
        let (zi, rest) = gates.split_at(h_dim);
        let (zf, rest) = rest.split_at(h_dim);
        let (zg, zo) = rest.split_at(h_dim);
        for j in 0..h_dim {
            let i = sigmoid(zi[j]);
            let f = sigmoid(zf[j]);
            let g = zg[j].tanh();
            let o = sigmoid(zo[j]);
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
    }
    affine(&params.w_out, h, &params.b_out, output);
    Ok(output)
}

/// Mean squared difference.
pub fn loss_mse<T: Float>(pred: &[T], target: &[T]) -> Result<T, ModelError> {
    if pred.len() != target.len() {
        return Err(ModelError::Shape(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Ok(T::zero());
    }
    let sum = pred
        .iter()
        .zip(target)
        .fold(T::zero(), |acc, (&p, &t)| acc + (p - t) * (p - t));
    Ok(sum / T::from(pred.len()).unwrap())
}

/// Size and cost figures used to judge whether a model fits an embedded
/// real-time budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddabilityReport {
    pub param_count: u64,
    /// Multiply-accumulates count as two operations.
    pub flops_per_inference: u64,
    /// Size of the `f32` weights.
    pub weight_bytes: u64,
}

pub fn embeddability_report(config: &ModelConfig) -> EmbeddabilityReport {
    let (i, h, o, t) = (
        config.input_dim as u64,
        config.hidden_dim as u64,
        config.output_dim as u64,
        config.seq_len as u64,
    );
    let param_count = 4 * h * (i + h + 1) + o * (h + 1);
    // per step: gate matvecs, bias adds, then 3 sigmoids, 2 tanh and the
    // 4 products/sums of the state update (9 ops per hidden unit)
    let per_step = 2 * 4 * h * (i + h) + 4 * h + 9 * h;
    EmbeddabilityReport {
        param_count,
        flops_per_inference: t * per_step + 2 * o * h + o,
        weight_bytes: 4 * param_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            input_dim: 1,
            hidden_dim: 2,
            output_dim: 1,
            seq_len: 2,
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let cfg = ModelConfig::default();
        let p = LstmParams::<f32>::zeros(&cfg);
        let mut s = InferenceScratch::new(&cfg);
        let x = vec![0.7f32; cfg.seq_len * cfg.input_dim];
        assert!(forward(&p, &cfg, &x, &mut s).unwrap().iter().all(|&v| v == 0.0));
        assert!(s.hidden().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_bias_passes_through() {
        let cfg = ModelConfig::default();
        let mut p = LstmParams::<f32>::zeros(&cfg);
        p.b_out = (0..cfg.output_dim).map(|i| i as f32 * 0.25 - 3.0).collect();
        let mut s = InferenceScratch::new(&cfg);
        let x = vec![-0.3f32; cfg.seq_len * cfg.input_dim];
        assert_eq!(forward(&p, &cfg, &x, &mut s).unwrap(), p.b_out.as_slice());
    }

    #[test]
    fn hand_evaluated_step() {
        // h = 1, one step, every weight 1, input 1:
        // z = 1 + 0 + 1 = 2 for all gates, c = σ(2) tanh(2), h = σ(2) tanh(c)
        let cfg = ModelConfig {
            input_dim: 1,
            hidden_dim: 1,
            output_dim: 1,
            seq_len: 1,
        };
        let p = LstmParams {
            w_ih: vec![1.0f64; 4],
            w_hh: vec![1.0; 4],
            b: vec![1.0; 4],
            w_out: vec![2.0],
            b_out: vec![0.5],
        };
        let s2 = 1.0 / (1.0 + (-2.0f64).exp());
        let c = s2 * 2.0f64.tanh();
        let h = s2 * c.tanh();
        let mut s = InferenceScratch::new(&cfg);
        let y = forward(&p, &cfg, &[1.0], &mut s).unwrap()[0];
        assert!((y - (2.0 * h + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn shape_errors_come_first() {
        let cfg = tiny();
        let p = LstmParams::<f32>::zeros(&cfg);
        let mut s = InferenceScratch::new(&cfg);
        assert!(matches!(forward(&p, &cfg, &[0.0; 3], &mut s), Err(ModelError::Shape(_))));
        let mut other = InferenceScratch::new(&ModelConfig::default());
        assert!(forward(&p, &cfg, &[0.0; 2], &mut other).is_err());
        let mut bad = p.clone();
        bad.b.pop();
        assert!(forward(&bad, &cfg, &[0.0; 2], &mut s).is_err());
    }

    #[test]
    fn mse() {
        assert_eq!(loss_mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(loss_mse(&[1.0f64, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(loss_mse(&[1.0f32], &[]).is_err());
    }

    #[test]
    fn report_for_default_model() {
        let cfg = ModelConfig::default();
        let r = embeddability_report(&cfg);
        assert_eq!(r.param_count, 2848);
        assert_eq!(r.flops_per_inference, 83_552);
        assert_eq!(r.weight_bytes, 4 * 2848);
        assert_eq!(LstmParams::<f32>::zeros(&cfg).param_count() as u64, r.param_count);
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let cfg = ModelConfig::default();
        let a = LstmParams::init(&cfg, 3);
        let bound = 0.25;
        assert!(a.tensors().iter().all(|t| t.iter().all(|v| v.abs() <= bound)));
        assert_eq!(a, LstmParams::init(&cfg, 3));
        assert_ne!(a, LstmParams::init(&cfg, 4));
    }

    #[test]
    fn hidden_state_is_bounded() {
        let cfg = ModelConfig::default();
        let mut p = LstmParams::init(&cfg, 11);
        for v in p.w_ih.iter_mut().chain(p.w_hh.iter_mut()) {
            *v *= 40.0;
        }
        let mut s = InferenceScratch::new(&cfg);
        let x: Vec<f64> = (0..cfg.seq_len * cfg.input_dim).map(|i| (i as f64).sin() * 5.0).collect();
        forward(&p, &cfg, &x, &mut s).unwrap();
        assert!(s.hidden().iter().all(|&h| h.abs() <= 1.0));
    }
}
