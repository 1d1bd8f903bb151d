//! Dual-pass GCN encoder: parallel low-pass and high-pass branches over the
//! complementary filters, concatenated into one embedding. Hidden layers use
//! ReLU; the final layer is linear so embeddings keep both signs. No biases.

use crate::autodiff::{Tape, Tensor};
use crate::error::Result;
use crate::graph::FilterPair;
use crate::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Layer count and per-branch width of the encoder.
#[derive(Debug, Clone, Copy)]
pub struct EncoderConfig {
    pub n_layers: usize,
    /// Width of each branch; the concatenated embedding is twice this.
    pub hidden_dim: usize,
    /// One parameter set for both graphs (true) or one per graph (false).
    pub share_across_graphs: bool,
}

/// Weight matrices of both branches. The two branches share the same width
/// schedule and are initialized independently.
#[derive(Debug, Clone)]
pub struct DualPassParams {
    pub layers_low: Vec<Mat>,
    pub layers_high: Vec<Mat>,
}

impl DualPassParams {
    pub fn n_layers(&self) -> usize {
        self.layers_low.len()
    }
}

/// Glorot-uniform initialization, deterministic in the seed. Layer `m` maps
/// `d_{m-1} -> d_m` with `d_0` = feature dimension and all later widths
/// equal to `hidden_dim`.
pub fn init_params(cfg: &EncoderConfig, feature_dim: usize, seed: u64) -> DualPassParams {
    assert!(cfg.n_layers >= 1 && cfg.hidden_dim >= 1 && feature_dim >= 1);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let branch = |rng: &mut ChaCha20Rng| {
        let mut layers = Vec::with_capacity(cfg.n_layers);
        let mut in_dim = feature_dim;
        for _ in 0..cfg.n_layers {
            let out_dim = cfg.hidden_dim;
            let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
            layers.push(Mat::from_shape_fn((in_dim, out_dim), |_| {
                rng.random_range(-bound..=bound)
            }));
            in_dim = out_dim;
        }
        layers
    };
    let layers_low = branch(&mut rng);
    let layers_high = branch(&mut rng);
    DualPassParams {
        layers_low,
        layers_high,
    }
}

/// Which propagation matrix (and branch parameters) a single-pass forward
/// uses. `StandardGcn` is the ablation encoder with filter `I - L_sym`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Low,
    High,
    StandardGcn,
}

/// Dual-pass or single-pass (ablation) encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderMode {
    Dual,
    Single(Branch),
}

/// Encoder weights registered as trainable leaves on a tape.
pub struct DualPassTensors {
    pub layers_low: Vec<Tensor>,
    pub layers_high: Vec<Tensor>,
}

pub fn register_params(tape: &Tape, params: &DualPassParams) -> DualPassTensors {
    DualPassTensors {
        layers_low: params.layers_low.iter().map(|w| tape.leaf(w.clone())).collect(),
        layers_high: params
            .layers_high
            .iter()
            .map(|w| tape.leaf(w.clone()))
            .collect(),
    }
}

/// A graph's propagation matrices registered as constants on a tape. The
/// standard-GCN filter is materialized only when the mode needs it.
pub struct FilterTensors {
    pub low: Tensor,
    pub high: Tensor,
    pub gcn: Option<Tensor>,
}

impl FilterTensors {
    pub fn register(tape: &Tape, filters: &FilterPair, mode: EncoderMode) -> Self {
        let gcn = match mode {
            EncoderMode::Single(Branch::StandardGcn) => {
                Some(tape.constant(filters.standard_gcn()))
            }
            _ => None,
        };
        FilterTensors {
            low: tape.constant(filters.a_low_sym.clone()),
            high: tape.constant(filters.a_high_sym.clone()),
            gcn,
        }
    }
}

fn branch_forward(weights: &[Tensor], x: &Tensor, filter: &Tensor) -> Result<Tensor> {
    let mut z = x.clone();
    let last = weights.len() - 1;
    for (m, w) in weights.iter().enumerate() {
        z = filter.matmul(&z)?.matmul(w)?;
        if m < last {
            z = z.relu()?;
        }
    }
    Ok(z)
}

/// Runs both branches and concatenates: `[Z_low || Z_high]`, shape `n x 2d`.
pub fn dual_pass_forward(
    params: &DualPassTensors,
    x: &Tensor,
    filters: &FilterTensors,
) -> Result<Tensor> {
    let low = branch_forward(&params.layers_low, x, &filters.low)?;
    let high = branch_forward(&params.layers_high, x, &filters.high)?;
    low.concat_cols(&high)
}

/// Runs one branch only, shape `n x d`.
pub fn single_pass_forward(
    params: &DualPassTensors,
    x: &Tensor,
    filters: &FilterTensors,
    branch: Branch,
) -> Result<Tensor> {
    match branch {
        Branch::Low => branch_forward(&params.layers_low, x, &filters.low),
        Branch::High => branch_forward(&params.layers_high, x, &filters.high),
        Branch::StandardGcn => {
            let gcn = filters
                .gcn
                .as_ref()
                .expect("FilterTensors registered without the standard GCN filter");
            branch_forward(&params.layers_low, x, gcn)
        }
    }
}

/// Dispatches on the mode; dual output is `n x 2d`, single is `n x d`.
pub fn encode(
    mode: EncoderMode,
    params: &DualPassTensors,
    x: &Tensor,
    filters: &FilterTensors,
) -> Result<Tensor> {
    match mode {
        EncoderMode::Dual => dual_pass_forward(params, x, filters),
        EncoderMode::Single(branch) => single_pass_forward(params, x, filters, branch),
    }
}
