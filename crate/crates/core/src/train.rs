//! End-to-end training of a graph pair: inner-product decoder,
//! reconstruction loss, total objective assembly, Adam with decoupled
//! weight decay, and the epoch loop.

use crate::autodiff::{Tape, Tensor};
use crate::encoder::{
    encode, register_params, Branch, DualPassParams, DualPassTensors, EncoderConfig, EncoderMode,
    FilterTensors,
};
use crate::error::{Error, Result};
use crate::fmap::{
    bijectivity_loss, fm_align_parts, init_maps, orthogonality_loss, register_maps, FmHyper,
    FunctionalMaps,
};
use crate::graph::{filter_matrices, normalized_laplacian, Graph};
use crate::spectral::{eig_smallest, SpectralBasis};
use crate::Mat;
use std::io::Write;

/// Optimizer settings, loss weights, and ablation switches for one run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda_fm: f64,
    pub lambda_bij: f64,
    pub lambda_orth: f64,
    pub seed: u64,
    /// false replaces the dual-pass encoder with a standard single-pass GCN.
    pub use_high_pass: bool,
    pub use_bij: bool,
    pub use_orth: bool,
    pub use_fm: bool,
    /// Stop when the total loss improved by less than `early_stop_min_delta`
    /// over this many epochs; 0 disables early stopping.
    pub early_stop_patience: usize,
    pub early_stop_min_delta: f64,
    /// Reconstruction target diagonal: 1 (self-loop convention) or 0.
    pub recon_diag_one: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1500,
            lr: 1e-3,
            weight_decay: 5e-4,
            lambda_fm: 1.0,
            lambda_bij: 0.1,
            lambda_orth: 0.1,
            seed: 0,
            use_high_pass: true,
            use_bij: true,
            use_orth: true,
            use_fm: true,
            early_stop_patience: 100,
            early_stop_min_delta: 1e-6,
            recon_diag_one: true,
        }
    }
}

impl TrainConfig {
    pub fn encoder_mode(&self) -> EncoderMode {
        if self.use_high_pass {
            EncoderMode::Dual
        } else {
            EncoderMode::Single(Branch::StandardGcn)
        }
    }
}

/// Per-epoch loss record; ablated terms read 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    pub epoch: usize,
    pub rec: f64,
    pub fm12: f64,
    pub fm21: f64,
    pub bij: f64,
    pub orth: f64,
    pub total: f64,
}

/// One encoder shared by both graphs, or one per graph.
#[derive(Debug, Clone)]
pub enum EncoderParamSet {
    Shared(DualPassParams),
    Separate(DualPassParams, DualPassParams),
}

/// Everything a finished run produces: weights, maps, per-term history,
/// final embeddings, and the spectral bases used.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub encoder: EncoderParamSet,
    pub maps: FunctionalMaps,
    pub history: Vec<EpochLosses>,
    pub mode: EncoderMode,
    pub z_source: Mat,
    pub z_target: Mat,
    pub basis_source: SpectralBasis,
    pub basis_target: SpectralBasis,
}

impl TrainedModel {
    /// Rank-r spectrally smoothed embeddings `Phi (Phi^T Z)` of both sides,
    /// the alternative matching space.
    pub fn smoothed_embeddings(&self) -> (Mat, Mat) {
        let s = self.basis_source.phi.dot(&self.basis_source.phi.t().dot(&self.z_source));
        let t = self.basis_target.phi.dot(&self.basis_target.phi.t().dot(&self.z_target));
        (s, t)
    }

    /// Named matrices for the binary checkpoint format.
    pub fn checkpoint_entries(&self) -> Vec<(String, Mat)> {
        let mut entries = Vec::new();
        let push_set = |prefix: &str, p: &DualPassParams, out: &mut Vec<(String, Mat)>| {
            for (i, w) in p.layers_low.iter().enumerate() {
                out.push((format!("{prefix}.low.{i}"), w.clone()));
            }
            for (i, w) in p.layers_high.iter().enumerate() {
                out.push((format!("{prefix}.high.{i}"), w.clone()));
            }
        };
        match &self.encoder {
            EncoderParamSet::Shared(p) => push_set("encoder", p, &mut entries),
            EncoderParamSet::Separate(a, b) => {
                push_set("encoder_source", a, &mut entries);
                push_set("encoder_target", b, &mut entries);
            }
        }
        entries.push(("c12".to_string(), self.maps.c12.clone()));
        entries.push(("c21".to_string(), self.maps.c21.clone()));
        entries
    }
}

/// Writes the per-epoch loss history as CSV.
pub fn write_history_csv(path: impl AsRef<std::path::Path>, history: &[EpochLosses]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,l_rec,l_fm12,l_fm21,l_bij,l_orth,total")?;
    for e in history {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            e.epoch, e.rec, e.fm12, e.fm21, e.bij, e.orth, e.total
        )?;
    }
    Ok(())
}

/// Inner-product decoder. Returns edge logits `Z Z^T`; the sigmoid is folded
/// into the loss for stability. Symmetric by construction.
pub fn decode(z: &Tensor) -> Result<Tensor> {
    z.matmul(&z.transpose()?)
}

/// Mean binary cross-entropy between the decoded logits and one graph's
/// adjacency (over all n^2 entries). The caller sums the two graphs.
pub fn recon_loss(adj_target: &Mat, logits: &Tensor) -> Result<Tensor> {
    logits.bce_mean(adj_target)
}

/// Dense reconstruction target: adjacency with the chosen diagonal.
pub fn reconstruction_target(g: &Graph, diag_one: bool) -> Mat {
    let mut a = g.adjacency();
    if diag_one {
        for i in 0..g.n() {
            a[[i, i]] = 1.0;
        }
    }
    a
}

/// Weighted total objective. `fm` carries the already-summed pair of
/// directed functional-map losses. `None` terms (ablated) contribute 0.
pub fn total_loss(
    rec: &Tensor,
    fm: Option<&Tensor>,
    bij: Option<&Tensor>,
    orth: Option<&Tensor>,
    cfg: &TrainConfig,
) -> Result<Tensor> {
    let mut total = rec.clone();
    if let Some(fm) = fm {
        total = total.add(&fm.scale(cfg.lambda_fm)?)?;
    }
    if let Some(bij) = bij {
        total = total.add(&bij.scale(cfg.lambda_bij)?)?;
    }
    if let Some(orth) = orth {
        total = total.add(&orth.scale(cfg.lambda_orth)?)?;
    }
    Ok(total)
}

/// Adam with decoupled weight decay over a fixed-order list of parameter
/// matrices. Weight decay shrinks parameters before the moment update:
/// `theta -= lr * wd * theta`, then the bias-corrected Adam step.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[Mat]) -> Self {
        AdamState {
            m: params.iter().map(|p| Mat::zeros(p.dim())).collect(),
            v: params.iter().map(|p| Mat::zeros(p.dim())).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [Mat], grads: &[Mat], lr: f64, weight_decay: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if weight_decay != 0.0 {
                p.mapv_inplace(|x| x - lr * weight_decay * x);
            }
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            });
            ndarray::Zip::from(&mut *p)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let m_hat = m / bc1;
                    let v_hat = v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
                });
        }
    }
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 over seed xor stream.
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct PairSetup {
    filters_s: crate::graph::FilterPair,
    filters_t: crate::graph::FilterPair,
    target_s: Mat,
    target_t: Mat,
    basis_s: SpectralBasis,
    basis_t: SpectralBasis,
    x_s: Mat,
    x_t: Mat,
}

fn prepare(g_source: &Graph, g_target: &Graph, cfg: &TrainConfig, r: usize) -> Result<PairSetup> {
    let x_s = g_source
        .features()
        .ok_or_else(|| Error::invalid("source graph has no node features"))?
        .clone();
    let x_t = g_target
        .features()
        .ok_or_else(|| Error::invalid("target graph has no node features"))?
        .clone();
    let r_eff = r.min(g_source.n()).min(g_target.n());
    if r_eff < r {
        log::warn!("clamping spectral basis size from {r} to {r_eff}");
    }
    let basis_s = eig_smallest(&normalized_laplacian(g_source), r_eff)?;
    let basis_t = eig_smallest(&normalized_laplacian(g_target), r_eff)?;
    Ok(PairSetup {
        filters_s: filter_matrices(g_source),
        filters_t: filter_matrices(g_target),
        target_s: reconstruction_target(g_source, cfg.recon_diag_one),
        target_t: reconstruction_target(g_target, cfg.recon_diag_one),
        basis_s,
        basis_t,
        x_s,
        x_t,
    })
}

/// Trains the encoder(s) and functional maps on one graph pair.
///
/// Per epoch: forward both graphs through the shared or per-graph encoder,
/// project onto the spectral bases, assemble the weighted objective,
/// backpropagate, and take one Adam step on all trainables jointly.
/// Deterministic given (inputs, config, seed).
pub fn train_pair(
    g_source: &Graph,
    g_target: &Graph,
    enc_cfg: &EncoderConfig,
    fm_hyper: &FmHyper,
    cfg: &TrainConfig,
    r: usize,
) -> Result<TrainedModel> {
    if cfg.epochs == 0 {
        return Err(Error::invalid("epochs must be at least 1"));
    }
    if cfg.lr <= 0.0 {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let setup = prepare(g_source, g_target, cfg, r)?;
    let k_s = setup.x_s.ncols();
    let k_t = setup.x_t.ncols();
    if enc_cfg.share_across_graphs && k_s != k_t {
        return Err(Error::invalid(format!(
            "shared encoder requires equal feature dims, got {k_s} and {k_t}"
        )));
    }
    let mode = cfg.encoder_mode();

    // Trainables in fixed order: encoder weights (low then high, source
    // encoder before target when separate), then C12, C21.
    let mut encoder = if enc_cfg.share_across_graphs {
        EncoderParamSet::Shared(crate::encoder::init_params(enc_cfg, k_s, cfg.seed))
    } else {
        EncoderParamSet::Separate(
            crate::encoder::init_params(enc_cfg, k_s, derive_seed(cfg.seed, 1)),
            crate::encoder::init_params(enc_cfg, k_t, derive_seed(cfg.seed, 2)),
        )
    };
    let mut maps = init_maps(setup.basis_s.r);

    let flatten = |enc: &EncoderParamSet, maps: &FunctionalMaps| -> Vec<Mat> {
        let mut out = Vec::new();
        let push_set = |p: &DualPassParams, out: &mut Vec<Mat>| {
            out.extend(p.layers_low.iter().cloned());
            out.extend(p.layers_high.iter().cloned());
        };
        match enc {
            EncoderParamSet::Shared(p) => push_set(p, &mut out),
            EncoderParamSet::Separate(a, b) => {
                push_set(a, &mut out);
                push_set(b, &mut out);
            }
        }
        out.push(maps.c12.clone());
        out.push(maps.c21.clone());
        out
    };
    let unflatten = |flat: &[Mat], enc: &mut EncoderParamSet, maps: &mut FunctionalMaps| {
        let mut it = flat.iter().cloned();
        let pull_set = |p: &mut DualPassParams, it: &mut dyn Iterator<Item = Mat>| {
            for w in p.layers_low.iter_mut() {
                *w = it.next().expect("layer weight");
            }
            for w in p.layers_high.iter_mut() {
                *w = it.next().expect("layer weight");
            }
        };
        match enc {
            EncoderParamSet::Shared(p) => pull_set(p, &mut it),
            EncoderParamSet::Separate(a, b) => {
                pull_set(a, &mut it);
                pull_set(b, &mut it);
            }
        }
        maps.c12 = it.next().expect("c12");
        maps.c21 = it.next().expect("c21");
        assert!(it.next().is_none());
    };

    let mut flat = flatten(&encoder, &maps);
    let mut adam = AdamState::new(&flat);
    let mut history: Vec<EpochLosses> = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        unflatten(&flat, &mut encoder, &mut maps);
        let epoch_result: Result<(EpochLosses, Vec<Mat>)> = (|| {
            let tape = Tape::new();
            let (pt_s, pt_t): (DualPassTensors, Option<DualPassTensors>) = match &encoder {
                EncoderParamSet::Shared(p) => (register_params(&tape, p), None),
                EncoderParamSet::Separate(a, b) => {
                    (register_params(&tape, a), Some(register_params(&tape, b)))
                }
            };
            let mt = register_maps(&tape, &maps);
            let ft_s = FilterTensors::register(&tape, &setup.filters_s, mode);
            let ft_t = FilterTensors::register(&tape, &setup.filters_t, mode);
            let x_s = tape.constant(setup.x_s.clone());
            let x_t = tape.constant(setup.x_t.clone());

            let z_s = encode(mode, &pt_s, &x_s, &ft_s)?;
            let z_t = encode(mode, pt_t.as_ref().unwrap_or(&pt_s), &x_t, &ft_t)?;

            let rec_s = recon_loss(&setup.target_s, &decode(&z_s)?)?;
            let rec_t = recon_loss(&setup.target_t, &decode(&z_t)?)?;
            let rec = rec_s.add(&rec_t)?;

            let fm_parts = if cfg.use_fm {
                let f1 = crate::fmap::project_spectral(&z_s, &setup.basis_s)?;
                let f2 = crate::fmap::project_spectral(&z_t, &setup.basis_t)?;
                Some(fm_align_parts(
                    &mt,
                    &f1,
                    &f2,
                    &setup.basis_s.lambda,
                    &setup.basis_t.lambda,
                    fm_hyper,
                )?)
            } else {
                None
            };
            let fm_sum = match &fm_parts {
                Some((l12, l21)) => Some(l12.add(l21)?),
                None => None,
            };
            let bij = if cfg.use_bij {
                Some(bijectivity_loss(&mt)?)
            } else {
                None
            };
            let orth = if cfg.use_orth {
                Some(orthogonality_loss(&mt)?)
            } else {
                None
            };
            let total = total_loss(&rec, fm_sum.as_ref(), bij.as_ref(), orth.as_ref(), cfg)?;

            let losses = EpochLosses {
                epoch,
                rec: rec.scalar(),
                fm12: fm_parts.as_ref().map_or(0.0, |(l, _)| l.scalar()),
                fm21: fm_parts.as_ref().map_or(0.0, |(_, l)| l.scalar()),
                bij: bij.as_ref().map_or(0.0, Tensor::scalar),
                orth: orth.as_ref().map_or(0.0, Tensor::scalar),
                total: total.scalar(),
            };

            let grads = total.backward()?;
            let mut grad_list = Vec::with_capacity(flat.len());
            let push_set = |p: &DualPassTensors, out: &mut Vec<Mat>| {
                for t in p.layers_low.iter().chain(p.layers_high.iter()) {
                    out.push(grads.get(t).clone());
                }
            };
            push_set(&pt_s, &mut grad_list);
            if let Some(pt_t) = &pt_t {
                push_set(pt_t, &mut grad_list);
            }
            grad_list.push(grads.get(&mt.c12).clone());
            grad_list.push(grads.get(&mt.c21).clone());
            Ok((losses, grad_list))
        })();

        let (losses, grad_list) = epoch_result.map_err(|e| {
            let last = history.last().copied();
            Error::invalid(format!(
                "training aborted at epoch {epoch}: {e}; last recorded losses: {last:?}"
            ))
        })?;
        adam.step(&mut flat, &grad_list, cfg.lr, cfg.weight_decay);
        history.push(losses);

        if cfg.early_stop_patience > 0 && epoch + 1 > cfg.early_stop_patience {
            let before = history[epoch - cfg.early_stop_patience].total;
            if before - losses.total < cfg.early_stop_min_delta {
                log::debug!("early stop at epoch {epoch}");
                break;
            }
        }
    }
    unflatten(&flat, &mut encoder, &mut maps);

    // Final embeddings on a throwaway tape.
    let tape = Tape::new();
    let (pt_s, pt_t) = match &encoder {
        EncoderParamSet::Shared(p) => (register_params(&tape, p), None),
        EncoderParamSet::Separate(a, b) => {
            (register_params(&tape, a), Some(register_params(&tape, b)))
        }
    };
    let ft_s = FilterTensors::register(&tape, &setup.filters_s, mode);
    let ft_t = FilterTensors::register(&tape, &setup.filters_t, mode);
    let x_s = tape.constant(setup.x_s.clone());
    let x_t = tape.constant(setup.x_t.clone());
    let z_source = encode(mode, &pt_s, &x_s, &ft_s)?.value();
    let z_target = encode(mode, pt_t.as_ref().unwrap_or(&pt_s), &x_t, &ft_t)?.value();

    Ok(TrainedModel {
        encoder,
        maps,
        history,
        mode,
        z_source,
        z_target,
        basis_source: setup.basis_s,
        basis_target: setup.basis_t,
    })
}
