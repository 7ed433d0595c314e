//! Fine-tunes per-modality linear projection heads and the two
//! log-temperatures over frozen embedding matrices, with Adam and the
//! combined mix objective. Single-threaded and bitwise deterministic per
//! (data, config, seed).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::loss_gradients_raw;
use crate::linalg::Mat;
use crate::losses::{m3_forward, sample_lambdas, sample_lambdas_with, MixLossConfig};
use crate::metrics::{
    hard_negative_proportion, modality_gap, recall_at_k, relative_alignment, uniformity,
    Direction,
};
use crate::rng::substream;
use crate::sphere::{
    batch_geodesic_mix, l2_normalize, pairwise_similarity, EmbeddingBatch, MixRatio,
    ZERO_NORM_EPS,
};
use crate::metrics::PairedEmbeddings;

/// Substream labels for the independent random decisions of a run.
const LBL_INIT: u64 = 1;
const LBL_SHUFFLE: u64 = 2;
const LBL_LAMBDA: u64 = 3;

pub const LOG_TAU_MIN: f64 = -6.907_755_278_982_137; // ln(1e-3)
pub const LOG_TAU_MAX: f64 = 0.0; // ln(1.0)

/// Linear projection per modality plus the two log-temperatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionModel {
    pub w_img: Mat,
    pub w_txt: Mat,
    pub log_tau1: f64,
    pub log_tau2: f64,
}

impl ProjectionModel {
    /// Identity weights plus Gaussian noise of scale 1e-3, so epoch-0
    /// metrics match the raw data. Temperatures start at 0.01; `train`
    /// resets them from its loss config before the first step.
    pub fn init_identity(d: usize, seed: u64) -> Self {
        let mut rng = substream(seed, &[LBL_INIT]);
        let mut init = || {
            let mut w = Mat::identity(d);
            for v in w.as_mut_slice() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                *v += 1e-3 * noise;
            }
            w
        };
        ProjectionModel {
            w_img: init(),
            w_txt: init(),
            log_tau1: libm::log(0.01),
            log_tau2: libm::log(0.01),
        }
    }

    pub fn tau1(&self) -> f64 {
        libm::exp(self.log_tau1)
    }

    pub fn tau2(&self) -> f64 {
        libm::exp(self.log_tau2)
    }

    fn clamp_temperatures(&mut self) {
        self.log_tau1 = self.log_tau1.clamp(LOG_TAU_MIN, LOG_TAU_MAX);
        self.log_tau2 = self.log_tau2.clamp(LOG_TAU_MIN, LOG_TAU_MAX);
    }
}

/// Optimizer and objective settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub loss: MixLossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 9,
            batch_size: 128,
            learning_rate: 0.01,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            loss: MixLossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::OutOfRange {
                what: "batch_size",
                value: 0.0,
            });
        }
        for (what, v) in [
            ("learning_rate", self.learning_rate),
            ("eps", self.eps),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::OutOfRange { what, value: v });
            }
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::OutOfRange {
                what: "weight_decay",
                value: self.weight_decay,
            });
        }
        for (what, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::OutOfRange { what, value: v });
            }
        }
        self.loss.validate()
    }
}

/// Per-epoch diagnostics computed on the full set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub components: BTreeMap<String, f64>,
    pub relative_alignment: f64,
    pub uniformity: f64,
    pub modality_gap_norm: f64,
    pub recall1_image_to_text: f64,
    pub recall1_text_to_image: f64,
    /// Fraction of ordered negatives beaten by midpoint-mixed rows.
    pub hard_neg_mixed_image: f64,
    pub hard_neg_mixed_text: f64,
    /// Same fraction for the original (unmixed) negatives.
    pub hard_neg_orig_image: f64,
    pub hard_neg_orig_text: f64,
    pub tau1: f64,
    pub tau2: f64,
}

/// Gradient of the batch loss with respect to the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub d_w_img: Mat,
    pub d_w_txt: Mat,
    pub d_log_tau1: f64,
    pub d_log_tau2: f64,
}

/// Adam first/second moments for every parameter, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m_w_img: Mat,
    v_w_img: Mat,
    m_w_txt: Mat,
    v_w_txt: Mat,
    m_lt: [f64; 2],
    v_lt: [f64; 2],
    t: u64,
}

impl AdamState {
    pub fn new(d_in: usize, d_out: usize) -> Self {
        AdamState {
            m_w_img: Mat::zeros(d_in, d_out),
            v_w_img: Mat::zeros(d_in, d_out),
            m_w_txt: Mat::zeros(d_in, d_out),
            v_w_txt: Mat::zeros(d_in, d_out),
            m_lt: [0.0; 2],
            v_lt: [0.0; 2],
            t: 0,
        }
    }
}

/// Projects both modalities and normalizes each output row.
pub fn forward(model: &ProjectionModel, p_raw: &PairedEmbeddings) -> Result<PairedEmbeddings> {
    if p_raw.dim() != model.w_img.rows() {
        return Err(Error::DimensionMismatch {
            expected: model.w_img.rows(),
            got: p_raw.dim(),
        });
    }
    let project = |x: &Mat, w: &Mat| -> Result<EmbeddingBatch> {
        let y = x.matmul(w);
        let rows = (0..y.rows())
            .map(|r| l2_normalize(y.row(r)))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingBatch::from_rows(rows)
    };
    PairedEmbeddings::new(
        project(p_raw.image.as_mat(), &model.w_img)?,
        project(p_raw.text.as_mat(), &model.w_txt)?,
    )
}

fn adam_update(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, wd: f64, c: &TrainConfig, bc1: f64, bc2: f64) {
    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    *p -= lr * (m_hat / (libm::sqrt(v_hat) + c.eps) + wd * *p);
}

/// One Adam step with bias correction; decoupled weight decay touches only
/// the projection matrices, never the log-temperatures. Temperatures are
/// clamped after the update.
pub fn adam_step(
    model: &mut ProjectionModel,
    grads: &ModelGradients,
    state: &mut AdamState,
    cfg: &TrainConfig,
) {
    state.t += 1;
    let bc1 = 1.0 - libm::pow(cfg.beta1, state.t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, state.t as f64);
    let lr = cfg.learning_rate;
    for (w, g, m, v) in [
        (&mut model.w_img, &grads.d_w_img, &mut state.m_w_img, &mut state.v_w_img),
        (&mut model.w_txt, &grads.d_w_txt, &mut state.m_w_txt, &mut state.v_w_txt),
    ] {
        for k in 0..w.as_slice().len() {
            adam_update(
                &mut w.as_mut_slice()[k],
                g.as_slice()[k],
                &mut m.as_mut_slice()[k],
                &mut v.as_mut_slice()[k],
                lr,
                cfg.weight_decay,
                cfg,
                bc1,
                bc2,
            );
        }
    }
    adam_update(&mut model.log_tau1, grads.d_log_tau1, &mut state.m_lt[0], &mut state.v_lt[0], lr, 0.0, cfg, bc1, bc2);
    adam_update(&mut model.log_tau2, grads.d_log_tau2, &mut state.m_lt[1], &mut state.v_lt[1], lr, 0.0, cfg, bc1, bc2);
    model.clamp_temperatures();
}

fn gather_rows(x: &Mat, idx: &[usize]) -> Mat {
    let mut out = Mat::zeros(idx.len(), x.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(x.row(i));
    }
    out
}

fn loss_cfg_at(model: &ProjectionModel, base: &MixLossConfig) -> MixLossConfig {
    MixLossConfig {
        tau1: model.tau1(),
        tau2: model.tau2(),
        ..base.clone()
    }
}

/// Batch-loss gradient with respect to the model parameters, by the chain
/// rule through projection and row normalization.
fn batch_gradients(
    model: &ProjectionModel,
    x_img: &Mat,
    x_txt: &Mat,
    loss_cfg: &MixLossConfig,
    lambda_m2: f64,
    lambda_uni: f64,
    epoch: usize,
) -> Result<ModelGradients> {
    let y_img = x_img.matmul(&model.w_img);
    let y_txt = x_txt.matmul(&model.w_txt);
    let g = loss_gradients_raw(&y_img, &y_txt, loss_cfg, lambda_m2, lambda_uni, epoch)?;
    Ok(ModelGradients {
        d_w_img: x_img.transpose().matmul(&g.d_image),
        d_w_txt: x_txt.transpose().matmul(&g.d_text),
        d_log_tau1: g.d_log_tau1,
        d_log_tau2: g.d_log_tau2,
    })
}

/// Fraction of ordered in-batch negatives whose similarity exceeds the
/// positive's, per retrieval side, from the raw similarity matrix.
fn original_hard_proportion(s: &Mat) -> (f64, f64) {
    let m = s.rows();
    let mut img = 0usize;
    let mut txt = 0usize;
    for i in 0..m {
        for j in 0..m {
            if j == i {
                continue;
            }
            if s[(i, j)] > s[(i, i)] {
                img += 1;
            }
            if s[(j, i)] > s[(i, i)] {
                txt += 1;
            }
        }
    }
    let total = (m * (m - 1)) as f64;
    (img as f64 / total, txt as f64 / total)
}

fn epoch_record(
    model: &ProjectionModel,
    p_raw: &PairedEmbeddings,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<TrainRecord> {
    let p = forward(model, p_raw)?;
    let loss_cfg = loss_cfg_at(model, &cfg.loss);
    let (l_m2, l_uni) = sample_lambdas(&loss_cfg, cfg.seed, epoch);
    let lv = m3_forward(p.image.as_mat(), p.text.as_mat(), &loss_cfg, l_m2, l_uni, epoch)?;
    let s = pairwise_similarity(&p.image, &p.text)?;
    let mix = batch_geodesic_mix(MixRatio::new(0.5).unwrap(), &p.image, &p.text)?;
    let (hn_mix_i, hn_mix_t) = hard_negative_proportion(&p, &mix)?;
    let (hn_orig_i, hn_orig_t) = original_hard_proportion(&s);
    Ok(TrainRecord {
        epoch,
        total_loss: lv.total,
        components: lv.components,
        relative_alignment: relative_alignment(&p)?,
        uniformity: uniformity(&p)?,
        modality_gap_norm: modality_gap(&p).1,
        recall1_image_to_text: recall_at_k(&s, 1, Direction::ImageToText)?.recall,
        recall1_text_to_image: recall_at_k(&s, 1, Direction::TextToImage)?.recall,
        hard_neg_mixed_image: hn_mix_i,
        hard_neg_mixed_text: hn_mix_t,
        hard_neg_orig_image: hn_orig_i,
        hard_neg_orig_text: hn_orig_t,
        tau1: model.tau1(),
        tau2: model.tau2(),
    })
}

/// Runs the full training loop; one record per epoch on the full set.
pub fn train(
    p_raw: &PairedEmbeddings,
    cfg: &TrainConfig,
) -> Result<(ProjectionModel, Vec<TrainRecord>)> {
    cfg.validate()?;
    let m = p_raw.len();
    if m == 0 {
        return Err(Error::BatchTooSmall { min: 1, got: 0 });
    }
    let d = p_raw.dim();
    let mut model = ProjectionModel::init_identity(d, cfg.seed);
    model.log_tau1 = libm::log(cfg.loss.tau1);
    model.log_tau2 = libm::log(cfg.loss.tau2);
    let mut state = AdamState::new(d, d);
    let batch = cfg.batch_size.min(m);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut substream(cfg.seed, &[LBL_SHUFFLE, epoch as u64]));
        let mut chunks: Vec<&[usize]> = perm.chunks(batch).collect();
        // A lone trailing row cannot form a contrastive batch; fold it in.
        if chunks.len() > 1 && chunks.last().unwrap().len() == 1 {
            let n = chunks.len();
            let merged_start = (n - 2) * batch;
            chunks.truncate(n - 2);
            chunks.push(&perm[merged_start..]);
        }
        for (b, idx) in chunks.iter().enumerate() {
            let x_img = gather_rows(p_raw.image.as_mat(), idx);
            let x_txt = gather_rows(p_raw.text.as_mat(), idx);
            let loss_cfg = loss_cfg_at(&model, &cfg.loss);
            let mut lam_rng = substream(cfg.seed, &[LBL_LAMBDA, epoch as u64, b as u64]);
            let (l_m2, l_uni) = sample_lambdas_with(&loss_cfg, &mut lam_rng);
            let grads = batch_gradients(&model, &x_img, &x_txt, &loss_cfg, l_m2, l_uni, epoch)?;
            adam_step(&mut model, &grads, &mut state, cfg);
        }
        history.push(epoch_record(&model, p_raw, cfg, epoch)?);
    }
    Ok((model, history))
}

/// Central-difference audit of every parameter gradient; returns the worst
/// relative error and the coordinate where it occurs.
pub fn finite_difference_check(
    model: &ProjectionModel,
    p_raw: &PairedEmbeddings,
    cfg: &TrainConfig,
    step: f64,
) -> Result<(f64, String)> {
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::OutOfRange {
            what: "finite-difference step",
            value: step,
        });
    }
    cfg.validate()?;
    let loss_cfg = loss_cfg_at(model, &cfg.loss);
    let (l_m2, l_uni) = sample_lambdas(&loss_cfg, cfg.seed, 0);
    let x_img = p_raw.image.as_mat();
    let x_txt = p_raw.text.as_mat();
    let grads = batch_gradients(model, x_img, x_txt, &loss_cfg, l_m2, l_uni, 0)?;
    let eval = |m: &ProjectionModel| -> Result<f64> {
        let y_i = x_img.matmul(&m.w_img);
        let y_t = x_txt.matmul(&m.w_txt);
        let normalize = |y: &Mat| -> Result<Mat> {
            let mut u = y.clone();
            for r in 0..u.rows() {
                let n = crate::linalg::norm(u.row(r));
                if n < ZERO_NORM_EPS {
                    return Err(Error::ZeroVector);
                }
                for v in u.row_mut(r) {
                    *v /= n;
                }
            }
            Ok(u)
        };
        let lc = loss_cfg_at(m, &cfg.loss);
        Ok(m3_forward(&normalize(&y_i)?, &normalize(&y_t)?, &lc, l_m2, l_uni, 0)?.total)
    };
    let mut worst = 0.0_f64;
    let mut where_ = String::from("none");
    let mut consider = |analytic: f64, plus: f64, minus: f64, name: String| {
        let fd = (plus - minus) / (2.0 * step);
        // Absolute-tolerance branch keeps near-zero gradients from
        // inflating the relative error.
        let denom = analytic.abs().max(fd.abs()).max(1e-6);
        let rel = (analytic - fd).abs() / denom;
        if rel > worst {
            worst = rel;
            where_ = name;
        }
    };
    for side in 0..2 {
        let (w, g) = if side == 0 {
            (&model.w_img, &grads.d_w_img)
        } else {
            (&model.w_txt, &grads.d_w_txt)
        };
        for r in 0..w.rows() {
            for c in 0..w.cols() {
                let mut hi = model.clone();
                let mut lo = model.clone();
                if side == 0 {
                    hi.w_img[(r, c)] += step;
                    lo.w_img[(r, c)] -= step;
                } else {
                    hi.w_txt[(r, c)] += step;
                    lo.w_txt[(r, c)] -= step;
                }
                let name = if side == 0 {
                    format!("w_img[{r},{c}]")
                } else {
                    format!("w_txt[{r},{c}]")
                };
                consider(g.as_slice()[r * w.cols() + c], eval(&hi)?, eval(&lo)?, name);
            }
        }
    }
    for (tau_idx, analytic) in [(0usize, grads.d_log_tau1), (1, grads.d_log_tau2)] {
        let mut hi = model.clone();
        let mut lo = model.clone();
        if tau_idx == 0 {
            hi.log_tau1 += step;
            lo.log_tau1 -= step;
        } else {
            hi.log_tau2 += step;
            lo.log_tau2 -= step;
        }
        let name = if tau_idx == 0 {
            String::from("log_tau1")
        } else {
            String::from("log_tau2")
        };
        consider(analytic, eval(&hi)?, eval(&lo)?, name);
    }
    Ok((worst, where_))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_bipartite, SynthConfig};

    fn synth(m: usize, d: usize, seed: u64) -> PairedEmbeddings {
        synth_bipartite(&SynthConfig {
            m,
            d,
            gap_angle: core::f64::consts::PI / 3.0,
            kappa_modality: 50.0,
            pair_coupling: 0.5,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn forward_identity_and_scale_invariance() {
        let p = synth(8, 4, 1);
        let mut model = ProjectionModel {
            w_img: Mat::identity(4),
            w_txt: Mat::identity(4),
            log_tau1: libm::log(0.01),
            log_tau2: libm::log(0.01),
        };
        let out = forward(&model, &p).unwrap();
        for (a, b) in out.image.as_mat().as_slice().iter().zip(p.image.as_mat().as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        model.w_img.scale(2.0);
        model.w_txt.scale(2.0);
        let out2 = forward(&model, &p).unwrap();
        for (a, b) in out2.image.as_mat().as_slice().iter().zip(p.image.as_mat().as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rows_unit_norm() {
        let p = synth(6, 5, 2);
        let model = ProjectionModel::init_identity(5, 9);
        let out = forward(&model, &p).unwrap();
        for r in 0..out.len() {
            let n = crate::linalg::norm(out.image.as_mat().row(r));
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_zero_gradients_no_op() {
        let mut model = ProjectionModel::init_identity(3, 4);
        let before = model.clone();
        let mut state = AdamState::new(3, 3);
        let grads = ModelGradients {
            d_w_img: Mat::zeros(3, 3),
            d_w_txt: Mat::zeros(3, 3),
            d_log_tau1: 0.0,
            d_log_tau2: 0.0,
        };
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        adam_step(&mut model, &grads, &mut state, &cfg);
        assert_eq!(model, before);
    }

    #[test]
    fn adam_first_step_is_sign_scaled() {
        // With a single scalar gradient g, bias correction makes the first
        // update lr * g / (|g| + eps * adjustment) ~ lr * sign(g).
        let mut model = ProjectionModel::init_identity(2, 5);
        let lt_before = model.log_tau1;
        let mut state = AdamState::new(2, 2);
        let g = -0.37;
        let grads = ModelGradients {
            d_w_img: Mat::zeros(2, 2),
            d_w_txt: Mat::zeros(2, 2),
            d_log_tau1: g,
            d_log_tau2: 0.0,
        };
        let cfg = TrainConfig::default();
        adam_step(&mut model, &grads, &mut state, &cfg);
        let update = model.log_tau1 - lt_before;
        assert!((update - cfg.learning_rate).abs() < 1e-4, "update {update}");
    }

    #[test]
    fn training_is_deterministic() {
        let p = synth(32, 6, 3);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..Default::default()
        };
        let (m1, h1) = train(&p, &cfg).unwrap();
        let (m2, h2) = train(&p, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let p = synth(8, 4, 5);
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (model, history) = train(&p, &cfg).unwrap();
        assert!(history.is_empty());
        assert_eq!(model, ProjectionModel::init_identity(4, cfg.seed));
    }

    #[test]
    fn temperatures_stay_clamped() {
        let p = synth(32, 6, 6);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 16,
            learning_rate: 0.5,
            ..Default::default()
        };
        let (model, history) = train(&p, &cfg).unwrap();
        for r in &history {
            assert!(r.tau1 >= 1e-3 - 1e-12 && r.tau1 <= 1.0 + 1e-12);
            assert!(r.tau2 >= 1e-3 - 1e-12 && r.tau2 <= 1.0 + 1e-12);
        }
        assert!(model.log_tau1 >= LOG_TAU_MIN && model.log_tau1 <= LOG_TAU_MAX);
    }

    #[test]
    fn clip_only_training_descends() {
        let p = synth(64, 8, 7);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 32,
            loss: MixLossConfig {
                w_m2: 0.0,
                w_v: 0.0,
                w_l: 0.0,
                w_vl: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let (_, history) = train(&p, &cfg).unwrap();
        let first = history.first().unwrap().components["clip"];
        let last = history.last().unwrap().components["clip"];
        assert!(last < first, "clip {first} -> {last}");
    }

    #[test]
    fn mixed_negatives_start_harder_and_decay() {
        let p = synth(64, 4, 8);
        // Gentle steps so the hardness statistic decays smoothly instead of
        // collapsing within a few epochs.
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let (_, history) = train(&p, &cfg).unwrap();
        let first = history.first().unwrap();
        assert!(first.hard_neg_mixed_image > first.hard_neg_orig_image);
        assert!(first.hard_neg_mixed_text > first.hard_neg_orig_text);
        let last = history.last().unwrap();
        assert!(last.hard_neg_mixed_image < first.hard_neg_mixed_image);
        assert!(last.hard_neg_mixed_image > 0.0);
    }

    #[test]
    fn finite_difference_small_batch() {
        let p = synth(4, 3, 10);
        let model = ProjectionModel::init_identity(3, 11);
        let cfg = TrainConfig::default();
        let (err, at) = finite_difference_check(&model, &p, &cfg, 1e-5).unwrap();
        assert!(err < 1e-4, "max rel err {err} at {at}");
    }

    #[test]
    fn finite_difference_trivial_gradients() {
        // Single pair, no mix terms: loss is constant zero, gradients too.
        let p = synth(1, 3, 12);
        let model = ProjectionModel::init_identity(3, 13);
        let cfg = TrainConfig {
            loss: MixLossConfig {
                w_m2: 0.0,
                w_v: 0.0,
                w_l: 0.0,
                w_vl: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let (err, _) = finite_difference_check(&model, &p, &cfg, 1e-5).unwrap();
        assert!(err < 1e-4);
    }

    #[test]
    fn gradient_symmetry_under_modality_swap() {
        // The paired-mix term is swap-symmetric only at ratio 0.5.
        let p = synth(8, 4, 14);
        let swapped = PairedEmbeddings::new(p.text.clone(), p.image.clone()).unwrap();
        let model = ProjectionModel {
            w_img: Mat::identity(4),
            w_txt: Mat::identity(4),
            log_tau1: libm::log(0.05),
            log_tau2: libm::log(0.05),
        };
        let cfg = TrainConfig::default();
        let loss_cfg = loss_cfg_at(&model, &cfg.loss);
        let g1 = batch_gradients(&model, p.image.as_mat(), p.text.as_mat(), &loss_cfg, 0.5, 0.6, 0)
            .unwrap();
        let g2 = batch_gradients(
            &model,
            swapped.image.as_mat(),
            swapped.text.as_mat(),
            &loss_cfg,
            0.5,
            0.6,
            0,
        )
        .unwrap();
        for (a, b) in g1.d_w_img.as_slice().iter().zip(g2.d_w_txt.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
