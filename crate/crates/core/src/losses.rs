//! Contrastive objectives: CLIP loss, m2-Mix, V/L/VL-Mix and the combined
//! m3-Mix, as scalar functions of paired unit embeddings.
//!
//! All softmax / log-sum-exp computations subtract the row maximum; the
//! default temperature 0.01 produces logits of magnitude 100.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};
use crate::metrics::PairedEmbeddings;
use crate::rng::substream;
use crate::sphere::{slerp_raw, MixBranch, MixRatio};

/// Weights, Beta parameters, temperatures and schedule flag for m3-Mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixLossConfig {
    pub w_m2: f64,
    pub w_v: f64,
    pub w_l: f64,
    pub w_vl: f64,
    /// Beta(alpha, alpha) parameter for the multi-modal mix ratio.
    pub alpha_m2: f64,
    /// Beta(alpha, alpha) parameter for the uni-modal mix ratio.
    pub alpha_uni: f64,
    /// Main temperature (CLIP, V/L/VL terms).
    pub tau1: f64,
    /// m2-Mix temperature.
    pub tau2: f64,
    /// Divide the four mix weights by (epoch + 1).
    pub epoch_decay: bool,
}

impl Default for MixLossConfig {
    fn default() -> Self {
        MixLossConfig {
            w_m2: 0.1,
            w_v: 0.1,
            w_l: 0.1,
            w_vl: 0.1,
            alpha_m2: 0.5,
            alpha_uni: 2.0,
            tau1: 0.01,
            tau2: 0.01,
            epoch_decay: false,
        }
    }
}

impl MixLossConfig {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("w_m2", self.w_m2),
            ("w_v", self.w_v),
            ("w_l", self.w_l),
            ("w_vl", self.w_vl),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::OutOfRange { what, value: v });
            }
        }
        for (what, v) in [
            ("alpha_m2", self.alpha_m2),
            ("alpha_uni", self.alpha_uni),
            ("tau1", self.tau1),
            ("tau2", self.tau2),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::OutOfRange { what, value: v });
            }
        }
        Ok(())
    }

    /// Mix-term weights after the optional epoch-decay schedule.
    pub fn effective_weights(&self, epoch: usize) -> [f64; 4] {
        let s = if self.epoch_decay {
            1.0 / (epoch as f64 + 1.0)
        } else {
            1.0
        };
        [self.w_m2 * s, self.w_v * s, self.w_l * s, self.w_vl * s]
    }
}

/// Forward value of the combined objective with its component breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    /// Unweighted per-term values keyed by loss name.
    pub components: BTreeMap<String, f64>,
    /// Effective weight applied to each term.
    pub weights: BTreeMap<String, f64>,
    /// The sampled mix ratio consumed by each mixing term.
    pub lambda_used: BTreeMap<String, f64>,
}

pub(crate) fn sim_matrix(a: &Mat, b: &Mat) -> Mat {
    let m = a.rows();
    let n = b.rows();
    let mut s = Mat::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            s[(i, j)] = dot(a.row(i), b.row(j));
        }
    }
    s
}

/// Row-wise softmax of `logits` (stable).
pub(crate) fn row_softmax(logits: &Mat) -> Mat {
    let mut p = logits.clone();
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    p
}

/// Mean over rows of the soft-target cross-entropy -sum t log softmax(z).
pub(crate) fn soft_ce(logits: &Mat, targets: &Mat) -> f64 {
    let m = logits.rows();
    let mut total = 0.0;
    for i in 0..m {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(row.iter().map(|z| libm::exp(z - max)).sum::<f64>());
        for (j, &t) in targets.row(i).iter().enumerate() {
            if t != 0.0 {
                total -= t * (row[j] - lse);
            }
        }
    }
    total / m as f64
}

/// Both matrix orientations: (ce(z, t) + ce(z^T, t^T)) / 2.
pub(crate) fn cross_entropy_2d(logits: &Mat, targets: &Mat) -> f64 {
    (soft_ce(logits, targets) + soft_ce(&logits.transpose(), &targets.transpose())) / 2.0
}

/// Row-wise slerp of paired rows, keeping the branch taken per row.
pub(crate) struct MixedRows {
    pub rows: Mat,
    pub branches: Vec<MixBranch>,
}

pub(crate) fn mix_paired_rows(lambda: f64, a: &Mat, b: &Mat) -> Result<MixedRows> {
    let mut rows = Mat::zeros(a.rows(), a.cols());
    let mut branches = Vec::with_capacity(a.rows());
    for i in 0..a.rows() {
        let (v, br) = slerp_raw(lambda, a.row(i), b.row(i)).map_err(|e| e.at_row(i))?;
        rows.row_mut(i).copy_from_slice(&v);
        branches.push(br);
    }
    Ok(MixedRows { rows, branches })
}

/// Slerp each row with its flipped partner: row i with row M-1-i.
pub(crate) fn mix_with_flip(lambda: f64, a: &Mat) -> Result<MixedRows> {
    let m = a.rows();
    let mut rows = Mat::zeros(m, a.cols());
    let mut branches = Vec::with_capacity(m);
    for i in 0..m {
        let (v, br) = slerp_raw(lambda, a.row(i), a.row(m - 1 - i)).map_err(|e| e.at_row(i))?;
        rows.row_mut(i).copy_from_slice(&v);
        branches.push(br);
    }
    Ok(MixedRows { rows, branches })
}

fn scaled(mut m: Mat, inv_tau: f64) -> Mat {
    m.scale(inv_tau);
    m
}

pub(crate) fn clip_forward(i: &Mat, t: &Mat, tau: f64) -> f64 {
    let z = scaled(sim_matrix(i, t), 1.0 / tau);
    cross_entropy_2d(&z, &Mat::identity(i.rows()))
}

/// Symmetric InfoNCE over paired unit rows.
pub fn clip_loss(p: &PairedEmbeddings, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(clip_forward(p.image.as_mat(), p.text.as_mat(), tau))
}

/// m2-Mix logits: original positives on the diagonal, mixed-row negatives
/// off it. Returns the two one-directional logit matrices.
pub(crate) fn m2_logits(i: &Mat, t: &Mat, mix: &Mat, tau2: f64) -> (Mat, Mat) {
    let m = i.rows();
    let mut z_img = scaled(sim_matrix(mix, t), 1.0 / tau2);
    let mut z_txt = scaled(sim_matrix(mix, i), 1.0 / tau2);
    for k in 0..m {
        z_img[(k, k)] = dot(i.row(k), t.row(k)) / tau2;
        z_txt[(k, k)] = dot(t.row(k), i.row(k)) / tau2;
    }
    (z_img, z_txt)
}

pub(crate) fn m2_forward(i: &Mat, t: &Mat, tau2: f64, lambda: f64) -> Result<f64> {
    let mix = mix_paired_rows(lambda, i, t)?;
    let (z_img, z_txt) = m2_logits(i, t, &mix.rows, tau2);
    let id = Mat::identity(i.rows());
    Ok((soft_ce(&z_img, &id) + soft_ce(&z_txt, &id)) / 2.0)
}

/// Contrastive loss whose negatives are geodesic mixtures of the paired rows.
pub fn m2mix_loss(p: &PairedEmbeddings, tau2: f64, lambda: MixRatio) -> Result<f64> {
    check_tau(tau2)?;
    if p.len() < 2 {
        return Err(Error::BatchTooSmall { min: 2, got: p.len() });
    }
    m2_forward(p.image.as_mat(), p.text.as_mat(), tau2, lambda.get())
}

/// V-Mix logits and soft targets. `mixed_side` rows are mixed with their
/// flipped partners; mixed logits sit on the diagonal and anti-diagonal.
pub(crate) fn uni_mix_logits(
    mixed_side: &Mat,
    other: &Mat,
    mix: &Mat,
    tau: f64,
    lambda: f64,
) -> (Mat, Mat) {
    let m = mixed_side.rows();
    let mut z = scaled(sim_matrix(mixed_side, other), 1.0 / tau);
    let mut target = Mat::zeros(m, m);
    for i in 0..m {
        let ir = m - 1 - i;
        z[(i, i)] = dot(mix.row(i), other.row(i)) / tau;
        z[(i, ir)] = dot(mix.row(i), other.row(ir)) / tau;
        target[(i, i)] += lambda;
        target[(i, ir)] += 1.0 - lambda;
    }
    (z, target)
}

pub(crate) fn uni_mix_forward(mixed_side: &Mat, other: &Mat, tau: f64, lambda: f64) -> Result<f64> {
    let mix = mix_with_flip(lambda, mixed_side)?;
    let (z, target) = uni_mix_logits(mixed_side, other, &mix.rows, tau, lambda);
    Ok(cross_entropy_2d(&z, &target))
}

/// V-Mix: image rows mixed with the flipped batch, soft pseudo-labels
/// lambda / (1 - lambda) at the diagonal / anti-diagonal.
pub fn vmix_loss(p: &PairedEmbeddings, tau: f64, lambda: MixRatio) -> Result<f64> {
    check_tau(tau)?;
    uni_mix_forward(p.image.as_mat(), p.text.as_mat(), tau, lambda.get())
}

/// L-Mix: the text-side mirror of [`vmix_loss`].
pub fn lmix_loss(p: &PairedEmbeddings, tau: f64, lambda: MixRatio) -> Result<f64> {
    check_tau(tau)?;
    uni_mix_forward(p.text.as_mat(), p.image.as_mat(), tau, lambda.get())
}

pub(crate) fn vl_logits(i: &Mat, t: &Mat, mix_i: &Mat, mix_t: &Mat, tau: f64) -> Mat {
    let m = i.rows();
    let mut z = scaled(sim_matrix(i, t), 1.0 / tau);
    for k in 0..m {
        z[(k, k)] = dot(mix_i.row(k), mix_t.row(k)) / tau;
    }
    z
}

pub(crate) fn vl_forward(i: &Mat, t: &Mat, tau: f64, lambda: f64) -> Result<f64> {
    let mix_i = mix_with_flip(lambda, i)?;
    let mix_t = mix_with_flip(lambda, t)?;
    let z = vl_logits(i, t, &mix_i.rows, &mix_t.rows, tau);
    Ok(cross_entropy_2d(&z, &Mat::identity(i.rows())))
}

/// VL-Mix: both modalities mixed independently; the mixed pair is the
/// positive while original negatives are retained.
pub fn vlmix_loss(p: &PairedEmbeddings, tau: f64, lambda: MixRatio) -> Result<f64> {
    check_tau(tau)?;
    vl_forward(p.image.as_mat(), p.text.as_mat(), tau, lambda.get())
}

/// The two Beta draws consumed by one m3-Mix evaluation, in draw order.
pub(crate) fn sample_lambdas_with<R: rand::Rng>(cfg: &MixLossConfig, rng: &mut R) -> (f64, f64) {
    let beta_m2 = Beta::new(cfg.alpha_m2, cfg.alpha_m2).expect("validated alpha");
    let beta_uni = Beta::new(cfg.alpha_uni, cfg.alpha_uni).expect("validated alpha");
    let l_m2 = beta_m2.sample(rng);
    let l_uni = beta_uni.sample(rng);
    (l_m2, l_uni)
}

pub(crate) fn sample_lambdas(cfg: &MixLossConfig, rng_seed: u64, epoch: usize) -> (f64, f64) {
    let mut rng = substream(rng_seed, &[epoch as u64]);
    sample_lambdas_with(cfg, &mut rng)
}

pub(crate) fn m3_forward(
    i: &Mat,
    t: &Mat,
    cfg: &MixLossConfig,
    lambda_m2: f64,
    lambda_uni: f64,
    epoch: usize,
) -> Result<LossValue> {
    let [w_m2, w_v, w_l, w_vl] = cfg.effective_weights(epoch);
    let clip = clip_forward(i, t, cfg.tau1);
    let mut components = BTreeMap::new();
    let mut weights = BTreeMap::new();
    let mut lambda_used = BTreeMap::new();
    components.insert(String::from("clip"), clip);
    weights.insert(String::from("clip"), 1.0);
    let mut total = clip;

    if w_m2 > 0.0 {
        if i.rows() < 2 {
            return Err(Error::BatchTooSmall { min: 2, got: i.rows() });
        }
        let v = m2_forward(i, t, cfg.tau2, lambda_m2)?;
        total += w_m2 * v;
        components.insert(String::from("m2_mix"), v);
        weights.insert(String::from("m2_mix"), w_m2);
        lambda_used.insert(String::from("m2_mix"), lambda_m2);
    }
    if w_v > 0.0 {
        let v = uni_mix_forward(i, t, cfg.tau1, lambda_uni)?;
        total += w_v * v;
        components.insert(String::from("v_mix"), v);
        weights.insert(String::from("v_mix"), w_v);
        lambda_used.insert(String::from("v_mix"), lambda_uni);
    }
    if w_l > 0.0 {
        let v = uni_mix_forward(t, i, cfg.tau1, lambda_uni)?;
        total += w_l * v;
        components.insert(String::from("l_mix"), v);
        weights.insert(String::from("l_mix"), w_l);
        lambda_used.insert(String::from("l_mix"), lambda_uni);
    }
    if w_vl > 0.0 {
        let v = vl_forward(i, t, cfg.tau1, lambda_uni)?;
        total += w_vl * v;
        components.insert(String::from("vl_mix"), v);
        weights.insert(String::from("vl_mix"), w_vl);
        lambda_used.insert(String::from("vl_mix"), lambda_uni);
    }
    Ok(LossValue {
        total,
        components,
        weights,
        lambda_used,
    })
}

/// Combined m3-Mix objective; both mix ratios come from the seeded
/// per-epoch substream, so the value is bitwise reproducible.
pub fn m3mix_loss(
    p: &PairedEmbeddings,
    cfg: &MixLossConfig,
    rng_seed: u64,
    epoch: usize,
) -> Result<LossValue> {
    cfg.validate()?;
    let (l_m2, l_uni) = sample_lambdas(cfg, rng_seed, epoch);
    m3_forward(p.image.as_mat(), p.text.as_mat(), cfg, l_m2, l_uni, epoch)
}

/// One row of the low-temperature limit table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitProbeRow {
    pub tau: f64,
    pub tau_clip_loss: f64,
    /// Zero-margin hinge mean, averaged over both retrieval directions.
    pub hinge_value: f64,
    pub tau_m2_loss: f64,
    /// Scaled log-sum-exp over mixed negatives (the m2 limiting shape).
    pub neg_uniformity_proxy: f64,
}

fn hinge_mean(s: &Mat) -> f64 {
    let m = s.rows();
    let mut acc = 0.0;
    for i in 0..m {
        let pos = s[(i, i)];
        let mut worst = f64::NEG_INFINITY;
        for j in 0..m {
            if j != i {
                worst = worst.max(s[(i, j)]);
            }
        }
        acc += (worst - pos).max(0.0);
    }
    acc / m as f64
}

fn lse_over_negatives(z: &Mat, tau: f64) -> f64 {
    let m = z.rows();
    let mut acc = 0.0;
    for i in 0..m {
        let row: Vec<f64> = (0..m).filter(|&j| j != i).map(|j| z[(i, j)] / tau).collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        acc += max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
    }
    acc / m as f64
}

/// Tabulates tau * loss against its analytic low-temperature limit for a
/// descending ladder of temperatures; the mix ratio is fixed at 0.5.
pub fn limiting_behavior_probe(p: &PairedEmbeddings, taus: &[f64]) -> Result<Vec<LimitProbeRow>> {
    if p.len() < 2 {
        return Err(Error::BatchTooSmall { min: 2, got: p.len() });
    }
    for w in taus.windows(2) {
        if w[0] <= w[1] {
            return Err(Error::OutOfRange {
                what: "taus must be positive and sorted descending",
                value: w[1],
            });
        }
    }
    let i = p.image.as_mat();
    let t = p.text.as_mat();
    let s = sim_matrix(i, t);
    let hinge = (hinge_mean(&s) + hinge_mean(&s.transpose())) / 2.0;
    let mix = mix_paired_rows(0.5, i, t)?;
    let mix_t = sim_matrix(&mix.rows, t);
    let mix_i = sim_matrix(&mix.rows, i);
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        check_tau(tau)?;
        let clip = clip_forward(i, t, tau);
        let m2 = m2_forward(i, t, tau, 0.5)?;
        let proxy =
            tau * (lse_over_negatives(&mix_t, tau) + lse_over_negatives(&mix_i, tau)) / 2.0;
        rows.push(LimitProbeRow {
            tau,
            tau_clip_loss: tau * clip,
            hinge_value: hinge,
            tau_m2_loss: tau * m2,
            neg_uniformity_proxy: proxy,
        });
    }
    Ok(rows)
}

fn check_tau(tau: f64) -> Result<()> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::OutOfRange {
            what: "temperature",
            value: tau,
        });
    }
    Ok(())
}
