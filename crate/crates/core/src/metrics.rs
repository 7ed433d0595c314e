//! Representation-quality and task metrics for paired hyperspherical embeddings.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Mat};
use crate::sphere::{check_same_shape, l2_normalize, EmbeddingBatch, UnitVector};

/// Two same-shape batches paired by row index (image side, text side).
#[derive(Debug, Clone, PartialEq)]
pub struct PairedEmbeddings {
    pub image: EmbeddingBatch,
    pub text: EmbeddingBatch,
}

impl PairedEmbeddings {
    pub fn new(image: EmbeddingBatch, text: EmbeddingBatch) -> Result<Self> {
        check_same_shape(&image, &text)?;
        Ok(PairedEmbeddings { image, text })
    }

    pub fn len(&self) -> usize {
        self.image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.image.dim()
    }
}

/// Alignment/uniformity/gap summary of one paired batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub alignment: f64,
    pub uniformity: f64,
    pub modality_gap_norm: f64,
    /// Number of paired rows feeding alignment and the gap.
    pub n_pairs: usize,
    /// Number of ordered cross-modal pairs feeding uniformity.
    pub n_uniformity_pairs: usize,
}

/// Retrieval direction for recall / calibration queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ImageToText,
    TextToImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub direction: Direction,
    pub k: usize,
    pub recall: f64,
    pub n_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EceBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
    pub mean_conf: f64,
    pub mean_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EceReport {
    pub n_bins: usize,
    pub bins: Vec<EceBin>,
    pub ece: f64,
    pub n_queries: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Relative alignment: -mean_i[ d(I_i,T_i)^2 - min_{k!=i} d(I_i,T_k)^2 ].
///
/// Positive when positives sit closer than the nearest negative on average.
pub fn relative_alignment(p: &PairedEmbeddings) -> Result<f64> {
    let m = p.len();
    if m < 2 {
        return Err(Error::BatchTooSmall { min: 2, got: m });
    }
    let mut acc = 0.0;
    for i in 0..m {
        let pos = sq_dist(p.image.row(i), p.text.row(i));
        let mut nearest = f64::INFINITY;
        for k in 0..m {
            if k == i {
                continue;
            }
            let d = sq_dist(p.image.row(i), p.text.row(k));
            if d < nearest {
                nearest = d;
            }
        }
        acc += pos - nearest;
    }
    Ok(-acc / m as f64)
}

/// Uniformity: -log mean over ordered cross-modal pairs (i, j), i != j,
/// of exp(-2 d(I_i, T_j)^2). Higher means more spread.
pub fn uniformity(p: &PairedEmbeddings) -> Result<f64> {
    let m = p.len();
    if m < 2 {
        return Err(Error::BatchTooSmall { min: 2, got: m });
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            acc += libm::exp(-2.0 * sq_dist(p.image.row(i), p.text.row(j)));
            count += 1;
        }
    }
    Ok(-libm::log(acc / count as f64))
}

/// Centroid delta vector between the two modalities and its norm.
pub fn modality_gap(p: &PairedEmbeddings) -> (Vec<f64>, f64) {
    let m = p.len() as f64;
    let d = p.dim();
    let mut delta = alloc::vec![0.0; d];
    for i in 0..p.len() {
        for (k, dv) in delta.iter_mut().enumerate() {
            *dv += (p.image.row(i)[k] - p.text.row(i)[k]) / m;
        }
    }
    let n = norm(&delta);
    (delta, n)
}

/// All three representation metrics in one pass.
pub fn metric_report(p: &PairedEmbeddings) -> Result<MetricReport> {
    let m = p.len();
    let (_, gap) = modality_gap(p);
    Ok(MetricReport {
        alignment: relative_alignment(p)?,
        uniformity: uniformity(p)?,
        modality_gap_norm: gap,
        n_pairs: m,
        n_uniformity_pairs: m * (m - 1),
    })
}

/// Embedding-shift baseline: translate each modality half the centroid delta
/// toward (or past) the other, then re-normalize.
pub fn embedding_shift(p: &PairedEmbeddings, shift_lambda: f64) -> Result<PairedEmbeddings> {
    if libm::fabs(shift_lambda) > 2.5 {
        return Err(Error::OutOfRange {
            what: "shift lambda",
            value: shift_lambda,
        });
    }
    let (delta, _) = modality_gap(p);
    let half: Vec<f64> = delta.iter().map(|x| 0.5 * shift_lambda * x).collect();
    let d = p.dim();
    let mut img = Mat::zeros(p.len(), d);
    let mut txt = Mat::zeros(p.len(), d);
    for i in 0..p.len() {
        let shifted_i: Vec<f64> = p.image.row(i).iter().zip(&half).map(|(x, h)| x - h).collect();
        let shifted_t: Vec<f64> = p.text.row(i).iter().zip(&half).map(|(x, h)| x + h).collect();
        img.row_mut(i)
            .copy_from_slice(l2_normalize(&shifted_i)?.as_slice());
        txt.row_mut(i)
            .copy_from_slice(l2_normalize(&shifted_t)?.as_slice());
    }
    PairedEmbeddings::new(
        EmbeddingBatch::from_unit_mat(img)?,
        EmbeddingBatch::from_unit_mat(txt)?,
    )
}

/// Does the diagonal entry of query `i` rank among the top k of its
/// candidate list? Ties resolve to the lower index.
fn diagonal_in_top_k(candidates: impl Iterator<Item = f64>, i: usize, k: usize) -> bool {
    let cands: Vec<f64> = candidates.collect();
    let own = cands[i];
    let mut rank = 0usize;
    for (j, &v) in cands.iter().enumerate() {
        if j == i {
            continue;
        }
        if v > own || (v == own && j < i) {
            rank += 1;
        }
    }
    rank < k
}

/// Fraction of queries whose paired (diagonal) item ranks in the top k.
pub fn recall_at_k(s: &Mat, k: usize, direction: Direction) -> Result<RecallReport> {
    let m = s.rows();
    if s.cols() != m {
        return Err(Error::ShapeMismatch {
            m_a: s.rows(),
            d_a: s.cols(),
            m_b: m,
            d_b: m,
        });
    }
    if k == 0 || k > m {
        return Err(Error::KTooLarge { k, m });
    }
    let mut hits = 0usize;
    for i in 0..m {
        let hit = match direction {
            Direction::ImageToText => diagonal_in_top_k(s.row(i).iter().copied(), i, k),
            Direction::TextToImage => diagonal_in_top_k((0..m).map(|r| s[(r, i)]), i, k),
        };
        if hit {
            hits += 1;
        }
    }
    Ok(RecallReport {
        direction,
        k,
        recall: hits as f64 / m as f64,
        n_queries: m,
    })
}

/// Max-softmax confidence and correctness per retrieval query.
pub fn retrieval_confidences(
    s: &Mat,
    tau: f64,
    direction: Direction,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if tau <= 0.0 {
        return Err(Error::OutOfRange {
            what: "temperature",
            value: tau,
        });
    }
    let m = s.rows();
    if s.cols() != m {
        return Err(Error::ShapeMismatch {
            m_a: s.rows(),
            d_a: s.cols(),
            m_b: m,
            d_b: m,
        });
    }
    let mut confs = Vec::with_capacity(m);
    let mut correct = Vec::with_capacity(m);
    for i in 0..m {
        let logits: Vec<f64> = match direction {
            Direction::ImageToText => s.row(i).iter().map(|v| v / tau).collect(),
            Direction::TextToImage => (0..m).map(|r| s[(r, i)] / tau).collect(),
        };
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| libm::exp(z - max)).collect();
        let sum: f64 = exps.iter().sum();
        let mut argmax = 0usize;
        let mut best = exps[0];
        for (j, &e) in exps.iter().enumerate().skip(1) {
            if e > best {
                best = e;
                argmax = j;
            }
        }
        confs.push(best / sum);
        correct.push(argmax == i);
    }
    Ok((confs, correct))
}

/// Expected calibration error over equal-width confidence bins on [0, 1].
///
/// Interval b is (b/n, (b+1)/n], with confidence 0 assigned to the first bin.
pub fn ece(confidence: &[f64], correct: &[bool], n_bins: usize) -> Result<EceReport> {
    if n_bins == 0 {
        return Err(Error::OutOfRange {
            what: "n_bins",
            value: 0.0,
        });
    }
    if confidence.is_empty() || confidence.len() != correct.len() {
        return Err(Error::BatchTooSmall {
            min: 1,
            got: confidence.len(),
        });
    }
    for &c in confidence {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::OutOfRange {
                what: "confidence",
                value: c,
            });
        }
    }
    let n = confidence.len();
    let mut count = alloc::vec![0usize; n_bins];
    let mut conf_sum = alloc::vec![0.0; n_bins];
    let mut acc_sum = alloc::vec![0.0; n_bins];
    for (c, ok) in confidence.iter().zip(correct) {
        let b = if *c <= 0.0 {
            0
        } else {
            (libm::ceil(c * n_bins as f64) as usize).saturating_sub(1).min(n_bins - 1)
        };
        count[b] += 1;
        conf_sum[b] += c;
        acc_sum[b] += if *ok { 1.0 } else { 0.0 };
    }
    let mut bins = Vec::with_capacity(n_bins);
    let mut ece_val = 0.0;
    for b in 0..n_bins {
        let (mean_conf, mean_acc) = if count[b] > 0 {
            (conf_sum[b] / count[b] as f64, acc_sum[b] / count[b] as f64)
        } else {
            (0.0, 0.0)
        };
        if count[b] > 0 {
            ece_val += count[b] as f64 / n as f64 * libm::fabs(mean_acc - mean_conf);
        }
        bins.push(EceBin {
            bin_lo: b as f64 / n_bins as f64,
            bin_hi: (b + 1) as f64 / n_bins as f64,
            count: count[b],
            mean_conf,
            mean_acc,
        });
    }
    Ok(EceReport {
        n_bins,
        bins,
        ece: ece_val,
        n_queries: n,
    })
}

/// Fraction of ordered in-batch negatives (i, j), j != i, whose similarity to
/// a mixed row exceeds the positive pair's similarity; image and text side.
pub fn hard_negative_proportion(
    p: &PairedEmbeddings,
    mixed: &EmbeddingBatch,
) -> Result<(f64, f64)> {
    check_same_shape(&p.image, mixed)?;
    let m = p.len();
    if m < 2 {
        return Err(Error::BatchTooSmall { min: 2, got: m });
    }
    let mut img_hard = 0usize;
    let mut txt_hard = 0usize;
    for i in 0..m {
        let pos_img = dot(p.image.row(i), p.text.row(i));
        let pos_txt = dot(p.text.row(i), p.image.row(i));
        for j in 0..m {
            if j == i {
                continue;
            }
            if dot(p.image.row(i), mixed.row(j)) > pos_img {
                img_hard += 1;
            }
            if dot(p.text.row(i), mixed.row(j)) > pos_txt {
                txt_hard += 1;
            }
        }
    }
    let total = (m * (m - 1)) as f64;
    Ok((img_hard as f64 / total, txt_hard as f64 / total))
}

/// Text-driven embedding arithmetic: x = I + strength * (T_target - T_source),
/// then nearest gallery row by cosine similarity (ties to lowest index).
pub fn simat_transform(
    i_source: &UnitVector,
    t_source: &UnitVector,
    t_target: &UnitVector,
    strength: f64,
    gallery: &EmbeddingBatch,
) -> Result<(Vec<f64>, usize)> {
    let d = i_source.dim();
    if t_source.dim() != d || t_target.dim() != d || gallery.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: gallery.dim(),
        });
    }
    let x: Vec<f64> = (0..d)
        .map(|k| {
            i_source.as_slice()[k]
                + strength * (t_target.as_slice()[k] - t_source.as_slice()[k])
        })
        .collect();
    let xu = l2_normalize(&x)?;
    let mut best = f64::NEG_INFINITY;
    let mut top = 0usize;
    for g in 0..gallery.len() {
        let s = dot(xu.as_slice(), gallery.row(g));
        if s > best {
            best = s;
            top = g;
        }
    }
    Ok((x, top))
}
