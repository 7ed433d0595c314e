//! Analytic gradients of the combined objective with respect to the raw
//! embedding rows and the two log-temperatures.
//!
//! The forward pass normalizes each raw row before computing logits, so the
//! reported row gradients include the normalization Jacobian
//! (I - u u^T) / ||x||. Mix ratios are treated as constants.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Mat};
use crate::losses::{
    m2_logits, mix_paired_rows, mix_with_flip, row_softmax, sample_lambdas, sim_matrix,
    uni_mix_logits, vl_logits, MixLossConfig,
};
use crate::metrics::PairedEmbeddings;
use crate::sphere::{MixBranch, ZERO_NORM_EPS};

/// Gradient of the m3-Mix objective at one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub d_image: Mat,
    pub d_text: Mat,
    pub d_log_tau1: f64,
    pub d_log_tau2: f64,
}

struct Acc {
    d_i: Mat,
    d_t: Mat,
    d_log_tau1: f64,
    d_log_tau2: f64,
}

/// Averaged two-orientation softmax cross-entropy gradient:
/// weight * ((P_row - T) + (P_col - T)) / (2M).
fn ce2d_grad(z: &Mat, target: &Mat, weight: f64) -> Mat {
    let m = z.rows();
    let p1 = row_softmax(z);
    let p2 = row_softmax(&z.transpose()).transpose();
    let mut g = Mat::zeros(m, m);
    let c = weight / (2.0 * m as f64);
    for i in 0..m {
        for j in 0..m {
            g[(i, j)] = c * (p1[(i, j)] + p2[(i, j)] - 2.0 * target[(i, j)]);
        }
    }
    g
}

/// One-orientation softmax cross-entropy gradient: weight * (P - T) / M.
fn ce1d_grad(z: &Mat, target: &Mat, weight: f64) -> Mat {
    let m = z.rows();
    let p = row_softmax(z);
    let mut g = Mat::zeros(m, m);
    let c = weight / m as f64;
    for i in 0..m {
        for j in 0..m {
            g[(i, j)] = c * (p[(i, j)] - target[(i, j)]);
        }
    }
    g
}

/// d(loss)/d(log tau) = -sum_ij dL/dz_ij * z_ij, since z = s * exp(-log tau).
fn log_tau_grad(g: &Mat, z: &Mat) -> f64 {
    let mut acc = 0.0;
    for (gv, zv) in g.as_slice().iter().zip(z.as_slice()) {
        acc -= gv * zv;
    }
    acc
}

fn axpy_into(dst: &mut [f64], alpha: f64, x: &[f64]) {
    for (d, v) in dst.iter_mut().zip(x) {
        *d += alpha * v;
    }
}

/// Pull an upstream gradient through one slerp, adding onto the gradients
/// of its two endpoints.
pub(crate) fn slerp_backward(
    lambda: f64,
    a: &[f64],
    b: &[f64],
    branch: &MixBranch,
    g: &[f64],
    da: &mut [f64],
    db: &mut [f64],
) {
    match *branch {
        MixBranch::Geodesic { theta } => {
            let s = libm::sin(theta);
            let c = libm::cos(theta);
            let sa = libm::sin(lambda * theta);
            let sb = libm::sin((1.0 - lambda) * theta);
            let ca = sa / s;
            let cb = sb / s;
            // Derivatives of the two slerp coefficients in theta.
            let dca = (lambda * libm::cos(lambda * theta) * s - sa * c) / (s * s);
            let dcb = ((1.0 - lambda) * libm::cos((1.0 - lambda) * theta) * s - sb * c) / (s * s);
            // g . dm/dtheta, with dtheta/da = -b/s and dtheta/db = -a/s.
            let gw = dca * dot(g, a) + dcb * dot(g, b);
            axpy_into(da, ca, g);
            axpy_into(da, -gw / s, b);
            axpy_into(db, cb, g);
            axpy_into(db, -gw / s, a);
        }
        MixBranch::Linear { pre_norm } => {
            let d = a.len();
            let mut m = vec![0.0; d];
            for k in 0..d {
                m[k] = (lambda * a[k] + (1.0 - lambda) * b[k]) / pre_norm;
            }
            let gm = dot(g, &m);
            for k in 0..d {
                let gy = (g[k] - gm * m[k]) / pre_norm;
                da[k] += lambda * gy;
                db[k] += (1.0 - lambda) * gy;
            }
        }
    }
}

fn clip_backward(i: &Mat, t: &Mat, tau: f64, weight: f64, acc: &mut Acc) {
    let m = i.rows();
    let mut z = sim_matrix(i, t);
    z.scale(1.0 / tau);
    let g = ce2d_grad(&z, &Mat::identity(m), weight);
    acc.d_log_tau1 += log_tau_grad(&g, &z);
    for r in 0..m {
        for c in 0..m {
            let gv = g[(r, c)] / tau;
            axpy_into(acc.d_i.row_mut(r), gv, t.row(c));
            axpy_into(acc.d_t.row_mut(c), gv, i.row(r));
        }
    }
}

fn m2_backward(
    i: &Mat,
    t: &Mat,
    tau2: f64,
    lambda: f64,
    weight: f64,
    acc: &mut Acc,
) -> Result<()> {
    let m = i.rows();
    let mix = mix_paired_rows(lambda, i, t)?;
    let (z_img, z_txt) = m2_logits(i, t, &mix.rows, tau2);
    let id = Mat::identity(m);
    let g_img = ce1d_grad(&z_img, &id, weight / 2.0);
    let g_txt = ce1d_grad(&z_txt, &id, weight / 2.0);
    acc.d_log_tau2 += log_tau_grad(&g_img, &z_img) + log_tau_grad(&g_txt, &z_txt);
    let mut d_mix = Mat::zeros(m, i.cols());
    for r in 0..m {
        for c in 0..m {
            let gi = g_img[(r, c)] / tau2;
            let gt = g_txt[(r, c)] / tau2;
            if r == c {
                axpy_into(acc.d_i.row_mut(r), gi, t.row(c));
                axpy_into(acc.d_t.row_mut(c), gi, i.row(r));
                axpy_into(acc.d_t.row_mut(r), gt, i.row(c));
                axpy_into(acc.d_i.row_mut(c), gt, t.row(r));
            } else {
                axpy_into(d_mix.row_mut(r), gi, t.row(c));
                axpy_into(acc.d_t.row_mut(c), gi, mix.rows.row(r));
                axpy_into(d_mix.row_mut(r), gt, i.row(c));
                axpy_into(acc.d_i.row_mut(c), gt, mix.rows.row(r));
            }
        }
    }
    for r in 0..m {
        let (da, db) = acc.split_i_t(r, r);
        slerp_backward(lambda, i.row(r), t.row(r), &mix.branches[r], d_mix.row(r), da, db);
    }
    Ok(())
}

impl Acc {
    /// Mutable image row `ri` and text row `rt` at once.
    fn split_i_t(&mut self, ri: usize, rt: usize) -> (&mut [f64], &mut [f64]) {
        (self.d_i.row_mut(ri), self.d_t.row_mut(rt))
    }
}

/// Two disjoint mutable rows of one matrix; `a != b` required.
fn two_rows(mat: &mut Mat, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert_ne!(a, b);
    let d = mat.cols();
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let (first, second) = mat.as_mut_slice().split_at_mut(hi * d);
    let lo_row = &mut first[lo * d..(lo + 1) * d];
    let hi_row = &mut second[..d];
    if a < b {
        (lo_row, hi_row)
    } else {
        (hi_row, lo_row)
    }
}

/// Backward pass shared by V-Mix and L-Mix. `a` is the mixed side; its
/// gradient lands in `d_a`, the other side's in `d_b`.
fn uni_mix_backward(
    a: &Mat,
    b: &Mat,
    d_a: &mut Mat,
    d_b: &mut Mat,
    d_log_tau: &mut f64,
    tau: f64,
    lambda: f64,
    weight: f64,
) -> Result<()> {
    let m = a.rows();
    let mix = mix_with_flip(lambda, a)?;
    let (z, target) = uni_mix_logits(a, b, &mix.rows, tau, lambda);
    let g = ce2d_grad(&z, &target, weight);
    *d_log_tau += log_tau_grad(&g, &z);
    let mut d_mix = Mat::zeros(m, a.cols());
    for r in 0..m {
        let rf = m - 1 - r;
        for c in 0..m {
            let gv = g[(r, c)] / tau;
            if c == r || c == rf {
                axpy_into(d_mix.row_mut(r), gv, b.row(c));
                axpy_into(d_b.row_mut(c), gv, mix.rows.row(r));
            } else {
                axpy_into(d_a.row_mut(r), gv, b.row(c));
                axpy_into(d_b.row_mut(c), gv, a.row(r));
            }
        }
    }
    for r in 0..m {
        let rf = m - 1 - r;
        if r == rf {
            // Centre row mixes with itself; route both endpoint gradients
            // into the same row via a scratch pair.
            let d = a.cols();
            let mut da = vec![0.0; d];
            let mut db = vec![0.0; d];
            slerp_backward(lambda, a.row(r), a.row(r), &mix.branches[r], d_mix.row(r), &mut da, &mut db);
            for k in 0..d {
                d_a[(r, k)] += da[k] + db[k];
            }
        } else {
            let (da, db) = two_rows(d_a, r, rf);
            slerp_backward(lambda, a.row(r), a.row(rf), &mix.branches[r], d_mix.row(r), da, db);
        }
    }
    Ok(())
}

fn vl_backward(
    i: &Mat,
    t: &Mat,
    tau: f64,
    lambda: f64,
    weight: f64,
    acc: &mut Acc,
) -> Result<()> {
    let m = i.rows();
    let mix_i = mix_with_flip(lambda, i)?;
    let mix_t = mix_with_flip(lambda, t)?;
    let z = vl_logits(i, t, &mix_i.rows, &mix_t.rows, tau);
    let g = ce2d_grad(&z, &Mat::identity(m), weight);
    acc.d_log_tau1 += log_tau_grad(&g, &z);
    let mut d_mix_i = Mat::zeros(m, i.cols());
    let mut d_mix_t = Mat::zeros(m, i.cols());
    for r in 0..m {
        for c in 0..m {
            let gv = g[(r, c)] / tau;
            if r == c {
                axpy_into(d_mix_i.row_mut(r), gv, mix_t.rows.row(r));
                axpy_into(d_mix_t.row_mut(r), gv, mix_i.rows.row(r));
            } else {
                axpy_into(acc.d_i.row_mut(r), gv, t.row(c));
                axpy_into(acc.d_t.row_mut(c), gv, i.row(r));
            }
        }
    }
    for (side, mixed, d_mixed) in [(0usize, &mix_i, &d_mix_i), (1, &mix_t, &d_mix_t)] {
        let (src, dst) = if side == 0 {
            (i, &mut acc.d_i)
        } else {
            (t, &mut acc.d_t)
        };
        for r in 0..m {
            let rf = m - 1 - r;
            if r == rf {
                let d = src.cols();
                let mut da = vec![0.0; d];
                let mut db = vec![0.0; d];
                slerp_backward(lambda, src.row(r), src.row(r), &mixed.branches[r], d_mixed.row(r), &mut da, &mut db);
                for k in 0..d {
                    dst[(r, k)] += da[k] + db[k];
                }
            } else {
                let (da, db) = two_rows(dst, r, rf);
                slerp_backward(lambda, src.row(r), src.row(rf), &mixed.branches[r], d_mixed.row(r), da, db);
            }
        }
    }
    Ok(())
}

/// Gradient with respect to the *unit* rows (no normalization Jacobian).
pub(crate) fn loss_gradients_unit(
    i: &Mat,
    t: &Mat,
    cfg: &MixLossConfig,
    lambda_m2: f64,
    lambda_uni: f64,
    epoch: usize,
) -> Result<Gradients> {
    let [w_m2, w_v, w_l, w_vl] = cfg.effective_weights(epoch);
    let mut acc = Acc {
        d_i: Mat::zeros(i.rows(), i.cols()),
        d_t: Mat::zeros(t.rows(), t.cols()),
        d_log_tau1: 0.0,
        d_log_tau2: 0.0,
    };
    clip_backward(i, t, cfg.tau1, 1.0, &mut acc);
    if w_m2 > 0.0 {
        if i.rows() < 2 {
            return Err(Error::BatchTooSmall { min: 2, got: i.rows() });
        }
        m2_backward(i, t, cfg.tau2, lambda_m2, w_m2, &mut acc)?;
    }
    if w_v > 0.0 {
        let Acc { d_i, d_t, d_log_tau1, .. } = &mut acc;
        uni_mix_backward(i, t, d_i, d_t, d_log_tau1, cfg.tau1, lambda_uni, w_v)?;
    }
    if w_l > 0.0 {
        let Acc { d_i, d_t, d_log_tau1, .. } = &mut acc;
        uni_mix_backward(t, i, d_t, d_i, d_log_tau1, cfg.tau1, lambda_uni, w_l)?;
    }
    if w_vl > 0.0 {
        vl_backward(i, t, cfg.tau1, lambda_uni, w_vl, &mut acc)?;
    }
    Ok(Gradients {
        d_image: acc.d_i,
        d_text: acc.d_t,
        d_log_tau1: acc.d_log_tau1,
        d_log_tau2: acc.d_log_tau2,
    })
}

/// Normalizes each raw row, evaluates the unit-row gradient, and pulls it
/// back through the normalization.
pub(crate) fn loss_gradients_raw(
    x_img: &Mat,
    x_txt: &Mat,
    cfg: &MixLossConfig,
    lambda_m2: f64,
    lambda_uni: f64,
    epoch: usize,
) -> Result<Gradients> {
    let (u_img, n_img) = normalize_rows(x_img)?;
    let (u_txt, n_txt) = normalize_rows(x_txt)?;
    let mut g = loss_gradients_unit(&u_img, &u_txt, cfg, lambda_m2, lambda_uni, epoch)?;
    pull_back_rows(&mut g.d_image, &u_img, &n_img);
    pull_back_rows(&mut g.d_text, &u_txt, &n_txt);
    Ok(g)
}

fn normalize_rows(x: &Mat) -> Result<(Mat, Vec<f64>)> {
    let mut u = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let n = norm(x.row(r));
        if n < ZERO_NORM_EPS {
            return Err(Error::ZeroVector);
        }
        for v in u.row_mut(r) {
            *v /= n;
        }
        norms.push(n);
    }
    Ok((u, norms))
}

/// In place: g_row <- (g_row - (g_row . u) u) / ||x||.
fn pull_back_rows(g: &mut Mat, u: &Mat, norms: &[f64]) {
    for r in 0..g.rows() {
        let gu = dot(g.row(r), u.row(r));
        let n = norms[r];
        for (gv, uv) in g.row_mut(r).iter_mut().zip(u.row(r)) {
            *gv = (*gv - gu * uv) / n;
        }
    }
}

/// Gradient of [`crate::losses::m3mix_loss`] at `p`, using the same mix
/// ratios the forward pass would draw for this seed and epoch. Row
/// gradients lie in the tangent space of each unit row.
pub fn loss_gradients(
    p: &PairedEmbeddings,
    cfg: &MixLossConfig,
    rng_seed: u64,
    epoch: usize,
) -> Result<Gradients> {
    cfg.validate()?;
    let (l_m2, l_uni) = sample_lambdas(cfg, rng_seed, epoch);
    loss_gradients_raw(p.image.as_mat(), p.text.as_mat(), cfg, l_m2, l_uni, epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::m3_forward;
    use crate::rng::seeded;
    use rand::Rng;

    fn random_raw(m: usize, d: usize, seed: u64) -> (Mat, Mat) {
        let mut rng = seeded(seed);
        let mut fill = |_: usize| {
            let mut x = Mat::zeros(m, d);
            for v in x.as_mut_slice() {
                *v = rng.random::<f64>() * 2.0 - 1.0;
            }
            x
        };
        (fill(0), fill(1))
    }

    fn forward_raw(x_img: &Mat, x_txt: &Mat, cfg: &MixLossConfig, l_m2: f64, l_uni: f64) -> f64 {
        let (u_i, _) = normalize_rows(x_img).unwrap();
        let (u_t, _) = normalize_rows(x_txt).unwrap();
        m3_forward(&u_i, &u_t, cfg, l_m2, l_uni, 0).unwrap().total
    }

    fn check_fd(cfg: &MixLossConfig, m: usize, d: usize, seed: u64, l_m2: f64, l_uni: f64) {
        let (x_img, x_txt) = random_raw(m, d, seed);
        let g = loss_gradients_raw(&x_img, &x_txt, cfg, l_m2, l_uni, 0).unwrap();
        let h = 1e-6;
        let check = |analytic: f64, plus: f64, minus: f64| {
            let fd = (plus - minus) / (2.0 * h);
            let denom = analytic.abs().max(fd.abs()).max(1e-4);
            assert!(
                (analytic - fd).abs() / denom < 2e-4,
                "analytic {analytic} vs fd {fd}"
            );
        };
        for (mat, grad, is_img) in [(&x_img, &g.d_image, true), (&x_txt, &g.d_text, false)] {
            for r in 0..m {
                for c in 0..d {
                    let mut hi = mat.clone();
                    let mut lo = mat.clone();
                    hi[(r, c)] += h;
                    lo[(r, c)] -= h;
                    let (fhi, flo) = if is_img {
                        (
                            forward_raw(&hi, &x_txt, cfg, l_m2, l_uni),
                            forward_raw(&lo, &x_txt, cfg, l_m2, l_uni),
                        )
                    } else {
                        (
                            forward_raw(&x_img, &hi, cfg, l_m2, l_uni),
                            forward_raw(&x_img, &lo, cfg, l_m2, l_uni),
                        )
                    };
                    check(grad[(r, c)], fhi, flo);
                }
            }
        }
        for tau_idx in 0..2 {
            let bump = |delta: f64| {
                let mut c = cfg.clone();
                if tau_idx == 0 {
                    c.tau1 = libm::exp(libm::log(cfg.tau1) + delta);
                } else {
                    c.tau2 = libm::exp(libm::log(cfg.tau2) + delta);
                }
                forward_raw(&x_img, &x_txt, &c, l_m2, l_uni)
            };
            let analytic = if tau_idx == 0 { g.d_log_tau1 } else { g.d_log_tau2 };
            check(analytic, bump(h), bump(-h));
        }
    }

    #[test]
    fn finite_difference_all_terms_even_batch() {
        let cfg = MixLossConfig {
            tau1: 0.3,
            tau2: 0.5,
            w_m2: 0.2,
            w_v: 0.15,
            w_l: 0.1,
            w_vl: 0.25,
            ..Default::default()
        };
        check_fd(&cfg, 4, 5, 101, 0.3, 0.7);
    }

    #[test]
    fn finite_difference_odd_batch_centre_row() {
        let cfg = MixLossConfig {
            tau1: 0.4,
            tau2: 0.4,
            ..Default::default()
        };
        check_fd(&cfg, 5, 3, 202, 0.6, 0.4);
    }

    #[test]
    fn finite_difference_each_mix_term_alone() {
        for term in 0..4 {
            let mut cfg = MixLossConfig {
                tau1: 0.35,
                tau2: 0.45,
                w_m2: 0.0,
                w_v: 0.0,
                w_l: 0.0,
                w_vl: 0.0,
                ..Default::default()
            };
            match term {
                0 => cfg.w_m2 = 0.3,
                1 => cfg.w_v = 0.3,
                2 => cfg.w_l = 0.3,
                _ => cfg.w_vl = 0.3,
            }
            check_fd(&cfg, 4, 4, 300 + term as u64, 0.45, 0.55);
        }
    }

    #[test]
    fn clip_only_low_temperature() {
        let cfg = MixLossConfig {
            tau1: 0.05,
            tau2: 0.05,
            w_m2: 0.0,
            w_v: 0.0,
            w_l: 0.0,
            w_vl: 0.0,
            ..Default::default()
        };
        check_fd(&cfg, 3, 4, 404, 0.5, 0.5);
    }

    #[test]
    fn tangent_gradients_on_unit_rows() {
        use crate::metrics::PairedEmbeddings;
        use crate::sphere::{l2_normalize, EmbeddingBatch};
        let (xi, xt) = random_raw(4, 6, 9);
        let unit = |x: &Mat| {
            EmbeddingBatch::from_rows(
                (0..x.rows()).map(|r| l2_normalize(x.row(r)).unwrap()).collect(),
            )
            .unwrap()
        };
        let p = PairedEmbeddings::new(unit(&xi), unit(&xt)).unwrap();
        let g = loss_gradients(&p, &MixLossConfig::default(), 5, 0).unwrap();
        for r in 0..4 {
            let gi = dot(g.d_image.row(r), p.image.as_mat().row(r));
            let gt = dot(g.d_text.row(r), p.text.as_mat().row(r));
            assert!(gi.abs() < 1e-10 && gt.abs() < 1e-10);
        }
    }
}
