//! Utility and privacy metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::HyperParams;
use crate::nets::{private_features, Model};
use crate::real::Real;
use crate::tensor::Tensor;

/// Confusion counts for one binary attribute.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

/// Per-attribute confusion counts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub rows: Vec<Confusion>,
}

impl ConfusionTable {
    /// Thresholds `scores` (`[n, k]`, in `[0, 1]`) at `threshold`; a score at
    /// or above it predicts 1.
    pub fn from_scores<T: Real>(scores: &Tensor<T>, labels: &Tensor<T>, threshold: f64) -> Result<Self> {
        if scores.sample_len() != labels.sample_len() {
            return Err(Error::Arity {
                context: "prediction arity",
                expected: labels.sample_len(),
                found: scores.sample_len(),
            });
        }
        scores.expect_same_shape("predictions", labels)?;
        let k = scores.sample_len();
        let mut rows = vec![Confusion::default(); k];
        for i in 0..scores.batch() {
            for (j, row) in rows.iter_mut().enumerate() {
                let p = scores.sample(i)[j].as_f64() >= threshold;
                let a = labels.sample(i)[j].as_f64() >= 0.5;
                row.record(p, a);
            }
        }
        Ok(ConfusionTable { rows })
    }
}

/// Matthews correlation coefficient; 0 when any marginal is empty.
pub fn mcc(t: &Confusion) -> f64 {
    let (tp, tn, fp, fn_) = (t.tp as f64, t.tn as f64, t.fp as f64, t.fn_ as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0.0 {
        return 0.0;
    }
    (tp * tn - fp * fn_) / libm::sqrt(den)
}

/// Mean of per-attribute MCC after thresholding, plus the per-attribute values.
pub fn mean_mcc<T: Real>(
    scores: &Tensor<T>,
    labels: &Tensor<T>,
    threshold: f64,
) -> Result<(f64, Vec<f64>)> {
    let table = ConfusionTable::from_scores(scores, labels, threshold)?;
    let per: Vec<f64> = table.rows.iter().map(mcc).collect();
    if per.is_empty() {
        return Err(Error::Empty("attribute set"));
    }
    Ok((per.iter().sum::<f64>() / per.len() as f64, per))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cosine {
    pub value: f64,
    /// Set when either vector is zero; `value` is then 0.
    pub degenerate: bool,
}

pub fn cosine_similarity<T: Real>(u: &[T], v: &[T]) -> Cosine {
    let mut uv = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a.as_f64(), b.as_f64());
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Cosine { value: 0.0, degenerate: true };
    }
    let c = uv / (libm::sqrt(uu) * libm::sqrt(vv));
    Cosine { value: c.clamp(-1.0, 1.0), degenerate: false }
}

/// Mean row-wise cosine similarity and the number of degenerate rows.
pub fn mean_cosine<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(f64, usize)> {
    a.expect_same_shape("cosine rows", b)?;
    if a.batch() == 0 {
        return Err(Error::Empty("cosine batch"));
    }
    let mut sum = 0.0;
    let mut degenerate = 0;
    for i in 0..a.batch() {
        let c = cosine_similarity(a.sample(i), b.sample(i));
        sum += c.value;
        degenerate += usize::from(c.degenerate);
    }
    Ok((sum / a.batch() as f64, degenerate))
}

/// Mean cosine similarity of C's features between originals and reconstructions.
pub fn face_similarity<T: Real>(
    x: &Tensor<T>,
    xhat: &Tensor<T>,
    c: &Model<T>,
    tap: &str,
) -> Result<f64> {
    x.expect_same_shape("face similarity", xhat)?;
    let fx = private_features(c, x, tap)?;
    let fy = private_features(c, xhat, tap)?;
    Ok(mean_cosine(&fx, &fy)?.0)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const PSNR_CAP_DB: f64 = 100.0;
pub const PSNR_MSE_FLOOR: f64 = 1e-10;

/// Normalized 1-D Gaussian of odd length `size`.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" Gaussian filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|j| win[j] * plane[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|j| win[j] * rows[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// SSIM of one `[c, h, w]` image pair with an 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03 and dynamic range 1, averaged over
/// windows and channels. Images smaller than the window use the largest odd
/// window that fits.
pub fn ssim_image<T: Real>(a: &[T], b: &[T], shape: [usize; 3]) -> f64 {
    let [c, h, w] = shape;
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let win = gaussian_window(size, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let plane = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let x: Vec<f64> = a[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let y: Vec<f64> = b[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, h, w, &win);
        let my = filter_valid(&y, h, w, &win);
        let sxx = filter_valid(&xx, h, w, &win);
        let syy = filter_valid(&yy, h, w, &win);
        let sxy = filter_valid(&xy, h, w, &win);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    total / c as f64
}

/// PSNR in dB of one image pair with peak value 1, capped at 100 dB.
pub fn psnr_image<T: Real>(a: &[T], b: &[T]) -> f64 {
    let mse = a
        .iter()
        .zip(b)
        .map(|(&p, &q)| {
            let d = p.as_f64() - q.as_f64();
            d * d
        })
        .sum::<f64>()
        / a.len().max(1) as f64;
    psnr_from_mse(mse)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < PSNR_MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        (10.0 * libm::log10(1.0 / mse)).min(PSNR_CAP_DB)
    }
}

/// Batch-mean SSIM over `[n, c, h, w]` tensors.
pub fn ssim<T: Real>(x: &Tensor<T>, xhat: &Tensor<T>) -> Result<f64> {
    let shape = image_shape(x, xhat, "ssim")?;
    let n = x.batch();
    Ok((0..n).map(|i| ssim_image(x.sample(i), xhat.sample(i), shape)).sum::<f64>() / n as f64)
}

/// Batch-mean PSNR over `[n, c, h, w]` tensors.
pub fn psnr<T: Real>(x: &Tensor<T>, xhat: &Tensor<T>) -> Result<f64> {
    image_shape(x, xhat, "psnr")?;
    let n = x.batch();
    Ok((0..n).map(|i| psnr_image(x.sample(i), xhat.sample(i))).sum::<f64>() / n as f64)
}

fn image_shape<T: Real>(x: &Tensor<T>, y: &Tensor<T>, context: &'static str) -> Result<[usize; 3]> {
    x.expect_same_shape(context, y)?;
    match x.shape() {
        &[n, c, h, w] if n > 0 => Ok([c, h, w]),
        _ => Err(Error::Shape { context, expected: vec![0, 0, 0, 0], found: x.shape().to_vec() }),
    }
}

/// Within/between identity scatter of a feature set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaScore {
    pub s_w: f64,
    pub s_b: f64,
    /// `s_b / s_w`; 0 when `s_b = 0`, infinite when only `s_w = 0`.
    pub score: f64,
    pub unbounded: bool,
}

/// `s_w = (1/N) Σ_c Σ_{i∈c} ||z_i - μ_c||²`, `s_b = (1/N) Σ_c N_c ||μ_c - μ||²`.
pub fn lda_score<T: Real>(features: &Tensor<T>, labels: &[usize]) -> Result<LdaScore> {
    let n = features.batch();
    if labels.len() != n {
        return Err(Error::Arity { context: "identity labels", expected: n, found: labels.len() });
    }
    let d = features.sample_len();
    let classes = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
    let mut counts = vec![0usize; classes];
    let mut means = vec![0.0f64; classes * d];
    let mut mean = vec![0.0f64; d];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (j, v) in features.sample(i).iter().enumerate() {
            means[l * d + j] += v.as_f64();
            mean[j] += v.as_f64();
        }
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::TooFewClasses(present));
    }
    for (c, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            means[c * d..(c + 1) * d].iter_mut().for_each(|m| *m /= cnt as f64);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut s_w = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        for (j, v) in features.sample(i).iter().enumerate() {
            let e = v.as_f64() - means[l * d + j];
            s_w += e * e;
        }
    }
    let mut s_b = 0.0;
    for (c, &cnt) in counts.iter().enumerate() {
        let dist: f64 = (0..d).map(|j| { let e = means[c * d + j] - mean[j]; e * e }).sum();
        s_b += cnt as f64 * dist;
    }
    s_w /= n as f64;
    s_b /= n as f64;
    let (score, unbounded) = if s_b == 0.0 {
        (0.0, false)
    } else if s_w == 0.0 {
        (f64::INFINITY, true)
    } else {
        (s_b / s_w, false)
    };
    Ok(LdaScore { s_w, s_b, score, unbounded })
}

/// Projection onto the top two principal components.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub coords: Vec<[f64; 2]>,
    /// Variance along each component.
    pub variance: [f64; 2],
}

/// Top-2 principal-component projection of `[n, d]` features. Each axis is
/// signed so its largest-magnitude coordinate is positive.
pub fn project_2d<T: Real>(features: &Tensor<T>) -> Result<Projection> {
    let n = features.batch();
    if n < 2 {
        return Err(Error::InvalidConfig(format!("projection needs two or more samples, got {n}")));
    }
    let d = features.sample_len();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(features.sample(i)) {
            *m += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|i| features.sample(i).iter().zip(&mean).map(|(v, m)| v.as_f64() - m).collect())
        .collect();
    // covariance-vector product without forming the d x d matrix
    let cov_mul = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for row in &x {
            let s: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            for (o, r) in out.iter_mut().zip(row) {
                *o += s * r;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        out
    };
    let dims = d.min(2);
    let mut basis: Vec<Vec<f64>> = (0..dims)
        .map(|k| (0..d).map(|j| 1.0 + ((j * (k + 3) * 7919) % 101) as f64 / 101.0).collect())
        .collect();
    orthonormalize(&mut basis);
    for _ in 0..1000 {
        let mut next: Vec<Vec<f64>> = basis.iter().map(|b| cov_mul(b)).collect();
        orthonormalize(&mut next);
        let delta: f64 = next
            .iter()
            .zip(&basis)
            .map(|(a, b)| {
                let c: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
                1.0 - c.abs()
            })
            .sum();
        basis = next;
        if delta < 1e-14 {
            break;
        }
    }
    // Rayleigh-Ritz inside the 2-D subspace to order and align the axes.
    if dims == 2 {
        let cb: Vec<Vec<f64>> = basis.iter().map(|b| cov_mul(b)).collect();
        let ip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let (a, b, c) = (ip(&basis[0], &cb[0]), ip(&basis[0], &cb[1]), ip(&basis[1], &cb[1]));
        let theta = 0.5 * libm::atan2(2.0 * b, a - c);
        let (cs, sn) = (libm::cos(theta), libm::sin(theta));
        let u0: Vec<f64> = basis[0].iter().zip(&basis[1]).map(|(p, q)| cs * p + sn * q).collect();
        let u1: Vec<f64> = basis[0].iter().zip(&basis[1]).map(|(p, q)| -sn * p + cs * q).collect();
        basis = vec![u0, u1];
    }
    let mut coords = vec![[0.0; 2]; n];
    let mut variance = [0.0; 2];
    for (k, b) in basis.iter().enumerate() {
        let proj: Vec<f64> = x.iter().map(|r| r.iter().zip(b).map(|(p, q)| p * q).sum()).collect();
        let lead = proj.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for (c, p) in coords.iter_mut().zip(&proj) {
            c[k] = sign * p;
        }
        variance[k] = proj.iter().map(|p| p * p).sum::<f64>() / n as f64;
    }
    if variance[1] > variance[0] {
        coords.iter_mut().for_each(|c| c.swap(0, 1));
        variance.swap(0, 1);
    }
    Ok(Projection { coords, variance })
}

fn orthonormalize(vs: &mut [Vec<f64>]) {
    for i in 0..vs.len() {
        for j in 0..i {
            let c: f64 = vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum();
            let (head, tail) = vs.split_at_mut(i);
            for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                *a -= c * b;
            }
        }
        let norm = libm::sqrt(vs[i].iter().map(|a| a * a).sum::<f64>());
        if norm > 1e-300 {
            vs[i].iter_mut().for_each(|a| *a /= norm);
        } else {
            // degenerate direction: any unit vector orthogonal to the others
            let d = vs[i].len();
            for e in 0..d {
                let mut cand = vec![0.0; d];
                cand[e] = 1.0;
                for j in 0..i {
                    let c = vs[j][e];
                    for (a, b) in cand.iter_mut().zip(&vs[j]) {
                        *a -= c * b;
                    }
                }
                let nn = libm::sqrt(cand.iter().map(|a| a * a).sum::<f64>());
                if nn > 1e-6 {
                    vs[i] = cand.into_iter().map(|a| a / nn).collect();
                    break;
                }
            }
        }
    }
}

/// Run metadata carried by every report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub label: String,
    pub config_hash: String,
    pub seed: u64,
    pub tap: String,
    pub train_hp: HyperParams,
    pub attack_mu1: f64,
    pub attack_mu2: f64,
    pub train_alternations: usize,
    pub attack_steps: usize,
    pub mapper_steps: usize,
    pub bb_queries: u64,
    /// Split the privacy metrics were measured on.
    pub eval_split: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean_mcc: f64,
    pub per_attribute_mcc: Vec<f64>,
    pub face_sim: f64,
    pub feature_sim: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub s_w: f64,
    pub s_b: f64,
    /// `None` when the score is unbounded (`s_w = 0`, `s_b > 0`).
    pub lda_score: Option<f64>,
    pub meta: RunMeta,
}

impl MetricsReport {
    /// Column order of [`MetricsReport::csv_row`].
    pub const CSV_HEADER: &'static str = "label,mean_mcc,face_sim,feature_sim,ssim,psnr,s_w,s_b,lda_score,\
lambda1,lambda2,mu1,mu2,tap,seed,train_alternations,attack_steps,mapper_steps,config_hash";

    pub fn csv_row(&self) -> String {
        let m = &self.meta;
        let lda = self.lda_score.map(|v| format!("{v}")).unwrap_or_else(|| "inf".into());
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            m.label,
            self.mean_mcc,
            self.face_sim,
            self.feature_sim,
            self.ssim,
            self.psnr,
            self.s_w,
            self.s_b,
            lda,
            m.train_hp.lambda1,
            m.train_hp.lambda2,
            m.attack_mu1,
            m.attack_mu2,
            m.tap,
            m.seed,
            m.train_alternations,
            m.attack_steps,
            m.mapper_steps,
            m.config_hash
        )
    }

    pub fn check_invariants(&self) -> Result<()> {
        let in_unit = |v: f64| (-1.0 - 1e-9..=1.0 + 1e-9).contains(&v);
        let ok = in_unit(self.mean_mcc)
            && self.per_attribute_mcc.iter().all(|&v| in_unit(v))
            && in_unit(self.face_sim)
            && in_unit(self.feature_sim)
            && in_unit(self.ssim)
            && (0.0..=PSNR_CAP_DB).contains(&self.psnr)
            && self.s_w >= 0.0
            && self.s_b >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("metrics out of range: {self:?}")))
        }
    }
}
