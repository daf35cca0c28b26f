//! Brute-force reference implementations of the metrics, written from the
//! textbook definitions without sharing code with the library.

#![allow(dead_code)]

use privshield_core::metrics::{cosine_similarity, lda_score, mean_mcc, psnr};
use privshield_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

/// Per-attribute MCC by explicit counting.
pub fn mcc_oracle(pred: &[Vec<bool>], truth: &[Vec<bool>], attr: usize) -> f64 {
    let mut c = [[0u64; 2]; 2];
    for (p, t) in pred.iter().zip(truth) {
        c[p[attr] as usize][t[attr] as usize] += 1;
    }
    let tp = c[1][1] as f64;
    let tn = c[0][0] as f64;
    let fp = c[1][0] as f64;
    let fn_ = c[0][1] as f64;
    let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    if factors.iter().any(|&f| f == 0.0) {
        return 0.0;
    }
    (tp * tn - fp * fn_) / factors.iter().product::<f64>().sqrt()
}

pub fn cosine_oracle(u: &[f64], v: &[f64]) -> f64 {
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    u.iter().zip(v).map(|(a, b)| (a / nu) * (b / nv)).sum()
}

pub fn psnr_oracle(x: &[f64], y: &[f64]) -> f64 {
    let mse = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    if mse < 1e-10 {
        100.0
    } else {
        (-10.0 * mse.log10()).min(100.0)
    }
}

/// `(s_w, s_b, score)` with class statistics gathered per class in turn.
pub fn lda_oracle(features: &[Vec<f64>], labels: &[usize]) -> (f64, f64, f64) {
    let n = features.len() as f64;
    let d = features[0].len();
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let global: Vec<f64> =
        (0..d).map(|j| features.iter().map(|f| f[j]).sum::<f64>() / n).collect();
    let (mut s_w, mut s_b) = (0.0, 0.0);
    for &c in &classes {
        let members: Vec<&Vec<f64>> =
            features.iter().zip(labels).filter(|(_, &l)| l == c).map(|(f, _)| f).collect();
        let m = members.len() as f64;
        let mu: Vec<f64> = (0..d).map(|j| members.iter().map(|f| f[j]).sum::<f64>() / m).collect();
        for f in &members {
            s_w += f.iter().zip(&mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        s_b += m * mu.iter().zip(&global).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    s_w /= n;
    s_b /= n;
    let score = if s_b == 0.0 { 0.0 } else { s_b / s_w };
    (s_w, s_b, score)
}

/// Largest relative deviation per metric over `trials` random inputs.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleReport {
    pub mcc: f64,
    pub cosine: f64,
    pub psnr: f64,
    pub lda: f64,
}

impl OracleReport {
    pub fn worst(&self) -> f64 {
        self.mcc.max(self.cosine).max(self.psnr).max(self.lda)
    }
}

pub fn run_oracles(trials: usize, seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = OracleReport::default();
    for _ in 0..trials {
        // mean_mcc against per-attribute counting
        let n = rng.gen_range(1..60);
        let k = rng.gen_range(1..6);
        let scores: Vec<f64> = (0..n * k).map(|_| rng.gen()).collect();
        let bias: f64 = rng.gen();
        let labels: Vec<f64> = (0..n * k).map(|_| f64::from(rng.gen_bool(bias))).collect();
        let pred: Vec<Vec<bool>> =
            (0..n).map(|i| (0..k).map(|j| scores[i * k + j] >= 0.5).collect()).collect();
        let truth: Vec<Vec<bool>> =
            (0..n).map(|i| (0..k).map(|j| labels[i * k + j] >= 0.5).collect()).collect();
        let st = Tensor::from_vec(&[n, k], scores).unwrap();
        let lt = Tensor::from_vec(&[n, k], labels).unwrap();
        let (mean, per) = mean_mcc(&st, &lt, 0.5).unwrap();
        let oracle: Vec<f64> = (0..k).map(|j| mcc_oracle(&pred, &truth, j)).collect();
        for (a, b) in per.iter().zip(&oracle) {
            rep.mcc = rep.mcc.max(rel_err(*a, *b));
        }
        rep.mcc = rep.mcc.max(rel_err(mean, oracle.iter().sum::<f64>() / k as f64));

        let d = rng.gen_range(1..40);
        let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        rep.cosine = rep.cosine.max(rel_err(cosine_similarity(&u, &v).value, cosine_oracle(&u, &v)));

        let (c, h, w) = (rng.gen_range(1..4), rng.gen_range(2..12), rng.gen_range(2..12));
        let len = c * h * w;
        let x: Vec<f64> = (0..len).map(|_| rng.gen()).collect();
        let noise: f64 = 10f64.powf(rng.gen_range(-6.0..0.0));
        let y: Vec<f64> = x.iter().map(|&a| (a + noise * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0)).collect();
        let xt = Tensor::from_vec(&[1, c, h, w], x.clone()).unwrap();
        let yt = Tensor::from_vec(&[1, c, h, w], y.clone()).unwrap();
        rep.psnr = rep.psnr.max(rel_err(psnr(&xt, &yt).unwrap(), psnr_oracle(&x, &y)));

        let classes = rng.gen_range(2..6);
        let n = rng.gen_range(classes..40);
        let d = rng.gen_range(1..10);
        let labels: Vec<usize> =
            (0..n).map(|i| if i < classes { i } else { rng.gen_range(0..classes) }).collect();
        let feats: Vec<Vec<f64>> =
            (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let ft = Tensor::from_vec(&[n, d], feats.concat()).unwrap();
        let got = lda_score(&ft, &labels).unwrap();
        let (s_w, s_b, score) = lda_oracle(&feats, &labels);
        rep.lda = rep
            .lda
            .max(rel_err(got.s_w, s_w))
            .max(rel_err(got.s_b, s_b))
            .max(rel_err(got.score, score));
    }
    rep
}
