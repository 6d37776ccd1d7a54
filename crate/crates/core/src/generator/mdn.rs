//! Mixture density output: a Bernoulli pen-lift plus `M` bivariate Gaussians.
//!
//! Raw layout: `[ê | π̂(M) | μx(M) | μy(M) | σ̂x(M) | σ̂y(M) | ρ̂(M)]`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::nn::{sigmoid, softplus};
use crate::stroke::OffsetPoint;
use crate::{Error, Result};

/// Default mixture size.
pub const MIXTURES: usize = 20;

/// Correlations are kept at most this far from ±1.
pub const RHO_LIMIT: f64 = 1.0 - 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub const fn raw_size(mixtures: usize) -> usize {
    1 + 6 * mixtures
}

#[derive(Clone, Debug, PartialEq)]
pub struct MdnParams {
    pub e: f64,
    pub pi: Vec<f64>,
    pub mu_x: Vec<f64>,
    pub mu_y: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub sigma_y: Vec<f64>,
    pub rho: Vec<f64>,
}

impl MdnParams {
    pub fn mixtures(&self) -> usize {
        self.pi.len()
    }

    /// A single Gaussian component.
    pub fn single(e: f64, mu: (f64, f64), sigma: (f64, f64), rho: f64) -> Self {
        Self {
            e,
            pi: vec![1.0],
            mu_x: vec![mu.0],
            mu_y: vec![mu.1],
            sigma_x: vec![sigma.0],
            sigma_y: vec![sigma.1],
            rho: vec![rho],
        }
    }

    fn log_pi(&self) -> Vec<f64> {
        self.pi.iter().map(|p| p.ln()).collect()
    }
}

fn check_len(raw: &[f64], mixtures: usize) -> Result<()> {
    if mixtures == 0 || raw.len() != raw_size(mixtures) {
        return Err(Error::Shape(format!(
            "mixture output needs {} values for M = {mixtures}, got {}",
            raw_size(mixtures),
            raw.len()
        )));
    }
    Ok(())
}

fn softmax(logits: impl Iterator<Item = f64>) -> Vec<f64> {
    let v: Vec<f64> = logits.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = ex.iter().sum();
    ex.into_iter().map(|x| x / s).collect()
}

fn clamp_rho(r: f64) -> f64 {
    r.clamp(-RHO_LIMIT, RHO_LIMIT)
}

/// Squashes a raw output vector into distribution parameters.
pub fn mdn_split(raw: &[f64], mixtures: usize) -> Result<MdnParams> {
    apply_bias(raw, mixtures, 0.0)
}

/// Sharpened parameters: `σ = exp(σ̂ − b)`, `π = softmax(π̂·(1 + b))`.
pub fn apply_bias(raw: &[f64], mixtures: usize, bias: f64) -> Result<MdnParams> {
    check_len(raw, mixtures)?;
    if !(bias >= 0.0) {
        return Err(Error::InvalidConfig(format!("sampling bias must be >= 0, got {bias}")));
    }
    let m = mixtures;
    let seg = |k: usize| &raw[1 + k * m..1 + (k + 1) * m];
    Ok(MdnParams {
        e: sigmoid(raw[0]),
        pi: softmax(seg(0).iter().map(|&v| v * (1.0 + bias))),
        mu_x: seg(1).to_vec(),
        mu_y: seg(2).to_vec(),
        sigma_x: seg(3).iter().map(|&v| (v - bias).exp()).collect(),
        sigma_y: seg(4).iter().map(|&v| (v - bias).exp()).collect(),
        rho: seg(5).iter().map(|&v| clamp_rho(v.tanh())).collect(),
    })
}

struct Standardized {
    zx: f64,
    zy: f64,
    q: f64,
    log_n: f64,
}

fn standardize(p: &MdnParams, j: usize, dx: f64, dy: f64) -> Standardized {
    let (sx, sy, r) = (p.sigma_x[j], p.sigma_y[j], p.rho[j]);
    let zx = (dx - p.mu_x[j]) / sx;
    let zy = (dy - p.mu_y[j]) / sy;
    let q = 1.0 - r * r;
    let z = zx * zx + zy * zy - 2.0 * r * zx * zy;
    let log_n = -LN_2PI - sx.ln() - sy.ln() - 0.5 * q.ln() - z / (2.0 * q);
    Standardized { zx, zy, q, log_n }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Negative log-likelihood of one target point.
pub fn mdn_nll(p: &MdnParams, target: &OffsetPoint) -> f64 {
    let log_pi = p.log_pi();
    let terms: Vec<f64> = (0..p.mixtures())
        .map(|j| log_pi[j] + standardize(p, j, target.dx, target.dy).log_n)
        .collect();
    let bern = if target.eos { p.e.ln() } else { (1.0 - p.e).ln() };
    -log_sum_exp(&terms) - bern
}

/// NLL and its gradient with respect to the raw output vector.
pub fn mdn_nll_grad(raw: &[f64], mixtures: usize, target: &OffsetPoint) -> Result<(f64, Vec<f64>)> {
    let p = mdn_split(raw, mixtures)?;
    let m = mixtures;
    let log_pi = p.log_pi();
    let st: Vec<Standardized> = (0..m)
        .map(|j| standardize(&p, j, target.dx, target.dy))
        .collect();
    let terms: Vec<f64> = (0..m).map(|j| log_pi[j] + st[j].log_n).collect();
    let lse = log_sum_exp(&terms);
    // Bernoulli term from the logit directly, so saturation cannot produce ln 0.
    let bern = if target.eos { softplus(-raw[0]) } else { softplus(raw[0]) };
    let nll = bern - lse;

    let mut g = vec![0.0; raw.len()];
    g[0] = p.e - if target.eos { 1.0 } else { 0.0 };
    for j in 0..m {
        let gamma = (terms[j] - lse).exp();
        let Standardized { zx, zy, q, .. } = st[j];
        let r = p.rho[j];
        let (sx, sy) = (p.sigma_x[j], p.sigma_y[j]);
        let z = zx * zx + zy * zy - 2.0 * r * zx * zy;
        g[1 + j] = p.pi[j] - gamma;
        g[1 + m + j] = -gamma * (zx - r * zy) / (sx * q);
        g[1 + 2 * m + j] = -gamma * (zy - r * zx) / (sy * q);
        g[1 + 3 * m + j] = -gamma * (-1.0 + zx * (zx - r * zy) / q);
        g[1 + 4 * m + j] = -gamma * (-1.0 + zy * (zy - r * zx) / q);
        let t = raw[1 + 5 * m + j].tanh();
        if t.abs() < RHO_LIMIT {
            let dlogn_drho = r / q + zx * zy / q - r * z / (q * q);
            g[1 + 5 * m + j] = -gamma * dlogn_drho * (1.0 - t * t);
        }
    }
    Ok((nll, g))
}

/// Draws the next offset point: a component, then the Gaussian, then the
/// pen-lift flag.
pub fn sample_next<R: Rng + ?Sized>(p: &MdnParams, rng: &mut R) -> OffsetPoint {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut j = p.mixtures() - 1;
    for (k, &pk) in p.pi.iter().enumerate() {
        acc += pk;
        if u < acc {
            j = k;
            break;
        }
    }
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let r = p.rho[j];
    let dx = p.mu_x[j] + p.sigma_x[j] * z1;
    let dy = p.mu_y[j] + p.sigma_y[j] * (r * z1 + (1.0 - r * r).sqrt() * z2);
    let eos = rng.random::<f64>() < p.e;
    OffsetPoint::new(dx, dy, eos)
}
