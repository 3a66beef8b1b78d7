//! Perplexity-weighted cross-entropy.
//!
//! For every supervised token the clamped perplexity
//! `PPL = min(exp(sqrt(E)), beta)` of its predictive distribution is turned
//! into a weight `1 + alpha * PPL / (mean PPL + eps)`, renormalized to unit
//! mean over the mask. The objective mixes plain cross-entropy with the
//! weighted one: `L = L_ce + lambda * L_pw`.
//!
//! Logits are taken as given; `logits[b][t]` is assumed to predict
//! `labels[b][t]` (any shifting happens upstream). All arithmetic is `f64`
//! with a fixed, sequential reduction order so results are bit-stable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PwceError {
    #[error("mask selects no tokens")]
    EmptyMask,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} at position {position} is outside vocabulary of size {vocab}")]
    LabelOutOfRange { position: usize, label: i64, vocab: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Logits `b×l×V`, labels `b×l` and a supervision mask `b×l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NestedBatch", into = "NestedBatch")]
pub struct TokenBatch {
    batch: usize,
    seq_len: usize,
    vocab: usize,
    logits: Vec<f64>,
    labels: Vec<i64>,
    mask: Vec<bool>,
}

/// JSON shape of a batch fixture: nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct NestedBatch {
    logits: Vec<Vec<Vec<f64>>>,
    labels: Vec<Vec<i64>>,
    mask: Vec<Vec<bool>>,
}

impl TryFrom<NestedBatch> for TokenBatch {
    type Error = PwceError;

    fn try_from(n: NestedBatch) -> Result<Self, PwceError> {
        let batch = n.logits.len();
        let seq_len = n.logits.first().map_or(0, Vec::len);
        let vocab = n.logits.first().and_then(|s| s.first()).map_or(0, Vec::len);
        let mut logits = Vec::with_capacity(batch * seq_len * vocab);
        for (b, seq) in n.logits.iter().enumerate() {
            if seq.len() != seq_len {
                return Err(PwceError::ShapeMismatch(format!(
                    "logits[{b}] has {} positions, expected {seq_len}",
                    seq.len()
                )));
            }
            for (t, row) in seq.iter().enumerate() {
                if row.len() != vocab {
                    return Err(PwceError::ShapeMismatch(format!(
                        "logits[{b}][{t}] has {} entries, expected {vocab}",
                        row.len()
                    )));
                }
                logits.extend_from_slice(row);
            }
        }
        let flatten = |rows: &[Vec<i64>]| rows.concat();
        if n.labels.len() != batch || n.labels.iter().any(|r| r.len() != seq_len) {
            return Err(PwceError::ShapeMismatch("labels must be b×l".into()));
        }
        if n.mask.len() != batch || n.mask.iter().any(|r| r.len() != seq_len) {
            return Err(PwceError::ShapeMismatch("mask must be b×l".into()));
        }
        TokenBatch::new(batch, seq_len, vocab, logits, flatten(&n.labels), n.mask.concat())
    }
}

impl From<TokenBatch> for NestedBatch {
    fn from(b: TokenBatch) -> Self {
        let (l, v) = (b.seq_len, b.vocab);
        NestedBatch {
            logits: (0..b.batch)
                .map(|i| {
                    (0..l)
                        .map(|t| b.logits[(i * l + t) * v..(i * l + t + 1) * v].to_vec())
                        .collect()
                })
                .collect(),
            labels: b.labels.chunks(l.max(1)).map(<[i64]>::to_vec).collect(),
            mask: b.mask.chunks(l.max(1)).map(<[bool]>::to_vec).collect(),
        }
    }
}

impl TokenBatch {
    /// Builds a batch from flat row-major buffers.
    pub fn new(
        batch: usize,
        seq_len: usize,
        vocab: usize,
        logits: Vec<f64>,
        labels: Vec<i64>,
        mask: Vec<bool>,
    ) -> Result<Self, PwceError> {
        let positions = batch * seq_len;
        if vocab == 0 {
            return Err(PwceError::ShapeMismatch("vocabulary is empty".into()));
        }
        if logits.len() != positions * vocab {
            return Err(PwceError::ShapeMismatch(format!(
                "{} logits for {batch}×{seq_len}×{vocab}",
                logits.len()
            )));
        }
        if labels.len() != positions || mask.len() != positions {
            return Err(PwceError::ShapeMismatch(format!(
                "labels/mask must have {positions} entries"
            )));
        }
        if !mask.iter().any(|m| *m) {
            return Err(PwceError::EmptyMask);
        }
        for (i, (&label, &m)) in labels.iter().zip(&mask).enumerate() {
            if m && !(0..vocab as i64).contains(&label) {
                return Err(PwceError::LabelOutOfRange {
                    position: i,
                    label,
                    vocab,
                });
            }
        }
        Ok(Self {
            batch,
            seq_len,
            vocab,
            logits,
            labels,
            mask,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.batch, self.seq_len, self.vocab)
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Flat position indices selected by the mask, in row-major order.
    pub fn masked_positions(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }

    pub fn row(&self, position: usize) -> &[f64] {
        &self.logits[position * self.vocab..(position + 1) * self.vocab]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PwceConfig {
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
    pub lambda: f64,
    /// Treat the weights as constants in the backward pass.
    pub detach_weights: bool,
}

impl Default for PwceConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 1.5,
            eps: 1e-12,
            lambda: 0.09,
            detach_weights: true,
        }
    }
}

impl PwceConfig {
    pub fn validate(&self) -> Result<(), PwceError> {
        if self.beta.is_nan() || self.beta < 1.0 {
            return Err(PwceError::InvalidConfig("beta must be >= 1".into()));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(PwceError::InvalidConfig("eps must be > 0".into()));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(PwceError::InvalidConfig("alpha must be >= 0".into()));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(PwceError::InvalidConfig("lambda must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwceReport {
    pub loss_ce: f64,
    pub loss_pw: f64,
    pub loss_total: f64,
    /// One per masked token, row-major.
    pub weights: Vec<f64>,
    pub perplexities: Vec<f64>,
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(row);
    row.iter().map(|z| (z - lse).exp()).collect()
}

/// `-sum p log(p + eps)`.
pub fn token_entropy(probs: &[f64], eps: f64) -> f64 {
    -probs.iter().map(|p| p * (p + eps).ln()).sum::<f64>()
}

/// `min(exp(sqrt(entropy)), beta)`.
pub fn clamped_perplexity(entropy: f64, beta: f64) -> f64 {
    entropy.max(0.0).sqrt().exp().min(beta)
}

fn token_cross_entropy(row: &[f64], label: usize) -> f64 {
    log_sum_exp(row) - row[label]
}

/// Mean cross-entropy over the masked tokens, without any weighting.
pub fn masked_cross_entropy(batch: &TokenBatch) -> f64 {
    let positions = batch.masked_positions();
    let sum: f64 = positions
        .iter()
        .map(|&p| token_cross_entropy(batch.row(p), batch.labels[p] as usize))
        .sum();
    sum / positions.len() as f64
}

fn perplexities(batch: &TokenBatch, positions: &[usize], cfg: &PwceConfig) -> Vec<f64> {
    positions
        .iter()
        .map(|&p| clamped_perplexity(token_entropy(&softmax(batch.row(p)), cfg.eps), cfg.beta))
        .collect()
}

/// `1 + alpha * PPL_i / (mean PPL + eps)` for each masked token.
pub fn pre_normalization_weights(ppl: &[f64], cfg: &PwceConfig) -> Vec<f64> {
    let mean = ppl.iter().sum::<f64>() / ppl.len() as f64;
    ppl.iter().map(|q| 1.0 + cfg.alpha * q / (mean + cfg.eps)).collect()
}

fn normalize(raw: &[f64]) -> Vec<f64> {
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.iter().map(|r| r / mean).collect()
}

/// Perplexity weights for the masked tokens, normalized to unit mean.
pub fn pwce_weights(batch: &TokenBatch, cfg: &PwceConfig) -> Result<Vec<f64>, PwceError> {
    cfg.validate()?;
    let positions = batch.masked_positions();
    if positions.is_empty() {
        return Err(PwceError::EmptyMask);
    }
    let ppl = perplexities(batch, &positions, cfg);
    Ok(normalize(&pre_normalization_weights(&ppl, cfg)))
}

pub fn pwce_loss(batch: &TokenBatch, cfg: &PwceConfig) -> Result<PwceReport, PwceError> {
    cfg.validate()?;
    let positions = batch.masked_positions();
    if positions.is_empty() {
        return Err(PwceError::EmptyMask);
    }
    let ppl = perplexities(batch, &positions, cfg);
    let weights = normalize(&pre_normalization_weights(&ppl, cfg));
    let m = positions.len() as f64;
    let loss_ce = masked_cross_entropy(batch);
    let loss_pw = positions
        .iter()
        .zip(&weights)
        .map(|(&p, w)| w * token_cross_entropy(batch.row(p), batch.labels[p] as usize))
        .sum::<f64>()
        / m;
    Ok(PwceReport {
        loss_ce,
        loss_pw,
        loss_total: loss_ce + cfg.lambda * loss_pw,
        weights,
        perplexities: ppl,
    })
}

/// Gradient of `loss_total` with respect to every logit (unmasked rows are
/// zero). With `detach_weights` the weights are held constant; otherwise the
/// derivative also flows through perplexities, their mean and the
/// normalization. Clamped perplexities contribute no gradient.
pub fn pwce_gradient(batch: &TokenBatch, cfg: &PwceConfig) -> Result<Vec<f64>, PwceError> {
    cfg.validate()?;
    let positions = batch.masked_positions();
    if positions.is_empty() {
        return Err(PwceError::EmptyMask);
    }
    let v = batch.vocab;
    let m = positions.len() as f64;
    let probs: Vec<Vec<f64>> = positions.iter().map(|&p| softmax(batch.row(p))).collect();
    let entropies: Vec<f64> = probs.iter().map(|p| token_entropy(p, cfg.eps)).collect();
    let ppl: Vec<f64> = entropies.iter().map(|&e| clamped_perplexity(e, cfg.beta)).collect();
    let raw = pre_normalization_weights(&ppl, cfg);
    let weights = normalize(&raw);
    let ce: Vec<f64> = positions
        .iter()
        .map(|&p| token_cross_entropy(batch.row(p), batch.labels[p] as usize))
        .collect();

    let mut grad = vec![0.0; batch.logits.len()];
    // direct term: d CE_i / dz = p - onehot(label)
    for (i, &pos) in positions.iter().enumerate() {
        let scale = (1.0 + cfg.lambda * weights[i]) / m;
        let label = batch.labels[pos] as usize;
        for k in 0..v {
            let onehot = if k == label { 1.0 } else { 0.0 };
            grad[pos * v + k] = scale * (probs[i][k] - onehot);
        }
    }
    if cfg.detach_weights || cfg.alpha == 0.0 || cfg.lambda == 0.0 {
        return Ok(grad);
    }

    // d L_pw / d PPL_j through w_i = u_i / mean(u), u_i = 1 + alpha PPL_i / D
    let mean_ppl = ppl.iter().sum::<f64>() / m;
    let d = mean_ppl + cfg.eps;
    let u_bar = raw.iter().sum::<f64>() / m;
    let c_sum: f64 = ce.iter().zip(&ppl).map(|(c, q)| c * q).sum();
    let s_sum: f64 = ce.iter().zip(&raw).map(|(c, u)| c * u).sum();
    let du_bar = cfg.alpha * cfg.eps / (d * d * m);
    for (j, &pos) in positions.iter().enumerate() {
        let clamped = entropies[j].max(0.0).sqrt().exp() >= cfg.beta;
        if clamped || entropies[j] <= 0.0 {
            continue;
        }
        let sum_ce_du = cfg.alpha * (ce[j] / d - c_sum / (d * d * m));
        let dl_dppl = cfg.lambda / m * (sum_ce_du * u_bar - s_sum * du_bar) / (u_bar * u_bar);
        let sqrt_e = entropies[j].sqrt();
        let dppl_de = sqrt_e.exp() / (2.0 * sqrt_e);
        // dE/dz_k = p_k (g_k - sum_v p_v g_v), g_v = dE/dp_v
        let p = &probs[j];
        let g: Vec<f64> = p.iter().map(|&pv| -(pv + cfg.eps).ln() - pv / (pv + cfg.eps)).collect();
        let pg: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        for k in 0..v {
            grad[pos * v + k] += dl_dppl * dppl_de * p[k] * (g[k] - pg);
        }
    }
    Ok(grad)
}
