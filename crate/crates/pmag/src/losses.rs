//! Training objectives: the shifted-MSE temporal loss with a learnable
//! per-subject offset distribution, the frequency-domain cross-entropy
//! loss over the band-limited PSD, and their weighted combination.
//!
//! Every loss has a companion `*_grads` function returning the analytic
//! gradients actually used by the trainer; these are checked against
//! central finite differences in the test suite.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::signal::{self, FrequencyGrid, HRValue, PulseSignal};

/// Learnable distribution over temporal offsets, one logit vector per
/// subject. Offsets are symmetric around zero and include zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftDistribution {
    offsets: Vec<i64>,
    logits: BTreeMap<String, Vec<f64>>,
}

impl ShiftDistribution {
    /// Offsets `-half_span ..= half_span` (±0.5 s at 30 fps for the
    /// default 15), all logits starting at zero (uniform).
    pub fn new(half_span: usize) -> Self {
        Self {
            offsets: (-(half_span as i64)..=half_span as i64).collect(),
            logits: BTreeMap::new(),
        }
    }

    pub fn offsets(&self) -> &[i64] {
        &self.offsets
    }

    pub fn half_span(&self) -> usize {
        (self.offsets.len() - 1) / 2
    }

    /// Register a subject with uniform (all-zero) logits; no-op if present.
    pub fn register(&mut self, subject: &str) {
        self.logits
            .entry(subject.to_string())
            .or_insert_with(|| vec![0.0; self.offsets.len()]);
    }

    pub fn subjects(&self) -> impl Iterator<Item = &str> {
        self.logits.keys().map(|s| s.as_str())
    }

    pub fn logits(&self, subject: &str) -> Result<&[f64]> {
        self.logits
            .get(subject)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::UnknownSubject(subject.to_string()))
    }

    pub fn logits_mut(&mut self, subject: &str) -> Result<&mut Vec<f64>> {
        self.logits
            .get_mut(subject)
            .ok_or_else(|| Error::UnknownSubject(subject.to_string()))
    }

    /// Softmax of the subject's logits.
    pub fn shift_probabilities(&self, subject: &str) -> Result<Vec<f64>> {
        Ok(softmax(self.logits(subject)?))
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Weights and regularizers shared by the loss functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the frequency term in the combined loss.
    pub lambda: f64,
    pub grid: FrequencyGrid,
    /// Added to every PSD bin before normalization so the cross entropy
    /// stays finite for zero spectra.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            grid: FrequencyGrid::default(),
            epsilon: 1e-8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        self.grid.validate()
    }
}

fn check_talos_inputs(pred: &PulseSignal, gt: &PulseSignal, dist: &ShiftDistribution) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "talos length mismatch: pred {} vs gt {}",
            pred.len(),
            gt.len()
        )));
    }
    let max_k = dist.offsets.iter().map(|k| k.unsigned_abs()).max().unwrap_or(0);
    if max_k as usize >= pred.len() / 4 {
        return Err(Error::Shape(format!(
            "max shift {} too large for signal length {} (need |k| < T/4)",
            max_k,
            pred.len()
        )));
    }
    Ok(())
}

/// Temporal loss: shifted valid-region MSEs weighted by the subject's
/// learned offset probabilities.
pub fn talos_loss(
    pred: &PulseSignal,
    gt: &PulseSignal,
    dist: &ShiftDistribution,
    subject: &str,
) -> Result<f64> {
    check_talos_inputs(pred, gt, dist)?;
    let probs = dist.shift_probabilities(subject)?;
    let mut loss = 0.0;
    for (&k, &p) in dist.offsets.iter().zip(&probs) {
        loss += p * signal::valid_region_mse(pred, gt, k)?;
    }
    Ok(loss)
}

/// Value and gradients of [`talos_loss`] with respect to the predicted
/// samples and the subject's logits.
pub struct TalosGrads {
    pub value: f64,
    pub dpred: Vec<f64>,
    pub dlogits: Vec<f64>,
}

pub fn talos_loss_grads(
    pred: &PulseSignal,
    gt: &PulseSignal,
    dist: &ShiftDistribution,
    subject: &str,
) -> Result<TalosGrads> {
    check_talos_inputs(pred, gt, dist)?;
    let probs = dist.shift_probabilities(subject)?;
    let t = pred.len() as i64;
    let p = pred.samples();
    let g = gt.samples();
    let mut mses = Vec::with_capacity(dist.offsets.len());
    let mut dpred = vec![0.0; pred.len()];
    for (&k, &pk) in dist.offsets.iter().zip(&probs) {
        let n = (t - k.abs()) as usize;
        let (p_off, g_off) = if k >= 0 { (k as usize, 0) } else { (0, (-k) as usize) };
        let mut sum = 0.0;
        for i in 0..n {
            let d = p[p_off + i] - g[g_off + i];
            sum += d * d;
            dpred[p_off + i] += pk * 2.0 * d / n as f64;
        }
        mses.push(sum / n as f64);
    }
    let value: f64 = mses.iter().zip(&probs).map(|(m, pk)| m * pk).sum();
    let dlogits: Vec<f64> = probs
        .iter()
        .zip(&mses)
        .map(|(pk, mk)| pk * (mk - value))
        .collect();
    Ok(TalosGrads {
        value,
        dpred,
        dlogits,
    })
}

fn freq_loss_from_power(power: &[f64], target_bin: usize, epsilon: f64) -> f64 {
    let s: f64 = power.iter().map(|p| p + epsilon).sum();
    -((power[target_bin] + epsilon) / s).ln()
}

/// Frequency loss: cross entropy between the ε-regularized normalized PSD
/// of the prediction and a one-hot target at the ground-truth HR bin.
pub fn freq_loss(pred: &PulseSignal, hr_gt: HRValue, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let target = cfg.grid.nearest_bin(hr_gt.bpm)?;
    let spectrum = signal::power_spectrum(pred, &cfg.grid)?;
    Ok(freq_loss_from_power(&spectrum.power, target, cfg.epsilon))
}

/// Value and gradient of [`freq_loss`] with respect to the predicted
/// samples.
pub fn freq_loss_grads(pred: &PulseSignal, hr_gt: HRValue, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    let target = cfg.grid.nearest_bin(hr_gt.bpm)?;
    let (spectrum, tape) = signal::power_spectrum_tape(pred, &cfg.grid)?;
    let value = freq_loss_from_power(&spectrum.power, target, cfg.epsilon);
    let s: f64 = spectrum.power.iter().map(|p| p + cfg.epsilon).sum();
    let dpower: Vec<f64> = spectrum
        .power
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d = 1.0 / s;
            if i == target {
                d -= 1.0 / (p + cfg.epsilon);
            }
            d
        })
        .collect();
    Ok((value, tape.vjp(&dpower)))
}

/// Combined objective: temporal term plus `lambda` times the frequency
/// term.
pub fn combined_loss(
    pred: &PulseSignal,
    gt: &PulseSignal,
    hr_gt: HRValue,
    dist: &ShiftDistribution,
    subject: &str,
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(talos_loss(pred, gt, dist, subject)? + cfg.lambda * freq_loss(pred, hr_gt, cfg)?)
}

/// Combined loss with the pieces broken out and full gradients.
pub struct CombinedGrads {
    pub value: f64,
    pub temporal: f64,
    pub frequency: f64,
    pub dpred: Vec<f64>,
    pub dlogits: Vec<f64>,
}

pub fn combined_loss_grads(
    pred: &PulseSignal,
    gt: &PulseSignal,
    hr_gt: HRValue,
    dist: &ShiftDistribution,
    subject: &str,
    cfg: &LossConfig,
) -> Result<CombinedGrads> {
    let talos = talos_loss_grads(pred, gt, dist, subject)?;
    let (fval, fgrad) = freq_loss_grads(pred, hr_gt, cfg)?;
    let dpred: Vec<f64> = talos
        .dpred
        .iter()
        .zip(&fgrad)
        .map(|(a, b)| a + cfg.lambda * b)
        .collect();
    Ok(CombinedGrads {
        value: talos.value + cfg.lambda * fval,
        temporal: talos.value,
        frequency: fval,
        dpred,
        dlogits: talos.dlogits,
    })
}
