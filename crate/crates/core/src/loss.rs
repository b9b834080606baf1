//! Adaptation objective with analytic gradients w.r.t. the adapter parameters.
//!
//! * labeled neighbor-focal term: `mean α·NP(x)·(−ln δ_y(x))` over queried samples
//! * unlabeled neighbor-focal term: `mean β·(−ln δ_ŷ(x))` over pseudo-labeled samples
//! * entropy term: `mean −Σ_k δ_k ln δ_k`
//! * diversity term: `KL(p̂ ‖ uniform) = Σ_k p̂_k ln(K p̂_k)`, `p̂` the batch-mean prediction
//!
//! Every function returns the loss value together with its gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{leaky_grad, Activations, AdaptModel};

/// A queried sample: ground-truth label plus its frozen query-time purity weight.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSample<'a> {
    pub features: &'a [f64],
    pub label: usize,
    pub np_weight: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct PseudoSample<'a> {
    pub features: &'a [f64],
    pub pseudo_label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nf_labeled: f64,
    pub nf_unlabeled: f64,
    pub ent: f64,
    pub div: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn from_parts(nf_labeled: f64, nf_unlabeled: f64, ent: f64, div: f64) -> Self {
        LossBreakdown {
            nf_labeled,
            nf_unlabeled,
            ent,
            div,
            total: nf_labeled + nf_unlabeled + ent + div,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

/// Accumulate `∂L/∂θ` for one sample given `∂L/∂logits`.
fn backprop(model: &AdaptModel, x: &[f64], act: &Activations, dlogits: &[f64], grad: &mut [f64]) {
    let (d, h) = (model.dim(), model.hidden());
    let o = model.offsets();
    let mut du = vec![0.0; d];
    for (k, &g) in dlogits.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (acc, w) in du.iter_mut().zip(model.head_row(k)) {
            *acc += g * w;
        }
    }
    for r in 0..d {
        let g = du[r];
        for (acc, v) in grad[r * d..(r + 1) * d].iter_mut().zip(x) {
            *acc += g * v;
        }
        grad[o.b + r] += g;
    }
    if h == 0 {
        return;
    }
    let p = model.params();
    let mut dact = vec![0.0; h];
    for r in 0..d {
        let g = du[r];
        let w2 = &p[o.w2 + r * h..o.w2 + (r + 1) * h];
        for j in 0..h {
            grad[o.w2 + r * h + j] += g * act.act[j];
            dact[j] += g * w2[j];
        }
    }
    for j in 0..h {
        let dpre = dact[j] * leaky_grad(act.pre[j]);
        for (acc, v) in grad[o.w1 + j * d..o.w1 + (j + 1) * d].iter_mut().zip(x) {
            *acc += dpre * v;
        }
        grad[o.b1 + j] += dpre;
    }
}

/// `−ln δ_y` and its logit gradient `δ − e_y`, both scaled by `w`.
fn weighted_ce(probs: &[f64], y: usize, w: f64) -> (f64, Vec<f64>) {
    let mut dl = probs.to_vec();
    dl[y] -= 1.0;
    dl.iter_mut().for_each(|g| *g *= w);
    let value = if w == 0.0 { 0.0 } else { -w * probs[y].ln() };
    (value, dl)
}

fn entropy_terms(probs: &[f64]) -> (f64, Vec<f64>) {
    let h: f64 = -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>();
    let dl = probs
        .iter()
        .map(|&p| if p > 0.0 { -p * (p.ln() + h) } else { 0.0 })
        .collect();
    (h, dl)
}

/// `KL(p̂‖uniform)` and the per-sample logit gradients (already divided by the batch size).
fn diversity_terms(all_probs: &[&[f64]], classes: usize) -> (f64, Vec<Vec<f64>>) {
    let b = all_probs.len() as f64;
    let mut mean = vec![0.0; classes];
    for p in all_probs {
        for (m, v) in mean.iter_mut().zip(*p) {
            *m += v / b;
        }
    }
    let k = classes as f64;
    let value: f64 = mean
        .iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| m * (k * m).ln())
        .sum();
    let dmean: Vec<f64> = mean
        .iter()
        .map(|&m| if m > 0.0 { (k * m).ln() + 1.0 } else { 0.0 })
        .collect();
    let grads = all_probs
        .iter()
        .map(|p| {
            let inner: f64 = dmean.iter().zip(*p).map(|(g, v)| g * v).sum();
            p.iter()
                .zip(&dmean)
                .map(|(v, g)| v * (g - inner) / b)
                .collect()
        })
        .collect();
    (value, grads)
}

fn check_label(label: usize, classes: usize, row: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::LabelOutOfRange {
            row,
            label,
            classes,
        });
    }
    Ok(())
}

pub fn nf_loss_labeled(model: &AdaptModel, batch: &[LabeledSample], alpha: f64) -> Result<LossGrad> {
    let mut grad = vec![0.0; model.params().len()];
    let mut value = 0.0;
    let b = batch.len() as f64;
    for (row, s) in batch.iter().enumerate() {
        check_label(s.label, model.classes(), row)?;
        if !(s.np_weight.is_finite() && s.np_weight >= 0.0) {
            return Err(Error::MissingWeight { index: row });
        }
        let act = model.forward(s.features);
        let (v, dl) = weighted_ce(&act.probs, s.label, alpha * s.np_weight / b);
        value += v;
        backprop(model, s.features, &act, &dl, &mut grad);
    }
    Ok(LossGrad { value, grad })
}

pub fn nf_loss_unlabeled(model: &AdaptModel, batch: &[PseudoSample], beta: f64) -> Result<LossGrad> {
    let mut grad = vec![0.0; model.params().len()];
    let mut value = 0.0;
    let b = batch.len() as f64;
    for (row, s) in batch.iter().enumerate() {
        check_label(s.pseudo_label, model.classes(), row)?;
        let act = model.forward(s.features);
        let (v, dl) = weighted_ce(&act.probs, s.pseudo_label, beta / b);
        value += v;
        backprop(model, s.features, &act, &dl, &mut grad);
    }
    Ok(LossGrad { value, grad })
}

pub fn entropy_loss(model: &AdaptModel, batch: &[&[f64]]) -> Result<LossGrad> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("entropy loss batch"));
    }
    let mut grad = vec![0.0; model.params().len()];
    let mut value = 0.0;
    let b = batch.len() as f64;
    for x in batch {
        let act = model.forward(x);
        let (h, mut dl) = entropy_terms(&act.probs);
        value += h / b;
        dl.iter_mut().for_each(|g| *g /= b);
        backprop(model, x, &act, &dl, &mut grad);
    }
    Ok(LossGrad { value, grad })
}

pub fn div_loss(model: &AdaptModel, batch: &[&[f64]]) -> Result<LossGrad> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("diversity loss batch"));
    }
    let acts: Vec<Activations> = batch.iter().map(|x| model.forward(x)).collect();
    let probs: Vec<&[f64]> = acts.iter().map(|a| a.probs.as_slice()).collect();
    let (value, dls) = diversity_terms(&probs, model.classes());
    let mut grad = vec![0.0; model.params().len()];
    for ((x, act), dl) in batch.iter().zip(&acts).zip(&dls) {
        backprop(model, x, act, dl, &mut grad);
    }
    Ok(LossGrad { value, grad })
}

/// Full objective. Entropy and diversity run over the union of both batches.
/// One forward pass per sample; the gradient equals the sum of the component gradients.
pub fn total_loss(
    model: &AdaptModel,
    labeled: &[LabeledSample],
    unlabeled: &[PseudoSample],
    weights: LossWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let total = labeled.len() + unlabeled.len();
    if total == 0 {
        return Err(Error::EmptyInput("training batch"));
    }
    let k = model.classes();
    let inputs: Vec<&[f64]> = labeled
        .iter()
        .map(|s| s.features)
        .chain(unlabeled.iter().map(|s| s.features))
        .collect();
    let acts: Vec<Activations> = inputs.iter().map(|x| model.forward(x)).collect();
    let mut dlogits = vec![vec![0.0; k]; total];

    let (mut nf_l, mut nf_u, mut ent) = (0.0, 0.0, 0.0);
    let bl = labeled.len() as f64;
    for (row, s) in labeled.iter().enumerate() {
        check_label(s.label, k, row)?;
        if !(s.np_weight.is_finite() && s.np_weight >= 0.0) {
            return Err(Error::MissingWeight { index: row });
        }
        let (v, dl) = weighted_ce(&acts[row].probs, s.label, weights.alpha * s.np_weight / bl);
        nf_l += v;
        add(&mut dlogits[row], &dl);
    }
    let bu = unlabeled.len() as f64;
    for (row, s) in unlabeled.iter().enumerate() {
        check_label(s.pseudo_label, k, row)?;
        let i = labeled.len() + row;
        let (v, dl) = weighted_ce(&acts[i].probs, s.pseudo_label, weights.beta / bu);
        nf_u += v;
        add(&mut dlogits[i], &dl);
    }
    let b = total as f64;
    for (i, act) in acts.iter().enumerate() {
        let (h, dl) = entropy_terms(&act.probs);
        ent += h / b;
        for (acc, g) in dlogits[i].iter_mut().zip(dl) {
            *acc += g / b;
        }
    }
    let probs: Vec<&[f64]> = acts.iter().map(|a| a.probs.as_slice()).collect();
    let (div, dls) = diversity_terms(&probs, k);
    for (acc, dl) in dlogits.iter_mut().zip(&dls) {
        add(acc, dl);
    }

    let mut grad = vec![0.0; model.params().len()];
    for ((x, act), dl) in inputs.iter().zip(&acts).zip(&dlogits) {
        backprop(model, x, act, dl, &mut grad);
    }
    Ok((LossBreakdown::from_parts(nf_l, nf_u, ent, div), grad))
}

fn add(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

/// Loss value only, used by finite-difference checks and reporting.
pub fn total_loss_value(
    model: &AdaptModel,
    labeled: &[LabeledSample],
    unlabeled: &[PseudoSample],
    weights: LossWeights,
) -> Result<LossBreakdown> {
    total_loss(model, labeled, unlabeled, weights).map(|(b, _)| b)
}
