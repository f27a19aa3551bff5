//! Segmentation objective: Dice + BCE on the precise labels for decoder 1,
//! and BCE of the coarse-mask-gated decoder 2 prediction.
//!
//! Everything here works in `f64` on flat buffers or `(N, C, H, W)` /
//! `(C, H, W)` tensors and returns analytic gradients with respect to the
//! probability maps, which the trainer feeds back into the tape.

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::{Error, Result};

pub const DICE_EPS: f64 = 1e-6;
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub dice_eps: f64,
    pub bce_clamp: f64,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            dice_eps: DICE_EPS,
            bce_clamp: BCE_CLAMP,
            reduction: Reduction::Mean,
        }
    }
}

fn same_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "{what}: prediction has {} elements, target {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `1 − (2Σŷy + ε) / (Σy + Σŷ + ε)`.
pub fn dice_loss(pred: &[f64], target: &[f64], eps: f64) -> Result<f64> {
    same_len(pred, target, "dice loss")?;
    let (inter, total) = dice_sums(pred, target);
    Ok(1.0 - (2.0 * inter + eps) / (total + eps))
}

fn dice_sums(pred: &[f64], target: &[f64]) -> (f64, f64) {
    pred.iter().zip(target).fold((0.0, 0.0), |(i, s), (&p, &y)| (i + p * y, s + p + y))
}

/// Dice loss and its gradient with respect to `pred`.
pub fn dice_loss_grad(pred: &[f64], target: &[f64], eps: f64) -> Result<(f64, Vec<f64>)> {
    same_len(pred, target, "dice loss")?;
    let (inter, total) = dice_sums(pred, target);
    let num = 2.0 * inter + eps;
    let den = total + eps;
    let grad = target
        .iter()
        .map(|&y| -(2.0 * y * den - num) / (den * den))
        .collect();
    Ok((1.0 - num / den, grad))
}

fn bce_term(p: f64, y: f64, clamp: f64) -> f64 {
    let q = p.clamp(clamp, 1.0 - clamp);
    -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
}

/// Derivative of [`bce_term`] in `p`; zero where the clamp is active.
fn bce_term_grad(p: f64, y: f64, clamp: f64) -> f64 {
    if p <= clamp || p >= 1.0 - clamp {
        0.0
    } else {
        -y / p + (1.0 - y) / (1.0 - p)
    }
}

fn reduce(sum: f64, n: usize, reduction: Reduction) -> f64 {
    match reduction {
        Reduction::Sum => sum,
        Reduction::Mean if n == 0 => 0.0,
        Reduction::Mean => sum / n as f64,
    }
}

/// `−Σ[y log ŷ + (1−y) log(1−ŷ)]` with `ŷ` clamped to `[c, 1−c]`.
pub fn bce_loss(pred: &[f64], target: &[f64], reduction: Reduction, clamp: f64) -> Result<f64> {
    same_len(pred, target, "bce loss")?;
    let sum: f64 = pred.iter().zip(target).map(|(&p, &y)| bce_term(p, y, clamp)).sum();
    Ok(reduce(sum, pred.len(), reduction))
}

pub fn bce_loss_grad(
    pred: &[f64],
    target: &[f64],
    reduction: Reduction,
    clamp: f64,
) -> Result<(f64, Vec<f64>)> {
    let loss = bce_loss(pred, target, reduction, clamp)?;
    let scale = reduce(1.0, pred.len(), reduction);
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| scale * bce_term_grad(p, y, clamp))
        .collect();
    Ok((loss, grad))
}

/// BCE of the gated prediction `coarse ⊗ pred` against `truth`.
pub fn coarse_masked_loss(
    pred: &[f64],
    coarse: &[f64],
    truth: &[f64],
    reduction: Reduction,
    clamp: f64,
) -> Result<f64> {
    same_len(pred, coarse, "coarse mask")?;
    let gated: Vec<f64> = pred.iter().zip(coarse).map(|(&p, &m)| m * p).collect();
    bce_loss(&gated, truth, reduction, clamp)
}

/// Gated loss and its gradient with respect to the ungated prediction.
/// The gradient is exactly zero wherever the mask is zero.
pub fn coarse_masked_loss_grad(
    pred: &[f64],
    coarse: &[f64],
    truth: &[f64],
    reduction: Reduction,
    clamp: f64,
) -> Result<(f64, Vec<f64>)> {
    same_len(pred, coarse, "coarse mask")?;
    let gated: Vec<f64> = pred.iter().zip(coarse).map(|(&p, &m)| m * p).collect();
    let (loss, dq) = bce_loss_grad(&gated, truth, reduction, clamp)?;
    let grad = coarse
        .iter()
        .zip(dq)
        .map(|(&m, g)| if m == 0.0 { 0.0 } else { m * g })
        .collect();
    Ok((loss, grad))
}

/// Per-class loss terms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassLoss {
    pub dice: f64,
    pub bce: f64,
    pub coarse: f64,
}

/// Class-averaged loss components; `total = dice + bce + coarse`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub dice: f64,
    pub bce: f64,
    pub coarse: f64,
    pub total: f64,
    pub per_class: Vec<ClassLoss>,
}

/// Loss values with gradients for both prediction maps.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub breakdown: LossBreakdown,
    pub grad_p1: Tensor<f64>,
    pub grad_p2: Option<Tensor<f64>>,
}

/// `(N, C, plane)` view of a rank-3 `(C,H,W)` or rank-4 `(N,C,H,W)` shape.
fn class_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, c, h * w)),
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(Error::Shape(format!("expected (C,H,W) or (N,C,H,W), got {shape:?}"))),
    }
}

fn gather(t: &Tensor<f64>, n: usize, c: usize, plane: usize, class: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * plane);
    for b in 0..n {
        out.extend_from_slice(&t.data()[(b * c + class) * plane..][..plane]);
    }
    out
}

fn scatter(t: &mut Tensor<f64>, n: usize, c: usize, plane: usize, class: usize, vals: &[f64]) {
    for b in 0..n {
        t.data_mut()[(b * c + class) * plane..][..plane]
            .copy_from_slice(&vals[b * plane..(b + 1) * plane]);
    }
}

fn check_shapes(expected: &[usize], others: &[(&str, &Tensor<f64>)]) -> Result<()> {
    for (name, t) in others {
        if t.shape() != expected {
            return Err(Error::Shape(format!(
                "{name} has shape {:?}, expected {expected:?}",
                t.shape()
            )));
        }
    }
    Ok(())
}

/// Decoder 1 objective: Dice + BCE per class (pixels pooled over the
/// batch), averaged over classes.
pub fn supervised_loss(p1: &Tensor<f64>, truth: &Tensor<f64>, cfg: &LossConfig) -> Result<LossOutput> {
    total_loss(p1, None, truth, None, cfg)
}

/// Full objective. With `p2 = None` (single-label training) the coarse
/// term is zero and no decoder 2 gradient is produced.
pub fn total_loss(
    p1: &Tensor<f64>,
    p2: Option<&Tensor<f64>>,
    truth: &Tensor<f64>,
    coarse: Option<&Tensor<f64>>,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    let (n, c, plane) = class_layout(p1.shape())?;
    check_shapes(p1.shape(), &[("ground truth", truth)])?;
    let aux = match (p2, coarse) {
        (Some(p2), Some(coarse)) => {
            check_shapes(p1.shape(), &[("P2", p2), ("coarse labels", coarse)])?;
            Some((p2, coarse))
        }
        (None, _) => None,
        (Some(_), None) => {
            return Err(Error::Shape("P2 given without coarse labels".into()));
        }
    };
    let inv_c = 1.0 / c as f64;
    let mut grad_p1 = Tensor::zeros(p1.shape());
    let mut grad_p2 = aux.map(|_| Tensor::zeros(p1.shape()));
    let mut breakdown = LossBreakdown::default();
    for class in 0..c {
        let p = gather(p1, n, c, plane, class);
        let y = gather(truth, n, c, plane, class);
        let (dice, gd) = dice_loss_grad(&p, &y, cfg.dice_eps)?;
        let (bce, gb) = bce_loss_grad(&p, &y, cfg.reduction, cfg.bce_clamp)?;
        let g: Vec<f64> = gd.iter().zip(&gb).map(|(a, b)| (a + b) * inv_c).collect();
        scatter(&mut grad_p1, n, c, plane, class, &g);
        let mut term = ClassLoss {
            dice,
            bce,
            coarse: 0.0,
        };
        if let (Some((p2, mask)), Some(gp2)) = (aux, grad_p2.as_mut()) {
            let q = gather(p2, n, c, plane, class);
            let m = gather(mask, n, c, plane, class);
            let (l2, g2) = coarse_masked_loss_grad(&q, &m, &y, cfg.reduction, cfg.bce_clamp)?;
            let g2: Vec<f64> = g2.iter().map(|v| v * inv_c).collect();
            scatter(gp2, n, c, plane, class, &g2);
            term.coarse = l2;
        }
        breakdown.dice += term.dice * inv_c;
        breakdown.bce += term.bce * inv_c;
        breakdown.coarse += term.coarse * inv_c;
        breakdown.per_class.push(term);
    }
    breakdown.total = breakdown.dice + breakdown.bce + breakdown.coarse;
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite(format!("loss total {}", breakdown.total)));
    }
    Ok(LossOutput {
        breakdown,
        grad_p1,
        grad_p2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dice_hand_values() {
        let y = [1.0, 1.0, 0.0, 0.0];
        assert_relative_eq!(dice_loss(&[1.0, 0.0, 0.0, 0.0], &y, 0.0).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert!(dice_loss(&y, &y, DICE_EPS).unwrap() < 1e-6);
        let disjoint = [0.0, 0.0, 1.0, 1.0];
        let l = dice_loss(&disjoint, &y, DICE_EPS).unwrap();
        assert_relative_eq!(l, 1.0 - DICE_EPS / (4.0 + DICE_EPS), epsilon = 1e-15);
    }

    #[test]
    fn bce_hand_values() {
        let y = [1.0, 0.0, 1.0];
        let half = [0.5; 3];
        assert_relative_eq!(
            bce_loss(&half, &y, Reduction::Sum, BCE_CLAMP).unwrap(),
            3.0 * std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        let worst = bce_loss(&[0.0], &[1.0], Reduction::Sum, BCE_CLAMP).unwrap();
        assert_relative_eq!(worst, -(1e-7f64).ln(), epsilon = 1e-9);
        assert!((worst - 16.118).abs() < 1e-3);
        let perfect = bce_loss(&y, &y, Reduction::Sum, BCE_CLAMP).unwrap();
        assert_relative_eq!(perfect, -3.0 * (1.0 - BCE_CLAMP).ln(), epsilon = 1e-15);
    }

    #[test]
    fn gated_single_pixel() {
        let l = coarse_masked_loss(&[0.8], &[1.0], &[1.0], Reduction::Mean, BCE_CLAMP).unwrap();
        assert_relative_eq!(l, 0.223_143_551_314_209_7, epsilon = 1e-12);
    }

    #[test]
    fn full_mask_matches_plain_bce_and_empty_mask_is_constant() {
        let p = [0.2, 0.7, 0.9, 0.4];
        let g = [0.0, 1.0, 1.0, 0.0];
        let full = coarse_masked_loss(&p, &[1.0; 4], &g, Reduction::Mean, BCE_CLAMP).unwrap();
        assert_eq!(full, bce_loss(&p, &g, Reduction::Mean, BCE_CLAMP).unwrap());
        let (l0, grad) = coarse_masked_loss_grad(&p, &[0.0; 4], &g, Reduction::Mean, BCE_CLAMP).unwrap();
        assert_eq!(l0, bce_loss(&[0.0; 4], &g, Reduction::Mean, BCE_CLAMP).unwrap());
        assert!(grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(matches!(dice_loss(&[0.1], &[1.0, 0.0], DICE_EPS), Err(Error::Shape(_))));
        let a = Tensor::<f64>::zeros(&[2, 3, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3, 4]);
        assert!(total_loss(&a, None, &b, None, &LossConfig::default()).is_err());
    }

    #[test]
    fn single_label_total_has_no_coarse_term() {
        let p = Tensor::from_fn(&[2, 4, 4], |i| 0.1 + 0.8 * ((i * 5 % 7) as f64 / 7.0));
        let y = Tensor::from_fn(&[2, 4, 4], |i| ((i * 3 % 5) < 2) as u8 as f64);
        let out = supervised_loss(&p, &y, &LossConfig::default()).unwrap();
        assert_eq!(out.breakdown.coarse, 0.0);
        assert!(out.grad_p2.is_none());
        assert_relative_eq!(out.breakdown.total, out.breakdown.dice + out.breakdown.bce, epsilon = 1e-15);
    }
}
