//! Loss terms for asymmetric dual-network training.
//!
//! Three families: class-weighted cross-entropy with deliberately crossed
//! label/model pairing (the conservative model trains on the radical label
//! with a heavy background weight and vice versa), inconsistency-masked
//! supervision on dynamically mixed hard pseudo-labels, and an anatomical
//! projection prior that matches axis-wise max-projections of the
//! foreground probability against the projections of the rasterized
//! annotation cross.
//!
//! Every loss exists in two forms: a plain per-image function over
//! probability tensors (the reference semantics, used by tests and
//! evaluation), and a batched graph builder used by the trainer, whose
//! gradients are validated against finite differences of the plain path.
//! Cross-entropy terms are normalized per pixel (per masked pixel for the
//! inconsistency loss) so weight defaults transfer across image sizes.

use crate::graph::{dice_two_class, Graph, NodeId, ProjAxis, PROB_CLAMP_HI, PROB_CLAMP_LO};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch between prediction and target")]
    ShapeMismatch,
    #[error("vector length mismatch")]
    LengthMismatch,
}

/// Per-class cross-entropy weights (background, foreground).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights {
    pub bg: f64,
    pub fg: f64,
}

impl ClassWeights {
    /// Weights for the conservatively biased model: false positives cost
    /// `alpha` times more than false negatives.
    pub fn conservative(alpha: f64) -> Self {
        Self { bg: alpha, fg: 1.0 }
    }

    /// Weights for the radically biased model: false negatives cost
    /// `alpha` times more.
    pub fn radical(alpha: f64) -> Self {
        Self { bg: 1.0, fg: alpha }
    }
}

/// Scalar weights of the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Asymmetry factor of the crossed supervision (>= 1).
    pub alpha: f64,
    /// Weight of the projection prior term.
    pub lambda2: f64,
    /// Peak weight of the mixed pseudo-label term.
    pub lambda1_max: f64,
    /// Ramp-up length in iterations for lambda1.
    pub rampup_len: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            lambda2: 0.3,
            lambda1_max: 1.0,
            rampup_len: 2000,
        }
    }
}

/// Gaussian ramp-up: lambda1_max * exp(-5 (1 - t/T)^2), clamped at T.
pub fn lambda1_rampup(iter: usize, cfg: &LossWeights) -> f64 {
    if cfg.rampup_len == 0 {
        return cfg.lambda1_max;
    }
    let t = iter.min(cfg.rampup_len) as f64 / cfg.rampup_len as f64;
    cfg.lambda1_max * (-5.0 * (1.0 - t) * (1.0 - t)).exp()
}

/// Weighted sum of the three terms.
pub fn total_loss(sup: f64, idmps: f64, cap: f64, lambda1: f64, lambda2: f64) -> f64 {
    sup + lambda1 * idmps + lambda2 * cap
}

fn check_pred(pred: &Tensor, target: &BinaryMask) -> Result<(usize, usize), LossError> {
    let s = pred.shape();
    if s.len() != 3 || s[0] != 2 || s[1] != target.height() || s[2] != target.width() {
        return Err(LossError::ShapeMismatch);
    }
    Ok((s[1], s[2]))
}

/// Class-weighted cross-entropy of one probability map [2,H,W] against a
/// binary target, normalized by the pixel count.
pub fn weighted_ce(
    pred: &Tensor,
    target: &BinaryMask,
    weights: ClassWeights,
) -> Result<f64, LossError> {
    let (h, w) = check_pred(pred, target)?;
    let hw = h * w;
    let mut acc = 0.0;
    for z in 0..hw {
        let fg = target.bits()[z] != 0;
        let (p, wgt) = if fg {
            (pred.data()[hw + z], weights.fg)
        } else {
            (pred.data()[z], weights.bg)
        };
        acc -= wgt * p.clamp(PROB_CLAMP_LO, PROB_CLAMP_HI).ln();
    }
    Ok(acc / hw as f64)
}

/// Crossed asymmetric supervision: the conservative model learns from the
/// radical label under background-heavy weights, the radical model from
/// the conservative label under foreground-heavy weights.
pub fn crbs_sup_loss(
    pred_con: &Tensor,
    pred_rad: &Tensor,
    y_rad: &BinaryMask,
    y_con: &BinaryMask,
    alpha: f64,
) -> Result<f64, LossError> {
    Ok(weighted_ce(pred_con, y_rad, ClassWeights::conservative(alpha))?
        + weighted_ce(pred_rad, y_con, ClassWeights::radical(alpha))?)
}

/// Per-pixel exclusive-or of the two label masks: the region where the
/// radical and conservative readings disagree.
pub fn inconsistency_mask(
    y_rad: &BinaryMask,
    y_con: &BinaryMask,
) -> Result<BinaryMask, LossError> {
    if !y_rad.same_shape(y_con) {
        return Err(LossError::ShapeMismatch);
    }
    let bits = y_rad
        .bits()
        .iter()
        .zip(y_con.bits())
        .map(|(&a, &b)| a ^ b)
        .collect();
    Ok(BinaryMask::from_bits(y_rad.height(), y_rad.width(), bits))
}

/// Hard pseudo-label: per-pixel argmax of the convex combination
/// beta * pred_con + (1 - beta) * pred_rad. An exact foreground/background
/// tie resolves to background. The output carries no gradient.
pub fn mix_pseudo_label(
    pred_con: &Tensor,
    pred_rad: &Tensor,
    beta: f64,
) -> Result<BinaryMask, LossError> {
    if pred_con.shape() != pred_rad.shape() {
        return Err(LossError::ShapeMismatch);
    }
    let s = pred_con.shape();
    if s.len() != 3 || s[0] != 2 {
        return Err(LossError::ShapeMismatch);
    }
    let (h, w) = (s[1], s[2]);
    let hw = h * w;
    let mut bits = vec![0u8; hw];
    for z in 0..hw {
        let bg = beta * pred_con.data()[z] + (1.0 - beta) * pred_rad.data()[z];
        let fg = beta * pred_con.data()[hw + z] + (1.0 - beta) * pred_rad.data()[hw + z];
        bits[z] = (fg > bg) as u8;
    }
    Ok(BinaryMask::from_bits(h, w, bits))
}

/// Cross-entropy restricted to masked pixels, normalized by
/// max(1, number of masked pixels).
pub fn masked_ce(
    pred: &Tensor,
    target: &BinaryMask,
    mask: &BinaryMask,
) -> Result<f64, LossError> {
    let (h, w) = check_pred(pred, target)?;
    if !mask.same_shape(target) {
        return Err(LossError::ShapeMismatch);
    }
    let hw = h * w;
    let mut acc = 0.0;
    for z in 0..hw {
        if mask.bits()[z] == 0 {
            continue;
        }
        let p = if target.bits()[z] != 0 {
            pred.data()[hw + z]
        } else {
            pred.data()[z]
        };
        acc -= p.clamp(PROB_CLAMP_LO, PROB_CLAMP_HI).ln();
    }
    Ok(acc / mask.count().max(1) as f64)
}

/// Mixed pseudo-label supervision applied to both models on the
/// inconsistent region only.
pub fn idmps_loss(
    pred_con: &Tensor,
    pred_rad: &Tensor,
    y_pl: &BinaryMask,
    m: &BinaryMask,
) -> Result<f64, LossError> {
    Ok(masked_ce(pred_rad, y_pl, m)? + masked_ce(pred_con, y_pl, m)?)
}

/// Axis-wise max-projections of the foreground probability channel:
/// (per-column maxima of length W, per-row maxima of length H).
pub fn axis_projection_pred(pred: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let s = pred.shape();
    assert!(s.len() == 3 && s[0] == 2, "expected [2,H,W] probability map");
    let (h, w) = (s[1], s[2]);
    let fg = &pred.data()[h * w..];
    let mut proj_x = vec![f64::NEG_INFINITY; w];
    let mut proj_y = vec![f64::NEG_INFINITY; h];
    for y in 0..h {
        for x in 0..w {
            let v = fg[y * w + x];
            proj_x[x] = proj_x[x].max(v);
            proj_y[y] = proj_y[y].max(v);
        }
    }
    (proj_x, proj_y)
}

/// Axis-wise projections of the binary annotation cross.
pub fn axis_projection_annotation(cross: &BinaryMask) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (cross.height(), cross.width());
    let mut cx = vec![0.0; w];
    let mut cy = vec![0.0; h];
    for y in 0..h {
        for x in 0..w {
            if cross.get(y, x) {
                cx[x] = 1.0;
                cy[y] = 1.0;
            }
        }
    }
    (cx, cy)
}

/// Two-class soft Dice loss between a prediction vector and a binary
/// target vector; 0 for perfect overlap, at most 1.
pub fn soft_dice_loss(pred_vec: &[f64], target_vec: &[f64]) -> Result<f64, LossError> {
    if pred_vec.len() != target_vec.len() {
        return Err(LossError::LengthMismatch);
    }
    Ok(dice_two_class(pred_vec, target_vec))
}

/// Projection prior loss of one probability map against one annotation
/// cross: Dice on the column projection plus Dice on the row projection.
pub fn cap_loss(pred: &Tensor, cross: &BinaryMask) -> Result<f64, LossError> {
    let s = pred.shape();
    if s.len() != 3 || s[0] != 2 || s[1] != cross.height() || s[2] != cross.width() {
        return Err(LossError::ShapeMismatch);
    }
    let (proj_x, proj_y) = axis_projection_pred(pred);
    let (cx, cy) = axis_projection_annotation(cross);
    Ok(soft_dice_loss(&proj_x, &cx)? + soft_dice_loss(&proj_y, &cy)?)
}

// ---------------------------------------------------------------------
// Batched graph builders. Probability nodes are [N,2,H,W]; targets are
// per-item masks. All scalars are means over batch items.
// ---------------------------------------------------------------------

/// Constant weight tensor for a batched weighted cross-entropy:
/// w[n, k, z] = class_weight(k) * [target_n(z) == k] * norm_n / N.
fn ce_weight_tensor(
    shape: &[usize],
    targets: &[&BinaryMask],
    weights: ClassWeights,
    mask: Option<&[BinaryMask]>,
) -> Tensor {
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    let hw = h * w;
    let mut out = Tensor::zeros(shape);
    let data = out.data_mut();
    for item in 0..n {
        let t = targets[item];
        debug_assert!(t.height() == h && t.width() == w);
        let m = mask.map(|ms| &ms[item]);
        let norm = match m {
            Some(m) => 1.0 / (m.count().max(1) as f64 * n as f64),
            None => 1.0 / (hw as f64 * n as f64),
        };
        let base = item * 2 * hw;
        for z in 0..hw {
            if let Some(m) = m {
                if m.bits()[z] == 0 {
                    continue;
                }
            }
            if t.bits()[z] != 0 {
                data[base + hw + z] = weights.fg * norm;
            } else {
                data[base + z] = weights.bg * norm;
            }
        }
    }
    out
}

/// Constant weight tensor for plain batched cross-entropy (batch mean,
/// per-pixel normalization). Public for single-model baselines.
pub fn batched_ce_weights(
    shape: &[usize],
    targets: &[&BinaryMask],
    weights: ClassWeights,
) -> Tensor {
    ce_weight_tensor(shape, targets, weights, None)
}

/// Projection prior node for a single network (batch mean).
pub fn cap_single_node(g: &mut Graph, prob: NodeId, crosses: &[&BinaryMask]) -> NodeId {
    let mut cxs = Vec::with_capacity(crosses.len());
    let mut cys = Vec::with_capacity(crosses.len());
    for c in crosses {
        let (cx, cy) = axis_projection_annotation(c);
        cxs.push(cx);
        cys.push(cy);
    }
    let fg = g.select_ch(prob, 1);
    let dx = g.proj_dice(fg, ProjAxis::Columns, cxs, 1.0);
    let dy = g.proj_dice(fg, ProjAxis::Rows, cys, 1.0);
    g.add(dx, dy)
}

/// Batched crossed supervision loss node (batch mean).
pub fn sup_loss_node(
    g: &mut Graph,
    prob_con: NodeId,
    prob_rad: NodeId,
    y_rad: &[&BinaryMask],
    y_con: &[&BinaryMask],
    alpha: f64,
) -> NodeId {
    let shape = g.value(prob_con).shape().to_vec();
    let w_con = ce_weight_tensor(&shape, y_rad, ClassWeights::conservative(alpha), None);
    let w_rad = ce_weight_tensor(&shape, y_con, ClassWeights::radical(alpha), None);
    let a = g.ce_sum(prob_con, w_con);
    let b = g.ce_sum(prob_rad, w_rad);
    g.add(a, b)
}

/// Batched inconsistency-masked pseudo-label loss node (batch mean). The
/// pseudo-labels and masks are constants: no gradient flows through them.
pub fn idmps_loss_node(
    g: &mut Graph,
    prob_con: NodeId,
    prob_rad: NodeId,
    y_pl: &[BinaryMask],
    m: &[BinaryMask],
) -> NodeId {
    let shape = g.value(prob_con).shape().to_vec();
    let targets: Vec<&BinaryMask> = y_pl.iter().collect();
    let weights = ce_weight_tensor(
        &shape,
        &targets,
        ClassWeights { bg: 1.0, fg: 1.0 },
        Some(m),
    );
    let a = g.ce_sum(prob_rad, weights.clone());
    let b = g.ce_sum(prob_con, weights);
    g.add(a, b)
}

/// Batched projection prior total for both networks (batch mean).
pub fn cap_total_node(
    g: &mut Graph,
    prob_con: NodeId,
    prob_rad: NodeId,
    crosses: &[&BinaryMask],
) -> NodeId {
    let a = cap_single_node(g, prob_con, crosses);
    let b = cap_single_node(g, prob_rad, crosses);
    g.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn prob_map(h: usize, w: usize, fg: &[f64]) -> Tensor {
        assert_eq!(fg.len(), h * w);
        let mut data = Vec::with_capacity(2 * h * w);
        data.extend(fg.iter().map(|p| 1.0 - p));
        data.extend_from_slice(fg);
        Tensor::from_vec(&[2, h, w], data)
    }

    fn mask_of(h: usize, w: usize, bits: &[u8]) -> BinaryMask {
        BinaryMask::from_bits(h, w, bits.to_vec())
    }

    #[test]
    fn weighted_ce_single_pixel_cases() {
        let half = prob_map(1, 1, &[0.5]);
        let fg = mask_of(1, 1, &[1]);
        let bg = mask_of(1, 1, &[0]);
        let w = ClassWeights { bg: 3.0, fg: 1.0 };
        let ln2 = std::f64::consts::LN_2;
        assert!((weighted_ce(&half, &fg, w).unwrap() - ln2).abs() < 1e-12);
        assert!((weighted_ce(&half, &bg, w).unwrap() - 3.0 * ln2).abs() < 1e-12);
        let perfect = prob_map(1, 1, &[1.0]);
        assert!(weighted_ce(&perfect, &fg, w).unwrap() <= 1e-6);
    }

    #[test]
    fn crbs_asymmetry_ratio_is_alpha() {
        // One background pixel misread as foreground under the
        // conservative weights costs alpha times the mirrored mistake.
        let fg_pred = prob_map(1, 1, &[0.9]);
        let y_fg = mask_of(1, 1, &[1]);
        let y_bg = mask_of(1, 1, &[0]);
        let alpha = 3.0;
        let fp = weighted_ce(&fg_pred, &y_bg, ClassWeights::conservative(alpha)).unwrap();
        let fn_ = weighted_ce(&prob_map(1, 1, &[0.1]), &y_fg, ClassWeights::conservative(alpha))
            .unwrap();
        assert!((fp / fn_ - alpha).abs() < 1e-12);

        // alpha = 1 degenerates to two plain cross-entropies.
        let pc = prob_map(2, 2, &[0.3, 0.8, 0.5, 0.6]);
        let pr = prob_map(2, 2, &[0.7, 0.2, 0.4, 0.9]);
        let yr = mask_of(2, 2, &[1, 1, 0, 1]);
        let yc = mask_of(2, 2, &[1, 0, 0, 0]);
        let got = crbs_sup_loss(&pc, &pr, &yr, &yc, 1.0).unwrap();
        let plain = weighted_ce(&pc, &yr, ClassWeights { bg: 1.0, fg: 1.0 }).unwrap()
            + weighted_ce(&pr, &yc, ClassWeights { bg: 1.0, fg: 1.0 }).unwrap();
        assert!((got - plain).abs() < 1e-12);

        // Identical labels and perfect predictions: loss vanishes.
        let exact = prob_map(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let same = crbs_sup_loss(&exact, &exact, &yr, &yr, 3.0).unwrap();
        assert!(same <= 1e-6);
    }

    #[test]
    fn xor_mask_table() {
        let a = mask_of(2, 2, &[1, 1, 1, 0]);
        let b = mask_of(2, 2, &[1, 0, 0, 0]);
        let m = inconsistency_mask(&a, &b).unwrap();
        assert_eq!(m.bits(), &[0, 1, 1, 0]);
        assert!(inconsistency_mask(&a, &a).unwrap().is_empty());
        let zeros = mask_of(2, 2, &[0, 0, 0, 0]);
        assert_eq!(inconsistency_mask(&a, &zeros).unwrap(), a);
    }

    #[test]
    fn mixing_endpoints_and_ties() {
        let pc = prob_map(1, 2, &[0.9, 0.2]);
        let pr = prob_map(1, 2, &[0.1, 0.8]);
        assert_eq!(mix_pseudo_label(&pc, &pr, 1.0).unwrap().bits(), &[1, 0]);
        assert_eq!(mix_pseudo_label(&pc, &pr, 0.0).unwrap().bits(), &[0, 1]);
        // 0.5 * 0.9 + 0.5 * 0.2 = 0.55 -> foreground.
        let one = mix_pseudo_label(&prob_map(1, 1, &[0.9]), &prob_map(1, 1, &[0.2]), 0.5).unwrap();
        assert_eq!(one.bits(), &[1]);
        // Exact tie -> background.
        let tie = mix_pseudo_label(&prob_map(1, 1, &[0.5]), &prob_map(1, 1, &[0.5]), 0.3).unwrap();
        assert_eq!(tie.bits(), &[0]);
    }

    #[test]
    fn masked_ce_support() {
        let p = prob_map(2, 2, &[0.5, 0.9, 0.1, 0.7]);
        let t = mask_of(2, 2, &[1, 1, 0, 1]);
        let none = mask_of(2, 2, &[0, 0, 0, 0]);
        assert_eq!(masked_ce(&p, &t, &none).unwrap(), 0.0);
        let all = mask_of(2, 2, &[1, 1, 1, 1]);
        let full = masked_ce(&p, &t, &all).unwrap();
        let plain = weighted_ce(&p, &t, ClassWeights { bg: 1.0, fg: 1.0 }).unwrap();
        assert!((full - plain).abs() < 1e-12);
        let single = mask_of(2, 2, &[1, 0, 0, 0]);
        assert!((masked_ce(&p, &t, &single).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn idmps_is_symmetric_in_model_order() {
        let pc = prob_map(2, 2, &[0.3, 0.8, 0.5, 0.6]);
        let pr = prob_map(2, 2, &[0.7, 0.2, 0.4, 0.9]);
        let pl = mask_of(2, 2, &[1, 0, 1, 0]);
        let m = mask_of(2, 2, &[0, 1, 1, 0]);
        let a = idmps_loss(&pc, &pr, &pl, &m).unwrap();
        let b = idmps_loss(&pr, &pc, &pl, &m).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert_eq!(
            idmps_loss(&pc, &pr, &pl, &mask_of(2, 2, &[0; 4])).unwrap(),
            0.0
        );
    }

    #[test]
    fn projections_of_constant_and_peaked_fields() {
        let flat = prob_map(3, 4, &[0.2; 12]);
        let (px, py) = axis_projection_pred(&flat);
        assert!(px.iter().all(|&v| (v - 0.2).abs() < 1e-15) && px.len() == 4);
        assert!(py.iter().all(|&v| (v - 0.2).abs() < 1e-15) && py.len() == 3);

        let mut fg = vec![0.1; 12];
        fg[1 * 4 + 2] = 0.9;
        let (px, py) = axis_projection_pred(&prob_map(3, 4, &fg));
        for (i, &v) in px.iter().enumerate() {
            let want = if i == 2 { 0.9 } else { 0.1 };
            assert!((v - want).abs() < 1e-15);
        }
        for (i, &v) in py.iter().enumerate() {
            let want = if i == 1 { 0.9 } else { 0.1 };
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn annotation_projection_reference_cross() {
        use crate::geometry::{rasterize_cross, validate_annotation, AspectAnnotation, Point2};
        let ann = validate_annotation(&AspectAnnotation::new(
            [Point2::new(16.0, 32.0), Point2::new(48.0, 32.0)],
            [Point2::new(32.0, 24.0), Point2::new(32.0, 40.0)],
        ))
        .unwrap();
        let cross = rasterize_cross(&ann, 64, 64);
        let (cx, cy) = axis_projection_annotation(&cross);
        for (i, &v) in cx.iter().enumerate() {
            assert_eq!(v, ((16..=48).contains(&i)) as u8 as f64, "col {i}");
        }
        for (i, &v) in cy.iter().enumerate() {
            assert_eq!(v, ((24..=40).contains(&i)) as u8 as f64, "row {i}");
        }
        let (ex, ey) = axis_projection_annotation(&BinaryMask::zeros(4, 4));
        assert!(ex.iter().chain(ey.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn dice_loss_reference_points() {
        let t = [1.0, 0.0, 1.0, 1.0];
        assert!(soft_dice_loss(&t, &t).unwrap() < 1e-6);
        assert!((soft_dice_loss(&[1.0; 4], &[0.0; 4]).unwrap() - 1.0).abs() < 1e-5);
        assert!(
            (soft_dice_loss(&[0.5; 4], &[1.0, 1.0, 0.0, 0.0]).unwrap() - 0.5).abs() < 1e-6
        );
        assert!(soft_dice_loss(&[0.5; 3], &[1.0; 4]).is_err());
    }

    #[test]
    fn cap_loss_matches_independent_evaluation() {
        use crate::geometry::{rasterize_cross, validate_annotation, AspectAnnotation, Point2};
        let ann = validate_annotation(&AspectAnnotation::new(
            [Point2::new(16.0, 32.0), Point2::new(48.0, 32.0)],
            [Point2::new(32.0, 24.0), Point2::new(32.0, 40.0)],
        ))
        .unwrap();
        let cross = rasterize_cross(&ann, 64, 64);

        // Perfectly matching projections: loss vanishes.
        let (cx, cy) = axis_projection_annotation(&cross);
        let mut fg = vec![0.0; 64 * 64];
        for y in 0..64 {
            for x in 0..64 {
                if cx[x] == 1.0 && cy[y] == 1.0 {
                    fg[y * 64 + x] = 1.0;
                }
            }
        }
        let exact = cap_loss(&prob_map(64, 64, &fg), &cross).unwrap();
        assert!(exact.abs() < 1e-5, "{exact}");

        // All-background prediction: evaluate the closed form with an
        // independent scalar loop and compare.
        let zero = prob_map(64, 64, &[0.0; 64 * 64]);
        let got = cap_loss(&zero, &cross).unwrap();
        let smooth = 1e-6;
        let mut want = 0.0;
        for t in [&cx, &cy] {
            let n = t.len() as f64;
            let ones: f64 = t.iter().sum();
            let dice_fg = smooth / (ones + smooth);
            let dice_bg = (2.0 * (n - ones) + smooth) / (n + (n - ones) + smooth);
            want += 0.5 * ((1.0 - dice_fg) + (1.0 - dice_bg));
        }
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");

        // Totals over both networks double a shared single value.
        let single = cap_loss(&zero, &cross).unwrap();
        assert!((single * 2.0 - (got + want)).abs() < 1e-12);
    }

    #[test]
    fn rampup_endpoints() {
        let cfg = LossWeights {
            rampup_len: 1000,
            ..LossWeights::default()
        };
        assert!((lambda1_rampup(0, &cfg) - (-5f64).exp()).abs() < 1e-12);
        assert!((lambda1_rampup(1000, &cfg) - 1.0).abs() < 1e-12);
        assert!((lambda1_rampup(2000, &cfg) - 1.0).abs() < 1e-12);
        assert!((lambda1_rampup(500, &cfg) - (-1.25f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn total_loss_degeneracies() {
        assert_eq!(total_loss(1.5, 9.0, 4.0, 0.0, 0.0), 1.5);
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.7, 0.3), 0.0);
        let base = total_loss(1.0, 2.0, 3.0, 0.5, 0.2);
        let bumped = total_loss(1.0, 2.0, 3.0, 0.5, 0.2 + 1.0);
        assert!((bumped - base - 3.0).abs() < 1e-12);
    }

    #[test]
    fn batched_builders_match_plain_functions() {
        use crate::graph::Precision;
        let pc0 = prob_map(4, 4, &(0..16).map(|i| 0.05 + 0.05 * i as f64).collect::<Vec<_>>());
        let pc1 = prob_map(4, 4, &(0..16).map(|i| 0.9 - 0.04 * i as f64).collect::<Vec<_>>());
        let pr0 = prob_map(4, 4, &(0..16).map(|i| 0.3 + 0.02 * i as f64).collect::<Vec<_>>());
        let pr1 = prob_map(4, 4, &(0..16).map(|i| 0.6 - 0.03 * i as f64).collect::<Vec<_>>());
        let yr = [
            mask_of(4, 4, &[1, 1, 1, 0, 1, 1, 1, 0, 0, 0, 1, 1, 0, 0, 0, 0]),
            mask_of(4, 4, &[0, 1, 1, 1, 0, 0, 1, 1, 0, 0, 0, 1, 0, 0, 0, 0]),
        ];
        let yc = [
            mask_of(4, 4, &[0, 1, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0]),
            mask_of(4, 4, &[0, 0, 1, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0]),
        ];
        let alpha = 2.5;

        let batch = |a: &Tensor, b: &Tensor| {
            let mut data = a.data().to_vec();
            data.extend_from_slice(b.data());
            Tensor::from_vec(&[2, 2, 4, 4], data)
        };
        let mut g = Graph::new(Precision::F64);
        let pc = g.constant(batch(&pc0, &pc1));
        let pr = g.constant(batch(&pr0, &pr1));

        let sup = sup_loss_node(
            &mut g,
            pc,
            pr,
            &[&yr[0], &yr[1]],
            &[&yc[0], &yc[1]],
            alpha,
        );
        let want = 0.5
            * (crbs_sup_loss(&pc0, &pr0, &yr[0], &yc[0], alpha).unwrap()
                + crbs_sup_loss(&pc1, &pr1, &yr[1], &yc[1], alpha).unwrap());
        assert!((g.value(sup).item() - want).abs() < 1e-12);

        let pl = [
            mix_pseudo_label(&pc0, &pr0, 0.4).unwrap(),
            mix_pseudo_label(&pc1, &pr1, 0.7).unwrap(),
        ];
        let m = [
            inconsistency_mask(&yr[0], &yc[0]).unwrap(),
            inconsistency_mask(&yr[1], &yc[1]).unwrap(),
        ];
        let idm = idmps_loss_node(&mut g, pc, pr, &pl, &m);
        let want = 0.5
            * (idmps_loss(&pc0, &pr0, &pl[0], &m[0]).unwrap()
                + idmps_loss(&pc1, &pr1, &pl[1], &m[1]).unwrap());
        assert!((g.value(idm).item() - want).abs() < 1e-12);

        let cross0 = mask_of(4, 4, &[0, 0, 0, 0, 1, 1, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0]);
        let cross1 = mask_of(4, 4, &[0, 1, 0, 0, 1, 1, 1, 1, 0, 1, 0, 0, 0, 0, 0, 0]);
        let cap = cap_total_node(&mut g, pc, pr, &[&cross0, &cross1]);
        let want = 0.5
            * (cap_loss(&pc0, &cross0).unwrap()
                + cap_loss(&pc1, &cross1).unwrap()
                + cap_loss(&pr0, &cross0).unwrap()
                + cap_loss(&pr1, &cross1).unwrap());
        assert!((g.value(cap).item() - want).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn mixing_is_scale_invariant(
            fg_con in proptest::collection::vec(0.0f64..1.0, 9),
            fg_rad in proptest::collection::vec(0.0f64..1.0, 9),
            beta in 0.0f64..1.0,
            scale in 0.01f64..10.0,
        ) {
            let pc = prob_map(3, 3, &fg_con);
            let pr = prob_map(3, 3, &fg_rad);
            let scaled = |t: &Tensor| {
                Tensor::from_vec(t.shape(), t.data().iter().map(|v| v * scale).collect())
            };
            let a = mix_pseudo_label(&pc, &pr, beta).unwrap();
            let b = mix_pseudo_label(&scaled(&pc), &scaled(&pr), beta).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn losses_are_finite_and_nonnegative(
            fg in proptest::collection::vec(0.0f64..=1.0, 16),
            bits in proptest::collection::vec(0u8..=1, 16),
            cross_bits in proptest::collection::vec(0u8..=1, 16),
        ) {
            let p = prob_map(4, 4, &fg);
            let t = mask_of(4, 4, &bits);
            let cross = mask_of(4, 4, &cross_bits);
            let ce = weighted_ce(&p, &t, ClassWeights::conservative(3.0)).unwrap();
            prop_assert!(ce.is_finite() && ce >= 0.0);
            let cap = cap_loss(&p, &cross).unwrap();
            prop_assert!(cap.is_finite() && (0.0..=2.0 + 1e-9).contains(&cap));
            let mce = masked_ce(&p, &t, &cross).unwrap();
            prop_assert!(mce.is_finite() && mce >= 0.0);
        }
    }
}
