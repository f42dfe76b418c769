//! Class-anchor loss and the distance-based open-set decision rule.
//!
//! Class centers are fixed at `α·e_i` in logit space. A logit vector `z` is
//! mapped to its distances `d_i = ‖z − c_i‖₂`; training minimizes
//!
//! ```text
//! L_CA = log(1 + Σ_{j≠y} exp(d_y − d_j)) + λ·d_y
//! ```
//!
//! and at test time the nearest center gives the class while the distance
//! to it is the rejection score (larger = more likely unknown).

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassCenters {
    alpha: f64,
    classes: usize,
}

impl ClassCenters {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn center(&self, i: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.classes];
        c[i] = self.alpha;
        c
    }

    /// Column `i` is `c_i`; stored row-major `N×N`.
    pub fn matrix(&self) -> Vec<f64> {
        let n = self.classes;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = self.alpha;
        }
        m
    }
}

pub fn make_centers(classes: usize, alpha: f64) -> Result<ClassCenters> {
    if classes < 2 {
        return Err(Error::Validation(format!("need at least 2 classes, got {classes}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Validation(format!("alpha must be positive, got {alpha}")));
    }
    Ok(ClassCenters { alpha, classes })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceVector(pub Vec<f64>);

impl DistanceVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.0.len() {
            return Err(Error::Validation(format!(
                "label {y} out of range for {} classes",
                self.0.len()
            )));
        }
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("distance vector".into()));
        }
        Ok(())
    }
}

pub fn center_distances(z: &[f64], centers: &ClassCenters) -> Result<DistanceVector> {
    if z.len() != centers.classes {
        return Err(Error::shape(centers.classes, z.len()));
    }
    let a = centers.alpha;
    Ok(DistanceVector(
        (0..z.len())
            .map(|i| {
                z.iter()
                    .enumerate()
                    .map(|(k, &zk)| {
                        let diff = if k == i { zk - a } else { zk };
                        diff * diff
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect(),
    ))
}

/// `log(1 + Σ_{j≠y} exp(d_y − d_j))`, evaluated as a shifted log-sum-exp.
pub fn tuplet_loss(d: &DistanceVector, y: usize) -> Result<f64> {
    d.check_label(y)?;
    let dy = d.0[y];
    let m = d.0.iter().map(|&dj| dy - dj).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = d.0.iter().map(|&dj| (dy - dj - m).exp()).sum();
    Ok((m + s.ln()).max(0.0))
}

/// `p_i = exp(−d_i) / Σ_j exp(−d_j)`.
pub fn softmin(d: &DistanceVector) -> Vec<f64> {
    let lo = d.0.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = d.0.iter().map(|&v| (lo - v).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `−log softmin(d)_y`, computed without forming the probability.
pub fn neg_log_softmin(d: &DistanceVector, y: usize) -> f64 {
    let lo = d.0.iter().copied().fold(f64::INFINITY, f64::min);
    let s: f64 = d.0.iter().map(|&v| (lo - v).exp()).sum();
    d.0[y] - lo + s.ln()
}

pub fn anchor_loss(d: &DistanceVector, y: usize) -> Result<f64> {
    d.check_label(y)?;
    Ok(d.0[y])
}

pub fn ca_loss(d: &DistanceVector, y: usize, lambda: f64) -> Result<f64> {
    Ok(tuplet_loss(d, y)? + lambda * anchor_loss(d, y)?)
}

/// Loss and `∂L_CA/∂z` for one logit vector.
///
/// Where `z` coincides with a center the distance is not differentiable;
/// the subgradient 0 is used for that term.
pub fn ca_loss_grad(z: &[f64], centers: &ClassCenters, y: usize, lambda: f64) -> Result<(f64, Vec<f64>)> {
    let d = center_distances(z, centers)?;
    let loss = ca_loss(&d, y, lambda)?;
    let p = softmin(&d);
    let a = centers.alpha;
    let mut grad = vec![0.0; z.len()];
    for (i, (&di, &pi)) in d.0.iter().zip(&p).enumerate() {
        let dl_dd = if i == y { 1.0 + lambda - pi } else { -pi };
        if di == 0.0 || dl_dd == 0.0 {
            continue;
        }
        let scale = dl_dd / di;
        for (k, g) in grad.iter_mut().enumerate() {
            let ck = if k == i { a } else { 0.0 };
            *g += scale * (z[k] - ck);
        }
    }
    Ok((loss, grad))
}

/// Mean CA loss over a batch of row-major logits (`N×K`) and the gradient
/// of that mean with respect to every logit.
pub fn ca_loss_batch(logits: &[f64], labels: &[usize], centers: &ClassCenters, lambda: f64) -> Result<(f64, Vec<f64>)> {
    let k = centers.classes;
    if logits.len() != labels.len() * k {
        return Err(Error::shape(labels.len() * k, logits.len()));
    }
    let n = labels.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &y) in logits.chunks(k).zip(labels) {
        let (l, g) = ca_loss_grad(row, centers, y, lambda)?;
        total += l;
        grad.extend(g.into_iter().map(|v| v / n));
    }
    Ok((total / n, grad))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Distance to the nearest center.
    #[default]
    MinDistance,
    /// `1 − max softmin probability`.
    Softmin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenSetDecision {
    pub class: usize,
    /// Rejection score; larger means more likely unknown.
    pub score: f64,
    /// `Some(true)` when a threshold was supplied and the score exceeds it.
    pub unknown: Option<bool>,
}

pub fn predict_and_score(z: &[f64], centers: &ClassCenters, threshold: Option<f64>) -> Result<OpenSetDecision> {
    predict_with(z, centers, threshold, ScoreKind::MinDistance)
}

pub fn predict_with(
    z: &[f64],
    centers: &ClassCenters,
    threshold: Option<f64>,
    kind: ScoreKind,
) -> Result<OpenSetDecision> {
    let d = center_distances(z, centers)?;
    // strict `<` keeps the lowest index on ties
    let (class, min) = d.0.iter().enumerate().fold(
        (0, f64::INFINITY),
        |best, (i, &v)| if v < best.1 { (i, v) } else { best },
    );
    let score = match kind {
        ScoreKind::MinDistance => min,
        ScoreKind::Softmin => 1.0 - softmin(&d)[class],
    };
    Ok(OpenSetDecision {
        class,
        score,
        unknown: threshold.map(|t| score > t),
    })
}

/// Threshold accepting `true_accept` of the known validation scores
/// (the empirical quantile, inclusive).
pub fn calibrate_threshold(known_scores: &[f64], true_accept: f64) -> Result<f64> {
    if known_scores.is_empty() {
        return Err(Error::Validation("no known scores to calibrate on".into()));
    }
    if !(0.0..=1.0).contains(&true_accept) {
        return Err(Error::Validation(format!(
            "true accept rate {true_accept} outside [0, 1]"
        )));
    }
    let mut s = known_scores.to_vec();
    s.sort_by(f64::total_cmp);
    let idx = ((true_accept * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1;
    Ok(s[idx])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn centers_are_scaled_basis_vectors() {
        let c = make_centers(3, 0.1).unwrap();
        assert_eq!(c.center(0), vec![0.1, 0.0, 0.0]);
        assert_eq!(c.center(1), vec![0.0, 0.1, 0.0]);
        assert_eq!(c.center(2), vec![0.0, 0.0, 0.1]);
        let c7 = make_centers(7, 0.1).unwrap();
        for i in 0..7 {
            let norm: f64 = c7.center(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_relative_eq!(norm, 0.1);
            for j in 0..i {
                let d = center_distances(&c7.center(i), &c7).unwrap();
                assert_relative_eq!(d.0[j], 0.1 * 2f64.sqrt(), epsilon = 1e-15);
            }
        }
        assert!(make_centers(1, 0.1).is_err());
        assert!(make_centers(3, 0.0).is_err());
    }

    #[test]
    fn distances_at_center_and_origin() {
        let c = make_centers(4, 0.1).unwrap();
        let d = center_distances(&c.center(1), &c).unwrap();
        let r2 = 0.1 * 2f64.sqrt();
        for (i, &v) in d.0.iter().enumerate() {
            assert_relative_eq!(v, if i == 1 { 0.0 } else { r2 }, epsilon = 1e-15);
        }
        let d0 = center_distances(&[0.0; 4], &c).unwrap();
        assert!(d0.0.iter().all(|&v| (v - 0.1).abs() < 1e-15));
        assert!(center_distances(&[0.0; 3], &c).is_err());
    }

    #[test]
    fn tuplet_loss_reference_values() {
        let d = DistanceVector(vec![0.3; 7]);
        assert_relative_eq!(tuplet_loss(&d, 2).unwrap(), 7f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(7f64.ln(), 1.945910, epsilon = 1e-6);
        // z = c_1 with N = 2, α = 0.1
        let c = make_centers(2, 0.1).unwrap();
        let d = center_distances(&c.center(0), &c).unwrap();
        let l = tuplet_loss(&d, 0).unwrap();
        assert_relative_eq!(l, (1.0 + (-(0.1 * 2f64.sqrt())).exp()).ln(), epsilon = 1e-15);
        assert_relative_eq!(l, 0.624934, epsilon = 1e-6);
        // growing margin drives the loss to zero
        let far = DistanceVector(vec![0.0, 1e3, 1e3]);
        assert!(tuplet_loss(&far, 0).unwrap() < 1e-300);
        let huge = DistanceVector(vec![1e4, 0.0]);
        assert_relative_eq!(tuplet_loss(&huge, 0).unwrap(), 1e4, epsilon = 1e-9);
    }

    #[test]
    fn softmin_limits_and_order() {
        let p = softmin(&DistanceVector(vec![0.5; 4]));
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let p = softmin(&DistanceVector(vec![0.0, 800.0]));
        assert_relative_eq!(p[0], 1.0);
        assert!(p[1] < 1e-300);
        let p = softmin(&DistanceVector(vec![0.1, 0.3, 0.2]));
        assert!(p[0] > p[2] && p[2] > p[1]);
        assert_relative_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn anchor_and_composite() {
        let c = make_centers(3, 0.1).unwrap();
        let d = center_distances(&c.center(2), &c).unwrap();
        assert_eq!(anchor_loss(&d, 2).unwrap(), 0.0);
        let d0 = center_distances(&[0.0; 3], &c).unwrap();
        assert_relative_eq!(anchor_loss(&d0, 1).unwrap(), 0.1, epsilon = 1e-15);
        let d = DistanceVector(vec![0.2, 0.7, 0.4]);
        assert_eq!(ca_loss(&d, 1, 0.0).unwrap(), tuplet_loss(&d, 1).unwrap());
        assert_eq!(ca_loss(&d, 1, 1.0).unwrap(), tuplet_loss(&d, 1).unwrap() + 0.7);
        assert!(ca_loss(&d, 3, 0.1).is_err());
        assert!(ca_loss(&DistanceVector(vec![f64::NAN, 0.0]), 0, 0.1).is_err());
    }

    #[test]
    fn prediction_rule() {
        let c = make_centers(5, 0.1).unwrap();
        let dec = predict_and_score(&c.center(3), &c, None).unwrap();
        assert_eq!(dec.class, 3);
        assert_eq!(dec.score, 0.0);
        assert_eq!(dec.unknown, None);
        let far = predict_and_score(&[10.0; 5], &c, Some(0.1 * 2f64.sqrt())).unwrap();
        assert!(far.score > 10.0);
        assert_eq!(far.unknown, Some(true));
        let tie = predict_and_score(&[0.0; 5], &c, None).unwrap();
        assert_eq!(tie.class, 0);
        let sm = predict_with(&c.center(1), &c, None, ScoreKind::Softmin).unwrap();
        assert_eq!(sm.class, 1);
        assert!(sm.score > 0.0 && sm.score < 1.0);
    }

    #[test]
    fn calibrated_threshold_accepts_requested_fraction() {
        let scores: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let t = calibrate_threshold(&scores, 0.95).unwrap();
        assert_eq!(t, 95.0);
        let accepted = scores.iter().filter(|&&s| s <= t).count();
        assert_eq!(accepted, 95);
        assert!(calibrate_threshold(&[], 0.95).is_err());
    }

    #[test]
    fn descent_on_the_loss_alone_reaches_the_anchor() {
        let c = make_centers(4, 0.1).unwrap();
        let mut z = vec![0.3, -0.2, 0.5, 0.1];
        for _ in 0..20_000 {
            let (_, g) = ca_loss_grad(&z, &c, 2, 10.0).unwrap();
            let d = center_distances(&z, &c).unwrap().0[2];
            let step = 0.01f64.min(0.5 * d);
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            z.iter_mut().zip(&g).for_each(|(zi, gi)| *zi -= step * gi / gn);
        }
        let d = center_distances(&z, &c).unwrap();
        assert!(d.0[2] < 1e-3, "{:?}", d);
    }
}
