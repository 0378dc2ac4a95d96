use super::TrainConfig;
use crate::data::Label;
use crate::error::Result;
use crate::tensor::{Real, Tape, Tensor, Var};

const P_MIN: f64 = 1e-7;

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln p_t` and its derivative with respect to the logit, where `p_t` is the
/// probability assigned to the true class clamped to `[1e-7, 1 - 1e-7]`.
fn log_pt(logit: f64, label: Label) -> (f64, f64) {
    let (lo, hi) = (P_MIN.ln(), (-P_MIN).ln_1p());
    let (ln_pt, d) = match label {
        Label::Fake => (-softplus(-logit), sigmoid(-logit)),
        Label::Real => (-softplus(logit), -sigmoid(logit)),
    };
    if ln_pt < lo {
        (lo, 0.0)
    } else if ln_pt > hi {
        (hi, 0.0)
    } else {
        (ln_pt, d)
    }
}

/// Weighted binary cross-entropy and its derivative with respect to the logit.
pub fn bce_loss_grad(logit: f64, label: Label, w_pos: f64) -> (f64, f64) {
    let (ln_pt, d) = log_pt(logit, label);
    let w = if label == Label::Fake { w_pos } else { 1.0 };
    (-w * ln_pt, -w * d)
}

/// Focal loss `-(1 - p_t)^gamma ln p_t` and its derivative.
pub fn focal_loss_grad(logit: f64, label: Label, gamma: f64) -> (f64, f64) {
    let (ln_pt, d_ln) = log_pt(logit, label);
    let pt = ln_pt.exp();
    let u = 1.0 - pt;
    let value = -u.powf(gamma) * ln_pt;
    // d p_t / dz = p_t * d ln p_t / dz
    let du = -pt * d_ln;
    let dmod = if gamma == 0.0 {
        0.0
    } else {
        gamma * u.powf(gamma - 1.0) * du
    };
    (value, -(dmod * ln_pt + u.powf(gamma) * d_ln))
}

pub fn bce_loss(logit: f64, label: Label, w_pos: f64) -> f64 {
    bce_loss_grad(logit, label, w_pos).0
}

pub fn focal_loss(logit: f64, label: Label, gamma: f64) -> f64 {
    focal_loss_grad(logit, label, gamma).0
}

/// `bce_weight * bce + focal_weight * focal`, with its derivative.
pub fn combined_loss_grad(logit: f64, label: Label, w_pos: f64, cfg: &TrainConfig) -> (f64, f64) {
    let (b, db) = bce_loss_grad(logit, label, w_pos);
    let (f, df) = focal_loss_grad(logit, label, cfg.gamma);
    (
        cfg.bce_weight * b + cfg.focal_weight * f,
        cfg.bce_weight * db + cfg.focal_weight * df,
    )
}

pub fn combined_loss(logit: f64, label: Label, w_pos: f64, cfg: &TrainConfig) -> f64 {
    combined_loss_grad(logit, label, w_pos, cfg).0
}

/// Records the combined loss of a `[1]` logit on the tape.
pub fn combined_loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    logit: Var,
    label: Label,
    w_pos: f64,
    cfg: &TrainConfig,
) -> Result<Var> {
    let z = tape.value(logit).item().map(T::as_f64).ok_or_else(|| {
        crate::Error::Shape(format!(
            "loss needs a single logit, got shape {:?}",
            tape.value(logit).shape()
        ))
    })?;
    let (value, d) = combined_loss_grad(z, label, w_pos, cfg);
    let out = Tensor::new([1], vec![T::cast(value)])?;
    tape.custom(&[logit], out, move |_, _, g| {
        vec![Some(vec![g[0] * T::cast(d)])]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn unit_values() {
        assert!((bce_loss(0.0, Label::Fake, 1.0) - LN_2).abs() < 1e-15);
        assert!((bce_loss(0.0, Label::Fake, 2.0) - 2.0 * LN_2).abs() < 1e-15);
        assert!(bce_loss(10.0, Label::Fake, 1.0) < 1e-4);
        assert!((focal_loss(0.0, Label::Fake, 2.0) - 0.25 * LN_2).abs() < 1e-15);
        assert!(focal_loss(10.0, Label::Fake, 2.0) < 1e-8);
        let c = combined_loss(0.0, Label::Fake, 1.0, &TrainConfig::default());
        assert!((c - 0.537189).abs() < 1e-6, "{c}");
    }

    #[test]
    fn clamping_bounds_extreme_logits() {
        let max = -(1e-7f64).ln();
        assert!((bce_loss(-100.0, Label::Fake, 1.0) - max).abs() < 1e-12);
        assert_eq!(bce_loss_grad(-100.0, Label::Fake, 1.0).1, 0.0);
        assert!((bce_loss(100.0, Label::Real, 1.0) - max).abs() < 1e-12);
        assert!(bce_loss(100.0, Label::Fake, 1.0) >= 0.0);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let cfg = TrainConfig::default();
        for &z in &[-6.0, -1.3, -0.2, 0.0, 0.4, 2.5, 7.0] {
            for label in [Label::Real, Label::Fake] {
                for gamma in [0.0, 0.5, 2.0] {
                    let c = TrainConfig {
                        gamma,
                        ..cfg.clone()
                    };
                    let h = 1e-5;
                    let num = (combined_loss(z + h, label, 1.7, &c)
                        - combined_loss(z - h, label, 1.7, &c))
                        / (2.0 * h);
                    let ana = combined_loss_grad(z, label, 1.7, &c).1;
                    assert!(
                        (num - ana).abs() <= 1e-6 * num.abs().max(1e-3),
                        "z {z} {label} g {gamma}: {num} vs {ana}"
                    );
                }
            }
        }
    }

    #[test]
    fn tape_loss_backpropagates() {
        let cfg = TrainConfig::default();
        let mut tape = Tape::<f64>::new();
        let z = tape.leaf(
            Tensor::new([1], vec![0.3])
                .unwrap()
                .with_requires_grad(true),
        );
        let l = combined_loss_on_tape(&mut tape, z, Label::Real, 1.0, &cfg).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(
            tape.value(l).data()[0],
            combined_loss(0.3, Label::Real, 1.0, &cfg)
        );
        assert_eq!(
            tape.grad(z).unwrap()[0],
            combined_loss_grad(0.3, Label::Real, 1.0, &cfg).1
        );
    }
}
