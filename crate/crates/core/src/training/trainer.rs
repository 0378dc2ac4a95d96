use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::combined_loss_on_tape;
use super::optim::{adamw_step, cosine_lr, OptimState};
use super::TrainConfig;
use crate::data::{augment, sample_rng, AugmentConfig, Dataset, Label};
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::model::{
    forward_prepared, prepare_input, GroupKind, ModelConfig, ModelParams, PreparedInput,
};
use crate::tensor::Tape;

pub const LOG_HEADER: &str = "epoch,stage,lr_new,lr_backbone,mean_loss,train_acc";

/// One line of the training log. Epochs are counted from 1 across both stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: u8,
    pub lr_new: f64,
    /// Zero while the backbone is frozen.
    pub lr_backbone: f64,
    pub mean_loss: f64,
    pub train_acc: f64,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:.8},{:.6}",
            self.epoch, self.stage, self.lr_new, self.lr_backbone, self.mean_loss, self.train_acc
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub w_pos: f64,
    /// Set when the observer ended training before the last epoch.
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut out = format!("{LOG_HEADER}\n");
        for row in &self.log {
            out.push_str(&row.csv_row());
            out.push('\n');
        }
        out
    }
}

/// Gradient of every parameter in storage order; `None` for frozen ones.
pub type ParamGrads = Vec<Option<Vec<f32>>>;

/// Loss, logit and per-parameter gradients of one sample.
pub fn sample_gradients(
    params: &ModelParams<f32>,
    model: &ModelConfig,
    input: &PreparedInput<f32>,
    label: Label,
    w_pos: f64,
    cfg: &TrainConfig,
) -> Result<(f64, f64, ParamGrads)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = forward_prepared(&mut tape, &bound, model, input)?;
    let logit = tape.value(out.logit).data()[0] as f64;
    let loss = combined_loss_on_tape(&mut tape, out.logit, label, w_pos, cfg)?;
    let value = tape.value(loss).data()[0] as f64;
    tape.backward(loss)?;
    let grads = bound
        .vars()
        .iter()
        .map(|&(_, v)| tape.grad(v).map(<[f32]>::to_vec))
        .collect();
    Ok((value, logit, grads))
}

fn check_classes(data: &Dataset) -> Result<()> {
    if data.n_real() == 0 || data.n_fake() == 0 {
        return Err(Error::Data(format!(
            "training needs both classes, got {} real and {} fake",
            data.n_real(),
            data.n_fake()
        )));
    }
    Ok(())
}

pub fn run_training(
    params: &mut ModelParams<f32>,
    model: &ModelConfig,
    data: &Dataset,
    cfg: &TrainConfig,
    augmentation: Option<&AugmentConfig>,
) -> Result<TrainOutcome> {
    run_training_with(params, model, data, cfg, augmentation, &mut |_, _| {
        ControlFlow::Continue(())
    })
}

/// Two-stage training: the backbone is frozen for `stage1_epochs`, then every
/// group trains for `stage2_epochs`. The observer sees each epoch's log line
/// and the parameters after it, and may stop training.
pub fn run_training_with(
    params: &mut ModelParams<f32>,
    model: &ModelConfig,
    data: &Dataset,
    cfg: &TrainConfig,
    augmentation: Option<&AugmentConfig>,
    observer: &mut dyn FnMut(&EpochLog, &ModelParams<f32>) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    check_classes(data)?;
    if let Some(a) = augmentation {
        a.validate()?;
    }
    let w_pos = data.n_real() as f64 / data.n_fake() as f64;
    let cached: Option<Vec<PreparedInput<f32>>> = match augmentation {
        None => Some(
            data.iter()
                .map(|s| prepare_input(&s.image, model))
                .collect::<Result<_>>()?,
        ),
        Some(_) => None,
    };

    let mut state = OptimState::new(params);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let stages = [(1u8, cfg.stage1_epochs), (2u8, cfg.stage2_epochs)];
    let mut epoch = 0usize;
    for (stage, stage_epochs) in stages {
        params.set_frozen(GroupKind::Backbone, stage == 1);
        for e in 0..stage_epochs {
            let lr_new = cosine_lr(e, stage_epochs, cfg.lr_new, cfg.lr_min)?;
            let lr_backbone = if stage == 1 {
                0.0
            } else {
                cosine_lr(e, stage_epochs, cfg.lr_backbone, cfg.lr_min)?
            };
            for g in params.groups_mut() {
                g.lr_mult = if g.kind == GroupKind::Backbone {
                    lr_backbone
                } else {
                    lr_new
                };
            }

            order.shuffle(&mut sample_rng(cfg.seed, u64::MAX, epoch as u64));
            let (mut loss_sum, mut correct) = (0.0, 0usize);
            for batch in order.chunks(cfg.batch_size) {
                let mut acc: Vec<Option<Vec<f32>>> = vec![None; params.len()];
                for &i in batch {
                    let sample = &data.samples()[i];
                    let fresh;
                    let input = match (&cached, augmentation) {
                        (Some(c), _) => &c[i],
                        (None, Some(a)) => {
                            let aug = augment(
                                sample,
                                &mut sample_rng(cfg.seed, i as u64, epoch as u64),
                                a,
                            );
                            fresh = prepare_input(&aug.image, model)?;
                            &fresh
                        }
                        (None, None) => unreachable!("inputs are cached without augmentation"),
                    };
                    let (loss, logit, grads) =
                        sample_gradients(params, model, input, sample.label, w_pos, cfg)?;
                    loss_sum += loss;
                    correct += usize::from((logit >= 0.0) == (sample.label == Label::Fake));
                    for (slot, g) in acc.iter_mut().zip(grads) {
                        match (slot.as_mut(), g) {
                            (Some(a), Some(g)) => a.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                            (None, Some(g)) => *slot = Some(g),
                            _ => {}
                        }
                    }
                }
                let inv = 1.0 / batch.len() as f32;
                let mut slots = acc.into_iter();
                for group in params.groups_mut() {
                    for p in &mut group.params {
                        if let Some(mut g) = slots.next().flatten() {
                            g.iter_mut().for_each(|v| *v *= inv);
                            p.value.set_grad(g)?;
                        }
                    }
                }
                adamw_step(params, &mut state, cfg.weight_decay, 1.0)?;
            }

            epoch += 1;
            let row = EpochLog {
                epoch,
                stage,
                lr_new,
                lr_backbone,
                mean_loss: loss_sum / data.len() as f64,
                train_acc: correct as f64 / data.len() as f64,
            };
            let flow = observer(&row, params);
            log.push(row);
            if flow.is_break() {
                params.set_frozen(GroupKind::Backbone, false);
                return Ok(TrainOutcome {
                    log,
                    w_pos,
                    stopped_early: true,
                });
            }
        }
    }
    params.set_frozen(GroupKind::Backbone, false);
    Ok(TrainOutcome {
        log,
        w_pos,
        stopped_early: false,
    })
}

/// Fake-class probability of every sample, without gradient tracking.
pub fn predict_scores(
    params: &ModelParams<f32>,
    model: &ModelConfig,
    data: &Dataset,
) -> Result<Vec<f64>> {
    data.iter()
        .map(|s| {
            let input = prepare_input(&s.image, model)?;
            let mut tape = Tape::new();
            let bound = params.bind_constant(&mut tape);
            let out = forward_prepared(&mut tape, &bound, model, &input)?;
            let z = tape.value(out.logit).data()[0] as f64;
            Ok(1.0 / (1.0 + (-z).exp()))
        })
        .collect()
}

/// Scores every sample and thresholds at 0.5.
pub fn evaluate(
    params: &ModelParams<f32>,
    model: &ModelConfig,
    data: &Dataset,
) -> Result<MetricsRecord> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let scores = predict_scores(params, model, data)?;
    let labels: Vec<u8> = data.iter().map(|s| s.label.bit()).collect();
    MetricsRecord::from_scores(&scores, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_phase_dataset;
    use crate::model::{init_model, Variant};

    fn tiny() -> (ModelConfig, Dataset, TrainConfig) {
        let model = ModelConfig {
            variant: Variant::RgbFftLbpPhaseCs,
            input_side: 16,
            backbone_channels: vec![4, 8],
            cbam_reduction: 2,
            head_hidden: 8,
            ..ModelConfig::default()
        };
        let data = synth_phase_dataset(4, 16, 0.5, 3).unwrap();
        let cfg = TrainConfig {
            stage1_epochs: 2,
            stage2_epochs: 3,
            batch_size: 3,
            seed: 1,
            ..TrainConfig::default()
        };
        (model, data, cfg)
    }

    #[test]
    fn schedule_and_freeze_are_logged() {
        let (model, data, cfg) = tiny();
        let mut params = init_model(&model, 0).unwrap();
        let start = params.fingerprint(&[GroupKind::Backbone]);
        let mut hashes = Vec::new();
        let out = run_training_with(&mut params, &model, &data, &cfg, None, &mut |row, p| {
            hashes.push((row.stage, p.fingerprint(&[GroupKind::Backbone])));
            ControlFlow::Continue(())
        })
        .unwrap();
        assert_eq!(out.log.len(), 5);
        assert_eq!(out.w_pos, 1.0);
        assert!(hashes[..2].iter().all(|&(s, h)| s == 1 && h == start));
        assert_ne!(hashes[4].1, start);
        let s2 = &out.log[2];
        assert_eq!(
            (s2.epoch, s2.stage, s2.lr_new, s2.lr_backbone),
            (3, 2, 1e-3, 1e-4)
        );
        assert_eq!(out.log[0].lr_backbone, 0.0);
        assert!(out.log_csv().starts_with(LOG_HEADER));
        assert!(!params.group(GroupKind::Backbone).frozen);
    }

    #[test]
    fn training_is_deterministic_with_and_without_augmentation() {
        let (model, data, cfg) = tiny();
        for aug in [None, Some(AugmentConfig::default())] {
            let run = || {
                let mut p = init_model(&model, 2).unwrap();
                let out = run_training(&mut p, &model, &data, &cfg, aug.as_ref()).unwrap();
                (p, out)
            };
            let (a, la) = run();
            let (b, lb) = run();
            assert_eq!(a, b);
            assert_eq!(la, lb);
        }
    }

    #[test]
    fn observer_can_stop_early() {
        let (model, data, cfg) = tiny();
        let mut p = init_model(&model, 0).unwrap();
        let out = run_training_with(&mut p, &model, &data, &cfg, None, &mut |row, _| {
            if row.epoch == 2 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap();
        assert!(out.stopped_early);
        assert_eq!(out.log.len(), 2);
    }

    #[test]
    fn single_class_is_rejected() {
        let (model, data, cfg) = tiny();
        let reals = Dataset::new(
            data.iter()
                .filter(|s| s.label == Label::Real)
                .cloned()
                .collect(),
        );
        let mut p = init_model(&model, 0).unwrap();
        assert!(run_training(&mut p, &model, &reals, &cfg, None).is_err());
        assert!(evaluate(&p, &model, &Dataset::default()).is_err());
    }

    #[test]
    fn evaluate_matches_scores() {
        let (model, data, _) = tiny();
        let p = init_model(&model, 4).unwrap();
        let scores = predict_scores(&p, &model, &data).unwrap();
        let m = evaluate(&p, &model, &data).unwrap();
        let correct = scores
            .iter()
            .zip(data.iter())
            .filter(|(s, d)| (**s >= 0.5) == (d.label == Label::Fake))
            .count();
        assert_eq!(m.accuracy, correct as f64 / data.len() as f64);
        assert_eq!(m.n, data.len());
    }
}
