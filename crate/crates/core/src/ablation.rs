//! Trains and evaluates every model variant under one configuration.

use std::time::Instant;

use crate::data::{AugmentConfig, Dataset};
use crate::error::Result;
use crate::model::{init_model, ModelConfig, ModelParams, Variant};
use crate::training::{evaluate, run_training, TrainConfig, TrainOutcome};

pub const ABLATION_HEADER: &str = "variant,accuracy,auc,train_seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub train_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct VariantRun {
    pub row: AblationRow,
    pub params: ModelParams<f32>,
    pub outcome: TrainOutcome,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub runs: Vec<VariantRun>,
}

impl AblationReport {
    pub fn rows(&self) -> impl Iterator<Item = &AblationRow> {
        self.runs.iter().map(|r| &r.row)
    }

    /// CSV report. Without `timing` the last column is left out, which makes
    /// the output a pure function of config and seed.
    pub fn csv(&self, timing: bool) -> String {
        let mut out = String::new();
        if timing {
            out.push_str(ABLATION_HEADER);
        } else {
            out.push_str(ABLATION_HEADER.trim_end_matches(",train_seconds"));
        }
        out.push('\n');
        for r in self.rows() {
            let auc = r.auc.map(|a| format!("{a:.6}")).unwrap_or_default();
            out.push_str(&format!("{},{:.6},{auc}", r.variant.name(), r.accuracy));
            if timing {
                out.push_str(&format!(",{:.3}", r.train_seconds));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs the seven variants in report order. Each starts from `init_model`
/// with `seed` and trains with `train` (its seed overridden by `seed`);
/// `on_done` is called after each variant.
pub fn ablate(
    base: &ModelConfig,
    train: &TrainConfig,
    augmentation: Option<&AugmentConfig>,
    train_set: &Dataset,
    test_set: &Dataset,
    seed: u64,
    on_done: &mut dyn FnMut(&VariantRun),
) -> Result<AblationReport> {
    let cfg = TrainConfig {
        seed,
        ..train.clone()
    };
    let mut runs = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let model = ModelConfig {
            variant,
            ..base.clone()
        };
        let mut params = init_model(&model, seed)?;
        let start = Instant::now();
        let outcome = run_training(&mut params, &model, train_set, &cfg, augmentation)?;
        let train_seconds = start.elapsed().as_secs_f64();
        let metrics = evaluate(&params, &model, test_set)?;
        let run = VariantRun {
            row: AblationRow {
                variant,
                accuracy: metrics.accuracy,
                auc: metrics.auc,
                train_seconds,
            },
            params,
            outcome,
        };
        on_done(&run);
        runs.push(run);
    }
    Ok(AblationReport { runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_phase_dataset;

    #[test]
    fn seven_rows_in_report_order() {
        let base = ModelConfig {
            input_side: 16,
            backbone_channels: vec![4, 8],
            cbam_reduction: 2,
            head_hidden: 4,
            ..ModelConfig::default()
        };
        let train = TrainConfig {
            stage1_epochs: 1,
            stage2_epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let data = synth_phase_dataset(3, 16, 0.3, 0).unwrap();
        let mut seen = Vec::new();
        let report = ablate(&base, &train, None, &data, &data, 5, &mut |r| {
            seen.push(r.row.variant)
        })
        .unwrap();
        assert_eq!(seen, Variant::ALL);
        let csv = report.csv(true);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], ABLATION_HEADER);
        assert_eq!(lines.len(), 8);
        for (line, v) in lines[1..].iter().zip(Variant::ALL) {
            assert!(line.starts_with(&format!("{},", v.name())));
            assert_eq!(line.split(',').count(), 4);
        }
        assert!(!report.csv(false).contains("train_seconds"));
    }
}
