use std::fs;
use std::ops::ControlFlow;
use std::path::Path;

use p4dfd_core::ablation::ablate;
use p4dfd_core::data::pnm::{encode_pgm, read_pnm};
use p4dfd_core::data::{grayscale, load_image_dir, split_stratified, synth_phase_dataset, Dataset};
use p4dfd_core::metrics::MetricsRecord;
use p4dfd_core::model::{init_model, ModelConfig};
use p4dfd_core::spectral::{dft2d, fftshift, log_magnitude, phase_map};
use p4dfd_core::texture::soft_lbp;
use p4dfd_core::training::{
    evaluate, load_checkpoint, run_training_with, save_checkpoint, LOG_HEADER,
};
use serde::Serialize;

use crate::args::{AblateArgs, Command, EvalArgs, InspectArgs, RunArgs, SynthArgs};
use crate::config::RunConfig;
use crate::error::CliResult;

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Ablate(a) => ablate_all(&a),
        Command::Inspect(a) => inspect(&a),
    }
}

fn synth(a: &SynthArgs) -> CliResult<()> {
    let data = synth_phase_dataset(a.n, a.side, a.strength, a.seed)?;
    data.save_image_dir(&a.out)?;
    eprintln!(
        "wrote {} real and {} fake images to {}",
        data.n_real(),
        data.n_fake(),
        a.out.display()
    );
    Ok(())
}

fn load(dir: &Path, model: &ModelConfig) -> CliResult<Dataset> {
    Ok(load_image_dir(dir, Some(model.input_side))?)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn train(a: &RunArgs) -> CliResult<()> {
    let cfg = RunConfig::resolve(a)?;
    let (data_dir, out) = (cfg.require_data()?, cfg.require_out()?);
    let data = load(data_dir, &cfg.model)?;
    let test = cfg
        .test_data
        .as_deref()
        .map(|d| load(d, &cfg.model))
        .transpose()?;
    fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), &cfg)?;

    let mut params = init_model(&cfg.model, cfg.train.seed)?;
    println!("{LOG_HEADER}");
    let outcome = run_training_with(
        &mut params,
        &cfg.model,
        &data,
        &cfg.train,
        cfg.augmentation(),
        &mut |row, _| {
            println!("{}", row.csv_row());
            ControlFlow::Continue(())
        },
    )?;
    fs::write(out.join("train_log.csv"), outcome.log_csv())?;
    save_checkpoint(
        &out.join("checkpoint.p4df"),
        &params,
        &cfg.model,
        &cfg.train,
        outcome.log.len(),
    )?;
    if let Some(test) = test {
        let metrics = evaluate(&params, &cfg.model, &test)?;
        write_json(&out.join("metrics.json"), &metrics)?;
        eprintln!(
            "test accuracy {:.4}, auc {}",
            metrics.accuracy,
            fmt_auc(metrics.auc)
        );
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn fmt_auc(auc: Option<f64>) -> String {
    auc.map(|a| format!("{a:.4} ({:.2})", 100.0 * a))
        .unwrap_or_else(|| "undefined".into())
}

fn eval(a: &EvalArgs) -> CliResult<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let data = load(&a.data, &ck.header.model)?;
    let metrics = evaluate(&ck.params, &ck.header.model, &data)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    eprintln!(
        "{}: accuracy {:.4}, auc {}",
        ck.header.model.variant,
        metrics.accuracy,
        fmt_auc(metrics.auc)
    );
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("metrics.json"), &metrics)?;
        fs::write(
            out.join("metrics.csv"),
            format!("{}\n{}\n", MetricsRecord::CSV_HEADER, metrics.csv_row()),
        )?;
    }
    Ok(())
}

fn ablate_all(a: &AblateArgs) -> CliResult<()> {
    let mut cfg = RunConfig::resolve(&a.run)?;
    if let Some(f) = a.test_fraction {
        cfg.test_fraction = f;
        cfg.validate()?;
    }
    let (data_dir, out) = (cfg.require_data()?, cfg.require_out()?);
    let data = load(data_dir, &cfg.model)?;
    let (train_set, test_set) = match cfg.test_data.as_deref() {
        Some(dir) => (data, load(dir, &cfg.model)?),
        None => split_stratified(&data, cfg.test_fraction, cfg.train.seed)?,
    };
    fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), &cfg)?;

    let epochs = cfg.train.total_epochs();
    let mut saved = Ok(());
    let report = ablate(
        &cfg.model,
        &cfg.train,
        cfg.augmentation(),
        &train_set,
        &test_set,
        cfg.train.seed,
        &mut |run| {
            let model = ModelConfig {
                variant: run.row.variant,
                ..cfg.model.clone()
            };
            let slug = model.variant.slug();
            eprintln!(
                "{}: accuracy {:.4}, auc {}, {:.1}s",
                model.variant,
                run.row.accuracy,
                fmt_auc(run.row.auc),
                run.row.train_seconds
            );
            if saved.is_ok() {
                saved = save_checkpoint(
                    &out.join(format!("{slug}.p4df")),
                    &run.params,
                    &model,
                    &cfg.train,
                    epochs,
                )
                .and_then(|()| {
                    Ok(fs::write(
                        out.join(format!("{slug}_train_log.csv")),
                        run.outcome.log_csv(),
                    )?)
                });
            }
        },
    )?;
    saved?;
    let csv = report.csv(true);
    fs::write(out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct Range {
    min: f64,
    max: f64,
}

#[derive(Debug, Serialize)]
struct InspectStats {
    height: usize,
    width: usize,
    magnitude: Range,
    phase: Range,
    lbp: Range,
}

fn range(values: &[f64]) -> Range {
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    Range { min, max }
}

fn inspect(a: &InspectArgs) -> CliResult<()> {
    let image = read_pnm(&a.image)?.cast::<f64>();
    let gray = grayscale(&image)?;
    let (h, w) = gray.hw()?;
    let spectrum = fftshift(&dft2d(&gray)?);
    let magnitude = log_magnitude::<f64>(&spectrum)?;
    let phase = phase_map::<f64>(&spectrum)?;
    let lbp = soft_lbp(&gray, a.tau)?;

    fs::create_dir_all(&a.out)?;
    for (name, map) in [("magnitude", &magnitude), ("phase", &phase), ("lbp", &lbp)] {
        fs::write(
            a.out.join(format!("{name}.pgm")),
            encode_pgm(map.data(), h, w),
        )?;
    }
    let stats = InspectStats {
        height: h,
        width: w,
        magnitude: range(magnitude.data()),
        phase: range(phase.data()),
        lbp: range(lbp.data()),
    };
    write_json(&a.out.join("stats.json"), &stats)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}
