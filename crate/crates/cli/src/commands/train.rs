use std::io::Write;
use std::path::PathBuf;

use cryptoid_core::dcnn::{train_with, Checkpoint, ModelConfig, OptimConfig, TrainReport};

use super::{split_indices, write_file, TrainConfig};
use crate::container::DatasetContainer;
use crate::error::CliError;
use crate::{Context, Preset, TrainArgs};

/// The settings `train` would use: `--config` if given, else the preset, with
/// `--seed`, `--epochs` and `--learning-rate` applied on top.
pub fn resolve_config(
    ctx: &Context,
    preset: Preset,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    container: &DatasetContainer,
) -> Result<TrainConfig, CliError> {
    let classes = container.header.classes.len();
    let mut tc = match &ctx.config {
        Some(p) => TrainConfig::read(&ctx.resolve(p))?,
        None => {
            let mut model = match preset {
                Preset::Desk => ModelConfig::desk(classes.max(2), ctx.seed()),
                Preset::Full => ModelConfig::full(ctx.seed()),
            };
            model.d = container.header.d;
            TrainConfig {
                model,
                optim: OptimConfig::default(),
            }
        }
    };
    if let Some(s) = ctx.seed {
        tc.model.seed = s;
    }
    if let Some(e) = epochs {
        tc.optim.epochs = e;
    }
    if let Some(lr) = learning_rate {
        tc.optim.learning_rate = lr;
    }
    if tc.model.d != container.header.d {
        return Err(CliError::Usage(format!(
            "model expects d = {}, features have d = {}",
            tc.model.d, container.header.d
        )));
    }
    if tc.model.classes < classes {
        return Err(CliError::Usage(format!(
            "model has {} outputs for {classes} classes",
            tc.model.classes
        )));
    }
    tc.model.validate()?;
    Ok(tc)
}

/// Output names: the container's classes, then placeholders for spare outputs.
pub fn class_names(container: &DatasetContainer, outputs: usize) -> Vec<String> {
    let mut v: Vec<String> = container.header.classes.iter().map(|c| c.name().to_string()).collect();
    for i in v.len()..outputs {
        v.push(format!("unused{i}"));
    }
    v
}

/// Split, train and package the result as a checkpoint.
pub fn train_container(
    ctx: &Context,
    container: &DatasetContainer,
    tc: &TrainConfig,
) -> Result<(Checkpoint, TrainReport), CliError> {
    let (tr, te) = split_indices(&container.labels(), tc.model.seed);
    let train_set = container.examples(&tr);
    let test_set = container.examples(&te);
    ctx.progress(format_args!(
        "training on {} samples, testing on {} ({} epochs)",
        train_set.len(),
        test_set.len(),
        tc.optim.epochs
    ));
    let (params, report) = train_with(&train_set, &test_set, &tc.model, &tc.optim, |e| {
        if e.epoch == 1 || e.epoch % 10 == 0 {
            ctx.progress(format_args!(
                "epoch {:4}  loss {:.4}  test accuracy {:.4}",
                e.epoch, e.loss, e.test_accuracy
            ));
        }
    })?;
    let checkpoint = Checkpoint {
        config: tc.model.clone(),
        features: container.header.feature_config(),
        classes: class_names(container, tc.model.classes),
        params,
    };
    Ok((checkpoint, report))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub csv_path: PathBuf,
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
}

pub fn run(ctx: &Context, args: &TrainArgs, out: &mut dyn Write) -> Result<TrainOutcome, CliError> {
    let container = DatasetContainer::read(&ctx.resolve(&args.features))?;
    if container.records.is_empty() {
        return Err(CliError::Usage("feature container is empty".into()));
    }
    let tc = resolve_config(ctx, args.preset, args.epochs, args.learning_rate, &container)?;
    let (checkpoint, report) = train_container(ctx, &container, &tc)?;
    let checkpoint_path = ctx.out_or("model.cidm");
    let csv_path = checkpoint_path.with_extension("csv");
    write_file(&checkpoint_path, &checkpoint.to_bytes())?;
    write_file(&csv_path, report.to_csv().as_bytes())?;
    writeln!(
        out,
        "test accuracy {:.4} after {} epochs",
        report.test_accuracy, tc.optim.epochs
    )
    .ok();
    if let Some(last) = report.epochs.last() {
        writeln!(out, "final training loss {:.4}", last.loss).ok();
    }
    super::eval::write_confusion(out, &checkpoint.classes, &report.confusion);
    writeln!(out, "checkpoint {}", checkpoint_path.display()).ok();
    writeln!(out, "curves {}", csv_path.display()).ok();
    ctx.progress(format_args!("wall time {:.1}s", report.wall_seconds));
    Ok(TrainOutcome {
        checkpoint_path,
        csv_path,
        checkpoint,
        report,
    })
}
