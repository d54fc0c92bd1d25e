use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cryptoid_core::dcnn::{predict, Checkpoint};

use super::{split_indices, write_file};
use crate::container::DatasetContainer;
use crate::error::CliError;
use crate::{Context, EvalArgs, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    /// Zero when the class was never predicted.
    pub precision: f64,
    /// Zero when the class has no samples.
    pub recall: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Sample index from the manifest.
    pub index: usize,
    pub actual: usize,
    pub predicted: usize,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[actual][predicted]`, over the checkpoint's outputs.
    pub confusion: Vec<Vec<u64>>,
    pub predictions: Vec<Prediction>,
}

impl EvalSummary {
    /// `index,actual,predicted,p_<class>...`; probabilities print exactly.
    pub fn predictions_csv(&self, classes: &[String]) -> String {
        let mut s = String::from("index,actual,predicted");
        for c in classes {
            s.push_str(&format!(",p_{c}"));
        }
        s.push('\n');
        for p in &self.predictions {
            s.push_str(&format!("{},{},{}", p.index, classes[p.actual], classes[p.predicted]));
            for v in &p.probs {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Map container class indices onto checkpoint outputs by name.
fn class_map(ckpt: &Checkpoint, container: &DatasetContainer) -> Result<Vec<usize>, CliError> {
    container
        .header
        .classes
        .iter()
        .map(|c| {
            ckpt.classes
                .iter()
                .position(|n| n == c.name())
                .ok_or_else(|| CliError::Data(format!("checkpoint has no output for class {c}")))
        })
        .collect()
}

/// Score the records at `which`.
pub fn evaluate_container(
    ckpt: &Checkpoint,
    container: &DatasetContainer,
    which: &[usize],
) -> Result<EvalSummary, CliError> {
    if ckpt.features.mnemonics != container.header.mnemonics {
        return Err(CliError::Data(
            "checkpoint and features use different mnemonic rows".into(),
        ));
    }
    let map = class_map(ckpt, container)?;
    let probs = which
        .par_iter()
        .map(|&i| predict(&ckpt.params, &ckpt.config, &container.records[i].matrix))
        .collect::<Result<Vec<_>, _>>()?;
    let k = ckpt.config.classes;
    let mut confusion = vec![vec![0u64; k]; k];
    let mut predictions = Vec::with_capacity(which.len());
    for (&i, p) in which.iter().zip(probs) {
        let actual = map[container.records[i].class];
        let predicted = argmax(&p);
        confusion[actual][predicted] += 1;
        predictions.push(Prediction {
            index: container.records[i].index,
            actual,
            predicted,
            probs: p,
        });
    }
    let total: u64 = confusion.iter().flatten().sum();
    let hits: u64 = (0..k).map(|i| confusion[i][i]).sum();
    let per_class = (0..k)
        .map(|c| {
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|r| r[c]).sum();
            let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            ClassMetrics {
                class: ckpt.classes[c].clone(),
                precision: ratio(confusion[c][c], predicted),
                recall: ratio(confusion[c][c], support),
                support,
            }
        })
        .collect();
    Ok(EvalSummary {
        accuracy: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
        per_class,
        confusion,
        predictions,
    })
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Rows are actual classes, columns predicted ones.
pub fn write_confusion(out: &mut dyn Write, classes: &[String], confusion: &[Vec<u64>]) {
    let w = classes.iter().map(|c| c.len()).max().unwrap_or(0).max(6);
    writeln!(out, "confusion (x = predicted, y = actual)").ok();
    write!(out, "{:w$}", "").ok();
    for c in classes {
        write!(out, " {c:>w$}").ok();
    }
    writeln!(out).ok();
    for (c, row) in classes.iter().zip(confusion) {
        write!(out, "{c:>w$}").ok();
        for v in row {
            write!(out, " {v:>w$}").ok();
        }
        writeln!(out).ok();
    }
}

pub fn run(ctx: &Context, args: &EvalArgs, out: &mut dyn Write) -> Result<EvalSummary, CliError> {
    let ckpt = super::load_checkpoint(&ctx.resolve(&args.model))?;
    let container = DatasetContainer::read(&ctx.resolve(&args.features))?;
    if container.records.is_empty() {
        return Err(CliError::Usage("feature container is empty".into()));
    }
    let which: Vec<usize> = match args.split {
        Split::All => (0..container.records.len()).collect(),
        Split::Train | Split::Test => {
            let (tr, te) = split_indices(&container.labels(), ckpt.config.seed);
            if args.split == Split::Train {
                tr
            } else {
                te
            }
        }
    };
    let summary = evaluate_container(&ckpt, &container, &which)?;
    writeln!(out, "accuracy {:.4} on {} samples", summary.accuracy, which.len()).ok();
    write_confusion(out, &ckpt.classes, &summary.confusion);
    writeln!(
        out,
        "{:>10} {:>9} {:>9} {:>7}",
        "class", "precision", "recall", "support"
    )
    .ok();
    for m in summary.per_class.iter().filter(|m| m.support > 0) {
        writeln!(
            out,
            "{:>10} {:>9.4} {:>9.4} {:>7}",
            m.class, m.precision, m.recall, m.support
        )
        .ok();
    }
    if let Some(p) = &ctx.out {
        let path = ctx.resolve(p);
        write_file(&path, summary.predictions_csv(&ckpt.classes).as_bytes())?;
        writeln!(out, "predictions {}", path.display()).ok();
    }
    Ok(summary)
}
