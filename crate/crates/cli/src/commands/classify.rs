use std::io::Write;

use cryptoid_core::dcnn::{predict, Checkpoint};

use super::extract::featurize;
use crate::error::CliError;
use crate::{ClassifyArgs, Context};

/// Classes with their probabilities, most likely first (ties keep output order).
pub fn rank(ckpt: &Checkpoint, probs: &[f64]) -> Vec<(String, f64)> {
    let mut v: Vec<(String, f64)> = ckpt.classes.iter().cloned().zip(probs.iter().copied()).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1));
    v
}

pub fn run(ctx: &Context, args: &ClassifyArgs, out: &mut dyn Write) -> Result<Vec<(String, f64)>, CliError> {
    if args.step_limit == 0 {
        return Err(CliError::Usage("--step-limit must be positive".into()));
    }
    let ckpt = super::load_checkpoint(&ctx.resolve(&args.model))?;
    let path = ctx.resolve(&args.program);
    let x = featurize(&path, args.step_limit, &ckpt.features)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let probs = predict(&ckpt.params, &ckpt.config, &x)?;
    let ranked = rank(&ckpt, &probs);
    for (c, p) in &ranked {
        writeln!(out, "{c:>10} {p:.6}").ok();
    }
    Ok(ranked)
}
