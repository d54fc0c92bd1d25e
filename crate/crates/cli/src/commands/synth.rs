use std::fs;
use std::io::Write;
use std::path::PathBuf;

use cryptoid_core::synth::{build_dataset, DatasetManifest, MANIFEST_FILE};

use super::sha256_hex;
use crate::error::CliError;
use crate::{Context, SynthArgs};

#[derive(Debug, Clone)]
pub struct SynthOutcome {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub manifest_sha256: String,
}

pub fn run(ctx: &Context, args: &SynthArgs, out: &mut dyn Write) -> Result<SynthOutcome, CliError> {
    if args.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let dir = ctx.out_or("dataset");
    let manifest = build_dataset(&args.classes, args.n, ctx.seed(), &dir)?;
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest_sha256 = sha256_hex(&bytes);
    let counts: Vec<String> = manifest
        .header
        .class_counts
        .iter()
        .map(|(c, n)| format!("{c}={n}"))
        .collect();
    writeln!(out, "wrote {} programs to {}", args.n, dir.display()).ok();
    writeln!(out, "classes: {}", counts.join(" ")).ok();
    writeln!(out, "manifest sha256: {manifest_sha256}").ok();
    Ok(SynthOutcome {
        dir,
        manifest,
        manifest_sha256,
    })
}
