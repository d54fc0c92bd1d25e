use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use cryptoid_core::features::{build_sentence_matrix, FeatureConfig, SentenceMatrix};
use cryptoid_core::isa::parse_program;
use cryptoid_core::synth::DatasetManifest;
use cryptoid_core::tracer::execute;

use crate::container::{ContainerHeader, DatasetContainer, Record, Skip, CONTAINER_VERSION};
use crate::error::CliError;
use crate::{Context, ExtractArgs};

pub const DEFAULT_STEP_LIMIT: u64 = 10_000_000;
/// Abort when more than this fraction of samples fails.
pub const MAX_SKIP_FRACTION: f64 = 0.05;

/// Parse, run and featurize one program.
pub fn featurize(path: &Path, step_limit: u64, cfg: &FeatureConfig) -> Result<SentenceMatrix, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let program = parse_program(&text).map_err(|e| format!("parse: {e}"))?;
    let exec = execute(&program, step_limit).map_err(|e| format!("trace: {e}"))?;
    if !exec.trace.halted {
        return Err(format!("no halt within {step_limit} steps"));
    }
    build_sentence_matrix(&exec.trace.blocks, cfg).map_err(|e| format!("features: {e}"))
}

#[derive(Debug, Clone)]
pub struct ExtractOutcome {
    pub path: PathBuf,
    pub container: DatasetContainer,
}

pub fn run(ctx: &Context, args: &ExtractArgs, out: &mut dyn Write) -> Result<ExtractOutcome, CliError> {
    if args.step_limit == 0 || args.max_s == 0 {
        return Err(CliError::Usage("--step-limit and --max-s must be positive".into()));
    }
    let manifest_path = ctx.resolve(&args.manifest);
    let manifest = DatasetManifest::read(&manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let cfg = FeatureConfig {
        max_s: args.max_s,
        no_entropy: args.no_entropy,
        ..Default::default()
    };
    let classes = manifest.header.classes.clone();
    let results: Vec<Result<SentenceMatrix, String>> = manifest
        .records
        .par_iter()
        .map(|r| featurize(&base.join(&r.path), args.step_limit, &cfg))
        .collect();

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (r, res) in manifest.records.iter().zip(results) {
        let class = classes
            .iter()
            .position(|&c| c == r.label)
            .ok_or_else(|| CliError::Data(format!("sample {} has undeclared class {}", r.index, r.label)))?;
        match res {
            Ok(mut matrix) => {
                matrix.label = Some(r.label);
                records.push(Record {
                    index: r.index,
                    class,
                    matrix,
                });
            }
            Err(reason) => {
                ctx.progress(format_args!("skipping sample {} ({}): {reason}", r.index, r.path));
                skipped.push(Skip {
                    index: r.index,
                    path: r.path.clone(),
                    reason,
                });
            }
        }
    }
    let n = manifest.records.len();
    if skipped.len() as f64 > MAX_SKIP_FRACTION * n as f64 {
        return Err(CliError::Data(format!(
            "{} of {n} samples failed, more than {:.0}%",
            skipped.len(),
            MAX_SKIP_FRACTION * 100.0
        )));
    }
    let container = DatasetContainer {
        header: ContainerHeader {
            version: CONTAINER_VERSION,
            d: cfg.mnemonics.len(),
            classes,
            mnemonics: cfg.mnemonics.clone(),
            master_seed: manifest.header.master_seed,
            no_entropy: cfg.no_entropy,
            max_s: cfg.max_s,
            step_limit: args.step_limit,
            skipped,
        },
        records,
    };
    let path = ctx.out_or(if args.no_entropy {
        "features-noentropy.cidf"
    } else {
        "features.cidf"
    });
    super::write_file(&path, &container.to_bytes())?;
    let truncated = container.records.iter().filter(|r| r.matrix.truncated).count();
    let mean_s =
        container.records.iter().map(|r| r.matrix.s).sum::<usize>() as f64 / container.records.len().max(1) as f64;
    writeln!(
        out,
        "extracted {} of {n} samples (d = {}, mean s = {mean_s:.1}, {truncated} truncated, {} skipped) to {}",
        container.records.len(),
        container.header.d,
        container.header.skipped.len(),
        path.display()
    )
    .ok();
    Ok(ExtractOutcome { path, container })
}
