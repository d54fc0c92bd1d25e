use std::fs;
use std::io::Write;
use std::path::PathBuf;

use cryptoid_core::dcnn::{random_search, SearchOutcome, SearchSpace};

use super::train::resolve_config;
use super::{split_indices, write_file, TrainConfig};
use crate::container::DatasetContainer;
use crate::error::CliError;
use crate::{Context, HypersearchArgs, Preset};

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub config_path: PathBuf,
    pub winner: TrainConfig,
    pub outcome: SearchOutcome,
}

pub fn run(ctx: &Context, args: &HypersearchArgs, out: &mut dyn Write) -> Result<SearchResult, CliError> {
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    let container = DatasetContainer::read(&ctx.resolve(&args.features))?;
    if container.records.is_empty() {
        return Err(CliError::Usage("feature container is empty".into()));
    }
    let base = resolve_config(ctx, Preset::Desk, None, None, &container)?;
    let space = match &args.space {
        Some(p) => {
            let p = ctx.resolve(p);
            let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => SearchSpace::default(),
    };
    let (tr, te) = split_indices(&container.labels(), base.model.seed);
    let train_set = container.examples(&tr);
    let test_set = container.examples(&te);
    let outcome = random_search(
        &space,
        &base.model,
        &base.optim,
        &train_set,
        &test_set,
        args.trials,
        args.probe_epochs,
        ctx.seed(),
    )?;

    writeln!(
        out,
        "{:>3} {:>12} {:>9} {:>5} {:>7} {:>7} {:>7} {:>8}",
        "#", "widths", "maps", "k_top", "dropout", "folds", "lr", "accuracy"
    )
    .ok();
    for (i, t) in outcome.trials.iter().enumerate() {
        let acc = t.accuracy.map_or("invalid".to_string(), |a| format!("{a:.4}"));
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("/");
        writeln!(
            out,
            "{:>3} {:>12} {:>9} {:>5} {:>7} {:>7} {:>7} {:>8}{}",
            i,
            list(&t.config.filter_widths),
            list(&t.config.feature_maps),
            t.config.k_top,
            t.config.dropout_p,
            list(&t.config.fold_layers),
            t.optim.learning_rate,
            acc,
            if i == outcome.best { " *" } else { "" }
        )
        .ok();
    }

    let w = outcome.winner();
    let winner = TrainConfig {
        model: w.config.clone(),
        optim: w.optim.clone(),
    };
    let config_path = ctx.out_or("best_config.json");
    let json = serde_json::to_string_pretty(&winner).expect("serializable");
    write_file(&config_path, json.as_bytes())?;
    let trials_json = serde_json::to_string_pretty(&outcome).expect("serializable");
    write_file(&config_path.with_extension("trials.json"), trials_json.as_bytes())?;
    writeln!(out, "best config {}", config_path.display()).ok();
    Ok(SearchResult {
        config_path,
        winner,
        outcome,
    })
}
