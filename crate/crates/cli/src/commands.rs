//! The five subcommands: train, eval, ablate, analyze, synth.
//!
//! Each command loads the dataset named by the run configuration, echoes
//! the effective configuration into the output directory, and writes its
//! artifacts there. Everything derived from parameters is seeded, so a
//! repeated run with the same inputs reproduces its artifacts byte for
//! byte (training-log wall-clock timings aside).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use eth_core::data::{write_quadruples, write_stat};
use eth_core::eval::{evaluate, khs_report, RankReport};
use eth_core::model::{Ablation, Checkpoint, EthConfig, EthParams};
use eth_core::train::{fit, FitOutcome};
use eth_core::{EthError, Result};

use crate::dataset::{self, LoadedData};
use crate::run::{DatasetSpec, RunConfig, Settings};

fn metrics_header() -> String {
    format!("{:>7}  {:>7}  {:>7}  {:>7}", "MRR", "H@1", "H@3", "H@10")
}

fn metrics_row(r: &RankReport) -> String {
    format!(
        "{:>7.2}  {:>7.2}  {:>7.2}  {:>7.2}",
        100.0 * r.mrr,
        100.0 * r.hits1,
        100.0 * r.hits3,
        100.0 * r.hits10
    )
}

fn write_ranks(path: &Path, report: &RankReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "subject,relation,gold,time,rank")?;
    for o in &report.outcomes {
        writeln!(
            w,
            "{},{},{},{},{}",
            o.subject, o.relation, o.gold, o.time, o.rank
        )?;
    }
    w.flush()?;
    Ok(())
}

fn check_vocab(ck: &Checkpoint, data: &LoadedData) -> Result<()> {
    if ck.vocab != data.vocab {
        return Err(EthError::Checkpoint(format!(
            "checkpoint was trained on {} entities / {} relations but the \
             dataset has {} / {}",
            ck.vocab.num_entities,
            ck.vocab.num_relations,
            data.vocab.num_entities,
            data.vocab.num_relations
        )));
    }
    Ok(())
}

/// Rejects explicitly requested architecture settings that contradict the
/// checkpoint; unspecified settings follow the checkpoint silently.
fn check_config_overrides(req: &Settings, ck: &EthConfig) -> Result<()> {
    let mut clashes: Vec<String> = Vec::new();
    let mut check = |name: &str, requested: String, stored: String| {
        if requested != stored {
            clashes.push(format!("{name} {requested} vs checkpoint {stored}"));
        }
    };
    if let Some(d) = req.d {
        check("d", d.to_string(), ck.d.to_string());
    }
    if let Some(w) = req.w {
        check("w", w.to_string(), ck.w.to_string());
    }
    if let Some(layers) = req.layers {
        check("layers", layers.to_string(), ck.layers.to_string());
    }
    if let Some(m) = &req.m {
        check("m", format!("{:?}", m.to_grid()?), format!("[{}]", ck.m));
    }
    if let Some(gamma) = &req.gamma {
        check(
            "gamma",
            format!("{:?}", gamma.parse::<eth_core::model::GammaKind>()?),
            format!("{:?}", ck.gamma_kind),
        );
    }
    if let Some(mode) = &req.beta_mode {
        check(
            "beta mode",
            format!("{:?}", mode.parse::<eth_core::model::BetaMode>()?),
            format!("{:?}", ck.beta_mode),
        );
    }
    if let Some(loss) = &req.loss {
        check(
            "loss",
            format!("{:?}", loss.parse::<eth_core::model::LossKind>()?),
            format!("{:?}", ck.loss_kind),
        );
    }
    if clashes.is_empty() {
        Ok(())
    } else {
        Err(EthError::Checkpoint(format!(
            "requested settings do not match the checkpoint: {}",
            clashes.join("; ")
        )))
    }
}

/// Initializes parameters from the run seed, fits, and leaves
/// `checkpoint.json` + `train_log.jsonl` in `dir`.
fn fit_into(
    dir: &Path,
    model: &EthConfig,
    run: &RunConfig,
    data: &LoadedData,
) -> Result<FitOutcome> {
    if data.n_valid == 0 {
        return Err(EthError::invalid(
            "validation split has no facts (early stopping needs one)",
        ));
    }
    fs::create_dir_all(dir)?;
    let mut rng = ChaCha12Rng::seed_from_u64(run.seed);
    let mut params = EthParams::init(model, &data.vocab, &mut rng)?;
    let mut log = BufWriter::new(File::create(dir.join("train_log.jsonl"))?);
    let outcome = fit(
        &mut params,
        model,
        &run.train,
        &data.vocab,
        &data.snapshots,
        data.n_train,
        data.n_valid,
        Some(&mut log),
    )?;
    log.flush()?;
    outcome.best.save(&dir.join("checkpoint.json"))?;
    Ok(outcome)
}

fn test_report(
    params: &EthParams,
    config: &EthConfig,
    run: &RunConfig,
    data: &LoadedData,
) -> Result<RankReport> {
    if data.test_times.is_empty() {
        return Err(EthError::invalid("test split has no facts"));
    }
    evaluate(
        params,
        config,
        &data.vocab,
        &data.snapshots,
        &data.test_times,
        run.filter,
    )
}

/// Trains once per history length in the grid and reports the best run
/// by validation MRR.
pub fn cmd_train(run: &RunConfig) -> Result<()> {
    let data = dataset::load(&run.dataset)?;
    let grid = &run.m_grid;
    if grid.len() > 1 {
        run.echo_to(&run.out)?;
    }
    let mut best: Option<(usize, f64, PathBuf)> = None;
    for &m in grid {
        let dir = if grid.len() == 1 {
            run.out.clone()
        } else {
            run.out.join(format!("m{m}"))
        };
        let mut model = run.model.clone();
        model.m = m;
        for &mode in &run.ablate {
            model = model.with_ablation(mode);
        }
        let mut per_run = run.clone();
        per_run.model = model.clone();
        per_run.m_grid = vec![m];
        per_run.out = dir.clone();
        per_run.echo_to(&dir)?;

        let outcome = fit_into(&dir, &model, run, &data)?;
        println!(
            "m={m}: best epoch {}/{} with validation MRR {:.4}; checkpoint {}",
            outcome.best_epoch,
            outcome.log.len(),
            outcome.best_val_mrr,
            dir.join("checkpoint.json").display()
        );
        if best
            .as_ref()
            .is_none_or(|&(_, v, _)| outcome.best_val_mrr > v)
        {
            best = Some((m, outcome.best_val_mrr, dir));
        }
    }
    if grid.len() > 1 {
        let (m, mrr, dir) = best.expect("grid is non-empty");
        println!("best m={m} by validation MRR ({mrr:.4}): {}", dir.display());
    }
    Ok(())
}

/// Ranks every test query with a trained checkpoint and prints the four
/// aggregate metrics as percentages.
pub fn cmd_eval(run: &RunConfig) -> Result<()> {
    let path = run
        .checkpoint
        .as_ref()
        .ok_or_else(|| EthError::invalid("eval needs --checkpoint"))?;
    let ck = Checkpoint::load(path)?;
    let params = ck.to_params()?;
    let data = dataset::load(&run.dataset)?;
    check_vocab(&ck, &data)?;
    check_config_overrides(&run.requested, &ck.config)?;

    let report = test_report(&params, &ck.config, run, &data)?;
    run.echo_to(&run.out)?;
    let ranks = run.out.join("ranks.csv");
    write_ranks(&ranks, &report)?;

    println!("{}", metrics_header());
    println!("{}", metrics_row(&report));
    println!("per-query ranks: {}", ranks.display());
    Ok(())
}

fn mode_dir(mode: Ablation) -> &'static str {
    match mode {
        Ablation::NoSemanticEncoder => "se",
        Ablation::NoTangentTransform => "tst",
        Ablation::NoQueryTransform => "q",
        Ablation::BetaZero => "beta0",
        Ablation::BetaOne => "beta1",
        Ablation::BetaLearned => "beta-learned",
    }
}

/// Trains the full model plus each requested ablation with the same seed
/// and data, then prints a comparison table. With `--checkpoint`, the full
/// row evaluates the given checkpoint instead of retraining.
pub fn cmd_ablate(run: &RunConfig) -> Result<()> {
    if run.ablate.is_empty() {
        return Err(EthError::invalid(
            "ablate needs --ablate with at least one of \
             se, tst, q, beta0, beta1, beta-learned",
        ));
    }
    let data = dataset::load(&run.dataset)?;
    run.echo_to(&run.out)?;

    let mut rows: Vec<(String, RankReport)> = Vec::new();
    let base = match &run.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let params = ck.to_params()?;
            check_vocab(&ck, &data)?;
            check_config_overrides(&run.requested, &ck.config)?;
            rows.push(("full".to_string(), test_report(&params, &ck.config, run, &data)?));
            ck.config
        }
        None => {
            let dir = run.out.join("full");
            let outcome = fit_into(&dir, &run.model, run, &data)?;
            let params = outcome.best.to_params()?;
            rows.push(("full".to_string(), test_report(&params, &run.model, run, &data)?));
            run.model.clone()
        }
    };
    for &mode in &run.ablate {
        let config = base.with_ablation(mode);
        let dir = run.out.join(mode_dir(mode));
        let outcome = fit_into(&dir, &config, run, &data)?;
        let params = outcome.best.to_params()?;
        rows.push((mode.to_string(), test_report(&params, &config, run, &data)?));
    }

    println!("{:<14}{}", "variant", metrics_header());
    for (name, report) in &rows {
        println!("{:<14}{}", name, metrics_row(report));
    }
    Ok(())
}

/// Without a checkpoint: per-snapshot hierarchy scores of the dataset with
/// a five-number summary. With one: the four diagnostics CSVs.
pub fn cmd_analyze(run: &RunConfig) -> Result<()> {
    let data = dataset::load(&run.dataset)?;
    run.echo_to(&run.out)?;
    match &run.checkpoint {
        None => {
            let report = khs_report(&data.original);
            println!("Khs over {} snapshots:", report.per_snapshot.len());
            println!(
                "  min {:.4}   q1 {:.4}   median {:.4}   q3 {:.4}   max {:.4}   (mean {:.4})",
                report.min, report.q1, report.median, report.q3, report.max, report.mean
            );
            let path = run.out.join("khs.csv");
            let mut w = BufWriter::new(File::create(&path)?);
            writeln!(w, "time,khs")?;
            for (time, k) in &report.per_snapshot {
                writeln!(w, "{time},{k:.5e}")?;
            }
            w.flush()?;
            println!("per-snapshot scores: {}", path.display());
        }
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let params = ck.to_params()?;
            check_vocab(&ck, &data)?;
            check_config_overrides(&run.requested, &ck.config)?;
            if data.test_times.is_empty() {
                return Err(EthError::invalid("test split has no facts"));
            }
            let paths = eth_core::eval::export_diagnostics(
                &params,
                &ck.config,
                &data.vocab,
                &data.snapshots,
                &data.original,
                &data.test_times,
                &run.out,
            )?;
            println!("diagnostics written:");
            for p in [&paths.norms, &paths.curvature, &paths.queries, &paths.khs] {
                println!("  {}", p.display());
            }
        }
    }
    Ok(())
}

/// Writes the synthetic splits as loadable dataset files.
pub fn cmd_synth(run: &RunConfig) -> Result<()> {
    let (n_entities, n_relations, n_times, shift_rule) = match &run.dataset {
        DatasetSpec::Synthetic {
            n_entities,
            n_relations,
            n_times,
            shift_rule,
        } => (*n_entities, *n_relations, *n_times, *shift_rule),
        DatasetSpec::Files { .. } => {
            return Err(EthError::invalid(
                "synth needs --synthetic (e.g. cycle:20,4,60,2)",
            ))
        }
    };
    let (vocab, train, valid, test) =
        dataset::synth_splits(n_entities, n_relations, n_times, shift_rule)?;
    fs::create_dir_all(&run.out)?;
    run.echo_to(&run.out)?;
    write_quadruples(&run.out.join("train.txt"), &train)?;
    write_quadruples(&run.out.join("valid.txt"), &valid)?;
    write_quadruples(&run.out.join("test.txt"), &test)?;
    write_stat(&run.out.join("stat.txt"), &vocab)?;
    println!(
        "wrote {} train / {} valid / {} test facts ({} entities, {} relations) to {}",
        train.len(),
        valid.len(),
        test.len(),
        vocab.num_entities,
        vocab.num_relations,
        run.out.display()
    );
    Ok(())
}
