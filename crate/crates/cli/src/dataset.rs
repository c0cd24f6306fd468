//! Turns a [`DatasetSpec`] into the snapshot timeline the engine consumes.
//!
//! Both sources produce the same shape: a chronological, inverse-augmented
//! snapshot timeline shared by training, validation, and test, plus prefix
//! counts saying where each split ends. Splits must be chronologically
//! disjoint (train before validation before test) — extrapolation over
//! time is the whole point, and an interleaved split would leak the future
//! into the history windows.

use std::collections::BTreeSet;
use std::path::Path;

use eth_core::data::{
    self, add_inverses, build_snapshots, split_by_time, synth_cycle, Quadruple, Snapshot, Splits,
    Vocab,
};
use eth_core::{EthError, Result};

use crate::run::DatasetSpec;

/// A dataset ready for training or evaluation.
#[derive(Debug)]
pub struct LoadedData {
    pub vocab: Vocab,
    /// All splits, grouped by timestamp, inverses included.
    pub snapshots: Vec<Snapshot>,
    /// Same timeline without inverse edges, for hierarchy statistics.
    pub original: Vec<Snapshot>,
    /// Leading snapshots that are training targets.
    pub n_train: usize,
    /// Snapshots right after the training prefix used for validation.
    pub n_valid: usize,
    /// Timestamps of the held-out test snapshots.
    pub test_times: Vec<usize>,
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(EthError::invalid(format!(
            "missing {what} file: {}",
            path.display()
        )))
    }
}

/// Generates the synthetic splits: the first 3/4 of the timeline trains,
/// the next 1/12 validates, the final 1/6 tests.
pub fn synth_splits(
    n_entities: usize,
    n_relations: usize,
    n_times: usize,
    shift_rule: usize,
) -> Result<Splits> {
    let (vocab, quads) = synth_cycle(n_entities, n_relations, n_times, shift_rule)?;
    let valid_start = n_times * 3 / 4;
    let test_start = n_times * 5 / 6;
    if valid_start == 0 || valid_start >= test_start || test_start >= n_times {
        return Err(EthError::invalid(format!(
            "synthetic timeline of {n_times} snapshots is too short to split \
             into train/valid/test (boundaries {valid_start} and {test_start} \
             collide); use more timestamps"
        )));
    }
    let (train, valid, test) = split_by_time(&quads, valid_start, test_start)?;
    Ok((vocab, train, valid, test))
}

fn distinct_times(quads: &[Quadruple]) -> BTreeSet<usize> {
    quads.iter().map(|q| q.timestamp).collect()
}

/// Loads (or generates) the splits and assembles the shared timeline.
pub fn load(spec: &DatasetSpec) -> Result<LoadedData> {
    let (vocab, train, valid, test) = match spec {
        DatasetSpec::Files {
            train,
            valid,
            test,
            stat,
        } => {
            require_file(stat, "stat")?;
            require_file(train, "training split")?;
            require_file(valid, "validation split")?;
            require_file(test, "test split")?;
            data::load_dataset(train, valid, test, stat)?
        }
        DatasetSpec::Synthetic {
            n_entities,
            n_relations,
            n_times,
            shift_rule,
        } => synth_splits(*n_entities, *n_relations, *n_times, *shift_rule)?,
    };

    if train.is_empty() {
        return Err(EthError::invalid("training split has no facts"));
    }
    let train_times = distinct_times(&train);
    let valid_times = distinct_times(&valid);
    let test_times = distinct_times(&test);
    let ordered = |earlier: &BTreeSet<usize>, later: &BTreeSet<usize>| match (
        earlier.iter().next_back(),
        later.iter().next(),
    ) {
        (Some(a), Some(b)) => a < b,
        _ => true,
    };
    if !ordered(&train_times, &valid_times)
        || !ordered(&valid_times, &test_times)
        || !ordered(&train_times, &test_times)
    {
        return Err(EthError::invalid(
            "splits overlap in time: every training timestamp must precede \
             every validation timestamp, which must precede every test timestamp",
        ));
    }

    let mut all = train;
    all.extend(valid);
    all.extend(test);
    let augmented = add_inverses(&all, &vocab)?;
    let snapshots = build_snapshots(&augmented);
    let original = build_snapshots(&all);
    Ok(LoadedData {
        vocab,
        snapshots,
        original,
        n_train: train_times.len(),
        n_valid: valid_times.len(),
        test_times: test_times.into_iter().collect(),
    })
}
