//! Ranking metrics, hierarchy analysis, and diagnostic exports.
//!
//! Link prediction is evaluated by ranking all entities for each query
//! `(s, r, ?, t)` — facts and their inverses alike. Under the *time
//! filter*, other gold answers of the same `(s, r, t)` in the evaluated
//! split are removed from the candidate pool before ranking; the *raw*
//! setting ranks against everybody. Ties break deterministically by
//! candidate id so metrics are reproducible.
//!
//! The hierarchy analysis computes the Krackhardt hierarchy score of each
//! snapshot: the fraction of reachable ordered entity pairs whose reverse
//! is *not* reachable. Chains score 1, cycles and cliques 0. Original
//! (non-inverse) edges only — inverse augmentation would force every
//! score to 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::{HistoryWindow, Snapshot, Vocab};
use crate::diff::Tensor;
use crate::error::{EthError, Result};
use crate::model::{EthConfig, EthParams, Forward, ForwardMode, QueryBatch};

/// Candidate filtering applied before ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterSetting {
    /// Rank against every entity.
    Raw,
    /// Mask other gold answers of the same `(s, r, t)`.
    Time,
}

impl std::str::FromStr for FilterSetting {
    type Err = EthError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(FilterSetting::Raw),
            "time" => Ok(FilterSetting::Time),
            other => Err(EthError::invalid(format!(
                "unknown filter `{other}` (expected raw or time)"
            ))),
        }
    }
}

/// One ranked query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryOutcome {
    pub subject: usize,
    pub relation: usize,
    pub gold: usize,
    pub time: usize,
    /// 1-based rank of the gold entity.
    pub rank: usize,
}

/// Per-query ranks plus the usual aggregates.
#[derive(Debug, Clone)]
pub struct RankReport {
    pub outcomes: Vec<QueryOutcome>,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl RankReport {
    pub fn from_outcomes(outcomes: Vec<QueryOutcome>) -> Self {
        let n = outcomes.len().max(1) as f64;
        let mrr = outcomes.iter().map(|o| 1.0 / o.rank as f64).sum::<f64>() / n;
        let frac = |k: usize| outcomes.iter().filter(|o| o.rank <= k).count() as f64 / n;
        RankReport {
            mrr,
            hits1: frac(1),
            hits3: frac(3),
            hits10: frac(10),
            outcomes,
        }
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }
}

/// Ranks the gold entity of each score row.
///
/// `masks[q]` lists candidate ids excluded from row `q`'s ranking (the
/// other gold answers under the time filter). The gold itself must never
/// be masked. The rank counts strictly better unmasked candidates, plus
/// equal-scoring unmasked candidates with a smaller id.
pub fn rank_queries(
    scores: &Tensor,
    golds: &[usize],
    masks: &[Vec<usize>],
) -> Result<Vec<usize>> {
    let (n, v) = scores.shape();
    if golds.len() != n || masks.len() != n {
        return Err(EthError::invalid(format!(
            "rank_queries: {n} score rows vs {} golds / {} masks",
            golds.len(),
            masks.len()
        )));
    }
    let mut ranks = Vec::with_capacity(n);
    let mut masked = vec![false; v];
    for q in 0..n {
        let gold = golds[q];
        if gold >= v {
            return Err(EthError::invalid(format!(
                "rank_queries: gold {gold} out of range for {v} candidates"
            )));
        }
        for &a in &masks[q] {
            if a >= v {
                return Err(EthError::invalid(format!(
                    "rank_queries: masked id {a} out of range for {v} candidates"
                )));
            }
            if a == gold {
                return Err(EthError::Internal(format!(
                    "filter mask for query {q} masks its own gold {gold}"
                )));
            }
            masked[a] = true;
        }
        let row = scores.row(q);
        let s_gold = row[gold];
        let mut rank = 1usize;
        for (a, &s) in row.iter().enumerate() {
            if a == gold || masked[a] {
                continue;
            }
            if s > s_gold || (s == s_gold && a < gold) {
                rank += 1;
            }
        }
        ranks.push(rank);
        for &a in &masks[q] {
            masked[a] = false;
        }
    }
    Ok(ranks)
}

/// Time-filter masks for one snapshot's query batch: for each query, the
/// other gold objects sharing its `(subject, relation)` at this timestamp.
fn time_filter_masks(batch: &QueryBatch) -> Vec<Vec<usize>> {
    let mut golds_by_query: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for (&(s, r), &o) in batch.queries.iter().zip(&batch.targets) {
        golds_by_query.entry((s, r)).or_default().insert(o);
    }
    batch
        .queries
        .iter()
        .zip(&batch.targets)
        .map(|(&(s, r), &gold)| {
            golds_by_query[&(s, r)]
                .iter()
                .copied()
                .filter(|&o| o != gold)
                .collect()
        })
        .collect()
}

/// Per-query detail captured during evaluation, for diagnostics.
struct ScoredBatch {
    outcomes: Vec<QueryOutcome>,
    betas: Vec<f64>,
    query_norms: Vec<f64>,
    entity_norms: Vec<f64>,
}

fn score_one_snapshot(
    params: &EthParams,
    config: &EthConfig,
    vocab: &Vocab,
    window: &HistoryWindow,
    filter: FilterSetting,
) -> Result<ScoredBatch> {
    let batch = QueryBatch::from_snapshot(window.target, vocab)?;
    let mut fwd = Forward::new(params, config, vocab, ForwardMode::Eval)?;
    // Evaluation draws nothing from the stream; any seed gives the same result.
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let out = fwd.score_batch(&window.history, &batch.queries, &mut rng)?;
    let scores = fwd.tape.value(out.scores);
    let masks = match filter {
        FilterSetting::Raw => vec![Vec::new(); batch.len()],
        FilterSetting::Time => time_filter_masks(&batch),
    };
    let ranks = rank_queries(scores, &batch.targets, &masks)?;
    let outcomes = batch
        .queries
        .iter()
        .zip(&batch.targets)
        .zip(&ranks)
        .map(|((&(s, r), &gold), &rank)| QueryOutcome {
            subject: s,
            relation: r,
            gold,
            time: batch.time,
            rank,
        })
        .collect();
    let betas = fwd.tape.value(out.beta).data().to_vec();
    let row_norms = |t: &Tensor| -> Vec<f64> {
        (0..t.rows())
            .map(|i| t.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    };
    let query_norms = row_norms(fwd.tape.value(out.h_q_g));
    let entity_norms = row_norms(fwd.tape.value(out.h_a_g));
    Ok(ScoredBatch {
        outcomes,
        betas,
        query_norms,
        entity_norms,
    })
}

/// Scores every fact (inverses included) of the snapshots at `eval_times`,
/// using the preceding `config.m` snapshots of the shared timeline as
/// history, and aggregates ranks into a [`RankReport`].
///
/// `snapshots` is the chronological, inverse-augmented timeline containing
/// both the history context and the evaluated snapshots.
pub fn evaluate(
    params: &EthParams,
    config: &EthConfig,
    vocab: &Vocab,
    snapshots: &[Snapshot],
    eval_times: &[usize],
    filter: FilterSetting,
) -> Result<RankReport> {
    let windows = crate::data::history_windows(snapshots, config.m, eval_times)?;
    let mut outcomes = Vec::new();
    for window in &windows {
        let scored = score_one_snapshot(params, config, vocab, window, filter)?;
        outcomes.extend(scored.outcomes);
    }
    Ok(RankReport::from_outcomes(outcomes))
}

/// Krackhardt hierarchy score of one snapshot's directed entity graph.
///
/// `1 − |symmetric reachable pairs| / |reachable pairs|` over ordered
/// pairs `(i, j)`, `i ≠ j`; 0 when nothing is reachable. Pass snapshots
/// built from original (non-inverse) facts.
pub fn khs(snap: &Snapshot) -> f64 {
    let mut nodes: BTreeSet<usize> = BTreeSet::new();
    let mut succ: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(s, _, o) in &snap.triples {
        nodes.insert(s);
        nodes.insert(o);
        if s != o {
            succ.entry(s).or_default().insert(o);
        }
    }
    let ids: Vec<usize> = nodes.into_iter().collect();
    let index: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let n = ids.len();
    let mut reach = vec![vec![false; n]; n];
    for (&node, outs) in &succ {
        // BFS from `node` over successor sets.
        let src = index[&node];
        let mut stack: Vec<usize> = outs.iter().map(|o| index[o]).collect();
        while let Some(j) = stack.pop() {
            if reach[src][j] {
                continue;
            }
            reach[src][j] = true;
            if let Some(next) = succ.get(&ids[j]) {
                stack.extend(next.iter().map(|o| index[o]));
            }
        }
    }
    let mut reachable = 0usize;
    let mut symmetric = 0usize;
    for (i, row) in reach.iter().enumerate() {
        for (j, &fwd) in row.iter().enumerate() {
            if i != j && fwd {
                reachable += 1;
                if reach[j][i] {
                    symmetric += 1;
                }
            }
        }
    }
    if reachable == 0 {
        0.0
    } else {
        1.0 - symmetric as f64 / reachable as f64
    }
}

/// Per-snapshot hierarchy scores with summary statistics.
#[derive(Debug, Clone)]
pub struct KhsReport {
    /// `(time, khs)` per snapshot, chronological.
    pub per_snapshot: Vec<(usize, f64)>,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Linear-interpolation quantile of a sorted slice (the numpy default).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn khs_report(snapshots: &[Snapshot]) -> KhsReport {
    let per_snapshot: Vec<(usize, f64)> =
        snapshots.iter().map(|s| (s.time, khs(s))).collect();
    let mut values: Vec<f64> = per_snapshot.iter().map(|&(_, k)| k).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    KhsReport {
        min: values.first().copied().unwrap_or(0.0),
        q1: quantile(&values, 0.25),
        median: quantile(&values, 0.5),
        q3: quantile(&values, 0.75),
        max: values.last().copied().unwrap_or(0.0),
        mean,
        per_snapshot,
    }
}

/// Formats with 6 significant digits, for plot-ready CSV output.
fn sig6(x: f64) -> String {
    format!("{x:.5e}")
}

/// Files written by [`export_diagnostics`].
#[derive(Debug, Clone)]
pub struct DiagnosticsPaths {
    pub norms: PathBuf,
    pub curvature: PathBuf,
    pub queries: PathBuf,
    pub khs: PathBuf,
}

/// Writes four plot-ready CSVs into `out_dir`:
///
/// - `norms.csv` — tangent-embedding L2 norms: one `entity` row per
///   vocabulary entity (embedded at the first evaluated timestamp) and one
///   `query` row per evaluated query.
/// - `curvature.csv` — per-relation ball curvature `softplus(raw)`.
/// - `queries.csv` — per-query mixing coefficient, rank, and −log10(rank)
///   under the time filter.
/// - `khs.csv` — per-snapshot hierarchy score over `original_snapshots`
///   (non-inverse edges).
pub fn export_diagnostics(
    params: &EthParams,
    config: &EthConfig,
    vocab: &Vocab,
    snapshots: &[Snapshot],
    original_snapshots: &[Snapshot],
    eval_times: &[usize],
    out_dir: &Path,
) -> Result<DiagnosticsPaths> {
    std::fs::create_dir_all(out_dir)?;
    let windows = crate::data::history_windows(snapshots, config.m, eval_times)?;
    let mut entity_norms: Option<Vec<f64>> = None;
    let mut detail: Vec<(QueryOutcome, f64, f64)> = Vec::new();
    for window in &windows {
        let scored = score_one_snapshot(params, config, vocab, window, FilterSetting::Time)?;
        if entity_norms.is_none() {
            entity_norms = Some(scored.entity_norms);
        }
        for ((outcome, beta), norm) in scored
            .outcomes
            .into_iter()
            .zip(scored.betas)
            .zip(scored.query_norms)
        {
            detail.push((outcome, beta, norm));
        }
    }

    let paths = DiagnosticsPaths {
        norms: out_dir.join("norms.csv"),
        curvature: out_dir.join("curvature.csv"),
        queries: out_dir.join("queries.csv"),
        khs: out_dir.join("khs.csv"),
    };

    let mut w = BufWriter::new(File::create(&paths.norms)?);
    writeln!(w, "kind,id,time,norm")?;
    let first_time = windows.first().map_or(0, |w| w.target.time);
    for (i, norm) in entity_norms.unwrap_or_default().iter().enumerate() {
        writeln!(w, "entity,{i},{first_time},{}", sig6(*norm))?;
    }
    for (i, (outcome, _, norm)) in detail.iter().enumerate() {
        writeln!(w, "query,{i},{},{}", outcome.time, sig6(*norm))?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(&paths.curvature)?);
    writeln!(w, "relation,curvature")?;
    for r in 0..vocab.num_relations_augmented() {
        let raw = params.curvature_raw.get(r, 0);
        let c = if raw > 0.0 {
            raw + (-raw).exp().ln_1p()
        } else {
            raw.exp().ln_1p()
        };
        writeln!(w, "{r},{}", sig6(c))?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(&paths.queries)?);
    writeln!(w, "subject,relation,gold,time,beta,rank,neg_log10_rank")?;
    for (outcome, beta, _) in &detail {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            outcome.subject,
            outcome.relation,
            outcome.gold,
            outcome.time,
            sig6(*beta),
            outcome.rank,
            sig6(-(outcome.rank as f64).log10())
        )?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(&paths.khs)?);
    writeln!(w, "time,khs")?;
    for (time, k) in khs_report(original_snapshots).per_snapshot {
        writeln!(w, "{time},{}", sig6(k))?;
    }
    w.flush()?;

    Ok(paths)
}
