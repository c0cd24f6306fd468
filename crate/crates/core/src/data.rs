//! Temporal knowledge-graph datasets.
//!
//! A dataset is a list of quadruples `(s, r, o, t)` split chronologically
//! into train/valid/test. Facts are augmented with inverse relations
//! (`(o, r + |E|, s, t)` for each original), grouped into per-timestamp
//! snapshots, and consumed as fixed-length history windows: the `m` most
//! recent snapshots strictly before a target time.
//!
//! File format: one fact per line, whitespace-separated integers
//! `s r o t [ignored…]`; a companion stat file whose first line is
//! `|V| |E|`. Raw timestamps (days, seconds, …) are normalized to dense
//! indices `0, 1, 2, …` preserving order across all three splits.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EthError, Result};

/// One timestamped fact `(s, r, o, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Quadruple {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
    pub timestamp: usize,
}

impl Quadruple {
    pub fn new(subject: usize, relation: usize, object: usize, timestamp: usize) -> Self {
        Quadruple {
            subject,
            relation,
            object,
            timestamp,
        }
    }
}

/// Entity/relation counts. `num_relations` is the base count; inverse
/// augmentation doubles the relation id space to `2 * num_relations`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub num_entities: usize,
    pub num_relations: usize,
}

impl Vocab {
    pub fn new(num_entities: usize, num_relations: usize) -> Result<Self> {
        if num_entities == 0 || num_relations == 0 {
            return Err(EthError::invalid(
                "vocabulary must have at least one entity and one relation",
            ));
        }
        Ok(Vocab {
            num_entities,
            num_relations,
        })
    }

    /// Relation id space after inverse augmentation.
    pub fn num_relations_augmented(&self) -> usize {
        2 * self.num_relations
    }
}

/// All facts sharing one timestamp, with a per-object adjacency index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub time: usize,
    /// `(s, r, o)` triples in input order, inverses included.
    pub triples: Vec<(usize, usize, usize)>,
    adjacency: BTreeMap<usize, Vec<(usize, usize)>>,
}

impl Snapshot {
    /// Builds a snapshot directly from `(subject, relation, object)` triples.
    pub fn new(time: usize, triples: Vec<(usize, usize, usize)>) -> Self {
        Self::from_triples(time, triples)
    }

    fn from_triples(time: usize, triples: Vec<(usize, usize, usize)>) -> Self {
        let mut adjacency: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for &(s, r, o) in &triples {
            adjacency.entry(o).or_default().push((s, r));
        }
        Snapshot {
            time,
            triples,
            adjacency,
        }
    }

    /// Incoming `(s, r)` pairs for `object`; empty if it receives no edges.
    pub fn neighbors(&self, object: usize) -> &[(usize, usize)] {
        self.adjacency.get(&object).map_or(&[], Vec::as_slice)
    }

    /// Objects that receive at least one edge, ascending.
    pub fn active_objects(&self) -> impl Iterator<Item = usize> + '_ {
        self.adjacency.keys().copied()
    }
}

/// History for one prediction step: up to `m` snapshots strictly before the
/// target, oldest first.
#[derive(Debug, Clone)]
pub struct HistoryWindow<'a> {
    pub history: Vec<&'a Snapshot>,
    pub target: &'a Snapshot,
}

fn parse_usize(tok: &str, path: &Path, line_no: usize, what: &str) -> Result<usize> {
    tok.parse::<i64>()
        .ok()
        .and_then(|v| usize::try_from(v).ok())
        .ok_or_else(|| EthError::Parse {
            path: path.display().to_string(),
            line: line_no,
            detail: format!("{what} `{tok}` is not a nonnegative integer"),
        })
}

fn load_split(path: &Path, vocab: &Vocab) -> Result<Vec<Quadruple>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let mut next = |what: &str| -> Result<usize> {
            let tok = toks.next().ok_or_else(|| EthError::Parse {
                path: path.display().to_string(),
                line: line_no,
                detail: format!("missing {what} column (need `s r o t`)"),
            })?;
            parse_usize(tok, path, line_no, what)
        };
        let (s, r, o, t) = (
            next("subject")?,
            next("relation")?,
            next("object")?,
            next("timestamp")?,
        );
        for (what, id, bound) in [
            ("subject", s, vocab.num_entities),
            ("object", o, vocab.num_entities),
            ("relation", r, vocab.num_relations),
        ] {
            if id >= bound {
                return Err(EthError::Parse {
                    path: path.display().to_string(),
                    line: line_no,
                    detail: format!("{what} id {id} out of bounds (limit {bound})"),
                });
            }
        }
        out.push(Quadruple::new(s, r, o, t));
    }
    if out.is_empty() {
        return Err(EthError::Parse {
            path: path.display().to_string(),
            line: 0,
            detail: "empty split".to_string(),
        });
    }
    Ok(out)
}

fn load_stat(path: &Path) -> Result<Vocab> {
    let text = fs::read_to_string(path)?;
    let first = text.lines().next().unwrap_or("");
    let toks: Vec<&str> = first.split_whitespace().collect();
    if toks.len() < 2 {
        return Err(EthError::Parse {
            path: path.display().to_string(),
            line: 1,
            detail: "stat file must start with `<num_entities> <num_relations>`".to_string(),
        });
    }
    let v = parse_usize(toks[0], path, 1, "entity count")?;
    let e = parse_usize(toks[1], path, 1, "relation count")?;
    Vocab::new(v, e)
}

/// Remaps raw timestamps to dense indices `0, 1, …` across all splits,
/// preserving order.
fn densify_timestamps(splits: &mut [&mut Vec<Quadruple>]) {
    let mut times: Vec<usize> = splits
        .iter()
        .flat_map(|s| s.iter().map(|q| q.timestamp))
        .collect();
    times.sort_unstable();
    times.dedup();
    let index: BTreeMap<usize, usize> = times.into_iter().zip(0..).collect();
    for split in splits {
        for q in split.iter_mut() {
            q.timestamp = index[&q.timestamp];
        }
    }
}

/// Vocabulary plus the train/valid/test fact lists, in that order.
pub type Splits = (Vocab, Vec<Quadruple>, Vec<Quadruple>, Vec<Quadruple>);

/// Loads the three splits and the stat file, validates id bounds, and
/// normalizes timestamps to dense indices shared across splits. Duplicate
/// facts are kept as-is.
pub fn load_dataset(
    train_path: &Path,
    valid_path: &Path,
    test_path: &Path,
    stat_path: &Path,
) -> Result<Splits> {
    let vocab = load_stat(stat_path)?;
    let mut train = load_split(train_path, &vocab)?;
    let mut valid = load_split(valid_path, &vocab)?;
    let mut test = load_split(test_path, &vocab)?;
    densify_timestamps(&mut [&mut train, &mut valid, &mut test]);
    Ok((vocab, train, valid, test))
}

/// Appends the inverse `(o, r + |E|, s, t)` directly after each fact; the
/// output is exactly twice the input. Rejects input that already contains
/// inverse relation ids, so augmenting twice fails instead of corrupting.
pub fn add_inverses(quads: &[Quadruple], vocab: &Vocab) -> Result<Vec<Quadruple>> {
    let mut out = Vec::with_capacity(quads.len() * 2);
    for q in quads {
        if q.relation >= vocab.num_relations {
            return Err(EthError::invalid(format!(
                "relation id {} is already in the inverse range (base count {}); \
                 input appears to be augmented",
                q.relation, vocab.num_relations
            )));
        }
        out.push(*q);
        out.push(Quadruple::new(
            q.object,
            q.relation + vocab.num_relations,
            q.subject,
            q.timestamp,
        ));
    }
    Ok(out)
}

/// Groups facts by timestamp into snapshots sorted by ascending time,
/// preserving input order within each timestamp.
pub fn build_snapshots(quads: &[Quadruple]) -> Vec<Snapshot> {
    let mut by_time: BTreeMap<usize, Vec<(usize, usize, usize)>> = BTreeMap::new();
    for q in quads {
        by_time
            .entry(q.timestamp)
            .or_default()
            .push((q.subject, q.relation, q.object));
    }
    by_time
        .into_iter()
        .map(|(time, triples)| Snapshot::from_triples(time, triples))
        .collect()
}

/// For each target time, yields the up-to-`m` snapshots immediately
/// preceding it (drawn from `snapshots`, which should be the union of all
/// ground-truth snapshots) plus the target snapshot itself. Targets at the
/// start of time get an empty history.
pub fn history_windows<'a>(
    snapshots: &'a [Snapshot],
    m: usize,
    target_times: &[usize],
) -> Result<Vec<HistoryWindow<'a>>> {
    if m == 0 {
        return Err(EthError::invalid("history length m must be at least 1"));
    }
    for w in snapshots.windows(2) {
        if w[0].time >= w[1].time {
            return Err(EthError::invalid(
                "snapshots must be sorted by strictly increasing time",
            ));
        }
    }
    let mut out = Vec::with_capacity(target_times.len());
    for &t in target_times {
        let pos = snapshots
            .binary_search_by_key(&t, |s| s.time)
            .map_err(|_| EthError::invalid(format!("no snapshot at target time {t}")))?;
        let start = pos.saturating_sub(m);
        out.push(HistoryWindow {
            history: snapshots[start..pos].iter().collect(),
            target: &snapshots[pos],
        });
    }
    Ok(out)
}

/// Deterministic periodic dataset: at time `t`, entity `i` connects via
/// relation `i mod n_relations` to entity
/// `(i + 1 + (t mod shift_rule)) mod n_entities`. The next object is a
/// function of `t mod shift_rule` alone, so a short history fully determines
/// every fact.
pub fn synth_cycle(
    n_entities: usize,
    n_relations: usize,
    n_times: usize,
    shift_rule: usize,
) -> Result<(Vocab, Vec<Quadruple>)> {
    if n_entities < 4 {
        return Err(EthError::invalid(
            "synthetic cycle needs at least 4 entities",
        ));
    }
    if n_relations == 0 || n_times == 0 || shift_rule == 0 {
        return Err(EthError::invalid(
            "n_relations, n_times, and shift_rule must be at least 1",
        ));
    }
    let vocab = Vocab::new(n_entities, n_relations)?;
    let mut quads = Vec::with_capacity(n_entities * n_times);
    for t in 0..n_times {
        let shift = 1 + (t % shift_rule);
        for i in 0..n_entities {
            quads.push(Quadruple::new(
                i,
                i % n_relations,
                (i + shift) % n_entities,
                t,
            ));
        }
    }
    Ok((vocab, quads))
}

/// Splits facts chronologically: `t < valid_start` trains,
/// `valid_start ≤ t < test_start` validates, the rest tests.
pub fn split_by_time(
    quads: &[Quadruple],
    valid_start: usize,
    test_start: usize,
) -> Result<(Vec<Quadruple>, Vec<Quadruple>, Vec<Quadruple>)> {
    if valid_start >= test_start {
        return Err(EthError::invalid(format!(
            "validation must start before test ({valid_start} vs {test_start})"
        )));
    }
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for q in quads {
        if q.timestamp < valid_start {
            train.push(*q);
        } else if q.timestamp < test_start {
            valid.push(*q);
        } else {
            test.push(*q);
        }
    }
    Ok((train, valid, test))
}

/// Writes facts in the loadable `s r o t` text format.
pub fn write_quadruples(path: &Path, quads: &[Quadruple]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for q in quads {
        writeln!(
            f,
            "{}\t{}\t{}\t{}",
            q.subject, q.relation, q.object, q.timestamp
        )?;
    }
    Ok(())
}

/// Writes the `|V| |E|` stat line.
pub fn write_stat(path: &Path, vocab: &Vocab) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "{}\t{}", vocab.num_entities, vocab.num_relations)?;
    Ok(())
}
