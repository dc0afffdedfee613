//! Fast-Block-Select and its baselines.
//!
//! The pruning set `P` starts as the `N` least important blocks and the
//! alternative set `A` as the next `M = min(N, T - N)`. Each iteration splits
//! `P` into maximal contiguous groups, enumerates same-length windows inside
//! the pool `P ∪ A`, ranks them by the summed block importance, estimates the
//! exact span MI of the top `K = min(floor(ln L) + k, l)`, and picks one
//! non-overlapping window per group. Iteration stops at a fixpoint.
//!
//! Sets are compared with a single objective: the sum over the maximal
//! groups of `MI(group) - c`, where `c` is what the estimator reports for a
//! lossless span (`ln S` for exact values). Each term is minus the
//! information a removed group destroys. For a fixed number of groups this
//! ranks combinations exactly like the plain sum of span MI.

mod baseline;
mod fast;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::{ImportanceTable, Span, SpanEstimator};
use crate::mi::EstimatorConfig;

pub use baseline::{greedy_select, oracle_select, oracle_select_with_table, subset_count, ORACLE_SUBSET_LIMIT};
pub use fast::{fast_block_select, fast_block_select_with_table};

/// A maximal contiguous run of blocks inside `P`.
pub type Group = Span;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectConfig {
    /// `N`, blocks to remove.
    pub prune_count: usize,
    /// `k`, extra exact evaluations per group.
    pub extra_k: usize,
    pub max_iterations: usize,
    pub estimator: EstimatorConfig,
}

impl SelectConfig {
    pub fn new(prune_count: usize) -> Self {
        SelectConfig {
            prune_count,
            extra_k: 5,
            max_iterations: 50,
            estimator: EstimatorConfig::default(),
        }
    }

    pub fn validate(&self, num_blocks: usize) -> Result<()> {
        check_prune_count(self.prune_count, num_blocks)?;
        if self.extra_k == 0 {
            return Err(Error::Parameter("extra_k must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Parameter("max_iterations must be positive".into()));
        }
        self.estimator.validate()
    }
}

fn check_prune_count(n: usize, t: usize) -> Result<()> {
    if n < 1 || n >= t {
        return Err(Error::Parameter(format!(
            "prune count must satisfy 1 <= N < T = {t}, got {n}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub span: Span,
    /// Sum of member-block importances.
    pub proxy: f64,
    /// Exact span importance once refined.
    pub exact: Option<f64>,
    /// Index of the group this candidate could replace.
    pub source_group: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PruneState {
    pub pruning: BTreeSet<usize>,
    pub alternative: BTreeSet<usize>,
}

impl PruneState {
    /// `P ∪ A`, the only blocks candidates may use.
    pub fn pool(&self) -> BTreeSet<usize> {
        self.pruning.union(&self.alternative).copied().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fast,
    Greedy,
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupLog {
    pub group: Span,
    /// Windows of the group's length inside the pool.
    pub windows: usize,
    /// Shortlist size before the group's own span is forced in.
    pub k: usize,
    pub shortlist: Vec<Candidate>,
    pub chosen: Span,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 0 is the initial set.
    pub iteration: usize,
    pub pruning: Vec<usize>,
    pub objective: f64,
    pub groups: Vec<GroupLog>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneResult {
    pub method: Method,
    pub final_p: Vec<usize>,
    pub objective: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub cycle_detected: bool,
    pub alternative: Vec<usize>,
    pub history: Vec<IterationRecord>,
    pub subsets_evaluated: Option<u64>,
    pub fingerprint: String,
}

/// `M = min(N, T - N)`.
pub fn alternative_count(n: usize, t: usize) -> usize {
    n.min(t - n)
}

/// `K = min(floor(ln L) + k, l)` with the natural logarithm.
pub fn shortlist_size(len: usize, extra_k: usize, available: usize) -> usize {
    let log_term = (len.max(1) as f64).ln().floor() as usize;
    (log_term + extra_k).min(available)
}

/// `P` = the `N` least important blocks, `A` = the next `M`.
pub fn init_sets(table: &ImportanceTable, n: usize) -> Result<PruneState> {
    let t = table.num_blocks();
    check_prune_count(n, t)?;
    let order = table.ascending();
    let m = alternative_count(n, t);
    Ok(PruneState {
        pruning: order[..n].iter().copied().collect(),
        alternative: order[n..n + m].iter().copied().collect(),
    })
}

/// Maximal runs of consecutive indices, by start.
pub fn decompose_groups(pruning: &BTreeSet<usize>) -> Vec<Group> {
    let mut groups: Vec<Group> = Vec::new();
    for &b in pruning {
        match groups.last_mut() {
            Some(g) if g.end + 1 == b => g.end = b,
            _ => groups.push(Span::single(b)),
        }
    }
    groups
}

/// Every window of the group's length lying wholly inside `pool`, sorted by
/// ascending proxy score, ties to the lower start.
pub fn gen_candidates(
    table: &ImportanceTable,
    group: Group,
    group_id: usize,
    pool: &BTreeSet<usize>,
) -> Result<Vec<Candidate>> {
    let t = table.num_blocks();
    let len = group.len();
    if len > t {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for start in 1..=t + 1 - len {
        let span = Span::new(start, start + len - 1);
        if span.blocks().all(|b| pool.contains(&b)) {
            out.push(Candidate {
                span,
                proxy: table.proxy_span_score(span)?,
                exact: None,
                source_group: group_id,
            });
        }
    }
    out.sort_by(|a, b| a.proxy.total_cmp(&b.proxy).then(a.span.start.cmp(&b.span.start)));
    Ok(out)
}

/// First `K` candidates of a proxy-sorted list.
pub fn shortlist_k(candidates: &[Candidate], len: usize, extra_k: usize) -> Vec<Candidate> {
    let k = shortlist_size(len, extra_k, candidates.len());
    candidates[..k].to_vec()
}

/// Fills exact importances through the table cache and re-sorts ascending by
/// exact importance, ties to the lower start.
pub fn refine_exact(
    shortlist: &[Candidate],
    table: &ImportanceTable,
    est: &dyn SpanEstimator,
) -> Result<Vec<Candidate>> {
    let spans: Vec<Span> = shortlist.iter().map(|c| c.span).collect();
    table.ensure_spans(est, &spans)?;
    let mut out = shortlist
        .iter()
        .map(|c| {
            let exact = table.span_importance(est, c.span)?;
            Ok(Candidate {
                exact: Some(exact),
                ..c.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| {
        a.exact
            .expect("filled above")
            .total_cmp(&b.exact.expect("filled above"))
            .then(a.span.start.cmp(&b.span.start))
    });
    Ok(out)
}

/// One window per group, pairwise disjoint, maximizing the summed span MI
/// (minimizing the summed exact importance). Ties prefer the current set,
/// then the lexicographically smallest block list. If every combination
/// overlaps, the current set is returned.
pub fn conflict_free_select(
    shortlists: &[Vec<Candidate>],
    current: &BTreeSet<usize>,
) -> Result<BTreeSet<usize>> {
    let choice = best_combination(shortlists, current, |chosen| {
        Ok(-chosen.iter().map(|c| c.exact.expect("checked")).sum::<f64>())
    })?;
    Ok(match choice {
        Some(spans) => union_of(&spans),
        None => current.clone(),
    })
}

pub(crate) fn union_of(spans: &[Span]) -> BTreeSet<usize> {
    spans.iter().flat_map(|s| s.blocks()).collect()
}

/// Exhaustive search over the per-group shortlists. `score` sees the chosen
/// candidates in group order; higher wins. Returns the chosen spans, or
/// `None` when no disjoint combination exists.
pub(crate) fn best_combination<F>(
    shortlists: &[Vec<Candidate>],
    current: &BTreeSet<usize>,
    mut score: F,
) -> Result<Option<Vec<Span>>>
where
    F: FnMut(&[&Candidate]) -> Result<f64>,
{
    for (g, list) in shortlists.iter().enumerate() {
        if list.is_empty() {
            return Err(Error::Invariant(format!("group {g} has an empty shortlist")));
        }
        if list.iter().any(|c| c.exact.is_none()) {
            return Err(Error::Invariant(format!(
                "group {g} shortlist has unrefined candidates"
            )));
        }
    }

    struct Best {
        score: f64,
        is_current: bool,
        blocks: Vec<usize>,
        spans: Vec<Span>,
    }

    fn walk<'a, F>(
        shortlists: &'a [Vec<Candidate>],
        current: &BTreeSet<usize>,
        chosen: &mut Vec<&'a Candidate>,
        score: &mut F,
        best: &mut Option<Best>,
    ) -> Result<()>
    where
        F: FnMut(&[&Candidate]) -> Result<f64>,
    {
        let depth = chosen.len();
        if depth == shortlists.len() {
            let s = score(chosen)?;
            let spans: Vec<Span> = chosen.iter().map(|c| c.span).collect();
            let union = union_of(&spans);
            let is_current = &union == current;
            let blocks: Vec<usize> = union.into_iter().collect();
            let better = match best {
                None => true,
                Some(b) => {
                    s > b.score
                        || (s == b.score
                            && ((is_current && !b.is_current)
                                || (is_current == b.is_current && blocks < b.blocks)))
                }
            };
            if better {
                *best = Some(Best {
                    score: s,
                    is_current,
                    blocks,
                    spans,
                });
            }
            return Ok(());
        }
        for cand in &shortlists[depth] {
            if chosen.iter().any(|c| c.span.overlaps(&cand.span)) {
                continue;
            }
            chosen.push(cand);
            walk(shortlists, current, chosen, score, best)?;
            chosen.pop();
        }
        Ok(())
    }

    let mut best = None;
    let mut chosen = Vec::with_capacity(shortlists.len());
    walk(shortlists, current, &mut chosen, &mut score, &mut best)?;
    Ok(best.map(|b| b.spans))
}

/// `sum over maximal groups of (MI(group) - ceiling)`; higher is better.
pub fn objective(
    table: &ImportanceTable,
    est: &dyn SpanEstimator,
    pruning: &BTreeSet<usize>,
) -> Result<f64> {
    let ceiling = table.ceiling();
    let mut total = 0.0;
    for g in decompose_groups(pruning) {
        total += group_term(table.span_importance(est, g)?, ceiling);
    }
    Ok(total)
}

#[inline]
pub(crate) fn group_term(importance: f64, ceiling: f64) -> f64 {
    -importance - ceiling
}
