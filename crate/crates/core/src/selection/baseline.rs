//! Greedy and exhaustive baselines sharing the refinement objective.

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::importance::{ImportanceTable, Span, SpanEstimator};

use super::{
    alternative_count, check_prune_count, group_term, init_sets, objective, IterationRecord, Method,
    PruneResult, SelectConfig,
};

/// Largest subset count the oracle will enumerate.
pub const ORACLE_SUBSET_LIMIT: u128 = 10_000_000;

/// `C(t, n)`, saturating.
pub fn subset_count(t: usize, n: usize) -> u128 {
    if n > t {
        return 0;
    }
    let n = n.min(t - n) as u128;
    let mut acc: u128 = 1;
    for i in 0..n {
        acc = match acc.checked_mul(t as u128 - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// The `N` least important blocks, without refinement.
pub fn greedy_select(
    table: &ImportanceTable,
    est: &dyn SpanEstimator,
    n: usize,
) -> Result<PruneResult> {
    let state = init_sets(table, n)?;
    let value = objective(table, est, &state.pruning)?;
    let pruning: Vec<usize> = state.pruning.iter().copied().collect();
    Ok(PruneResult {
        method: Method::Greedy,
        final_p: pruning.clone(),
        objective: value,
        iterations_used: 0,
        converged: true,
        cycle_detected: false,
        alternative: state.alternative.iter().copied().collect(),
        history: vec![IterationRecord {
            iteration: 0,
            pruning,
            objective: value,
            groups: Vec::new(),
        }],
        subsets_evaluated: None,
        fingerprint: table.fingerprint().to_string(),
    })
}

pub fn oracle_select(est: &dyn SpanEstimator, config: &SelectConfig) -> Result<PruneResult> {
    config.validate(est.num_blocks())?;
    guard(est.num_blocks(), config.prune_count)?;
    let table = ImportanceTable::score_blocks(est)?;
    oracle_select_with_table(&table, est, config.prune_count)
}

fn guard(t: usize, n: usize) -> Result<u128> {
    let subsets = subset_count(t, n);
    if subsets > ORACLE_SUBSET_LIMIT {
        return Err(Error::Capability {
            subsets,
            limit: ORACLE_SUBSET_LIMIT,
        });
    }
    Ok(subsets)
}

/// Enumerates every `N`-subset in lexicographic order and keeps the first
/// maximizer of the objective.
pub fn oracle_select_with_table(
    table: &ImportanceTable,
    est: &dyn SpanEstimator,
    n: usize,
) -> Result<PruneResult> {
    let t = table.num_blocks();
    check_prune_count(n, t)?;
    let subsets = guard(t, n)?;

    // Groups of an N-subset are at most N long.
    let spans: Vec<Span> = (1..=n)
        .flat_map(|len| (1..=t + 1 - len).map(move |s| Span::new(s, s + len - 1)))
        .collect();
    table.ensure_spans(est, &spans)?;
    let mut term = vec![vec![f64::NAN; t + 1]; t + 1];
    let ceiling = table.ceiling();
    for span in &spans {
        let imp = table.span_importance(est, *span)?;
        term[span.start][span.end] = group_term(imp, ceiling);
    }

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut evaluated: u64 = 0;
    for subset in (1..=t).combinations(n) {
        evaluated += 1;
        let mut total = 0.0;
        let mut start = subset[0];
        for w in 0..subset.len() {
            let b = subset[w];
            let closes = w + 1 == subset.len() || subset[w + 1] != b + 1;
            if closes {
                total += term[start][b];
                if w + 1 < subset.len() {
                    start = subset[w + 1];
                }
            }
        }
        if best.as_ref().is_none_or(|(v, _)| total > *v) {
            best = Some((total, subset));
        }
    }
    debug_assert_eq!(u128::from(evaluated), subsets);

    let (value, final_p) = best.expect("at least one subset");
    let alternative = {
        let order = table.ascending();
        order
            .into_iter()
            .filter(|b| !final_p.contains(b))
            .take(alternative_count(n, t))
            .sorted()
            .collect()
    };
    Ok(PruneResult {
        method: Method::Oracle,
        final_p: final_p.clone(),
        objective: value,
        iterations_used: 0,
        converged: true,
        cycle_detected: false,
        alternative,
        history: vec![IterationRecord {
            iteration: 0,
            pruning: final_p,
            objective: value,
            groups: Vec::new(),
        }],
        subsets_evaluated: Some(evaluated),
        fingerprint: table.fingerprint().to_string(),
    })
}
