use std::collections::{BTreeSet, HashSet};

use crate::error::Result;
use crate::importance::{ImportanceTable, Span, SpanEstimator};

use super::{
    best_combination, decompose_groups, gen_candidates, objective, refine_exact, shortlist_size,
    union_of, init_sets, Candidate, GroupLog, IterationRecord, Method, PruneResult, SelectConfig,
};

/// Scores every block, then refines the pruning set to a fixpoint.
pub fn fast_block_select(est: &dyn SpanEstimator, config: &SelectConfig) -> Result<PruneResult> {
    config.validate(est.num_blocks())?;
    let table = ImportanceTable::score_blocks(est)?;
    fast_block_select_with_table(&table, est, config)
}

/// Refinement loop over an existing table.
///
/// The pool `P ∪ A` is fixed at initialization. Each group keeps its own
/// span in the shortlist, and combinations are ranked by the objective of
/// the set they produce (adjacent windows merge into one group), so the
/// objective never decreases. The loop ends when `P` repeats: on the
/// previous set that is convergence, on an older set a cycle.
pub fn fast_block_select_with_table(
    table: &ImportanceTable,
    est: &dyn SpanEstimator,
    config: &SelectConfig,
) -> Result<PruneResult> {
    config.validate(table.num_blocks())?;
    let state = init_sets(table, config.prune_count)?;
    let pool = state.pool();

    let mut current = state.pruning.clone();
    let mut history = vec![IterationRecord {
        iteration: 0,
        pruning: current.iter().copied().collect(),
        objective: objective(table, est, &current)?,
        groups: Vec::new(),
    }];
    let mut seen: HashSet<BTreeSet<usize>> = HashSet::from([current.clone()]);
    let mut converged = false;
    let mut cycle_detected = false;
    let mut iterations_used = 0;

    for iteration in 1..=config.max_iterations {
        iterations_used = iteration;
        let groups = decompose_groups(&current);

        let mut raw = Vec::with_capacity(groups.len());
        for (id, &group) in groups.iter().enumerate() {
            let candidates = gen_candidates(table, group, id, &pool)?;
            let k = shortlist_size(group.len(), config.extra_k, candidates.len());
            let mut shortlist: Vec<Candidate> = candidates[..k].to_vec();
            if !shortlist.iter().any(|c| c.span == group) {
                let own = candidates
                    .iter()
                    .find(|c| c.span == group)
                    .cloned()
                    .expect("a group always lies inside the pool");
                shortlist.push(own);
            }
            raw.push((group, candidates.len(), k, shortlist));
        }

        // One parallel pass for every shortlisted span not yet cached.
        let wanted: Vec<Span> = raw
            .iter()
            .flat_map(|(_, _, _, sl)| sl.iter().map(|c| c.span))
            .collect();
        table.ensure_spans(est, &wanted)?;
        let shortlists = raw
            .iter()
            .map(|(_, _, _, sl)| refine_exact(sl, table, est))
            .collect::<Result<Vec<_>>>()?;

        let chosen = best_combination(&shortlists, &current, |picked| {
            let spans: Vec<Span> = picked.iter().map(|c| c.span).collect();
            objective(table, est, &union_of(&spans))
        })?
        .unwrap_or_else(|| groups.clone());
        let next = union_of(&chosen);
        let next_objective = objective(table, est, &next)?;

        history.push(IterationRecord {
            iteration,
            pruning: next.iter().copied().collect(),
            objective: next_objective,
            groups: raw
                .into_iter()
                .zip(shortlists)
                .zip(&chosen)
                .map(|(((group, windows, k, _), shortlist), &chosen)| GroupLog {
                    group,
                    windows,
                    k,
                    shortlist,
                    chosen,
                })
                .collect(),
        });

        if next == current {
            converged = true;
            break;
        }
        if !seen.insert(next.clone()) {
            cycle_detected = true;
            break;
        }
        current = next;
    }

    let (final_p, final_objective) = if converged {
        let last = history.last().expect("non-empty history");
        (last.pruning.clone(), last.objective)
    } else {
        // Best set seen; the earliest wins ties.
        let best = history
            .iter()
            .fold(None::<&IterationRecord>, |acc, rec| match acc {
                Some(b) if b.objective >= rec.objective => Some(b),
                _ => Some(rec),
            })
            .expect("non-empty history");
        (best.pruning.clone(), best.objective)
    };

    Ok(PruneResult {
        method: Method::Fast,
        final_p,
        objective: final_objective,
        iterations_used,
        converged,
        cycle_detected,
        alternative: state.alternative.iter().copied().collect(),
        history,
        subsets_evaluated: None,
        fingerprint: table.fingerprint().to_string(),
    })
}
