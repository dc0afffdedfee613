//! Block and span importances, `I = -MI(input, output)`, with a span cache.
//!
//! Block `i` spans snapshots `h_{i-1} -> h_i`; a span `[start, end]` spans
//! `h_{start-1} -> h_end`. Lower (more negative) importance means the span
//! mostly copies its input and is a better pruning target.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mi::{estimate_mi, to_f64, EstimatorConfig};
use crate::trace::{hex, Trace};

/// Contiguous run of blocks `start..=end`, 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn single(block: usize) -> Self {
        Span::new(block, block)
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn blocks(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    fn check(&self, num_blocks: usize) -> Result<()> {
        if self.start < 1 || self.start > self.end || self.end > num_blocks {
            return Err(Error::Bounds(format!(
                "span [{}, {}] must satisfy 1 <= start <= end <= {num_blocks}",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.start == self.end {
            write!(f, "{{{}}}", self.start)
        } else {
            write!(f, "{{{}..{}}}", self.start, self.end)
        }
    }
}

/// Source of span mutual information.
pub trait SpanEstimator: Sync {
    fn num_blocks(&self) -> usize;
    fn sample_count(&self) -> usize;
    /// MI in nats between the input of block `start` and the output of block `end`.
    fn span_mi(&self, span: Span) -> Result<f64>;
    /// Identity of the estimator settings and the data they read.
    fn fingerprint(&self) -> &str;
    /// MI the estimator assigns to a lossless span. Defaults to `ln S`.
    fn ceiling(&self) -> f64 {
        (self.sample_count() as f64).ln()
    }
}

/// Estimates span MI directly from a trace.
pub struct TraceEstimator<'a> {
    trace: &'a Trace,
    config: EstimatorConfig,
    fingerprint: String,
    calls: AtomicUsize,
}

impl<'a> TraceEstimator<'a> {
    pub fn new(trace: &'a Trace, config: EstimatorConfig) -> Result<Self> {
        Self::with_trace_fingerprint(trace, config, &trace.fingerprint())
    }

    /// Skips rehashing the trace when its fingerprint is already known.
    pub fn with_trace_fingerprint(
        trace: &'a Trace,
        config: EstimatorConfig,
        trace_fingerprint: &str,
    ) -> Result<Self> {
        config.validate()?;
        let mut hasher = Sha256::new();
        hasher.update(trace_fingerprint.as_bytes());
        hasher.update(serde_json::to_vec(&config).expect("config serializes"));
        Ok(TraceEstimator {
            trace,
            config,
            fingerprint: hex(&hasher.finalize()[..8]),
            calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn trace(&self) -> &Trace {
        self.trace
    }

    /// Number of estimator invocations so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl SpanEstimator for TraceEstimator<'_> {
    fn num_blocks(&self) -> usize {
        self.trace.num_blocks()
    }

    fn sample_count(&self) -> usize {
        self.trace.num_samples()
    }

    fn span_mi(&self, span: Span) -> Result<f64> {
        let (x, y) = self.trace.layer_pair(span.start, span.end)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let est = estimate_mi(to_f64(x).view(), to_f64(y).view(), &self.config)
            .map_err(|e| e.at_span(span.start, span.end))?;
        Ok(est.value)
    }

    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn ceiling(&self) -> f64 {
        self.config.ceiling(self.trace.num_samples())
    }
}

/// Span MI from a fixed function, for replaying known values.
pub struct FixedSpans<F> {
    num_blocks: usize,
    sample_count: usize,
    mi: F,
    fingerprint: String,
    calls: AtomicUsize,
}

impl<F: Fn(Span) -> f64 + Sync> FixedSpans<F> {
    pub fn new(num_blocks: usize, sample_count: usize, mi: F) -> Self {
        FixedSpans {
            num_blocks,
            sample_count,
            mi,
            fingerprint: format!("fixed-{num_blocks}-{sample_count}"),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<F: Fn(Span) -> f64 + Sync> SpanEstimator for FixedSpans<F> {
    fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    fn sample_count(&self) -> usize {
        self.sample_count
    }

    fn span_mi(&self, span: Span) -> Result<f64> {
        span.check(self.num_blocks)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let cap = (self.sample_count as f64).ln();
        Ok((self.mi)(span).clamp(0.0, cap))
    }

    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

/// Per-block importances plus a memo of exact span importances.
#[derive(Debug)]
pub struct ImportanceTable {
    per_block: Vec<f64>,
    spans: RwLock<BTreeMap<Span, f64>>,
    sample_count: usize,
    ceiling: f64,
    fingerprint: String,
}

impl ImportanceTable {
    /// One estimate per block, `I^i = -MI(h_{i-1}, h_i)`; blocks are scored
    /// in parallel.
    pub fn score_blocks(est: &dyn SpanEstimator) -> Result<Self> {
        let t = est.num_blocks();
        let scored: Vec<Result<f64>> = (1..=t)
            .into_par_iter()
            .map(|i| {
                est.span_mi(Span::single(i))
                    .map(|mi| -mi)
                    .map_err(|e| e.at_block(i))
            })
            .collect();
        let per_block = scored.into_iter().collect::<Result<Vec<_>>>()?;
        let spans = per_block
            .iter()
            .enumerate()
            .map(|(i, &v)| (Span::single(i + 1), v))
            .collect();
        Ok(ImportanceTable {
            per_block,
            spans: RwLock::new(spans),
            sample_count: est.sample_count(),
            ceiling: est.ceiling(),
            fingerprint: est.fingerprint().to_string(),
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.per_block.len()
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// `ln S`, the largest MI any span can carry.
    pub fn cap(&self) -> f64 {
        (self.sample_count as f64).ln()
    }

    /// The estimator's reading for a lossless span.
    pub fn ceiling(&self) -> f64 {
        self.ceiling
    }

    pub fn per_block(&self) -> &[f64] {
        &self.per_block
    }

    /// Importance of block `i`, 1-based.
    pub fn block(&self, i: usize) -> Result<f64> {
        if i < 1 || i > self.num_blocks() {
            return Err(Error::Bounds(format!(
                "block {i} outside 1..={}",
                self.num_blocks()
            )));
        }
        Ok(self.per_block[i - 1])
    }

    /// Blocks ordered least important first; ties go to the lower index.
    pub fn ascending(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (1..=self.num_blocks()).collect();
        order.sort_by(|&a, &b| {
            self.per_block[a - 1]
                .total_cmp(&self.per_block[b - 1])
                .then(a.cmp(&b))
        });
        order
    }

    pub fn cached(&self, span: Span) -> Option<f64> {
        self.spans.read().expect("span cache poisoned").get(&span).copied()
    }

    pub fn cached_spans(&self) -> Vec<(Span, f64)> {
        self.spans
            .read()
            .expect("span cache poisoned")
            .iter()
            .map(|(&s, &v)| (s, v))
            .collect()
    }

    fn check_source(&self, est: &dyn SpanEstimator) -> Result<()> {
        if est.fingerprint() != self.fingerprint {
            return Err(Error::Parameter(format!(
                "estimator {} does not match table {}",
                est.fingerprint(),
                self.fingerprint
            )));
        }
        Ok(())
    }

    /// Exact span importance, estimated at most once per span.
    pub fn span_importance(&self, est: &dyn SpanEstimator, span: Span) -> Result<f64> {
        span.check(self.num_blocks())?;
        if let Some(v) = self.cached(span) {
            return Ok(v);
        }
        self.check_source(est)?;
        let value = -est.span_mi(span).map_err(|e| e.at_span(span.start, span.end))?;
        Ok(*self
            .spans
            .write()
            .expect("span cache poisoned")
            .entry(span)
            .or_insert(value))
    }

    /// Fills the cache for every listed span, estimating misses in parallel.
    pub fn ensure_spans(&self, est: &dyn SpanEstimator, spans: &[Span]) -> Result<()> {
        for s in spans {
            s.check(self.num_blocks())?;
        }
        let mut missing: Vec<Span> = spans.iter().copied().filter(|&s| self.cached(s).is_none()).collect();
        missing.sort();
        missing.dedup();
        if missing.is_empty() {
            return Ok(());
        }
        self.check_source(est)?;
        let computed: Vec<Result<(Span, f64)>> = missing
            .par_iter()
            .map(|&s| {
                est.span_mi(s)
                    .map(|mi| (s, -mi))
                    .map_err(|e| e.at_span(s.start, s.end))
            })
            .collect();
        let computed = computed.into_iter().collect::<Result<Vec<_>>>()?;
        let mut cache = self.spans.write().expect("span cache poisoned");
        for (s, v) in computed {
            cache.entry(s).or_insert(v);
        }
        Ok(())
    }

    /// Sum of member-block importances; a cheap stand-in for the exact span
    /// importance.
    pub fn proxy_span_score(&self, span: Span) -> Result<f64> {
        span.check(self.num_blocks())?;
        Ok(self.per_block[span.start - 1..span.end].iter().sum())
    }

    pub fn report(&self) -> ImportanceReport {
        ImportanceReport {
            fingerprint: self.fingerprint.clone(),
            sample_count: self.sample_count,
            ceiling: self.ceiling,
            per_block: self.per_block.clone(),
            ascending: self.ascending(),
            spans: self
                .cached_spans()
                .into_iter()
                .map(|(span, importance)| SpanEntry {
                    start: span.start,
                    end: span.end,
                    importance,
                })
                .collect(),
        }
    }
}

/// Serialized form of an [`ImportanceTable`]. Field order is the JSON key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub fingerprint: String,
    pub sample_count: usize,
    pub ceiling: f64,
    /// Index 0 holds block 1.
    pub per_block: Vec<f64>,
    pub ascending: Vec<usize>,
    pub spans: Vec<SpanEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanEntry {
    pub start: usize,
    pub end: usize,
    pub importance: f64,
}
