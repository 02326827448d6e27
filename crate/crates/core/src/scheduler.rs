//! Deterministic batched sample execution.
//!
//! Samples are planned into contiguous per-level batches (one batch per
//! worker-pool slot), executed by a fixed-size thread pool that never moves
//! a batch across levels, and collected in a canonical order so estimator
//! output is a pure function of configuration and master seed — never of
//! worker count or interleaving.

use crate::{Error, Result};
use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Instant;

/// Constant trailing bytes of every stream key; fixed so that keys are an
/// injective packing of (master_seed, level_tag, index).
pub const STREAM_TAG: [u8; 8] = *b"pde-mlmc";

/// 32-byte RNG stream key for one sample: master seed, level tag, and
/// sample index in little-endian order, followed by a constant tag.
/// Coupled multilevel solves reuse the identical key on both levels.
pub fn seed_for(master_seed: u64, level_tag: u64, index: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&level_tag.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..32].copy_from_slice(&STREAM_TAG);
    key
}

/// One contiguous run of sample indices on one level, assigned to a pool
/// slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub level: usize,
    pub start: u64,
    pub len: u64,
    pub slot: usize,
}

/// The full batch assignment for a run.
#[derive(Debug, Clone)]
pub struct SchedulePlan {
    pub batches: Vec<Batch>,
    pub pool_sizes: Vec<usize>,
    pub sample_counts: Vec<u64>,
}

impl SchedulePlan {
    pub fn n_levels(&self) -> usize {
        self.pool_sizes.len()
    }

    pub fn total_slots(&self) -> usize {
        self.pool_sizes.iter().sum()
    }
}

/// Split level l's N_l samples into min(p_l, N_l) contiguous batches whose
/// sizes differ by at most one (the first N_l mod p batches take the extra
/// sample); batch j is assigned pool slot j.
pub fn plan_batches(sample_counts: &[u64], pool_sizes: &[usize]) -> Result<SchedulePlan> {
    if sample_counts.len() != pool_sizes.len() {
        return Err(Error::InvalidConfig(format!(
            "{} sample counts but {} pool sizes",
            sample_counts.len(),
            pool_sizes.len()
        )));
    }
    let mut batches = Vec::new();
    for (level, (&n, &p)) in sample_counts.iter().zip(pool_sizes).enumerate() {
        if n == 0 {
            return Err(Error::InvalidConfig(format!(
                "level {level} has zero samples"
            )));
        }
        if p == 0 {
            return Err(Error::InvalidConfig(format!(
                "level {level} has an empty worker pool"
            )));
        }
        let b = (p as u64).min(n);
        let base = n / b;
        let extra = n % b;
        let mut start = 0u64;
        for j in 0..b {
            let len = base + u64::from(j < extra);
            batches.push(Batch {
                level,
                start,
                len,
                slot: j as usize,
            });
            start += len;
        }
        debug_assert_eq!(start, n);
    }
    Ok(SchedulePlan {
        batches,
        pool_sizes: pool_sizes.to_vec(),
        sample_counts: sample_counts.to_vec(),
    })
}

/// Executed batch: payload entries follow sample-index order.
#[derive(Debug)]
pub struct TaskResult<T> {
    pub level: usize,
    pub start: u64,
    pub len: u64,
    pub payload: Vec<T>,
    pub seconds: f64,
}

/// One schedule-trace row (timestamps are seconds since execution began).
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub level: usize,
    pub slot: usize,
    pub start: u64,
    pub len: u64,
    pub worker: usize,
    pub begin_seconds: f64,
    pub end_seconds: f64,
}

/// Results plus the utilization trace, both sorted by (level, first index).
#[derive(Debug)]
pub struct ExecutionOutput<T> {
    pub results: Vec<TaskResult<T>>,
    pub trace: Vec<TraceRow>,
}

impl<T> ExecutionOutput<T> {
    /// Flatten payloads in (level, sample index) order.
    pub fn into_payloads(self) -> Vec<(usize, u64, T)> {
        let mut out = Vec::new();
        for r in self.results {
            for (off, v) in r.payload.into_iter().enumerate() {
                out.push((r.level, r.start + off as u64, v));
            }
        }
        out
    }
}

struct DispatchState {
    pending: Vec<VecDeque<usize>>,
    active: Vec<usize>,
    remaining: usize,
    abort: bool,
}

/// Run every sample of the plan through `task_fn`, with at most `workers`
/// OS threads (0 = one per pool slot). A failing sample aborts the plan:
/// in-flight batches drain, no new batch starts, and every failure is
/// reported.
pub fn execute<T, F>(plan: &SchedulePlan, workers: usize, task_fn: F) -> Result<ExecutionOutput<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    run(plan, workers, |batch| {
        let mut payload = Vec::with_capacity(batch.len as usize);
        for off in 0..batch.len {
            let index = batch.start + off;
            match task_fn(batch.level, index) {
                Ok(v) => payload.push(v),
                Err(e) => return Err(e.for_sample(batch.level, index)),
            }
        }
        Ok(payload)
    })
}

/// Like `execute`, but `batch_fn` consumes a whole batch and returns one
/// payload (for streamed accumulation where per-sample storage is too
/// large). The payload vector of each result has length 1.
pub fn execute_batched<T, F>(
    plan: &SchedulePlan,
    workers: usize,
    batch_fn: F,
) -> Result<ExecutionOutput<T>>
where
    T: Send,
    F: Fn(&Batch) -> Result<T> + Sync,
{
    run(plan, workers, |batch| {
        batch_fn(batch)
            .map(|v| vec![v])
            .map_err(|e| e.for_sample(batch.level, batch.start))
    })
}

fn run<T, F>(plan: &SchedulePlan, workers: usize, batch_fn: F) -> Result<ExecutionOutput<T>>
where
    T: Send,
    F: Fn(&Batch) -> Result<Vec<T>> + Sync,
{
    let n_levels = plan.n_levels();
    let n_batches = plan.batches.len();
    if n_batches == 0 {
        return Ok(ExecutionOutput {
            results: Vec::new(),
            trace: Vec::new(),
        });
    }
    let worker_cap = plan.total_slots().max(1).min(n_batches);
    let workers = if workers == 0 {
        std::thread::available_parallelism()
            .map(|p| p.get())
            .unwrap_or(1)
            .min(worker_cap)
    } else {
        workers.min(worker_cap)
    }
    .max(1);

    let mut pending = vec![VecDeque::new(); n_levels];
    for (i, b) in plan.batches.iter().enumerate() {
        pending[b.level].push_back(i);
    }
    let state = Mutex::new(DispatchState {
        pending,
        active: vec![0; n_levels],
        remaining: n_batches,
        abort: false,
    });
    let idle = Condvar::new();
    let clock = Instant::now();
    let collected: Mutex<Vec<(usize, TaskResult<T>, TraceRow)>> = Mutex::new(Vec::new());
    let failures: Mutex<Vec<Error>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for worker in 0..workers {
            let state = &state;
            let idle = &idle;
            let collected = &collected;
            let failures = &failures;
            let batch_fn = &batch_fn;
            scope.spawn(move || {
                let mut my_level: Option<usize> = None;
                loop {
                    let batch_idx = {
                        let mut st = state.lock().unwrap();
                        loop {
                            if st.abort || st.remaining == 0 {
                                return;
                            }
                            // Stay on the current level's pool while it has
                            // work and a free slot; otherwise adopt the
                            // lowest level that does. A batch never changes
                            // level.
                            let pick = my_level
                                .filter(|&l| {
                                    !st.pending[l].is_empty() && st.active[l] < plan.pool_sizes[l]
                                })
                                .or_else(|| {
                                    (0..n_levels).find(|&l| {
                                        !st.pending[l].is_empty()
                                            && st.active[l] < plan.pool_sizes[l]
                                    })
                                });
                            if let Some(l) = pick {
                                let idx = st.pending[l].pop_front().unwrap();
                                st.active[l] += 1;
                                st.remaining -= 1;
                                break idx;
                            }
                            st = idle.wait(st).unwrap();
                        }
                    };
                    let batch = &plan.batches[batch_idx];
                    my_level = Some(batch.level);
                    let begin = clock.elapsed().as_secs_f64();
                    let outcome = batch_fn(batch);
                    let end = clock.elapsed().as_secs_f64();
                    match outcome {
                        Ok(payload) => {
                            let result = TaskResult {
                                level: batch.level,
                                start: batch.start,
                                len: batch.len,
                                payload,
                                seconds: end - begin,
                            };
                            let trace = TraceRow {
                                level: batch.level,
                                slot: batch.slot,
                                start: batch.start,
                                len: batch.len,
                                worker,
                                begin_seconds: begin,
                                end_seconds: end,
                            };
                            collected.lock().unwrap().push((batch_idx, result, trace));
                        }
                        Err(e) => {
                            failures.lock().unwrap().push(e);
                            state.lock().unwrap().abort = true;
                        }
                    }
                    state.lock().unwrap().active[batch.level] -= 1;
                    idle.notify_all();
                }
            });
        }
    });

    let mut failures = failures.into_inner().unwrap();
    if !failures.is_empty() {
        failures.sort_by_key(|e| match e {
            Error::SampleFailed { level, index, .. } => (*level, *index),
            _ => (usize::MAX, u64::MAX),
        });
        return Err(Error::ExecutionAborted { failures });
    }
    let mut collected = collected.into_inner().unwrap();
    collected.sort_by_key(|(idx, _, _)| *idx);
    let (results, trace) = collected.into_iter().map(|(_, r, t)| (r, t)).unzip();
    Ok(ExecutionOutput { results, trace })
}

/// Write the schedule trace as CSV (level, slot, sample range, worker,
/// begin/end seconds).
pub fn write_trace_csv<W: std::io::Write>(out: &mut W, trace: &[TraceRow]) -> Result<()> {
    writeln!(
        out,
        "level,slot,first_sample,n_samples,worker,begin_seconds,end_seconds"
    )?;
    for row in trace {
        writeln!(
            out,
            "{},{},{},{},{},{:.6},{:.6}",
            row.level, row.slot, row.start, row.len, row.worker, row.begin_seconds, row.end_seconds
        )?;
    }
    Ok(())
}
