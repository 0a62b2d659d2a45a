//! Shared-memory workers, balanced link partitions and deterministic
//! sum-reduction.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Contiguous range of link ids owned by one worker.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkPartition {
    pub owner: usize,
    pub range: Range<usize>,
}

/// Splits `0..link_count` into `workers` contiguous ranges whose sizes differ
/// by at most one. With more workers than links some ranges are empty.
pub fn partition_links(link_count: usize, workers: usize) -> Result<Vec<LinkPartition>> {
    if workers < 1 {
        return Err(Error::config("worker count must be >= 1"));
    }
    let base = link_count / workers;
    let extra = link_count % workers;
    let mut start = 0;
    Ok((0..workers)
        .map(|owner| {
            let len = base + usize::from(owner < extra);
            let range = start..start + len;
            start += len;
            LinkPartition { owner, range }
        })
        .collect())
}

/// Links per block in [`WorkerPool::sum_links`].
pub const SUM_BLOCK: usize = 256;

/// Combines one vector per worker into their elementwise sum.
///
/// Implementations must make the result independent of the order in which
/// workers finish.
pub trait Reducer: Send + Sync {
    fn all_reduce_sum(&self, locals: &[&[f64]]) -> Result<Vec<f64>>;
}

/// Sums worker contributions in worker-index order, so a fixed worker count
/// gives bit-identical results run to run.
#[derive(Clone, Copy, Debug, Default)]
pub struct OrderedReducer;

impl Reducer for OrderedReducer {
    fn all_reduce_sum(&self, locals: &[&[f64]]) -> Result<Vec<f64>> {
        let Some(first) = locals.first() else {
            return Ok(Vec::new());
        };
        let n = first.len();
        if let Some(bad) = locals.iter().position(|v| v.len() != n) {
            return Err(Error::structural(format!(
                "worker {bad} contributed {} values, expected {n}",
                locals[bad].len()
            )));
        }
        let mut out = first.to_vec();
        for v in &locals[1..] {
            for (o, x) in out.iter_mut().zip(v.iter()) {
                *o += x;
            }
        }
        Ok(out)
    }
}

/// Convenience over [`Reducer::all_reduce_sum`] for owned vectors.
pub fn all_reduce_sum<V: AsRef<[f64]>>(reducer: &dyn Reducer, locals: &[V]) -> Result<Vec<f64>> {
    let views: Vec<&[f64]> = locals.iter().map(AsRef::as_ref).collect();
    reducer.all_reduce_sum(&views)
}

/// A fixed set of `M` long-lived worker threads.
pub struct WorkerPool {
    pool: rayon::ThreadPool,
    workers: usize,
    reducer: Box<dyn Reducer>,
}

impl std::fmt::Debug for WorkerPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerPool").field("workers", &self.workers).finish()
    }
}

impl WorkerPool {
    pub fn new(workers: usize) -> Result<Self> {
        Self::with_reducer(workers, Box::new(OrderedReducer))
    }

    pub fn with_reducer(workers: usize, reducer: Box<dyn Reducer>) -> Result<Self> {
        if workers < 1 {
            return Err(Error::config("worker count must be >= 1"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("qdta-worker-{i}"))
            .build()
            .map_err(|e| Error::config(format!("cannot start workers: {e}")))?;
        Ok(WorkerPool { pool, workers, reducer })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn reducer(&self) -> &dyn Reducer {
        self.reducer.as_ref()
    }

    /// Runs `job(k)` for every worker index `k` and returns the results in
    /// worker order. Acts as a barrier: returns once every worker is done.
    pub fn run<R, F>(&self, job: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        if self.workers == 1 {
            return vec![job(0)];
        }
        self.pool
            .install(|| (0..self.workers).into_par_iter().map(&job).collect())
    }

    /// Runs `job(k, &mut items[k])` for every worker's item in parallel.
    pub fn run_mut<T, F>(&self, items: &mut [T], job: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        if self.workers == 1 {
            items.iter_mut().enumerate().for_each(|(k, t)| job(k, t));
            return;
        }
        self.pool.install(|| {
            items.par_iter_mut().enumerate().for_each(|(k, t)| job(k, t));
        });
    }

    /// Runs `job` over each owned link range of `link_count` links.
    pub fn run_links<R, F>(&self, link_count: usize, job: F) -> Vec<R>
    where
        R: Send,
        F: Fn(Range<usize>) -> R + Sync + Send,
    {
        let parts = partition_links(link_count, self.workers).expect("workers >= 1");
        self.run(|k| job(parts[k].range.clone()))
    }

    pub fn all_reduce_sum<V: AsRef<[f64]>>(&self, locals: &[V]) -> Result<Vec<f64>> {
        all_reduce_sum(self.reducer.as_ref(), locals)
    }

    /// Sums `term(i)` over all links. Links are grouped into fixed blocks of
    /// [`SUM_BLOCK`] ids; workers own contiguous runs of whole blocks, block
    /// partials travel through [`Self::all_reduce_sum`] zero-padded, and the
    /// blocks are then added in block order. The result is therefore
    /// bit-identical for every worker count.
    pub fn sum_links<const K: usize, F>(&self, link_count: usize, term: F) -> Result<[f64; K]>
    where
        F: Fn(usize) -> Result<[f64; K]> + Sync + Send,
    {
        let blocks = link_count.div_ceil(SUM_BLOCK);
        let parts = partition_links(blocks, self.workers)?;
        let locals = self
            .run(|k| {
                let mut local = vec![0.0; blocks * K];
                for b in parts[k].range.clone() {
                    let slot = &mut local[b * K..(b + 1) * K];
                    for i in b * SUM_BLOCK..((b + 1) * SUM_BLOCK).min(link_count) {
                        for (acc, v) in slot.iter_mut().zip(term(i)?) {
                            *acc += v;
                        }
                    }
                }
                Ok(local)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let partials = self.all_reduce_sum(&locals)?;
        let mut out = [0.0; K];
        for block in partials.chunks_exact(K.max(1)) {
            for (o, v) in out.iter_mut().zip(block) {
                *o += v;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn partition_examples() {
        let sizes: Vec<_> = partition_links(10, 3).unwrap().iter().map(|p| p.range.len()).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        assert_eq!(partition_links(7, 1).unwrap(), vec![LinkPartition { owner: 0, range: 0..7 }]);
        let sparse = partition_links(2, 4).unwrap();
        assert_eq!(sparse.iter().filter(|p| p.range.is_empty()).count(), 2);
        assert!(partition_links(5, 0).is_err());
    }

    #[test]
    fn partitions_cover_exhaustively() {
        for n in 0..=100 {
            for m in 1..=16 {
                let parts = partition_links(n, m).unwrap();
                let mut next = 0;
                for p in &parts {
                    assert_eq!(p.range.start, next);
                    next = p.range.end;
                }
                assert_eq!(next, n);
                let lens: Vec<_> = parts.iter().map(|p| p.range.len()).collect();
                assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
            }
        }
    }

    #[test]
    fn reduce_examples() {
        let r = OrderedReducer;
        assert_eq!(all_reduce_sum(&r, &[vec![1.0, 2.0, 0.0], vec![0.0, 3.0, 4.0]]).unwrap(), vec![1.0, 5.0, 4.0]);
        assert_eq!(all_reduce_sum(&r, &[vec![1.5, -2.0]]).unwrap(), vec![1.5, -2.0]);
        assert!(matches!(all_reduce_sum(&r, &[vec![1.0], vec![1.0, 2.0]]), Err(Error::Structural(_))));
        let triples = [[0.1, 0.2, 0.3], [1e10, 7.0, -3.0], [5.5, 1e-9, 2.0]];
        let batched = all_reduce_sum(&r, &triples).unwrap();
        for j in 0..3 {
            let single: Vec<Vec<f64>> = triples.iter().map(|t| vec![t[j]]).collect();
            assert_eq!(all_reduce_sum(&r, &single).unwrap()[0].to_bits(), batched[j].to_bits());
        }
    }

    #[test]
    fn pool_preserves_worker_order() {
        let pool = WorkerPool::new(4).unwrap();
        assert_eq!(pool.run(|k| k * 10), vec![0, 10, 20, 30]);
        let lens = pool.run_links(10, |r| r.len());
        assert_eq!(lens, vec![3, 3, 2, 2]);
        assert!(WorkerPool::new(0).is_err());
    }

    #[test]
    fn repeated_reductions_are_bit_identical() {
        let pool = WorkerPool::new(3).unwrap();
        let locals: Vec<Vec<f64>> = (0..3).map(|k| (0..50).map(|i| ((i * 7 + k) as f64).sin() * 1e3).collect()).collect();
        let a = pool.all_reduce_sum(&locals).unwrap();
        for _ in 0..10 {
            let b = pool.all_reduce_sum(&locals).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn link_sums_do_not_depend_on_worker_count() {
        let n = 3 * SUM_BLOCK + 17;
        let term = |i: usize| Ok([((i * 13) as f64).sin() * 1e4, 1.0 / (i as f64 + 1.0)]);
        let one = WorkerPool::new(1).unwrap().sum_links(n, term).unwrap();
        let mut seq = [0.0; 2];
        for i in 0..n {
            let t = term(i).unwrap();
            seq[0] += t[0];
            seq[1] += t[1];
        }
        assert!((one[0] - seq[0]).abs() < 1e-8 && (one[1] - seq[1]).abs() < 1e-12);
        for m in [2, 3, 8] {
            let got = WorkerPool::new(m).unwrap().sum_links(n, term).unwrap();
            assert_eq!(got.map(f64::to_bits), one.map(f64::to_bits), "M={m}");
        }
        assert_eq!(WorkerPool::new(4).unwrap().sum_links(0, term).unwrap(), [0.0, 0.0]);
        let failing = WorkerPool::new(2).unwrap().sum_links(n, |i| if i == 700 { Err(Error::structural("x")) } else { Ok([1.0]) });
        assert!(failing.is_err());
    }

    proptest! {
        #[test]
        fn disjoint_decomposition_reconstructs_integers(values in proptest::collection::vec(-1000i32..1000, 1..64),
                                                        workers in 1usize..9) {
            let n = values.len();
            let parts = partition_links(n, workers).unwrap();
            let locals: Vec<Vec<f64>> = parts.iter().map(|p| {
                let mut v = vec![0.0; n];
                for i in p.range.clone() { v[i] = values[i] as f64; }
                v
            }).collect();
            let sum = all_reduce_sum(&OrderedReducer, &locals).unwrap();
            prop_assert_eq!(sum, values.iter().map(|&x| x as f64).collect::<Vec<_>>());
        }

        #[test]
        fn split_float_vector_reconstructs(values in proptest::collection::vec(0.0f64..1e6, 1..64),
                                           splits in proptest::collection::vec(0.0f64..1.0, 1..6)) {
            // each worker holds a fraction of every element
            let total: f64 = splits.iter().sum::<f64>() + 1.0;
            let mut weights: Vec<f64> = splits.iter().map(|s| s / total).collect();
            weights.push(1.0 - weights.iter().sum::<f64>());
            let locals: Vec<Vec<f64>> = weights.iter().map(|w| values.iter().map(|v| v * w).collect()).collect();
            let sum = all_reduce_sum(&OrderedReducer, &locals).unwrap();
            for (s, v) in sum.iter().zip(&values) {
                prop_assert!((s - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
    }
}
