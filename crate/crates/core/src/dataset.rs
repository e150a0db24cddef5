//! Seeded standard-normal sample sets.

use std::borrow::Cow;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{OveremError, Result};
use crate::par::{self, Execution, CHUNK};
use crate::rng::{chunk_rng, stream_seed};

pub const GENERATOR_ID: &str = "chacha8-ziggurat-normal/chunk4096";

/// Default cap on materialized values (n * d).
pub const DEFAULT_MEMORY_BUDGET: usize = 200_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetOptions {
    /// Regenerate rows chunk by chunk on every pass instead of storing them.
    pub chunked: bool,
    pub memory_budget: usize,
    pub execution: Execution,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions { chunked: false, memory_budget: DEFAULT_MEMORY_BUDGET, execution: Execution::Parallel }
    }
}

#[derive(Debug, Clone)]
enum Storage {
    Materialized(Arc<Vec<f64>>),
    Streamed,
}

/// n i.i.d. N(0, I_d) rows, fully determined by (seed, purpose, n, d).
#[derive(Debug, Clone)]
pub struct Dataset {
    n: usize,
    d: usize,
    seed: u64,
    purpose: String,
    stream: u64,
    storage: Storage,
}

fn fill_chunk(stream: u64, chunk: usize, rows: usize, d: usize) -> Vec<f64> {
    let mut rng = chunk_rng(stream, chunk);
    (0..rows * d).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Materialized dataset drawn from the "dataset" stream of `seed`.
pub fn generate_dataset(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    Dataset::generate(n, d, seed, "dataset", DatasetOptions::default())
}

impl Dataset {
    pub fn generate(n: usize, d: usize, seed: u64, purpose: &str, opts: DatasetOptions) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(OveremError::Domain(format!("dataset needs n >= 1 and d >= 1, got n={n}, d={d}")));
        }
        let stream = stream_seed(seed, purpose);
        let storage = if opts.chunked {
            Storage::Streamed
        } else {
            let values = n.saturating_mul(d);
            if values > opts.memory_budget {
                return Err(OveremError::Resource(format!(
                    "{n} x {d} samples exceed the budget of {} values; enable chunked mode",
                    opts.memory_budget
                )));
            }
            let ranges = par::chunk_ranges(n, CHUNK);
            let parts = par::map_indexed(opts.execution, ranges, |(c, r)| fill_chunk(stream, c, r.len(), d));
            Storage::Materialized(Arc::new(parts.concat()))
        };
        Ok(Dataset { n, d, seed, purpose: purpose.to_string(), stream, storage })
    }

    /// Wraps explicit row-major values as a dataset.
    pub fn from_values(d: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 || values.is_empty() || !values.len().is_multiple_of(d) {
            return Err(OveremError::Domain(format!(
                "{} values do not form rows of dimension {d}",
                values.len()
            )));
        }
        Ok(Dataset {
            n: values.len() / d,
            d,
            seed: 0,
            purpose: "explicit".into(),
            stream: 0,
            storage: Storage::Materialized(Arc::new(values)),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn generator_id(&self) -> &'static str {
        GENERATOR_ID
    }

    pub fn is_chunked(&self) -> bool {
        matches!(self.storage, Storage::Streamed)
    }

    /// Row-major values of `CHUNK`-row block `chunk`.
    pub fn chunk(&self, chunk: usize) -> Cow<'_, [f64]> {
        let start = chunk * CHUNK;
        let end = ((chunk + 1) * CHUNK).min(self.n);
        match &self.storage {
            Storage::Materialized(v) => Cow::Borrowed(&v[start * self.d..end * self.d]),
            Storage::Streamed => Cow::Owned(fill_chunk(self.stream, chunk, end - start, self.d)),
        }
    }

    /// All values row-major; regenerates them when streamed.
    pub fn values(&self) -> Cow<'_, [f64]> {
        match &self.storage {
            Storage::Materialized(v) => Cow::Borrowed(v.as_slice()),
            Storage::Streamed => {
                let chunks = self.n.div_ceil(CHUNK);
                Cow::Owned((0..chunks).flat_map(|c| self.chunk(c).into_owned()).collect())
            }
        }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        let c = self.chunk(i / CHUNK);
        let off = (i % CHUNK) * self.d;
        c[off..off + self.d].to_vec()
    }

    pub fn fingerprint(&self) -> String {
        format!("{}:{}:seed={}:n={}:d={}", GENERATOR_ID, self.purpose, self.seed, self.n, self.d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_values() {
        let a = generate_dataset(1000, 2, 7).unwrap();
        let b = generate_dataset(1000, 2, 7).unwrap();
        assert_eq!(a.values(), b.values());
        let c = generate_dataset(1000, 2, 8).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn streamed_matches_materialized() {
        let opts = DatasetOptions { chunked: true, ..Default::default() };
        let a = Dataset::generate(10_000, 3, 11, "dataset", opts).unwrap();
        let b = generate_dataset(10_000, 3, 11).unwrap();
        assert!(a.is_chunked());
        assert_eq!(a.values(), b.values());
        assert_eq!(a.row(5000), b.row(5000));
    }

    #[test]
    fn sequential_generation_matches_parallel() {
        let opts = DatasetOptions { execution: Execution::Sequential, ..Default::default() };
        let a = Dataset::generate(20_000, 2, 3, "dataset", opts).unwrap();
        let b = generate_dataset(20_000, 2, 3).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn rejects_empty_and_oversized() {
        assert!(matches!(generate_dataset(0, 2, 1), Err(OveremError::Domain(_))));
        let opts = DatasetOptions { memory_budget: 100, ..Default::default() };
        assert!(matches!(Dataset::generate(51, 2, 1, "dataset", opts), Err(OveremError::Resource(_))));
        let opts = DatasetOptions { memory_budget: 100, chunked: true, ..Default::default() };
        assert!(Dataset::generate(51, 2, 1, "dataset", opts).is_ok());
    }

    #[test]
    fn moments_look_standard_normal() {
        let n = 100_000;
        let data = generate_dataset(n, 2, 42).unwrap();
        let v = data.values();
        let mut mean = [0.0; 2];
        let mut cov = [[0.0; 2]; 2];
        for row in v.chunks(2) {
            for a in 0..2 {
                mean[a] += row[a] / n as f64;
                for (b, x) in row.iter().enumerate() {
                    cov[a][b] += row[a] * x / n as f64;
                }
            }
        }
        for a in 0..2 {
            assert!(mean[a].abs() <= 5.0 / (n as f64).sqrt());
            for (b, c) in cov[a].iter().enumerate() {
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((c - target).abs() <= 0.02, "cov[{a}][{b}] = {c}");
            }
        }
    }
}
