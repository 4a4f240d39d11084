//! M-fluctuation tests of parameter stability along a moderator.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::linreg::{ScoreMatrix, N_COEF};
use crate::rng::{derive_seed, derive_seed_path, rng_from_seed};

/// Eigenvalues below this fraction of the largest mark Ĵ as singular.
const SINGULAR_TOL: f64 = 1e-12;
/// Ridge added to a singular Ĵ.
pub const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    SupLm,
    ChiSquare,
}

/// Which parameters the fluctuation process tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestTarget {
    /// All three node-model coefficients jointly.
    #[default]
    AllParameters,
    /// Only the treatment component of the decorrelated scores.
    TreatmentOnly,
}

impl TestTarget {
    pub fn dim(self) -> usize {
        match self {
            TestTarget::AllParameters => N_COEF,
            TestTarget::TreatmentOnly => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityTestRecord {
    pub moderator: String,
    pub statistic: f64,
    pub statistic_kind: StatisticKind,
    pub raw_p: f64,
    pub adjusted_p: f64,
    /// Degrees of freedom of the chi-square test.
    pub df: Option<usize>,
    /// Trim fraction of the supLM test.
    pub trim: Option<f64>,
    /// False when the moderator is constant in the node.
    pub tested: bool,
    /// True when Ĵ was singular and the ridge was added.
    pub ridge: bool,
}

/// Decorrelated scores Ĵ^{-1/2}ψᵢ, row-major with `dim` columns. The flag
/// reports whether the ridge was needed.
pub fn decorrelate(scores: &ScoreMatrix, target: TestTarget) -> (Vec<f64>, bool) {
    let n = scores.n();
    let mut j = DMatrix::<f64>::zeros(N_COEF, N_COEF);
    for row in &scores.rows {
        for a in 0..N_COEF {
            for b in 0..N_COEF {
                j[(a, b)] += row[a] * row[b];
            }
        }
    }
    j /= n as f64;
    let eig = SymmetricEigen::new(j);
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let singular = eig.eigenvalues.iter().any(|&l| !(l > SINGULAR_TOL * max)) || max == 0.0;
    let ridge = if singular { RIDGE } else { 0.0 };
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / (l.max(0.0) + ridge).sqrt());
    let w = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    let dim = target.dim();
    let mut out = Vec::with_capacity(n * dim);
    for row in &scores.rows {
        for a in 0..N_COEF {
            if target == TestTarget::TreatmentOnly && a != 2 {
                continue;
            }
            out.push((0..N_COEF).map(|b| w[(a, b)] * row[b]).sum());
        }
    }
    (out, singular)
}

/// Lower and upper candidate indices (boundary after the i-th ordered
/// observation, 1-based) for the given trim.
pub fn candidate_range(n: usize, trim: f64) -> (usize, usize) {
    let lo = ((trim * n as f64).ceil() as usize).max(1);
    let hi = (((1.0 - trim) * n as f64).floor() as usize).min(n.saturating_sub(1));
    (lo, hi)
}

/// supLM statistic over distinct-value boundaries. Returns the statistic
/// and the candidate indices used.
pub fn sup_lm(u: &[f64], dim: usize, order: &[usize], x: &[f64], trim: f64) -> (f64, Vec<usize>) {
    let n = order.len();
    let (lo, hi) = candidate_range(n, trim);
    let mut cum = vec![0.0; dim];
    let mut best = 0.0_f64;
    let mut cands = Vec::new();
    for (k, &row) in order.iter().enumerate() {
        for d in 0..dim {
            cum[d] += u[row * dim + d];
        }
        let i = k + 1;
        if i < lo || i > hi || i >= n || x[order[k]] == x[order[k + 1]] {
            continue;
        }
        let t = i as f64 / n as f64;
        let g = cum.iter().map(|c| c * c).sum::<f64>() / n as f64 / (t * (1.0 - t));
        cands.push(i);
        best = best.max(g);
    }
    (best, cands)
}

/// Σ_levels ‖Σ_{i∈level} uᵢ‖² / n_level and the number of present levels.
pub fn categorical_statistic(u: &[f64], dim: usize, codes: &[usize], n_levels: usize) -> (f64, usize) {
    let mut sums = vec![0.0; n_levels * dim];
    let mut counts = vec![0usize; n_levels];
    for (row, &c) in codes.iter().enumerate() {
        counts[c] += 1;
        for d in 0..dim {
            sums[c * dim + d] += u[row * dim + d];
        }
    }
    let mut stat = 0.0;
    let mut present = 0;
    for l in 0..n_levels {
        if counts[l] > 0 {
            present += 1;
            let s: f64 = (0..dim).map(|d| sums[l * dim + d].powi(2)).sum();
            stat += s / counts[l] as f64;
        }
    }
    (stat, present)
}

pub fn chi_square_p(stat: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).expect("df > 0").sf(stat).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct NullKey {
    n: usize,
    dim: usize,
    replicates: usize,
    trim_bits: u64,
    seed: u64,
}

/// Simulated Brownian-bridge functionals g_r(i) = ‖B_r(i/n)‖²/(t(1−t)) on
/// the candidate grid `lo..=hi`, one row per replicate.
pub struct NullSimulation {
    lo: usize,
    width: usize,
    g: Vec<f32>,
    sup_all: Vec<f32>,
}

const CHUNK: usize = 64;

impl NullSimulation {
    fn simulate(key: NullKey) -> Self {
        let (lo, hi) = candidate_range(key.n, f64::from_bits(key.trim_bits));
        let width = (hi + 1).saturating_sub(lo);
        let n = key.n;
        let dim = key.dim;
        let base = derive_seed_path(key.seed, &[n as u64, dim as u64, key.replicates as u64, key.trim_bits]);
        let n_chunks = key.replicates.div_ceil(CHUNK);
        let chunks: Vec<Vec<f32>> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = rng_from_seed(derive_seed(base, c as u64));
                let reps = CHUNK.min(key.replicates - c * CHUNK);
                let mut out = vec![0f32; reps * width];
                let mut path = vec![0.0f64; (n + 1) * dim];
                for r in 0..reps {
                    for i in 1..=n {
                        for d in 0..dim {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            path[i * dim + d] = path[(i - 1) * dim + d] + z;
                        }
                    }
                    for (w, i) in (lo..=hi).enumerate() {
                        let t = i as f64 / n as f64;
                        let mut s = 0.0;
                        for d in 0..dim {
                            let b = path[i * dim + d] - t * path[n * dim + d];
                            s += b * b;
                        }
                        out[r * width + w] = (s / n as f64 / (t * (1.0 - t))) as f32;
                    }
                }
                out
            })
            .collect();
        let g: Vec<f32> = chunks.into_iter().flatten().collect();
        let sup_all = if width == 0 {
            vec![0.0; key.replicates]
        } else {
            g.chunks(width).map(|row| row.iter().cloned().fold(f32::MIN, f32::max)).collect()
        };
        Self { lo, width, g, sup_all }
    }

    fn bytes(&self) -> usize {
        4 * (self.g.len() + self.sup_all.len())
    }

    /// Monte-Carlo p-value (1 + #{sup_S ≥ stat}) / (R + 1) over candidate set S.
    fn p_value(&self, stat: f64, cands: &[usize]) -> f64 {
        let reps = self.sup_all.len();
        let full = cands.len() == self.width;
        let mut exceed = 0usize;
        for r in 0..reps {
            if (self.sup_all[r] as f64) < stat {
                continue;
            }
            if full {
                exceed += 1;
                continue;
            }
            let row = &self.g[r * self.width..(r + 1) * self.width];
            if cands.iter().any(|&i| row[i - self.lo] as f64 >= stat) {
                exceed += 1;
            }
        }
        (1 + exceed) as f64 / (reps + 1) as f64
    }
}

struct NullCache {
    entries: HashMap<NullKey, (Arc<NullSimulation>, u64)>,
    clock: u64,
    bytes: usize,
}

const CACHE_LIMIT_BYTES: usize = 512 << 20;

fn cache() -> &'static Mutex<NullCache> {
    static CACHE: OnceLock<Mutex<NullCache>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(NullCache { entries: HashMap::new(), clock: 0, bytes: 0 }))
}

fn null_simulation(key: NullKey) -> Arc<NullSimulation> {
    {
        let mut c = cache().lock().unwrap();
        c.clock += 1;
        let clock = c.clock;
        if let Some(entry) = c.entries.get_mut(&key) {
            entry.1 = clock;
            return entry.0.clone();
        }
    }
    let sim = Arc::new(NullSimulation::simulate(key));
    let mut c = cache().lock().unwrap();
    c.clock += 1;
    let clock = c.clock;
    if let Some(entry) = c.entries.get_mut(&key) {
        entry.1 = clock;
        return entry.0.clone();
    }
    c.bytes += sim.bytes();
    c.entries.insert(key, (sim.clone(), clock));
    while c.bytes > CACHE_LIMIT_BYTES && c.entries.len() > 1 {
        let oldest = *c
            .entries
            .iter()
            .filter(|(k, _)| **k != key)
            .min_by_key(|(_, (_, t))| *t)
            .map(|(k, _)| k)
            .expect("more than one entry");
        let (old, _) = c.entries.remove(&oldest).expect("present");
        c.bytes -= old.bytes();
    }
    sim
}

/// Monte-Carlo p-value of a supLM statistic for an `n`-row node.
pub fn sup_lm_p_value(
    stat: f64,
    cands: &[usize],
    n: usize,
    dim: usize,
    trim: f64,
    replicates: usize,
    seed: u64,
) -> f64 {
    if cands.is_empty() {
        return 1.0;
    }
    let key = NullKey { n, dim, replicates, trim_bits: trim.to_bits(), seed };
    null_simulation(key).p_value(stat, cands)
}

/// Bonferroni adjustment over the moderators actually tested.
pub fn bonferroni(records: &mut [StabilityTestRecord], enabled: bool) {
    let m = records.iter().filter(|r| r.tested).count().max(1) as f64;
    for r in records.iter_mut() {
        r.adjusted_p = if enabled { (m * r.raw_p).min(1.0) } else { r.raw_p };
    }
}

/// Index of the record with the smallest adjusted p-value if it is at most
/// `alpha`. Ties go to the larger statistic, then to declaration order.
pub fn select_split_variable(records: &[StabilityTestRecord], alpha: f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, r) in records.iter().enumerate() {
        if !r.tested {
            continue;
        }
        best = match best {
            None => Some(k),
            Some(b) => {
                let rb = &records[b];
                if r.adjusted_p < rb.adjusted_p || (r.adjusted_p == rb.adjusted_p && r.statistic > rb.statistic) {
                    Some(k)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.filter(|&b| records[b].adjusted_p <= alpha)
}
