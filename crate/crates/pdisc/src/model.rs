//! Problem instances, margins, solution checks and empirical-law distances.

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Header magic for instance files.
pub const MAGIC: &str = "PDISC1";

/// A constraint matrix `X` (row-major, `m x n`) together with its margin.
///
/// Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    m: usize,
    n: usize,
    kappa: f64,
    seed: u64,
    x: Vec<f64>,
}

fn checked_len(m: usize, n: usize) -> Result<usize> {
    if m == 0 || n == 0 {
        return Err(Error::Size(format!("M={m} and N={n} must both be positive")));
    }
    let len = m
        .checked_mul(n)
        .filter(|l| l.checked_mul(8).is_some_and(|b| b <= isize::MAX as usize))
        .ok_or_else(|| Error::Size(format!("M*N = {m}*{n} is not addressable")))?;
    Ok(len)
}

/// Draw an `m x n` matrix of i.i.d. standard normals from the instance stream of `seed`.
pub fn generate_instance(m: usize, n: usize, kappa: f64, seed: u64) -> Result<Instance> {
    let len = checked_len(m, n)?;
    let mut rng = stream_rng(seed, Stream::Instance);
    let mut x = Vec::new();
    x.try_reserve_exact(len).map_err(|e| Error::Size(e.to_string()))?;
    x.extend((0..len).map(|_| rng.sample::<f64, _>(StandardNormal)));
    Ok(Instance { m, n, kappa, seed, x })
}

impl Instance {
    /// Wrap an explicit row-major matrix, bypassing the generator.
    pub fn from_data(m: usize, n: usize, kappa: f64, seed: u64, x: Vec<f64>) -> Result<Instance> {
        let len = checked_len(m, n)?;
        if x.len() != len {
            return Err(Error::LengthMismatch { expected: len, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("matrix entries must be finite".into()));
        }
        Ok(Instance { m, n, kappa, seed, x })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Aspect ratio `M / N`.
    pub fn alpha(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    pub fn data(&self) -> &[f64] {
        &self.x
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.n)
    }

    /// Same instance with a different margin.
    pub fn with_kappa(&self, kappa: f64) -> Instance {
        Instance { kappa, ..self.clone() }
    }

    /// Write the instance file; `embed` stores the matrix, otherwise only
    /// the header is written and readers regenerate from the seed.
    pub fn write_to<W: Write>(&self, mut w: W, embed: bool) -> Result<()> {
        write!(w, "{MAGIC}\n{}\n{}\n{}\n{}\n", self.m, self.n, self.kappa, self.seed)?;
        if embed {
            let mut buf = Vec::with_capacity(8 * self.x.len());
            for v in &self.x {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Instance> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut pos = 0;
        let mut fields = Vec::with_capacity(5);
        while fields.len() < 5 {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::Format("truncated header".into()))?;
            let line = std::str::from_utf8(&bytes[pos..pos + end])
                .map_err(|_| Error::Format("header is not UTF-8".into()))?;
            fields.push(line.trim().to_string());
            pos += end + 1;
        }
        if fields[0] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", fields[0])));
        }
        let bad = |what: &str, v: &str| Error::Format(format!("bad {what}: {v:?}"));
        let m: usize = fields[1].parse().map_err(|_| bad("M", &fields[1]))?;
        let n: usize = fields[2].parse().map_err(|_| bad("N", &fields[2]))?;
        let kappa: f64 = fields[3].parse().map_err(|_| bad("kappa", &fields[3]))?;
        let seed: u64 = fields[4].parse().map_err(|_| bad("seed", &fields[4]))?;
        let body = &bytes[pos..];
        if body.is_empty() {
            return generate_instance(m, n, kappa, seed);
        }
        let len = checked_len(m, n)?;
        if body.len() != 8 * len {
            return Err(Error::Format(format!(
                "matrix body has {} bytes, expected {}",
                body.len(),
                8 * len
            )));
        }
        let x = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Instance::from_data(m, n, kappa, seed, x)
    }
}

/// Normalised margins `<X_i, theta> / sqrt(N)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginVector {
    pub values: Vec<f64>,
}

impl MarginVector {
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Inner product over the common prefix. Eight independent accumulators
/// let the compiler vectorise the reduction.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

pub fn margins(inst: &Instance, theta: &[f64]) -> Result<MarginVector> {
    if theta.len() != inst.n {
        return Err(Error::LengthMismatch { expected: inst.n, got: theta.len() });
    }
    let scale = 1.0 / (inst.n as f64).sqrt();
    Ok(MarginVector { values: inst.rows().map(|r| dot(r, theta) * scale).collect() })
}

/// Outcome of checking a candidate sign vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub feasible: bool,
    /// `min_i <X_i, chi> / sqrt(N) - kappa`.
    pub min_margin: f64,
    pub violated_rows: Vec<usize>,
    /// Every entry is exactly `+1` or `-1`.
    pub binary: bool,
}

pub fn verify_solution(inst: &Instance, chi: &[f64], kappa: f64) -> Result<SolutionReport> {
    let mv = margins(inst, chi)?;
    let violated_rows: Vec<usize> = mv
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| !(v >= kappa))
        .map(|(i, _)| i)
        .collect();
    Ok(SolutionReport {
        feasible: violated_rows.is_empty(),
        min_margin: mv.min() - kappa,
        violated_rows,
        binary: chi.iter().all(|&c| c == 1.0 || c == -1.0),
    })
}

/// Default quantile grid for [`wasserstein2`].
pub const W2_GRID: usize = 4096;

/// One-dimensional 2-Wasserstein distance between the empirical law of
/// `samples` and the law with quantile function `quantile`, integrated on
/// the midpoint grid `p_k = (k + 1/2) / grid_size`.
pub fn wasserstein2<F: Fn(f64) -> f64>(samples: &[f64], quantile: F, grid_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("wasserstein2 needs at least one sample".into()));
    }
    if grid_size == 0 {
        return Err(Error::InvalidArgument("grid_size must be positive".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let emp = empirical_quantile(&sorted);
    let g = grid_size as f64;
    let sum: f64 = (0..grid_size)
        .map(|k| {
            let p = (k as f64 + 0.5) / g;
            (emp(p) - quantile(p)).powi(2)
        })
        .sum();
    Ok((sum / g).sqrt())
}

/// Left-continuous quantile function of a sorted sample.
pub fn empirical_quantile(sorted: &[f64]) -> impl Fn(f64) -> f64 + '_ {
    move |p: f64| {
        let n = sorted.len();
        let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
        sorted[idx]
    }
}
