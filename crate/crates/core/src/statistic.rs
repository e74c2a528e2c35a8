//! Biased HSIC, the weighted backdoor statistic and its permutation null.
//!
//! With weights `w`, Gram matrices `K` (x vs x), `L` (y vs y), `Kq` (x vs x^q)
//! and `KQ` (x^q vs x^q), the statistic is
//!
//! ```text
//! (1/n²) wᵀ(K∘L)w + (1/(m²n²)) KQ₊₊ (L∘wwᵀ)₊₊ − (2/(n²m)) wᵀ(Kq·1 ∘ L·w)
//! ```
//!
//! where `m` is the number of q-samples. The permutation null replaces `L` by
//! `L[π(i), π(j)]` while weights and the x-side matrices stay fixed.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng;

/// Default number of permutations.
pub const DEFAULT_N_Q: usize = 250;

/// Non-negative, finite importance weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weights"));
        }
        if w.iter().any(|&v| v < 0.0) {
            return Err(Error::param("weights must be non-negative"));
        }
        Ok(Self(w))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Borrowed inputs for [`bd_hsic_statistic`].
#[derive(Debug, Clone, Copy)]
pub struct StatisticInputs<'a> {
    pub k: ArrayView2<'a, f64>,
    pub l: ArrayView2<'a, f64>,
    pub kq: ArrayView2<'a, f64>,
    pub kqq: ArrayView2<'a, f64>,
    pub w: &'a [f64],
}

impl<'a> StatisticInputs<'a> {
    pub fn validate(&self) -> Result<()> {
        let n = self.k.nrows();
        if n == 0 {
            return Err(Error::Empty("statistic inputs"));
        }
        if self.k.ncols() != n || self.l.dim() != (n, n) {
            return Err(Error::dims(format!(
                "K is {:?}, L is {:?}; both must be {n}×{n}",
                self.k.dim(),
                self.l.dim()
            )));
        }
        let m = self.kq.ncols();
        if self.kq.nrows() != n || m == 0 || self.kqq.dim() != (m, m) {
            return Err(Error::dims(format!(
                "Kq is {:?}, KQ is {:?} for n = {n}",
                self.kq.dim(),
                self.kqq.dim()
            )));
        }
        if self.w.len() != n {
            return Err(Error::dims(format!(
                "{} weights for {n} samples",
                self.w.len()
            )));
        }
        if self.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weights"));
        }
        Ok(())
    }
}

/// Quantities that do not change across permutations.
struct Prepared<'a> {
    inputs: StatisticInputs<'a>,
    n: usize,
    /// Row sums of `Kq`.
    kq1: Vec<f64>,
    kqq_sum: f64,
    m: usize,
}

impl<'a> Prepared<'a> {
    fn new(inputs: StatisticInputs<'a>) -> Result<Self> {
        inputs.validate()?;
        let kq1 = inputs.kq.rows().into_iter().map(|r| r.sum()).collect();
        Ok(Self {
            n: inputs.k.nrows(),
            m: inputs.kq.ncols(),
            kq1,
            kqq_sum: inputs.kqq.sum(),
            inputs,
        })
    }

    /// Statistic with `L` replaced by `L[perm[i], perm[j]]`.
    ///
    /// `K` and `L` are symmetric, so only their upper triangles are read.
    fn statistic(&self, perm: Option<&[usize]>) -> f64 {
        let n = self.n;
        let (k, l, w) = (self.inputs.k, self.inputs.l, self.inputs.w);
        let mut t1 = 0.0;
        // (L w)_i under the permutation
        let mut lw = vec![0.0; n];
        let mut lbuf = vec![0.0; n];
        for i in 0..n {
            let a = perm.map_or(i, |p| p[i]);
            let lrow = l.row(a);
            let tail = &mut lbuf[i..];
            match (perm, lrow.as_slice()) {
                (None, _) => tail.iter_mut().zip(lrow.iter().skip(i)).for_each(|(v, &x)| *v = x),
                (Some(p), Some(ls)) => tail.iter_mut().zip(&p[i..]).for_each(|(v, &pj)| *v = ls[pj]),
                (Some(p), None) => tail.iter_mut().zip(&p[i..]).for_each(|(v, &pj)| *v = lrow[pj]),
            }
            let krow = k.row(i);
            let kl = match krow.as_slice() {
                Some(ks) => upper_row(i, &ks[i..], &lbuf[i..], w, &mut lw),
                None => upper_row(i, &krow.to_vec()[i..], &lbuf[i..], w, &mut lw),
            };
            t1 += w[i] * kl;
        }
        let wlw: f64 = w.iter().zip(&lw).map(|(a, b)| a * b).sum();
        let kq_wlw: f64 = self
            .kq1
            .iter()
            .zip(w)
            .zip(&lw)
            .map(|((q, a), b)| q * a * b)
            .sum();
        let n = n as f64;
        let m = self.m as f64;
        t1 / (n * n) + self.kqq_sum * wlw / (m * m * n * n) - 2.0 * kq_wlw / (n * n * m)
    }
}

/// Row `i` of the upper triangle: `k`, `l` start at column `i`. Adds the
/// row's contributions to `lw` (both `(i, j)` and `(j, i)`) and returns
/// `K_ii L_ii w_i + 2 Σ_{j>i} K_ij L_ij w_j`.
fn upper_row(i: usize, k: &[f64], l: &[f64], w: &[f64], lw: &mut [f64]) -> f64 {
    let wi = w[i];
    let diag = l[0];
    let mut kl = [0.0; 4];
    let mut lwi = [0.0; 4];
    let (kt, lt, wt, lwt) = (&k[1..], &l[1..], &w[i + 1..], &mut lw[i + 1..]);
    let mut kc = kt.chunks_exact(4);
    let mut lc = lt.chunks_exact(4);
    let mut wc = wt.chunks_exact(4);
    let mut oc = lwt.chunks_exact_mut(4);
    for (((kb, lb), wb), ob) in (&mut kc).zip(&mut lc).zip(&mut wc).zip(&mut oc) {
        for t in 0..4 {
            let v = lb[t];
            let vw = v * wb[t];
            kl[t] += kb[t] * vw;
            lwi[t] += vw;
            ob[t] += v * wi;
        }
    }
    let (kr, lr, wr) = (kc.remainder(), lc.remainder(), wc.remainder());
    for (((&kj, &lj), &wj), o) in kr.iter().zip(lr).zip(wr).zip(oc.into_remainder()) {
        let vw = lj * wj;
        kl[0] += kj * vw;
        lwi[0] += vw;
        *o += lj * wi;
    }
    lw[i] += diag * wi + (lwi[0] + lwi[1]) + (lwi[2] + lwi[3]);
    k[0] * diag * wi + 2.0 * ((kl[0] + kl[1]) + (kl[2] + kl[3]))
}

fn check_square_pair(k: ArrayView2<f64>, l: ArrayView2<f64>) -> Result<usize> {
    let n = k.nrows();
    if k.ncols() != n || l.dim() != (n, n) {
        return Err(Error::dims(format!(
            "K is {:?}, L is {:?}; both must be square of equal size",
            k.dim(),
            l.dim()
        )));
    }
    if n == 0 {
        return Err(Error::Empty("Gram matrix"));
    }
    Ok(n)
}

/// Biased HSIC estimator
/// `(1/n²)Σ K∘L + (1/n⁴) K₊₊ L₊₊ − (2/n³) Σᵢⱼᵣ Kᵢⱼ Lᵢᵣ`.
pub fn hsic_biased(k: ArrayView2<f64>, l: ArrayView2<f64>) -> Result<f64> {
    let n = check_square_pair(k, l)? as f64;
    let t1: f64 = k.iter().zip(l.iter()).map(|(a, b)| a * b).sum();
    let k_rows: Vec<f64> = k.rows().into_iter().map(|r| r.sum()).collect();
    let l_rows: Vec<f64> = l.rows().into_iter().map(|r| r.sum()).collect();
    let t2 = k_rows.iter().sum::<f64>() * l_rows.iter().sum::<f64>();
    let t3: f64 = k_rows.iter().zip(&l_rows).map(|(a, b)| a * b).sum();
    Ok(t1 / (n * n) + t2 / (n * n * n * n) - 2.0 * t3 / (n * n * n))
}

/// Weighted backdoor HSIC statistic. Negative values are reported as is.
pub fn bd_hsic_statistic(inputs: &StatisticInputs) -> Result<f64> {
    Ok(Prepared::new(*inputs)?.statistic(None))
}

/// Statistic under a fixed permutation of the outcome Gram matrix.
pub fn permuted_statistic(inputs: &StatisticInputs, perm: &[usize]) -> Result<f64> {
    let prep = Prepared::new(*inputs)?;
    check_permutation(perm, prep.n)?;
    Ok(prep.statistic(Some(perm)))
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::dims(format!("permutation of length {} for n = {n}", perm.len())));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::param("not a permutation"));
        }
    }
    Ok(())
}

/// `n_q` permuted statistics; permutation `b` is drawn from its own stream
/// derived from `(seed, b)`.
pub fn permutation_null(inputs: &StatisticInputs, n_q: usize, seed: u64) -> Result<Vec<f64>> {
    permutation_null_with(inputs, n_q, seed, Exec::default())
}

pub fn permutation_null_with(
    inputs: &StatisticInputs,
    n_q: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<f64>> {
    if n_q == 0 {
        return Err(Error::param("n_q must be at least 1"));
    }
    let prep = Prepared::new(*inputs)?;
    let base = rng::derive_seed(seed, rng::streams::PERMUTATION);
    Ok(exec.map(n_q, |b| {
        let mut r = rng::child_rng(base, b as u64);
        let mut perm: Vec<usize> = (0..prep.n).collect();
        perm.shuffle(&mut r);
        prep.statistic(Some(&perm))
    }))
}

/// Two-sided permutation p-value
/// `2·min(1 − (1+c)/(1+|Λ|), (1+c)/(1+|Λ|))` with `c = #{statistic < Λᵢ}`.
pub fn p_value(statistic: f64, null_sample: &[f64]) -> Result<f64> {
    if null_sample.is_empty() {
        return Err(Error::Empty("null sample"));
    }
    let c = null_sample.iter().filter(|&&v| statistic < v).count() as f64;
    let frac = (1.0 + c) / (1.0 + null_sample.len() as f64);
    Ok((2.0 * (1.0 - frac).min(frac)).clamp(0.0, 1.0))
}

/// Effective sample size `(Σw)² / Σw²`.
pub fn ess(w: &[f64]) -> Result<f64> {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("weights"));
    }
    if s2 <= 0.0 {
        return Err(Error::param("ESS undefined for all-zero weights"));
    }
    Ok((s * s / s2).clamp(1.0, w.len() as f64))
}

/// Output of a single permutation test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub null_sample: Vec<f64>,
    pub p_value: f64,
    pub ess: f64,
    pub n_test: usize,
}

/// Statistic, permutation null, p-value and ESS in one call.
pub fn permutation_test(
    inputs: &StatisticInputs,
    n_q: usize,
    seed: u64,
    exec: Exec,
) -> Result<TestResult> {
    let statistic = bd_hsic_statistic(inputs)?;
    let null_sample = permutation_null_with(inputs, n_q, seed, exec)?;
    let p_value = p_value(statistic, &null_sample)?;
    Ok(TestResult {
        statistic,
        p_value,
        ess: ess(inputs.w)?,
        n_test: inputs.w.len(),
        null_sample,
    })
}

/// Permute rows and columns of a square matrix: `out[i][j] = m[p[i]][p[j]]`.
pub fn permute_symmetric(m: ArrayView2<f64>, perm: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn(m.dim(), |(i, j)| m[[perm[i], perm[j]]])
}
