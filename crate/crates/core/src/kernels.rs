//! Kernel specifications, bandwidth selection and Gram matrices.
//!
//! Point sets are `n × d` matrices with one point per row. The RBF kernel is
//! parameterized as `k(a, b) = exp(-‖a - b‖² / (2σ²))`.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng;

/// Largest point set the median heuristic looks at before subsampling.
pub const MEDIAN_MAX_POINTS: usize = 5000;

/// Bandwidth returned when every pairwise distance is zero.
pub const DEGENERATE_BANDWIDTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Rbf,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// Explicit RBF length-scale σ.
    Fixed(f64),
    /// Median pairwise distance of the first argument of [`gram`].
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: Bandwidth,
}

impl KernelSpec {
    pub fn rbf_median() -> Self {
        Self {
            family: KernelFamily::Rbf,
            bandwidth: Bandwidth::Median,
        }
    }

    pub fn rbf(sigma: f64) -> Self {
        Self {
            family: KernelFamily::Rbf,
            bandwidth: Bandwidth::Fixed(sigma),
        }
    }

    pub fn linear() -> Self {
        Self {
            family: KernelFamily::Linear,
            bandwidth: Bandwidth::Median,
        }
    }

    /// Replace a median-heuristic bandwidth by its value on `points`.
    ///
    /// Linear kernels are returned unchanged.
    pub fn resolve(&self, points: ArrayView2<f64>) -> Result<KernelSpec> {
        match (self.family, self.bandwidth) {
            (KernelFamily::Linear, _) => Ok(*self),
            (KernelFamily::Rbf, Bandwidth::Fixed(s)) => {
                check_sigma(s)?;
                Ok(*self)
            }
            (KernelFamily::Rbf, Bandwidth::Median) => Ok(KernelSpec::rbf(median_heuristic(points)?)),
        }
    }

    /// Resolved σ for RBF kernels.
    pub fn sigma(&self) -> Option<f64> {
        match (self.family, self.bandwidth) {
            (KernelFamily::Rbf, Bandwidth::Fixed(s)) => Some(s),
            _ => None,
        }
    }

    fn eval_row_kernel(&self) -> Result<RowKernel> {
        match (self.family, self.bandwidth) {
            (KernelFamily::Linear, _) => Ok(RowKernel::Linear),
            (KernelFamily::Rbf, Bandwidth::Fixed(s)) => {
                check_sigma(s)?;
                Ok(RowKernel::Rbf {
                    inv_two_sigma_sq: 1.0 / (2.0 * s * s),
                })
            }
            (KernelFamily::Rbf, Bandwidth::Median) => {
                unreachable!("median bandwidth resolved before evaluation")
            }
        }
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::rbf_median()
    }
}

fn check_sigma(s: f64) -> Result<()> {
    if s.is_finite() && s > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidBandwidth(s))
    }
}

#[derive(Clone, Copy)]
enum RowKernel {
    Rbf { inv_two_sigma_sq: f64 },
    Linear,
}

impl RowKernel {
    #[inline]
    fn eval(self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match self {
            RowKernel::Rbf { inv_two_sigma_sq } => {
                let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 * inv_two_sigma_sq).exp()
            }
            RowKernel::Linear => a.iter().zip(b.iter()).map(|(x, y)| x * y).sum(),
        }
    }
}

/// An evaluated kernel matrix together with the (resolved) kernel that built it.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub entries: Array2<f64>,
    pub spec: KernelSpec,
}

impl GramMatrix {
    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.entries.view()
    }
}

fn check_points(a: ArrayView2<f64>, what: &'static str) -> Result<()> {
    if a.nrows() == 0 {
        return Err(Error::Empty(what));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

/// Evaluate `k(a_i, b_j)` for every pair of rows.
///
/// A median-heuristic bandwidth is resolved on `a`.
pub fn gram(a: ArrayView2<f64>, b: ArrayView2<f64>, spec: &KernelSpec) -> Result<GramMatrix> {
    gram_with(a, b, spec, Exec::default())
}

pub fn gram_with(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    spec: &KernelSpec,
    exec: Exec,
) -> Result<GramMatrix> {
    check_points(a, "first point set")?;
    check_points(b, "second point set")?;
    if a.ncols() != b.ncols() {
        return Err(Error::dims(format!(
            "point sets have {} and {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    let spec = spec.resolve(a)?;
    let kernel = spec.eval_row_kernel()?;
    let (n, m) = (a.nrows(), b.nrows());
    let mut buf = vec![0.0; n * m];
    exec.fill_rows(&mut buf, m, |i, row| {
        let ai = a.row(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = kernel.eval(ai, b.row(j));
        }
    });
    let entries = Array2::from_shape_vec((n, m), buf).expect("buffer sized n*m");
    Ok(GramMatrix { entries, spec })
}

/// Median of the non-zero pairwise Euclidean distances between rows.
///
/// Point sets larger than [`MEDIAN_MAX_POINTS`] are subsampled with a fixed
/// seed after sorting rows lexicographically, so the result does not depend
/// on row order. Returns [`DEGENERATE_BANDWIDTH`] when all points coincide.
pub fn median_heuristic(a: ArrayView2<f64>) -> Result<f64> {
    if a.nrows() < 2 {
        return Err(Error::param(format!(
            "median heuristic needs at least 2 points, got {}",
            a.nrows()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("median heuristic input"));
    }
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| {
        a.row(i)
            .iter()
            .zip(a.row(j).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let rows: Vec<usize> = if order.len() > MEDIAN_MAX_POINTS {
        let mut r = rng::child_rng(0, rng::streams::BANDWIDTH);
        let mut picked = sample(&mut r, order.len(), MEDIAN_MAX_POINTS).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|k| order[k]).collect()
    } else {
        order
    };

    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (p, &i) in rows.iter().enumerate() {
        let ai = a.row(i);
        for &j in &rows[p + 1..] {
            let d2: f64 = ai
                .iter()
                .zip(a.row(j).iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            if d2 > 0.0 {
                dists.push(d2.sqrt());
            }
        }
    }
    if dists.is_empty() {
        return Ok(DEGENERATE_BANDWIDTH);
    }
    Ok(median_in_place(&mut dists))
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}
