//! Gaussian confounding with continuous (and optionally binary) treatments.
//!
//! `(Y₀, Z) ~ N(0, Σ)` with unit variances and `β_YZ[0]` coupling the first
//! aligned Y/Z coordinates. Given `μ = Z·β_XZ`, each continuous treatment
//! coordinate is `N(μ, φ)` and each binary one Bernoulli(σ(μ)).
//! `Y = β_XY·Σₖ g(Xₖ) + Y₀`.
//!
//! True weights use the realized treatment marginal as q.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use rand::Rng as _;

use super::{
    beta_xz_vector, bernoulli, normal, ColumnKind, Dataset, GenInfo, GenParams, Sampler, TrueQ,
    CONFOUNDED_DIMS,
};
use crate::error::{Error, Result};
use crate::rng::{child_rng, streams, Rng};
use crate::stats::{gauss_hermite, log_sigmoid, normal_expectation};

/// Proposals per batch, as a multiple of `n`.
const BATCH_FACTOR: usize = 4;
/// Envelope slack over the largest ratio seen.
const ENVELOPE_SLACK: f64 = 1.2;
/// Abort once the cumulative acceptance rate falls below this.
const MIN_ACCEPTANCE: f64 = 1e-4;
/// Batches before the acceptance floor is enforced.
const WARMUP_BATCHES: usize = 3;
/// Smallest eigenvalue kept when projecting `Σ` to positive definite.
const MIN_EIGENVALUE: f64 = 1e-3;
const QUADRATURE_ORDER: usize = 64;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Cholesky factor of the (Y₀, Z) covariance, projected if needed.
fn yz_factor(p: &GenParams) -> (DMatrix<f64>, bool) {
    let d = p.d_y + p.d_z;
    let mut s = DMatrix::<f64>::identity(d, d);
    let b = p.beta_yz_at(0);
    for k in 0..CONFOUNDED_DIMS.min(p.d_y).min(p.d_z) {
        s[(k, p.d_y + k)] = b;
        s[(p.d_y + k, k)] = b;
    }
    if let Some(c) = s.clone().cholesky() {
        return (c.l(), false);
    }
    let mut e = SymmetricEigen::new(s);
    e.eigenvalues.iter_mut().for_each(|v| *v = v.max(MIN_EIGENVALUE));
    let s = e.recompose();
    log::warn!("(Y, Z) covariance is not positive definite; projected");
    (s.cholesky().expect("projected matrix is PD").l(), true)
}

fn draw_yz(l: &DMatrix<f64>, d_y: usize, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let e = DVector::from_fn(l.nrows(), |_, _| normal(rng));
    let v = l * e;
    (v.rows(0, d_y).iter().copied().collect(), v.rows(d_y, l.nrows() - d_y).iter().copied().collect())
}

/// One observed row before Y's treatment effect is added.
struct Row {
    x: Vec<f64>,
    y0: Vec<f64>,
    z: Vec<f64>,
    mu: f64,
}

/// Treatment layout shared by the continuous and mixed generators.
struct Layout {
    d_cont: usize,
    d_bin: usize,
    phi: f64,
    theta: f64,
    s2: f64,
}

impl Layout {
    /// `ln p(x | μ)`.
    fn log_conditional(&self, x: &[f64], mu: f64) -> f64 {
        let (c, b) = x.split_at(self.d_cont);
        let cont: f64 = c
            .iter()
            .map(|v| -(v - mu).powi(2) / (2.0 * self.phi))
            .sum::<f64>()
            - 0.5 * self.d_cont as f64 * (LN_2PI + self.phi.ln());
        let bin: f64 = b
            .iter()
            .map(|&v| if v == 1.0 { log_sigmoid(mu) } else { log_sigmoid(-mu) })
            .sum();
        cont + bin
    }

    /// `ln` of the proposal density: `N(0, θφ)` per continuous coordinate,
    /// Bernoulli(1/2) per binary one.
    fn log_proposal(&self, x: &[f64]) -> f64 {
        let v = self.theta * self.phi;
        let (c, _) = x.split_at(self.d_cont);
        c.iter().map(|x| -x * x / (2.0 * v)).sum::<f64>()
            - 0.5 * self.d_cont as f64 * (LN_2PI + v.ln())
            - self.d_bin as f64 * std::f64::consts::LN_2
    }

    fn propose(&self, rng: &mut Rng) -> Vec<f64> {
        let sd = (self.theta * self.phi).sqrt();
        (0..self.d_cont + self.d_bin)
            .map(|k| if k < self.d_cont { sd * normal(rng) } else { bernoulli(0.5, rng) })
            .collect()
    }

    fn direct(&self, mu: f64, rng: &mut Rng) -> Vec<f64> {
        let sd = self.phi.sqrt();
        let p = crate::stats::sigmoid(mu);
        (0..self.d_cont + self.d_bin)
            .map(|k| if k < self.d_cont { mu + sd * normal(rng) } else { bernoulli(p, rng) })
            .collect()
    }

    /// `ln` of the marginal density `∫ p(x | μ) N(μ; 0, s²) dμ`.
    fn log_marginal(&self, x: &[f64], gh: &(Vec<f64>, Vec<f64>)) -> f64 {
        let (c, b) = x.split_at(self.d_cont);
        let d = self.d_cont as f64;
        let (phi, s2) = (self.phi, self.s2);
        if self.d_bin == 0 {
            // N(0, φI + s²11ᵀ)
            let sum: f64 = c.iter().sum();
            let sq: f64 = c.iter().map(|v| v * v).sum();
            let denom = phi + d * s2;
            let quad = (sq - s2 * sum * sum / denom) / phi;
            let log_det = (d - 1.0) * phi.ln() + denom.ln();
            return -0.5 * (d * LN_2PI + log_det + quad);
        }
        // Gaussian part integrated analytically; the remaining logistic
        // product is a smooth expectation over μ ~ N(m, v).
        let xbar = c.iter().sum::<f64>() / d;
        let resid: f64 = c.iter().map(|v| (v - xbar).powi(2)).sum();
        let log_a = -0.5 * (d - 1.0) * (LN_2PI + phi.ln()) - 0.5 * d.ln() - resid / (2.0 * phi);
        let tot = s2 + phi / d;
        let log_n = -0.5 * (LN_2PI + tot.ln()) - xbar * xbar / (2.0 * tot);
        let v = 1.0 / (1.0 / s2 + d / phi);
        let m = v * xbar * d / phi;
        let e = normal_expectation(&gh.0, &gh.1, m, v.sqrt(), |mu| {
            b.iter()
                .map(|&x| if x == 1.0 { log_sigmoid(mu) } else { log_sigmoid(-mu) })
                .sum::<f64>()
                .exp()
        });
        log_a + log_n + e.ln()
    }
}

fn sample_rows(p: &GenParams, layout: &Layout, rng: &mut Rng) -> Result<(Vec<Row>, GenInfo)> {
    let (l, projected) = yz_factor(p);
    let beta = beta_xz_vector(p.beta_xz, p.d_z);
    let mut info = GenInfo {
        covariance_projected: projected,
        ..GenInfo::default()
    };
    let draw = |rng: &mut Rng| {
        let (y0, z) = draw_yz(&l, p.d_y, rng);
        let mu = z.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
        (y0, z, mu)
    };
    let mut rows = Vec::with_capacity(p.n);
    match p.sampler {
        Sampler::Direct => {
            for _ in 0..p.n {
                let (y0, z, mu) = draw(rng);
                let x = layout.direct(mu, rng);
                rows.push(Row { x, y0, z, mu });
            }
        }
        Sampler::Rejection => {
            let batch = BATCH_FACTOR * p.n;
            let mut log_m: Option<f64> = None;
            let (mut proposed, mut batches) = (0usize, 0usize);
            while rows.len() < p.n {
                let cands: Vec<(Row, f64)> = (0..batch)
                    .map(|_| {
                        let (y0, z, mu) = draw(rng);
                        let x = layout.propose(rng);
                        let lw = layout.log_conditional(&x, mu) - layout.log_proposal(&x);
                        (Row { x, y0, z, mu }, lw)
                    })
                    .collect();
                let top = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
                let bound = top + ENVELOPE_SLACK.ln();
                match log_m {
                    None => log_m = Some(bound),
                    Some(m) if top > m => {
                        info.envelope_raised = true;
                        log_m = Some(bound);
                    }
                    _ => {}
                }
                let m = log_m.expect("set above");
                for (row, lw) in cands {
                    let u: f64 = rng.random();
                    if u.ln() <= lw - m && rows.len() < p.n {
                        rows.push(row);
                    }
                }
                proposed += batch;
                batches += 1;
                let rate = rows.len() as f64 / proposed as f64;
                if rows.len() < p.n && batches >= WARMUP_BATCHES && rate < MIN_ACCEPTANCE {
                    return Err(Error::Generator(format!(
                        "rejection sampler acceptance rate {rate:.2e} below {MIN_ACCEPTANCE:e}"
                    )));
                }
            }
            info.acceptance_rate = Some(p.n as f64 / proposed as f64);
        }
    }
    Ok((rows, info))
}

fn build(p: &GenParams, layout: Layout, true_q: TrueQ) -> Result<Dataset> {
    let mut rng = child_rng(p.seed, streams::GENERATOR);
    let (rows, info) = sample_rows(p, &layout, &mut rng)?;
    let d_x = layout.d_cont + layout.d_bin;
    let gh = gauss_hermite(QUADRATURE_ORDER);
    let mut x = Array2::zeros((p.n, d_x));
    let mut y = Array2::zeros((p.n, p.d_y));
    let mut z = Array2::zeros((p.n, p.d_z));
    let mut w = Vec::with_capacity(p.n);
    for (i, r) in rows.iter().enumerate() {
        let loc = p.beta_xy * r.x.iter().map(|&v| p.dependence.apply(v)).sum::<f64>();
        for (j, v) in r.x.iter().enumerate() {
            x[[i, j]] = *v;
        }
        for (j, v) in r.y0.iter().enumerate() {
            y[[i, j]] = loc + v;
        }
        for (j, v) in r.z.iter().enumerate() {
            z[[i, j]] = *v;
        }
        w.push((layout.log_marginal(&r.x, &gh) - layout.log_conditional(&r.x, r.mu)).exp());
    }
    let mut x_kinds = vec![ColumnKind::Continuous; layout.d_cont];
    x_kinds.extend(std::iter::repeat_n(ColumnKind::Categorical, layout.d_bin));
    Ok(Dataset {
        x,
        y,
        z,
        true_weights: Some(w),
        ground_truth_null: p.beta_xy == 0.0,
        x_kinds,
        true_q: Some(true_q),
        info,
    })
}

fn confounding_variance(p: &GenParams) -> f64 {
    beta_xz_vector(p.beta_xz, p.d_z).iter().map(|b| b * b).sum()
}

/// Continuous treatments: `X | Z ~ N(μ1, φI)`.
pub fn gen_continuous(p: &GenParams) -> Result<Dataset> {
    p.validate()?;
    let s2 = confounding_variance(p);
    let layout = Layout {
        d_cont: p.d_x,
        d_bin: 0,
        phi: p.phi,
        theta: p.theta,
        s2,
    };
    build(
        p,
        layout,
        TrueQ::Gaussian {
            phi: p.phi,
            s2,
            d: p.d_x,
        },
    )
}

/// Mixed treatments: the first `⌈d_x/2⌉` columns continuous, the rest binary.
pub fn gen_mixed(p: &GenParams) -> Result<Dataset> {
    p.validate()?;
    if p.d_x < 2 {
        return Err(Error::param("mixed treatments need d_x ≥ 2"));
    }
    let s2 = confounding_variance(p);
    let d_cont = p.d_x.div_ceil(2);
    let layout = Layout {
        d_cont,
        d_bin: p.d_x - d_cont,
        phi: p.phi,
        theta: p.theta,
        s2,
    };
    build(
        p,
        layout,
        TrueQ::GaussianBernoulli {
            phi: p.phi,
            s2,
            d_cont,
            d_bin: p.d_x - d_cont,
        },
    )
}
