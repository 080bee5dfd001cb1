//! Distribution constraints over the partitioned output projection.
//!
//! Gaussians are fit to the two language blocks of `W`; the symmetric KL
//! divergence between them, and/or the cosine distance between their means,
//! is added to the training loss. Gradients are analytic (trace, inverse and
//! quadratic-form identities); finite differences are used only as a test
//! oracle.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{gather_rows, PartitionView};

/// Ridge added to each covariance before inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RidgeSpec {
    /// Fixed epsilon.
    Absolute(f64),
    /// epsilon = coeff * tr(sample covariance) / z, recomputed per block.
    RelativeTrace(f64),
}

impl Default for RidgeSpec {
    fn default() -> Self {
        RidgeSpec::RelativeTrace(1e-4)
    }
}

/// Full or per-dimension (diagonal) covariance; `Auto` falls back to
/// diagonal when a block has no more rows than dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceKind {
    Full,
    Diagonal,
    Auto,
}

impl Default for CovarianceKind {
    fn default() -> Self {
        CovarianceKind::Auto
    }
}

/// Which constraints are active and how strongly they are weighted.
/// Both weights zero means unconstrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub lambda_skld: f64,
    pub lambda_cd: f64,
    pub ridge: RidgeSpec,
    pub covariance: CovarianceKind,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig::none()
    }
}

impl RegularizerConfig {
    pub fn none() -> Self {
        RegularizerConfig {
            lambda_skld: 0.0,
            lambda_cd: 0.0,
            ridge: RidgeSpec::default(),
            covariance: CovarianceKind::default(),
        }
    }

    pub fn skld(lambda: f64) -> Self {
        RegularizerConfig {
            lambda_skld: lambda,
            ..RegularizerConfig::none()
        }
    }

    pub fn cd(lambda: f64) -> Self {
        RegularizerConfig {
            lambda_cd: lambda,
            ..RegularizerConfig::none()
        }
    }

    pub fn is_none(&self) -> bool {
        self.lambda_skld == 0.0 && self.lambda_cd == 0.0
    }
}

/// Gaussian moments of one block of rows. `cov` already includes the ridge.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub ridge: f64,
    pub n: usize,
    pub diagonal: bool,
    rows: DMatrix<f64>,
}

impl GaussianFit {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Fits mean and biased (1/n) covariance plus `ridge * I` to the rows.
pub fn gaussian_fit(rows: &DMatrix<f64>, ridge: f64) -> Result<GaussianFit> {
    fit_block(rows, ridge, false)
}

/// Same as [`gaussian_fit`] but keeping only per-dimension variances.
pub fn gaussian_fit_diagonal(rows: &DMatrix<f64>, ridge: f64) -> Result<GaussianFit> {
    fit_block(rows, ridge, true)
}

fn fit_block(rows: &DMatrix<f64>, ridge: f64, diagonal: bool) -> Result<GaussianFit> {
    let n = rows.nrows();
    let z = rows.ncols();
    if n < 2 {
        return Err(Error::TooFewRows(n));
    }
    if ridge < 0.0 {
        return Err(Error::Config(format!("ridge must be >= 0, got {ridge}")));
    }
    let mean_row = rows.row_mean();
    let mean = mean_row.transpose();
    let mut centered = rows.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean_row;
    }
    // Upper triangle computed once and mirrored, so cov is exactly symmetric.
    let mut cov = DMatrix::zeros(z, z);
    let inv_n = 1.0 / n as f64;
    for a in 0..z {
        let col_a = centered.column(a);
        let hi = if diagonal { a + 1 } else { z };
        for b in a..hi {
            let dot = col_a.dot(&centered.column(b));
            cov[(a, b)] = dot * inv_n;
            cov[(b, a)] = dot * inv_n;
        }
    }
    for d in 0..z {
        cov[(d, d)] += ridge;
    }
    Ok(GaussianFit {
        mean,
        cov,
        ridge,
        n,
        diagonal,
        rows: rows.clone(),
    })
}

/// Loss plus per-row gradients for the two contributing blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockConstraint {
    pub loss: f64,
    pub grad1: DMatrix<f64>,
    pub grad2: DMatrix<f64>,
}

/// Gradients of a constraint with respect to the Gaussian parameters.
struct ParamGrads {
    loss: f64,
    /// d loss / d Sigma_1 and Sigma_2 (Frechet, symmetric).
    g_sigma1: DMatrix<f64>,
    g_sigma2: DMatrix<f64>,
    /// d loss / d mu_1; the mu_2 gradient is its negation.
    g_mu1: DVector<f64>,
}

fn inverse_spd(cov: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    cov.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::SingularCovariance { ridge })
}

fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// L_SKLD = 1/2 [ tr(S1^-1 S2 + S2^-1 S1)
///              + (mu1-mu2)^T (S1^-1 + S2^-1) (mu1-mu2) - 2z ].
fn skld_param_grads(fit1: &GaussianFit, fit2: &GaussianFit) -> Result<ParamGrads> {
    let z = fit1.dim();
    if fit2.dim() != z {
        return Err(Error::DimMismatch {
            expected: format!("z = {z}"),
            got: format!("{}", fit2.dim()),
        });
    }
    let inv1 = inverse_spd(&fit1.cov, fit1.ridge)?;
    let inv2 = inverse_spd(&fit2.cov, fit2.ridge)?;
    let d = &fit1.mean - &fit2.mean;

    let trace_term = trace_of_product(&inv1, &fit2.cov) + trace_of_product(&inv2, &fit1.cov);
    let inv_sum = &inv1 + &inv2;
    let quad = d.dot(&(&inv_sum * &d));
    let loss = 0.5 * (trace_term + quad - 2.0 * z as f64);

    let g_mu1 = inv_sum * &d;
    let ddt = &d * d.transpose();
    let g_sigma1 = 0.5 * (&inv2 - &inv1 * (&fit2.cov + &ddt) * &inv1);
    let g_sigma2 = 0.5 * (&inv1 - &inv2 * (&fit1.cov + &ddt) * &inv2);
    Ok(ParamGrads {
        loss,
        g_sigma1,
        g_sigma2,
        g_mu1,
    })
}

/// L_CD = 1 - mu1.mu2 / (|mu1| |mu2|). Only the means contribute.
fn cd_param_grads(fit1: &GaussianFit, fit2: &GaussianFit) -> Result<ParamGrads> {
    let z = fit1.dim();
    let n1 = fit1.mean.norm();
    let n2 = fit2.mean.norm();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::ZeroMean);
    }
    let dot = fit1.mean.dot(&fit2.mean);
    let cos = dot / (n1 * n2);
    let loss = 1.0 - cos;
    // unlike SKLD, the mu_2 gradient is not -g_mu1; callers swap the fits
    let g_mu1 = -(&fit2.mean / (n1 * n2) - (cos / (n1 * n1)) * &fit1.mean);
    Ok(ParamGrads {
        loss,
        g_sigma1: DMatrix::zeros(z, z),
        g_sigma2: DMatrix::zeros(z, z),
        g_mu1,
    })
}

/// Maps parameter gradients back to the rows of one block:
/// d loss / d v_i = (2/n) G_eff (v_i - mu) + (1/n) g_mu, where
/// G_eff = G + trace_coeff * tr(G) * I, restricted to the diagonal for
/// diagonal fits. `trace_coeff` carries the chain term of a trace-relative
/// ridge; it is zero when the ridge is a constant.
fn rows_grad(
    fit: &GaussianFit,
    g_sigma: &DMatrix<f64>,
    g_mu: &DVector<f64>,
    trace_coeff: f64,
) -> DMatrix<f64> {
    let z = fit.dim();
    let n = fit.n as f64;
    let mut g_eff = if fit.diagonal {
        DMatrix::from_diagonal(&g_sigma.diagonal())
    } else {
        g_sigma.clone()
    };
    if trace_coeff != 0.0 {
        let tr = g_sigma.trace();
        for d in 0..z {
            g_eff[(d, d)] += trace_coeff * tr;
        }
    }
    let mean_row = fit.mean.transpose();
    let mut centered = fit.rows.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean_row;
    }
    let mut grads = centered * g_eff * (2.0 / n);
    let mu_term = g_mu.transpose() / n;
    for mut row in grads.row_iter_mut() {
        row += &mu_term;
    }
    grads
}

/// Symmetric KL divergence between two fits, with gradients for every row of
/// both blocks. The ridge recorded in each fit is treated as a constant.
pub fn skld(fit1: &GaussianFit, fit2: &GaussianFit) -> Result<BlockConstraint> {
    let parts = skld_param_grads(fit1, fit2)?;
    let grad1 = rows_grad(fit1, &parts.g_sigma1, &parts.g_mu1, 0.0);
    let grad2 = rows_grad(fit2, &parts.g_sigma2, &(-&parts.g_mu1), 0.0);
    Ok(BlockConstraint {
        loss: parts.loss,
        grad1,
        grad2,
    })
}

/// Cosine distance between the two block means, in [0, 2], with gradients.
pub fn cosine_distance(fit1: &GaussianFit, fit2: &GaussianFit) -> Result<BlockConstraint> {
    let fwd = cd_param_grads(fit1, fit2)?;
    let bwd = cd_param_grads(fit2, fit1)?;
    let zero1 = DMatrix::zeros(fit1.dim(), fit1.dim());
    let grad1 = rows_grad(fit1, &zero1, &fwd.g_mu1, 0.0);
    let grad2 = rows_grad(fit2, &zero1, &bwd.g_mu1, 0.0);
    Ok(BlockConstraint {
        loss: fwd.loss,
        grad1,
        grad2,
    })
}

/// Weighted constraint loss over the full projection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintValue {
    /// lambda_skld * skld + lambda_cd * cd.
    pub loss: f64,
    /// Unweighted constraint values, for logging.
    pub skld: f64,
    pub cd: f64,
    /// Gradient of `loss` with respect to every entry of `W`; rows outside
    /// the two language blocks are zero.
    pub grad: DMatrix<f64>,
}

impl ConstraintValue {
    pub fn zero(v: usize, z: usize) -> Self {
        ConstraintValue {
            loss: 0.0,
            skld: 0.0,
            cd: 0.0,
            grad: DMatrix::zeros(v, z),
        }
    }
}

/// Dispatches the configured constraints over the W1/W2 blocks of `w` and
/// accumulates per-row gradients. A trace-relative ridge is differentiated
/// through, so the analytic gradient stays exact.
pub fn constraint_loss(
    w: &DMatrix<f64>,
    partition: &PartitionView,
    cfg: &RegularizerConfig,
) -> Result<ConstraintValue> {
    let v = w.nrows();
    let z = w.ncols();
    if cfg.is_none() {
        return Ok(ConstraintValue::zero(v, z));
    }
    let block1 = gather_rows(w, &partition.l1_rows);
    let block2 = gather_rows(w, &partition.l2_rows);
    let diagonal = match cfg.covariance {
        CovarianceKind::Full => false,
        CovarianceKind::Diagonal => true,
        CovarianceKind::Auto => block1.nrows().min(block2.nrows()) <= z,
    };
    let (ridge1, ridge2, trace_coeff) = match cfg.ridge {
        RidgeSpec::Absolute(e) => (e, e, 0.0),
        RidgeSpec::RelativeTrace(c) => (
            c * sample_cov_trace(&block1) / z as f64,
            c * sample_cov_trace(&block2) / z as f64,
            c / z as f64,
        ),
    };
    let fit1 = fit_block(&block1, ridge1, diagonal)?;
    let fit2 = fit_block(&block2, ridge2, diagonal)?;

    let mut value = ConstraintValue::zero(v, z);
    let mut add_block = |rows: &[usize], grads: &DMatrix<f64>, weight: f64| {
        for (i, &r) in rows.iter().enumerate() {
            for c in 0..z {
                value.grad[(r, c)] += weight * grads[(i, c)];
            }
        }
    };
    if cfg.lambda_skld != 0.0 {
        let parts = skld_param_grads(&fit1, &fit2)?;
        let g1 = rows_grad(&fit1, &parts.g_sigma1, &parts.g_mu1, trace_coeff);
        let g2 = rows_grad(&fit2, &parts.g_sigma2, &(-&parts.g_mu1), trace_coeff);
        add_block(&partition.l1_rows, &g1, cfg.lambda_skld);
        add_block(&partition.l2_rows, &g2, cfg.lambda_skld);
        value.skld = parts.loss;
    }
    if cfg.lambda_cd != 0.0 {
        // The means do not depend on the ridge, so no trace term here.
        let cd = cosine_distance(&fit1, &fit2)?;
        add_block(&partition.l1_rows, &cd.grad1, cfg.lambda_cd);
        add_block(&partition.l2_rows, &cd.grad2, cfg.lambda_cd);
        value.cd = cd.loss;
    }
    value.loss = cfg.lambda_skld * value.skld + cfg.lambda_cd * value.cd;
    Ok(value)
}

/// Trace of the biased sample covariance: mean squared distance to the mean.
fn sample_cov_trace(rows: &DMatrix<f64>) -> f64 {
    let n = rows.nrows() as f64;
    let mean = rows.row_mean();
    let mut acc = 0.0;
    for row in rows.row_iter() {
        let diff = row - &mean;
        acc += diff.norm_squared();
    }
    acc / n
}
