//! Monte-Carlo gradient estimation and the natural-gradient update step.
//!
//! The update follows the natural-gradient rule
//! `η_{k+1} = (1−γ)η_k − γ(∇_μ E − η_prior)`: an affine pull towards the
//! prior natural parameter tilted by the gradient of the expected cost in
//! expectation coordinates. For Gaussians the same step can be written
//! directly on `(m, Σ)`; both forms are provided and agree through the
//! parameter duality.
//!
//! `∇_m E` and `∇_Σ E` are estimated from samples. `BonnetPriceFD`
//! estimates the integrand's gradient and Hessian per sample with central
//! finite differences and averages them (`∇_m E = E[∇C]`,
//! `∇_Σ E = ½E[∇²C]`); `GaussNewton` replaces the Hessian average with the
//! average of per-sample gradient outer products, which is exact only when
//! the residual structure cooperates (see the linear-cost bias noted in the
//! tests); `ScoreFunction` weights the sampled deviations by centred costs
//! and needs no probe evaluations beyond the batch itself.

use nalgebra::{DMatrix, DVector};

use crate::error::{BlmpcError, Result};
use crate::exec;
use crate::policy::{GaussianPolicy, NaturalParams};

/// How `(∇_m E, ∇_Σ E)` are estimated from a sampled batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    /// Central-difference gradient and Hessian per sample.
    BonnetPriceFD,
    /// Centred-cost score-function (log-derivative) estimator.
    ScoreFunction,
    /// Central-difference gradient; Hessian approximated by `E[ggᵀ]`.
    GaussNewton,
}

/// Learning-rate sequence `γ_k ∈ (0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRateSchedule {
    gamma0: f64,
    decay: DecayRule,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayRule {
    Constant,
    /// `γ_k = γ₀ / (1 + k)`.
    Harmonic,
}

impl LearningRateSchedule {
    pub fn new(gamma0: f64, decay: DecayRule) -> Result<Self> {
        if !(gamma0 > 0.0 && gamma0 <= 1.0) {
            return Err(BlmpcError::invalid("gamma0", "learning rate must lie in (0, 1]"));
        }
        Ok(Self { gamma0, decay })
    }

    pub fn constant(gamma0: f64) -> Result<Self> {
        Self::new(gamma0, DecayRule::Constant)
    }

    pub fn harmonic(gamma0: f64) -> Result<Self> {
        Self::new(gamma0, DecayRule::Harmonic)
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    pub fn decay(&self) -> DecayRule {
        self.decay
    }

    pub fn gamma(&self, k: usize) -> f64 {
        match self.decay {
            DecayRule::Constant => self.gamma0,
            DecayRule::Harmonic => self.gamma0 / (1.0 + k as f64),
        }
    }
}

/// Estimates of `∇_m E` and `∇_Σ E` with per-component standard errors.
#[derive(Clone, Debug)]
pub struct GradientEstimate {
    pub grad_mean: DVector<f64>,
    pub grad_cov: DMatrix<f64>,
    pub se_mean: DVector<f64>,
    pub se_cov: DMatrix<f64>,
    pub n_samples: usize,
    /// Samples with at least one non-finite probe; their flagged
    /// components were excluded from the averages.
    pub flagged_samples: usize,
    pub kind: EstimatorKind,
}

/// Gradient of the expected cost in expectation coordinates
/// `(∇_{μ⁽¹⁾} E, ∇_{μ⁽²⁾} E)`.
#[derive(Clone, Debug)]
pub struct ExpectationGradient {
    pub mu1: DVector<f64>,
    pub mu2: DMatrix<f64>,
}

impl ExpectationGradient {
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mu1: &self.mu1 * factor,
            mu2: &self.mu2 * factor,
        }
    }
}

/// Chain rule from `(∇_m, ∇_Σ)` to expectation coordinates:
/// `∇_{μ⁽¹⁾} = ∇_m − 2 ∇_Σ m`, `∇_{μ⁽²⁾} = ∇_Σ`.
pub fn chain_rule_grads(
    grad_mean: &DVector<f64>,
    grad_cov: &DMatrix<f64>,
    mean: &DVector<f64>,
) -> ExpectationGradient {
    ExpectationGradient {
        mu1: grad_mean - 2.0 * (grad_cov * mean),
        mu2: grad_cov.clone(),
    }
}

/// Per-sample central-difference gradient with flagged components.
#[derive(Clone, Debug)]
pub struct SampleGradient {
    pub grad: DVector<f64>,
    /// `false` where a probe cost was non-finite; such components carry no
    /// information and are excluded from averages.
    pub valid: Vec<bool>,
}

fn fd_spacings(theta: &DVector<f64>, step: f64) -> Vec<f64> {
    theta.iter().map(|t| step * t.abs().max(1.0)).collect()
}

/// Central finite differences, coordinate-wise:
/// `g_i = [C(θ+h_i e_i) − C(θ−h_i e_i)] / (2 h_i)` with
/// `h_i = step · max(1, |θ_i|)`. Costs `2d` evaluations.
pub fn per_sample_gradient(
    theta: &DVector<f64>,
    cost: &dyn Fn(&DVector<f64>) -> f64,
    step: f64,
) -> Result<SampleGradient> {
    if !(step > 0.0) {
        return Err(BlmpcError::invalid("step", "finite-difference step must be > 0"));
    }
    let d = theta.len();
    let hs = fd_spacings(theta, step);
    let mut grad = DVector::zeros(d);
    let mut valid = vec![true; d];
    let mut probe = theta.clone();
    for i in 0..d {
        probe[i] = theta[i] + hs[i];
        let c_plus = cost(&probe);
        probe[i] = theta[i] - hs[i];
        let c_minus = cost(&probe);
        probe[i] = theta[i];
        if c_plus.is_finite() && c_minus.is_finite() {
            grad[i] = (c_plus - c_minus) / (2.0 * hs[i]);
        } else {
            valid[i] = false;
        }
    }
    Ok(SampleGradient { grad, valid })
}

/// Per-sample gradient plus (optionally) the central-difference Hessian,
/// sharing the axis probes.
struct FdProbe {
    grad: DVector<f64>,
    grad_valid: Vec<bool>,
    hess: DMatrix<f64>,
    hess_valid: Vec<bool>, // row-major d×d
}

fn fd_probe(theta: &DVector<f64>, cost: &dyn Fn(&DVector<f64>) -> f64, step: f64) -> FdProbe {
    let d = theta.len();
    let hs = fd_spacings(theta, step);
    let c0 = cost(theta);
    let mut c_plus = vec![f64::NAN; d];
    let mut c_minus = vec![f64::NAN; d];
    let mut probe = theta.clone();
    for i in 0..d {
        probe[i] = theta[i] + hs[i];
        c_plus[i] = cost(&probe);
        probe[i] = theta[i] - hs[i];
        c_minus[i] = cost(&probe);
        probe[i] = theta[i];
    }

    let mut grad = DVector::zeros(d);
    let mut grad_valid = vec![true; d];
    for i in 0..d {
        if c_plus[i].is_finite() && c_minus[i].is_finite() {
            grad[i] = (c_plus[i] - c_minus[i]) / (2.0 * hs[i]);
        } else {
            grad_valid[i] = false;
        }
    }

    let mut hess = DMatrix::zeros(d, d);
    let mut hess_valid = vec![true; d * d];
    for i in 0..d {
        if c0.is_finite() && c_plus[i].is_finite() && c_minus[i].is_finite() {
            hess[(i, i)] = (c_plus[i] - 2.0 * c0 + c_minus[i]) / (hs[i] * hs[i]);
        } else {
            hess_valid[i * d + i] = false;
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let mut at = |si: f64, sj: f64| {
                probe[i] = theta[i] + si * hs[i];
                probe[j] = theta[j] + sj * hs[j];
                let c = cost(&probe);
                probe[i] = theta[i];
                probe[j] = theta[j];
                c
            };
            let (cpp, cpm, cmp, cmm) = (at(1.0, 1.0), at(1.0, -1.0), at(-1.0, 1.0), at(-1.0, -1.0));
            if cpp.is_finite() && cpm.is_finite() && cmp.is_finite() && cmm.is_finite() {
                let v = (cpp - cpm - cmp + cmm) / (4.0 * hs[i] * hs[j]);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            } else {
                hess_valid[i * d + j] = false;
                hess_valid[j * d + i] = false;
            }
        }
    }
    FdProbe {
        grad,
        grad_valid,
        hess,
        hess_valid,
    }
}

struct SampleTerms {
    mean_term: DVector<f64>,
    mean_valid: Vec<bool>,
    cov_term: DMatrix<f64>,
    cov_valid: Vec<bool>,
}

/// Estimate `(∇_m E, ∇_Σ E)` from a batch of `(θ⁽ⁱ⁾, C⁽ⁱ⁾)` pairs drawn
/// from `policy`. Per-sample terms are computed independently (in parallel
/// when enabled) and accumulated in index order. `∇_Σ E` is symmetrised.
pub fn estimate_gradients(
    thetas: &[DVector<f64>],
    costs: &[f64],
    policy: &GaussianPolicy,
    kind: EstimatorKind,
    cost_eval: &(dyn Fn(&DVector<f64>) -> f64 + Sync),
    fd_step: f64,
) -> Result<GradientEstimate> {
    if thetas.is_empty() {
        return Err(BlmpcError::EmptyBatch);
    }
    if costs.len() != thetas.len() {
        return Err(BlmpcError::DimensionMismatch {
            expected: thetas.len(),
            got: costs.len(),
        });
    }
    let d = policy.dim();
    if let Some(bad) = thetas.iter().find(|t| t.len() != d) {
        return Err(BlmpcError::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    if !(fd_step > 0.0) {
        return Err(BlmpcError::invalid("fd_step", "finite-difference step must be > 0"));
    }

    let terms: Vec<SampleTerms> = match kind {
        EstimatorKind::BonnetPriceFD => exec::map_indexed(thetas, |_, theta| {
            let p = fd_probe(theta, &cost_eval, fd_step);
            SampleTerms {
                mean_term: p.grad,
                mean_valid: p.grad_valid,
                cov_term: p.hess * 0.5,
                cov_valid: p.hess_valid,
            }
        }),
        EstimatorKind::GaussNewton => exec::map_indexed(thetas, |_, theta| {
            let g = per_sample_gradient(theta, &cost_eval, fd_step)
                .expect("step validated above");
            let outer = 0.5 * (&g.grad * g.grad.transpose());
            let mut cov_valid = vec![true; d * d];
            for i in 0..d {
                for j in 0..d {
                    cov_valid[i * d + j] = g.valid[i] && g.valid[j];
                }
            }
            SampleTerms {
                mean_term: g.grad,
                mean_valid: g.valid,
                cov_term: outer,
                cov_valid,
            }
        }),
        EstimatorKind::ScoreFunction => {
            let finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
            if finite.is_empty() {
                return Err(BlmpcError::AllSamplesFlagged);
            }
            // Mean-cost baseline: exact zero on constant costs and a
            // variance reduction otherwise.
            let baseline = finite.iter().sum::<f64>() / finite.len() as f64;
            let precision = policy.precision();
            let mean = policy.mean().clone();
            let pairs: Vec<(DVector<f64>, f64)> = thetas
                .iter()
                .zip(costs)
                .map(|(t, c)| (t.clone(), *c))
                .collect();
            exec::map_indexed(&pairs, |_, (theta, c)| {
                if !c.is_finite() {
                    return SampleTerms {
                        mean_term: DVector::zeros(d),
                        mean_valid: vec![false; d],
                        cov_term: DMatrix::zeros(d, d),
                        cov_valid: vec![false; d * d],
                    };
                }
                let centred = c - baseline;
                let score = &precision * (theta - &mean);
                let cov_term = 0.5 * centred * (&score * score.transpose() - &precision);
                SampleTerms {
                    mean_term: score * centred,
                    mean_valid: vec![true; d],
                    cov_term,
                    cov_valid: vec![true; d * d],
                }
            })
        }
    };

    aggregate(terms, d, kind)
}

fn aggregate(terms: Vec<SampleTerms>, d: usize, kind: EstimatorKind) -> Result<GradientEstimate> {
    let n = terms.len();
    let mut mean_sum: DVector<f64> = DVector::zeros(d);
    let mut mean_count = vec![0usize; d];
    let mut cov_sum: DMatrix<f64> = DMatrix::zeros(d, d);
    let mut cov_count = vec![0usize; d * d];
    let mut flagged = 0usize;

    for t in &terms {
        let clean = t.mean_valid.iter().all(|v| *v) && t.cov_valid.iter().all(|v| *v);
        if !clean {
            flagged += 1;
        }
        for i in 0..d {
            if t.mean_valid[i] {
                mean_sum[i] += t.mean_term[i];
                mean_count[i] += 1;
            }
            for j in 0..d {
                if t.cov_valid[i * d + j] {
                    cov_sum[(i, j)] += t.cov_term[(i, j)];
                    cov_count[i * d + j] += 1;
                }
            }
        }
    }
    if mean_count.iter().any(|c| *c == 0) || cov_count.iter().any(|c| *c == 0) {
        return Err(BlmpcError::AllSamplesFlagged);
    }

    let mut grad_mean: DVector<f64> = DVector::zeros(d);
    for i in 0..d {
        grad_mean[i] = mean_sum[i] / mean_count[i] as f64;
    }
    let mut grad_cov: DMatrix<f64> = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            grad_cov[(i, j)] = cov_sum[(i, j)] / cov_count[i * d + j] as f64;
        }
    }

    // Second pass: standard errors of the per-sample means.
    let mut mean_sq: DVector<f64> = DVector::zeros(d);
    let mut cov_sq: DMatrix<f64> = DMatrix::zeros(d, d);
    for t in &terms {
        for i in 0..d {
            if t.mean_valid[i] {
                mean_sq[i] += (t.mean_term[i] - grad_mean[i]).powi(2);
            }
            for j in 0..d {
                if t.cov_valid[i * d + j] {
                    cov_sq[(i, j)] += (t.cov_term[(i, j)] - grad_cov[(i, j)]).powi(2);
                }
            }
        }
    }
    let se_of = |sq: f64, count: usize| {
        if count >= 2 {
            (sq / (count as f64 * (count - 1) as f64)).sqrt()
        } else {
            0.0
        }
    };
    let se_mean = DVector::from_fn(d, |i, _| se_of(mean_sq[i], mean_count[i]));
    let se_cov = DMatrix::from_fn(d, d, |i, j| se_of(cov_sq[(i, j)], cov_count[i * d + j]));

    grad_cov = (&grad_cov + grad_cov.transpose()) * 0.5;
    Ok(GradientEstimate {
        grad_mean,
        grad_cov,
        se_mean,
        se_cov,
        n_samples: n,
        flagged_samples: flagged,
        kind,
    })
}

/// Combined standard-error magnitude of the expectation-coordinate
/// gradient implied by `est` at the given policy mean: the noise floor for
/// optimality residuals.
pub fn gradient_noise_floor(est: &GradientEstimate, mean: &DVector<f64>) -> f64 {
    let d = mean.len();
    let mut total = 0.0;
    for i in 0..d {
        let mut var = est.se_mean[i].powi(2);
        for j in 0..d {
            var += (2.0 * mean[j] * est.se_cov[(i, j)]).powi(2);
        }
        total += var;
    }
    total += est.se_cov.iter().map(|s| s * s).sum::<f64>();
    total.sqrt()
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(BlmpcError::invalid("gamma", "learning rate must lie in (0, 1]"));
    }
    Ok(())
}

/// One natural-gradient step written directly on `(m, Σ)`:
///
/// ```text
/// Σ_{k+1}⁻¹ = (1−γ) Σ_k⁻¹ + γ (2 ∇_Σ E + Σ_prior⁻¹)
/// m_{k+1}   = m_k − γ Σ_{k+1} (∇_m E + Σ_prior⁻¹ (m_k − m_prior))
/// ```
///
/// Fails with [`BlmpcError::StepRejected`] when the new precision is not
/// positive definite; callers retry with a halved learning rate.
pub fn gaussian_blr_step(
    current: &GaussianPolicy,
    prior: &GaussianPolicy,
    grad_mean: &DVector<f64>,
    grad_cov: &DMatrix<f64>,
    gamma: f64,
) -> Result<GaussianPolicy> {
    check_gamma(gamma)?;
    let d = current.dim();
    if prior.dim() != d || grad_mean.len() != d || grad_cov.nrows() != d || grad_cov.ncols() != d {
        return Err(BlmpcError::DimensionMismatch {
            expected: d,
            got: prior.dim().max(grad_mean.len()).max(grad_cov.nrows()),
        });
    }
    let prec_cur = current.precision();
    let prec_prior = prior.precision();
    let sym_grad = (grad_cov + grad_cov.transpose()) * 0.5;
    let prec_new = (1.0 - gamma) * prec_cur + gamma * (2.0 * sym_grad + &prec_prior);
    let prec_new = (&prec_new + prec_new.transpose()) * 0.5;
    let chol = nalgebra::Cholesky::new(prec_new).ok_or(BlmpcError::StepRejected)?;
    let cov_new = chol.inverse();
    let pull = grad_mean + &prec_prior * (current.mean() - prior.mean());
    let mean_new = current.mean() - gamma * (&cov_new * pull);
    GaussianPolicy::new(mean_new, cov_new)
}

/// One natural-gradient step in natural coordinates:
/// `η_{k+1} = (1−γ) η_k − γ (∇_μ E − η_prior)`, componentwise.
pub fn natural_blr_step(
    eta: &NaturalParams,
    eta_prior: &NaturalParams,
    grad: &ExpectationGradient,
    gamma: f64,
) -> Result<NaturalParams> {
    check_gamma(gamma)?;
    let d = eta.dim();
    if eta_prior.dim() != d || grad.mu1.len() != d {
        return Err(BlmpcError::DimensionMismatch {
            expected: d,
            got: eta_prior.dim().max(grad.mu1.len()),
        });
    }
    let eta1 = (1.0 - gamma) * eta.eta1() - gamma * (&grad.mu1 - eta_prior.eta1());
    let eta2 = (1.0 - gamma) * eta.eta2() - gamma * (&grad.mu2 - eta_prior.eta2());
    NaturalParams::new(eta1, eta2).map_err(|_| BlmpcError::StepRejected)
}

/// [`natural_blr_step`] with the learning rate halved after each rejection,
/// up to `max_halvings` times. Returns the accepted parameters and the
/// learning rate actually used.
pub fn natural_blr_step_safeguarded(
    eta: &NaturalParams,
    eta_prior: &NaturalParams,
    grad: &ExpectationGradient,
    gamma: f64,
    max_halvings: u32,
) -> Result<(NaturalParams, f64)> {
    let mut g = gamma;
    for attempt in 0..=max_halvings {
        match natural_blr_step(eta, eta_prior, grad, g) {
            Ok(next) => {
                if attempt > 0 {
                    log::debug!("step accepted after {attempt} halvings (gamma {g})");
                }
                return Ok((next, g));
            }
            Err(BlmpcError::StepRejected) => g *= 0.5,
            Err(other) => return Err(other),
        }
    }
    Err(BlmpcError::StepRejectionExhausted {
        halvings: max_halvings,
    })
}

/// Distance of `η` from the fixed point `η_prior − ∇_μ E`, measured over
/// the stacked components. Zero exactly at the optimum.
pub fn optimality_residual(
    eta: &NaturalParams,
    eta_prior: &NaturalParams,
    grad: &ExpectationGradient,
) -> f64 {
    let r1 = eta.eta1() - (eta_prior.eta1() - &grad.mu1);
    let r2 = eta.eta2() - (eta_prior.eta2() - &grad.mu2);
    (r1.norm_squared() + r2.norm_squared()).sqrt()
}

/// Variant of [`natural_blr_step`] for the log-objective formulation: the
/// gradient is divided by the current objective estimate, normalising the
/// step. A non-positive objective falls back to the unscaled step; the
/// second return value reports that fallback.
pub fn log_objective_step(
    eta: &NaturalParams,
    eta_prior: &NaturalParams,
    grad: &ExpectationGradient,
    gamma: f64,
    objective: f64,
) -> Result<(NaturalParams, bool)> {
    if objective > 0.0 {
        Ok((natural_blr_step(eta, eta_prior, &grad.scaled(1.0 / objective), gamma)?, false))
    } else {
        log::warn!("log-objective step fell back to unscaled gradient (objective {objective})");
        Ok((natural_blr_step(eta, eta_prior, grad, gamma)?, true))
    }
}
