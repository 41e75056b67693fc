//! Globally asymptotically stable LPV-DS policies.
//!
//! A policy blends linear systems with mixture posteriors,
//! `f(x) = Σ_k γ_k(x) A_k (x - x*)`, and is certified by a quadratic
//! Lyapunov function `V(x) = (x - x*)ᵀ P (x - x*)`.
//!
//! Fitting never handles the Lyapunov constraint explicitly. With
//!
//! ```text
//! P   = L Lᵀ + ε_P I            (L lower triangular, L₀₀ = 1)
//! A_k = P⁻¹ (S_k - B_k B_kᵀ) - δ I   (S_k skew-symmetric, B_k free)
//! ```
//!
//! every parameter value satisfies `A_kᵀ P + P A_k = -2 (B_k B_kᵀ + δ P) ≺ 0`,
//! so the least-squares fit is an unconstrained smooth problem solved with
//! L-BFGS. `δ` is a floor on the exponential decay rate of `V`, set
//! relative to the data's own rate `mean |ẋ| / mean |x - x*|`. Fixing `L₀₀`
//! removes the joint scaling of `P` and `S_k, B_k`, which leaves every
//! `A_k` unchanged.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::datasets::ReferencePoint;
use crate::gmm::{self, GaussianComponent, GmmOptions, MixtureFit};
use crate::math;
use crate::optim::{self, LbfgsOptions};
use crate::{Error, Result};

/// Relative tolerance of [`verify_stability`]: each `max eig(A_kᵀP + PA_k)`
/// must be below `-STABILITY_REL_TOL · ‖P‖ · ‖A_k‖`.
pub const STABILITY_REL_TOL: f64 = 1e-9;

/// Minimum accepted `min eig(P) / max eig(P)`.
pub const LYAPUNOV_MIN_REL_EIG: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct StablePolicy {
    components: Vec<GaussianComponent>,
    dynamics: Vec<DMatrix<f64>>,
    lyapunov: DMatrix<f64>,
    attractor: Vec<f64>,
}

impl StablePolicy {
    /// Assembles a policy, checking shapes only. Use [`verify_stability`]
    /// to check the Lyapunov conditions.
    pub fn new(
        components: Vec<GaussianComponent>,
        dynamics: Vec<DMatrix<f64>>,
        lyapunov: DMatrix<f64>,
        attractor: Vec<f64>,
    ) -> Result<Self> {
        let d = attractor.len();
        if components.is_empty() {
            return Err(Error::EmptySelection);
        }
        if dynamics.len() != components.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                found: dynamics.len(),
            });
        }
        for c in &components {
            if c.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: c.dim(),
                });
            }
        }
        for m in dynamics.iter().chain(core::iter::once(&lyapunov)) {
            if m.shape() != (d, d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: m.nrows(),
                });
            }
            if !math::all_finite(m.as_slice()) {
                return Err(Error::NonFinite("policy matrix"));
            }
        }
        if !math::all_finite(&attractor) {
            return Err(Error::NonFinite("attractor"));
        }
        Ok(Self {
            components,
            dynamics,
            lyapunov,
            attractor,
        })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn dynamics(&self) -> &[DMatrix<f64>] {
        &self.dynamics
    }

    pub fn lyapunov(&self) -> &DMatrix<f64> {
        &self.lyapunov
    }

    pub fn attractor(&self) -> &[f64] {
        &self.attractor
    }

    pub fn dim(&self) -> usize {
        self.attractor.len()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// `f(x)`, reusing `gamma` (length K) as scratch.
    pub fn evaluate_into(&self, x: &[f64], gamma: &mut [f64], out: &mut [f64]) {
        let d = self.dim();
        gmm::posteriors_into(&self.components, x, gamma);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (g, a) in gamma.iter().zip(&self.dynamics) {
            if *g == 0.0 {
                continue;
            }
            for r in 0..d {
                let mut acc = 0.0;
                for c in 0..d {
                    acc += a[(r, c)] * (x[c] - self.attractor[c]);
                }
                out[r] += g * acc;
            }
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let mut gamma = vec![0.0; self.len()];
        let mut out = vec![0.0; self.dim()];
        self.evaluate_into(x, &mut gamma, &mut out);
        out
    }

    /// `V(x) = (x - x*)ᵀ P (x - x*)`.
    pub fn lyapunov_value(&self, x: &[f64]) -> f64 {
        let e = math::sub(x, &self.attractor);
        math::dot(&e, &math::mat_vec(&self.lyapunov, &e))
    }

    /// `dV/dt` along the policy at `x`.
    pub fn lyapunov_derivative(&self, x: &[f64]) -> f64 {
        let e = math::sub(x, &self.attractor);
        let f = self.evaluate(x);
        2.0 * math::dot(&e, &math::mat_vec(&self.lyapunov, &f))
    }
}

/// Evaluates `f(x)` after checking the dimension.
pub fn evaluate(policy: &StablePolicy, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != policy.dim() {
        return Err(Error::DimensionMismatch {
            expected: policy.dim(),
            found: x.len(),
        });
    }
    Ok(policy.evaluate(x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// `max eig(A_kᵀP + PA_k)` per component.
    pub margins: Vec<f64>,
    /// Required upper bound on each margin (negative).
    pub thresholds: Vec<f64>,
    pub lyapunov_min_eig: f64,
    pub lyapunov_max_eig: f64,
    pub passed: bool,
}

impl StabilityReport {
    pub fn worst_margin(&self) -> f64 {
        self.margins
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn verify_stability(policy: &StablePolicy) -> StabilityReport {
    let p = &policy.lyapunov;
    let (p_min, p_max) = math::sym_eig_extremes(p);
    let symmetric = math::is_symmetric(p, 1e-10 * p_max.abs().max(1.0));
    let p_ok = symmetric && p_min > 0.0 && p_min >= LYAPUNOV_MIN_REL_EIG * p_max;
    let mut margins = Vec::with_capacity(policy.len());
    let mut thresholds = Vec::with_capacity(policy.len());
    let mut passed = p_ok;
    for a in &policy.dynamics {
        let q = a.transpose() * p + p * a;
        let (_, q_max) = math::sym_eig_extremes(&q);
        let threshold = -STABILITY_REL_TOL * p_max.abs() * math::spectral_norm(a);
        passed &= q_max < 0.0 && q_max <= threshold;
        margins.push(q_max);
        thresholds.push(threshold);
    }
    StabilityReport {
        margins,
        thresholds,
        lyapunov_min_eig: p_min,
        lyapunov_max_eig: p_max,
        passed,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Mean squared velocity error over the fitted points.
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// `max eig(A_kᵀP + PA_k)` per component.
    pub stability_margins: Vec<f64>,
    /// Filled by callers that time the fit.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsFitOptions {
    /// Relative ridge of `P`; bounds its condition number by about `d / ε_P`.
    pub epsilon_p: f64,
    /// Minimum decay rate of `V`, as a fraction of the data's rate scale.
    pub decay_floor: f64,
    pub lbfgs: LbfgsOptions,
}

impl Default for DsFitOptions {
    fn default() -> Self {
        Self {
            epsilon_p: 1e-3,
            decay_floor: 0.02,
            lbfgs: LbfgsOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LpvdsOptions {
    pub gmm: GmmOptions,
    pub ds: DsFitOptions,
}

/// Fits a mixture to `points`, then the stable dynamics on top of it.
pub fn fit_lpvds(
    points: &[ReferencePoint],
    attractor: &[f64],
    k_max: usize,
    seed: u64,
) -> Result<(StablePolicy, MixtureFit, FitReport)> {
    fit_lpvds_with(points, attractor, k_max, seed, &LpvdsOptions::default())
}

pub fn fit_lpvds_with(
    points: &[ReferencePoint],
    attractor: &[f64],
    k_max: usize,
    seed: u64,
    options: &LpvdsOptions,
) -> Result<(StablePolicy, MixtureFit, FitReport)> {
    if !math::all_finite(attractor) {
        return Err(Error::NonFinite("attractor"));
    }
    let mixture = gmm::fit_gmm_with(points, k_max, seed, &options.gmm)?;
    let (policy, report) = fit_ds_given_gmm_with(&mixture, points, attractor, &options.ds)?;
    Ok((policy, mixture, report))
}

pub fn fit_ds_given_gmm(
    mixture: &MixtureFit,
    points: &[ReferencePoint],
    attractor: &[f64],
) -> Result<(StablePolicy, FitReport)> {
    fit_ds_given_gmm_with(mixture, points, attractor, &DsFitOptions::default())
}

/// Fits `A_k` and `P` with the mixture held fixed (priors renormalized).
pub fn fit_ds_given_gmm_with(
    mixture: &MixtureFit,
    points: &[ReferencePoint],
    attractor: &[f64],
    options: &DsFitOptions,
) -> Result<(StablePolicy, FitReport)> {
    if points.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    if mixture.assignments.len() != points.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            found: mixture.assignments.len(),
        });
    }
    let d = attractor.len();
    for p in points {
        if p.position.len() != d || p.velocity.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: p.position.len(),
            });
        }
    }
    let mixture =
        MixtureFit::from_components(mixture.components.clone(), mixture.assignments.clone())?;
    let problem = DsProblem::new(&mixture.components, points, attractor, options);
    let x0 = problem.parameterization.initial();
    let result = optim::minimize(|x, g| problem.objective(x, g), &x0, &options.lbfgs)?;
    if !result.f.is_finite() {
        return Err(Error::OptimizationDiverged);
    }

    let (mut lyapunov, dynamics) = problem.parameterization.matrices(&result.x, problem.decay);
    let p_norm = math::spectral_norm(&lyapunov);
    lyapunov /= p_norm;
    let policy = StablePolicy::new(
        mixture.components,
        dynamics,
        math::symmetrize(&lyapunov),
        attractor.to_vec(),
    )?;
    let stability = verify_stability(&policy);
    if !stability.passed {
        return Err(Error::StabilityUnsatisfied {
            margin: stability.worst_margin(),
        });
    }
    let objective = mean_squared_error(&policy, points);
    Ok((
        policy,
        FitReport {
            objective,
            iterations: result.iterations,
            evaluations: result.evaluations,
            converged: result.converged,
            stability_margins: stability.margins,
            wall_time_s: 0.0,
        },
    ))
}

/// Mean of `‖f(x_i) - ẋ_i‖²`, evaluated point by point.
pub fn mean_squared_error(policy: &StablePolicy, points: &[ReferencePoint]) -> f64 {
    let mut gamma = vec![0.0; policy.len()];
    let mut f = vec![0.0; policy.dim()];
    let total: f64 = points
        .iter()
        .map(|p| {
            policy.evaluate_into(&p.position, &mut gamma, &mut f);
            f.iter()
                .zip(&p.velocity)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    total / points.len() as f64
}

/// Layout of the unconstrained parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DsParameterization {
    pub dim: usize,
    pub components: usize,
    pub epsilon_p: f64,
}

impl DsParameterization {
    fn l_len(&self) -> usize {
        self.dim * (self.dim + 1) / 2 - 1
    }

    fn s_len(&self) -> usize {
        self.dim * (self.dim - 1) / 2
    }

    fn block_len(&self) -> usize {
        self.s_len() + self.dim * self.dim
    }

    pub fn len(&self) -> usize {
        self.l_len() + self.components * self.block_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `L = I, S_k = 0, B_k = I`.
    pub fn initial(&self) -> Vec<f64> {
        let d = self.dim;
        let mut x = vec![0.0; self.len()];
        let mut idx = 0;
        for r in 0..d {
            for c in 0..=r {
                if (r, c) == (0, 0) {
                    continue;
                }
                x[idx] = if r == c { 1.0 } else { 0.0 };
                idx += 1;
            }
        }
        for _ in 0..self.components {
            idx += self.s_len();
            for r in 0..d {
                for c in 0..d {
                    x[idx] = if r == c { 1.0 } else { 0.0 };
                    idx += 1;
                }
            }
        }
        x
    }

    fn lower(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        let mut l = DMatrix::zeros(d, d);
        l[(0, 0)] = 1.0;
        let mut idx = 0;
        for r in 0..d {
            for c in 0..=r {
                if (r, c) == (0, 0) {
                    continue;
                }
                l[(r, c)] = x[idx];
                idx += 1;
            }
        }
        l
    }

    fn blocks(&self, x: &[f64], k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.dim;
        let base = self.l_len() + k * self.block_len();
        let mut s = DMatrix::zeros(d, d);
        let mut idx = base;
        for r in 0..d {
            for c in (r + 1)..d {
                s[(r, c)] = x[idx];
                s[(c, r)] = -x[idx];
                idx += 1;
            }
        }
        let b = DMatrix::from_row_slice(d, d, &x[idx..idx + d * d]);
        (s, b)
    }

    /// `P = L Lᵀ + (ε_P / d) tr(L Lᵀ) I`. The ridge scales with `L`, which
    /// keeps the condition number of `P` below about `d / ε_P`.
    fn lyapunov(&self, l: &DMatrix<f64>) -> DMatrix<f64> {
        let llt = l * l.transpose();
        let ridge = self.epsilon_p / self.dim as f64 * llt.trace();
        llt + DMatrix::identity(self.dim, self.dim) * ridge
    }

    /// `(P, [A_k])` for a parameter vector and decay floor `delta`.
    pub fn matrices(&self, x: &[f64], delta: f64) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let d = self.dim;
        let l = self.lower(x);
        let p = self.lyapunov(&l);
        let p_inv = p
            .clone()
            .cholesky()
            .expect("P is positive definite")
            .inverse();
        let dynamics = (0..self.components)
            .map(|k| {
                let (s, b) = self.blocks(x, k);
                let n = s - &b * b.transpose();
                &p_inv * n - DMatrix::identity(d, d) * delta
            })
            .collect();
        (p, dynamics)
    }
}

/// Precomputed sufficient statistics of the least-squares objective.
///
/// With fixed posteriors the objective is a quadratic form in the `A_k`:
/// `J = (1/N) [Σ_kl tr(A_k C_kl A_lᵀ) - 2 Σ_k ⟨A_k, D_k⟩ + Σ_i ‖ẋ_i‖²]` with
/// `C_kl = Σ_i γ_ik γ_il e_i e_iᵀ` and `D_k = Σ_i γ_ik ẋ_i e_iᵀ`, so each
/// evaluation is independent of the number of points.
#[derive(Debug, Clone)]
pub struct DsProblem {
    pub parameterization: DsParameterization,
    pub decay: f64,
    n: f64,
    cross: Vec<DMatrix<f64>>,
    targets: Vec<DMatrix<f64>>,
    velocity_sq: f64,
}

impl DsProblem {
    pub fn new(
        components: &[GaussianComponent],
        points: &[ReferencePoint],
        attractor: &[f64],
        options: &DsFitOptions,
    ) -> Self {
        let d = attractor.len();
        let k = components.len();
        let mut cross = vec![DMatrix::zeros(d, d); k * k];
        let mut targets = vec![DMatrix::zeros(d, d); k];
        let mut velocity_sq = 0.0;
        let mut gamma = vec![0.0; k];
        let mut speed_sum = 0.0;
        let mut offset_sum = 0.0;
        // Canonical order makes the sums, and so the fit, independent of
        // the input order.
        let mut order: Vec<&ReferencePoint> = points.iter().collect();
        order.sort_by(|a, b| {
            a.position
                .iter()
                .chain(&a.velocity)
                .zip(b.position.iter().chain(&b.velocity))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(core::cmp::Ordering::Equal)
        });
        for p in order {
            let e = math::sub(&p.position, attractor);
            speed_sum += math::norm(&p.velocity);
            offset_sum += math::norm(&e);
            velocity_sq += math::dot(&p.velocity, &p.velocity);
            gmm::posteriors_into(components, &p.position, &mut gamma);
            for a in 0..k {
                if gamma[a] == 0.0 {
                    continue;
                }
                let t = &mut targets[a];
                for r in 0..d {
                    for c in 0..d {
                        t[(r, c)] += gamma[a] * p.velocity[r] * e[c];
                    }
                }
                for b in a..k {
                    let w = gamma[a] * gamma[b];
                    if w == 0.0 {
                        continue;
                    }
                    let m = &mut cross[a * k + b];
                    for r in 0..d {
                        for c in 0..d {
                            m[(r, c)] += w * e[r] * e[c];
                        }
                    }
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                cross[a * k + b] = cross[b * k + a].clone();
            }
        }
        let n = points.len() as f64;
        let rate = if offset_sum > 0.0 {
            speed_sum / offset_sum
        } else {
            0.0
        };
        // Data at rest still needs a strictly positive floor.
        let decay = options.decay_floor * rate.max(1e-9);
        Self {
            parameterization: DsParameterization {
                dim: d,
                components: k,
                epsilon_p: options.epsilon_p,
            },
            decay,
            n,
            cross,
            targets,
            velocity_sq,
        }
    }

    /// Objective value; writes the gradient into `grad`.
    pub fn objective(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let par = &self.parameterization;
        let d = par.dim;
        let k = par.components;
        let l = par.lower(x);
        let p = par.lyapunov(&l);
        let Some(chol) = p.clone().cholesky() else {
            return f64::NAN;
        };
        let p_inv = chol.inverse();

        let mut ns = Vec::with_capacity(k);
        let mut bs = Vec::with_capacity(k);
        let mut dynamics = Vec::with_capacity(k);
        for j in 0..k {
            let (s, b) = par.blocks(x, j);
            let n = s - &b * b.transpose();
            dynamics.push(&p_inv * &n - DMatrix::identity(d, d) * self.decay);
            ns.push(n);
            bs.push(b);
        }

        let mut value = self.velocity_sq;
        let mut grads_a = Vec::with_capacity(k);
        for a in 0..k {
            let mut acc = -&self.targets[a];
            for b in 0..k {
                acc += &dynamics[b] * &self.cross[b * k + a];
            }
            value += dynamics[a].dot(&(&acc - &self.targets[a]));
            grads_a.push(acc * (2.0 / self.n));
        }
        value /= self.n;

        let mut z = DMatrix::<f64>::zeros(d, d);
        let mut idx = par.l_len();
        for j in 0..k {
            let h = &p_inv * &grads_a[j];
            for r in 0..d {
                for c in (r + 1)..d {
                    grad[idx] = h[(r, c)] - h[(c, r)];
                    idx += 1;
                }
            }
            let gb = -(&h + h.transpose()) * &bs[j];
            for r in 0..d {
                for c in 0..d {
                    grad[idx] = gb[(r, c)];
                    idx += 1;
                }
            }
            z -= &h * ns[j].transpose() * &p_inv;
        }
        let gl = (&z + z.transpose()) * &l + &l * (2.0 * par.epsilon_p / d as f64 * z.trace());
        let mut idx = 0;
        for r in 0..d {
            for c in 0..=r {
                if (r, c) == (0, 0) {
                    continue;
                }
                grad[idx] = gl[(r, c)];
                idx += 1;
            }
        }
        value
    }
}
