//! Gaussian mixtures: component densities, posteriors, the Bhattacharyya
//! coefficient, and EM fitting with BIC model selection.
//!
//! Fitting runs on position features augmented with a scaled velocity
//! direction, so that a component does not straddle opposing flows. Once
//! the number of components is chosen, means and covariances are
//! re-estimated on positions alone from the hard assignments.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datasets::ReferencePoint;
use crate::math;
use crate::{Error, Result};

/// Relative eigenvalue floor applied to every fitted covariance.
pub const COVARIANCE_FLOOR: f64 = 1e-8;

/// Weighted densities below this are treated as underflow in [`posteriors`].
pub const UNDERFLOW_DENSITY: f64 = 1e-300;

/// One mixture component. The Cholesky factor of the covariance is cached,
/// so construction validates positive definiteness once.
#[derive(Debug, Clone)]
pub struct GaussianComponent {
    prior: f64,
    mean: Vec<f64>,
    covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_det: f64,
}

impl PartialEq for GaussianComponent {
    fn eq(&self, other: &Self) -> bool {
        self.prior == other.prior && self.mean == other.mean && self.covariance == other.covariance
    }
}

impl GaussianComponent {
    pub fn new(prior: f64, mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: covariance.nrows(),
            });
        }
        if !(prior > 0.0 && prior <= 1.0) {
            return Err(Error::InvalidParameter(
                "component prior must lie in (0, 1]",
            ));
        }
        if !math::all_finite(&mean) || !math::all_finite(covariance.as_slice()) {
            return Err(Error::NonFinite("gaussian component"));
        }
        let scale = covariance.amax().max(f64::MIN_POSITIVE);
        if !math::is_symmetric(&covariance, 1e-10 * scale.max(1.0)) {
            return Err(Error::InvalidParameter("covariance must be symmetric"));
        }
        let covariance = math::symmetrize(&covariance);
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or(Error::SingularCovariance)?;
        let log_det = 2.0
            * chol
                .l()
                .diagonal()
                .iter()
                .map(|v| libm::log(*v))
                .sum::<f64>();
        let precision = chol.inverse();
        Ok(Self {
            prior,
            mean,
            covariance,
            precision,
            log_det,
        })
    }

    /// Like [`GaussianComponent::new`], lifting covariance eigenvalues to at
    /// least `COVARIANCE_FLOOR * trace / d` first.
    pub fn floored(prior: f64, mean: Vec<f64>, covariance: &DMatrix<f64>) -> Result<Self> {
        let cov = math::floor_covariance(covariance, COVARIANCE_FLOOR, 1e-300);
        Self::new(prior, mean, cov)
    }

    pub fn prior(&self) -> f64 {
        self.prior
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn with_prior(&self, prior: f64) -> Result<Self> {
        if !(prior > 0.0 && prior <= 1.0) {
            return Err(Error::InvalidParameter(
                "component prior must lie in (0, 1]",
            ));
        }
        let mut out = self.clone();
        out.prior = prior;
        Ok(out)
    }

    /// Squared Mahalanobis distance of `x` from the mean.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            let di = x[i] - self.mean[i];
            let mut row = 0.0;
            for j in 0..d {
                row += self.precision[(i, j)] * (x[j] - self.mean[j]);
            }
            acc += di * row;
        }
        acc
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.dim() as f64;
        -0.5 * (d * libm::log(2.0 * PI) + self.log_det + self.mahalanobis_sq(x))
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        libm::exp(self.log_pdf(x))
    }
}

/// Multivariate normal density `N(x | μ, Σ)`.
pub fn gaussian_pdf(component: &GaussianComponent, x: &[f64]) -> Result<f64> {
    if x.len() != component.dim() {
        return Err(Error::DimensionMismatch {
            expected: component.dim(),
            found: x.len(),
        });
    }
    Ok(component.pdf(x))
}

/// Posterior responsibilities `γ_k(x)`, written into `out`.
///
/// When every weighted density is below [`UNDERFLOW_DENSITY`] the ratio is
/// 0/0; the result is then the indicator of the Mahalanobis-nearest mean.
pub fn posteriors_into(components: &[GaussianComponent], x: &[f64], out: &mut [f64]) {
    let mut best = f64::NEG_INFINITY;
    for (o, c) in out.iter_mut().zip(components) {
        *o = libm::log(c.prior) + c.log_pdf(x);
        best = best.max(*o);
    }
    if !(best >= libm::log(UNDERFLOW_DENSITY)) {
        let nearest = components
            .iter()
            .enumerate()
            .map(|(k, c)| (k, c.mahalanobis_sq(x)))
            .fold(
                (0, f64::INFINITY),
                |acc, (k, m)| if m < acc.1 { (k, m) } else { acc },
            );
        for (k, o) in out.iter_mut().enumerate() {
            *o = if k == nearest.0 { 1.0 } else { 0.0 };
        }
        return;
    }
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = libm::exp(*o - best);
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn posteriors(components: &[GaussianComponent], x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; components.len()];
    posteriors_into(components, x, &mut out);
    out
}

/// `BC = exp(-D_B)` with the closed-form Bhattacharyya distance between
/// two Gaussians.
pub fn bhattacharyya_coefficient(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let avg = (&a.covariance + &b.covariance) * 0.5;
    let chol = avg.cholesky().ok_or(Error::SingularCovariance)?;
    let log_det_avg = 2.0
        * chol
            .l()
            .diagonal()
            .iter()
            .map(|v| libm::log(*v))
            .sum::<f64>();
    let delta =
        nalgebra::DVector::from_iterator(a.dim(), a.mean.iter().zip(&b.mean).map(|(x, y)| x - y));
    let solved = chol.solve(&delta);
    let maha = delta.dot(&solved);
    let distance = maha / 8.0 + 0.5 * (log_det_avg - 0.5 * (a.log_det + b.log_det));
    Ok(libm::exp(-distance).clamp(0.0, 1.0))
}

/// A fitted mixture plus the hard assignment of every input point.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub components: Vec<GaussianComponent>,
    pub assignments: Vec<usize>,
}

impl MixtureFit {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Indices of the points assigned to component `k`.
    pub fn cluster(&self, k: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == k)
            .map(|(i, _)| i)
            .collect()
    }

    /// Builds a mixture from given components and assignments, with priors
    /// renormalized to sum to one.
    pub fn from_components(
        components: Vec<GaussianComponent>,
        assignments: Vec<usize>,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptySelection);
        }
        let total: f64 = components.iter().map(|c| c.prior).sum();
        let components = components
            .iter()
            .map(|c| c.with_prior(c.prior / total))
            .collect::<Result<Vec<_>>>()?;
        if assignments.iter().any(|&a| a >= components.len()) {
            return Err(Error::InvalidParameter("assignment out of range"));
        }
        Ok(Self {
            components,
            assignments,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmOptions {
    /// Weight of the velocity-direction features. `None` uses the spatial
    /// scale (RMS radius) of the points.
    pub direction_weight: Option<f64>,
    pub restarts: usize,
    pub max_iter: usize,
    /// Relative log-likelihood change that ends EM.
    pub tol: f64,
    /// The K search stops after this many consecutive K without a better
    /// BIC. `None` scans all of `1..=k_max`.
    pub patience: Option<usize>,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            direction_weight: None,
            restarts: 5,
            max_iter: 200,
            tol: 1e-6,
            patience: Some(3),
        }
    }
}

pub fn fit_gmm(points: &[ReferencePoint], k_max: usize, seed: u64) -> Result<MixtureFit> {
    fit_gmm_with(points, k_max, seed, &GmmOptions::default())
}

pub fn fit_gmm_with(
    points: &[ReferencePoint],
    k_max: usize,
    seed: u64,
    options: &GmmOptions,
) -> Result<MixtureFit> {
    let n = points.len();
    let d = points.first().map(ReferencePoint::dim).unwrap_or(0);
    if n < 2 * (d + 1) || d == 0 {
        return Err(Error::TooFewPoints {
            needed: 2 * (d.max(1) + 1),
            got: n,
        });
    }
    if k_max == 0 {
        return Err(Error::InvalidParameter("k_max must be at least 1"));
    }
    for p in points {
        if p.position.len() != d || p.velocity.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: p.position.len(),
            });
        }
    }
    let first = &points[0].position;
    if points.iter().all(|p| p.position == *first) {
        return Err(Error::DegenerateData);
    }

    let features = augmented_features(points, options.direction_weight);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_cap = k_max.min(n / (d + 1)).max(1);

    let mut best: Option<(f64, Em)> = None;
    let mut stale = 0;
    for k in 1..=k_cap {
        if options.patience.is_some_and(|p| stale >= p) {
            break;
        }
        let mut best_k: Option<Em> = None;
        let restarts = if k == 1 { 1 } else { options.restarts.max(1) };
        for _ in 0..restarts {
            let em = run_em(&features, k, &mut rng, options);
            if best_k
                .as_ref()
                .is_none_or(|b| em.log_likelihood > b.log_likelihood)
            {
                best_k = Some(em);
            }
        }
        let em = best_k.unwrap();
        let dim = features.dim as f64;
        let params = (k - 1) as f64 + k as f64 * (dim + dim * (dim + 1.0) / 2.0);
        let bic = -2.0 * em.log_likelihood + params * libm::log(n as f64);
        if best.as_ref().is_none_or(|(b, _)| bic < *b) {
            best = Some((bic, em));
            stale = 0;
        } else {
            stale += 1;
        }
    }
    let (_, em) = best.unwrap();
    let assignments = prune_assignments(&em.responsibilities, n, em.k, d + 1);
    position_mixture(points, assignments)
}

/// Hard assignments with every surviving component holding at least
/// `min_points` points.
fn prune_assignments(resp: &[f64], n: usize, k: usize, min_points: usize) -> Vec<usize> {
    let mut alive = vec![true; k];
    loop {
        let assign: Vec<usize> = (0..n)
            .map(|i| {
                let row = &resp[i * k..(i + 1) * k];
                (0..k)
                    .filter(|&j| alive[j])
                    .fold((usize::MAX, f64::NEG_INFINITY), |acc, j| {
                        if row[j] > acc.1 {
                            (j, row[j])
                        } else {
                            acc
                        }
                    })
                    .0
            })
            .collect();
        let mut counts = vec![0usize; k];
        for &a in &assign {
            counts[a] += 1;
        }
        // Drop the single smallest undersized component per round so its
        // points can rescue other small ones.
        let weakest = (0..k)
            .filter(|&j| alive[j] && counts[j] < min_points)
            .min_by_key(|&j| (counts[j], j));
        match weakest {
            Some(j) if alive.iter().filter(|a| **a).count() > 1 => alive[j] = false,
            _ => {
                // Compact indices to 0..K'.
                let mut remap = vec![usize::MAX; k];
                let mut next = 0;
                for j in 0..k {
                    if counts[j] > 0 {
                        remap[j] = next;
                        next += 1;
                    }
                }
                return assign.into_iter().map(|a| remap[a]).collect();
            }
        }
    }
}

/// Position-only maximum-likelihood components from hard assignments.
fn position_mixture(points: &[ReferencePoint], assignments: Vec<usize>) -> Result<MixtureFit> {
    let n = points.len();
    let d = points[0].dim();
    let k = assignments.iter().copied().max().unwrap_or(0) + 1;
    let mut components = Vec::with_capacity(k);
    for j in 0..k {
        let members: Vec<&ReferencePoint> = points
            .iter()
            .zip(&assignments)
            .filter(|(_, &a)| a == j)
            .map(|(p, _)| p)
            .collect();
        let count = members.len() as f64;
        let mut mean = vec![0.0; d];
        for p in &members {
            for (m, x) in mean.iter_mut().zip(&p.position) {
                *m += x / count;
            }
        }
        let mut cov = DMatrix::zeros(d, d);
        for p in &members {
            for r in 0..d {
                for c in 0..d {
                    cov[(r, c)] += (p.position[r] - mean[r]) * (p.position[c] - mean[c]) / count;
                }
            }
        }
        components.push(GaussianComponent::floored(count / n as f64, mean, &cov)?);
    }
    Ok(MixtureFit {
        components,
        assignments,
    })
}

struct Features {
    dim: usize,
    data: Vec<f64>,
}

impl Features {
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn len(&self) -> usize {
        self.data.len() / self.dim
    }
}

fn augmented_features(points: &[ReferencePoint], weight: Option<f64>) -> Features {
    let n = points.len();
    let d = points[0].dim();
    let mut centroid = vec![0.0; d];
    for p in points {
        for (c, x) in centroid.iter_mut().zip(&p.position) {
            *c += x / n as f64;
        }
    }
    let beta = weight.unwrap_or_else(|| {
        let ms: f64 = points
            .iter()
            .map(|p| {
                let r = math::dist(&p.position, &centroid);
                r * r
            })
            .sum::<f64>()
            / n as f64;
        libm::sqrt(ms)
    });
    let mean_speed = points.iter().map(|p| math::norm(&p.velocity)).sum::<f64>() / n as f64;
    // Near rest the direction is noise; soften it toward zero.
    let soft = 0.1 * mean_speed + f64::MIN_POSITIVE;
    let mut data = Vec::with_capacity(n * 2 * d);
    for p in points {
        data.extend_from_slice(&p.position);
        let s = math::norm(&p.velocity);
        data.extend(p.velocity.iter().map(|v| beta * v / (s + soft)));
    }
    Features { dim: 2 * d, data }
}

struct Em {
    k: usize,
    log_likelihood: f64,
    responsibilities: Vec<f64>,
}

fn run_em(features: &Features, k: usize, rng: &mut ChaCha8Rng, options: &GmmOptions) -> Em {
    let n = features.len();
    let dim = features.dim;
    let init = kmeans_pp(features, k, rng);

    let mut resp = vec![0.0; n * k];
    for (i, &a) in init.iter().enumerate() {
        resp[i * k + a] = 1.0;
    }
    let total_var: f64 = {
        let mut mean = vec![0.0; dim];
        for i in 0..n {
            for (m, x) in mean.iter_mut().zip(features.row(i)) {
                *m += x / n as f64;
            }
        }
        (0..n)
            .map(|i| {
                features
                    .row(i)
                    .iter()
                    .zip(&mean)
                    .map(|(x, m)| (x - m) * (x - m))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n as f64
    };
    let reg = 1e-6 * total_var / dim as f64 + 1e-12;

    let mut prev = f64::NEG_INFINITY;
    let mut ll = f64::NEG_INFINITY;
    let mut params = m_step(features, &resp, k, reg);
    for _ in 0..options.max_iter {
        ll = e_step(features, &params, &mut resp);
        if (ll - prev).abs() <= options.tol * libm::fabs(ll).max(1.0) {
            break;
        }
        prev = ll;
        params = m_step(features, &resp, k, reg);
    }
    Em {
        k,
        log_likelihood: ll,
        responsibilities: resp,
    }
}

struct EmComponent {
    log_weight: f64,
    mean: Vec<f64>,
    /// Inverse of the lower Cholesky factor, row-major.
    l_inv: DMatrix<f64>,
    log_norm: f64,
}

fn m_step(features: &Features, resp: &[f64], k: usize, reg: f64) -> Vec<EmComponent> {
    let n = features.len();
    let dim = features.dim;
    (0..k)
        .map(|j| {
            let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum::<f64>() + 1e-12;
            let mut mean = vec![0.0; dim];
            for i in 0..n {
                let r = resp[i * k + j];
                if r == 0.0 {
                    continue;
                }
                for (m, x) in mean.iter_mut().zip(features.row(i)) {
                    *m += r * x;
                }
            }
            for m in &mut mean {
                *m /= nk;
            }
            let mut cov = DMatrix::<f64>::zeros(dim, dim);
            let mut diff = vec![0.0; dim];
            for i in 0..n {
                let r = resp[i * k + j];
                if r == 0.0 {
                    continue;
                }
                for (dd, (x, m)) in diff.iter_mut().zip(features.row(i).iter().zip(&mean)) {
                    *dd = x - m;
                }
                for a in 0..dim {
                    for b in 0..=a {
                        cov[(a, b)] += r * diff[a] * diff[b];
                    }
                }
            }
            for a in 0..dim {
                for b in 0..=a {
                    let v = cov[(a, b)] / nk;
                    cov[(a, b)] = v;
                    cov[(b, a)] = v;
                }
                cov[(a, a)] += reg;
            }
            let chol = cov
                .clone()
                .cholesky()
                .or_else(|| (cov + DMatrix::identity(dim, dim) * (reg * 1e3)).cholesky())
                .expect("regularized covariance is positive definite");
            let l = chol.l();
            let log_det = 2.0 * l.diagonal().iter().map(|v| libm::log(*v)).sum::<f64>();
            let l_inv = l
                .solve_lower_triangular(&DMatrix::identity(dim, dim))
                .expect("triangular factor is invertible");
            EmComponent {
                log_weight: libm::log(nk / n as f64),
                mean,
                l_inv,
                log_norm: -0.5 * (dim as f64 * libm::log(2.0 * PI) + log_det),
            }
        })
        .collect()
}

fn e_step(features: &Features, params: &[EmComponent], resp: &mut [f64]) -> f64 {
    let n = features.len();
    let k = params.len();
    let dim = features.dim;
    let mut diff = vec![0.0; dim];
    let mut ll = 0.0;
    for i in 0..n {
        let x = features.row(i);
        let row = &mut resp[i * k..(i + 1) * k];
        let mut best = f64::NEG_INFINITY;
        for (r, c) in row.iter_mut().zip(params) {
            for (dd, (a, b)) in diff.iter_mut().zip(x.iter().zip(&c.mean)) {
                *dd = a - b;
            }
            let mut maha = 0.0;
            for a in 0..dim {
                let mut s = 0.0;
                for b in 0..=a {
                    s += c.l_inv[(a, b)] * diff[b];
                }
                maha += s * s;
            }
            *r = c.log_weight + c.log_norm - 0.5 * maha;
            best = best.max(*r);
        }
        let mut total = 0.0;
        for r in row.iter_mut() {
            *r = libm::exp(*r - best);
            total += *r;
        }
        for r in row.iter_mut() {
            *r /= total;
        }
        ll += best + libm::log(total);
    }
    ll
}

/// k-means++ seeding followed by a few Lloyd iterations; returns labels.
fn kmeans_pp(features: &Features, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = features.len();
    let sq =
        |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(features.row(rng.random_range(0..n)).to_vec());
    let mut d2: Vec<f64> = (0..n).map(|i| sq(features.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = features.row(pick).to_vec();
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq(features.row(i), &c));
        }
        centers.push(c);
    }

    let mut labels = vec![0usize; n];
    for _ in 0..10 {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let x = features.row(i);
            let best = (0..k)
                .map(|j| (j, sq(x, &centers[j])))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
                .0;
            if best != *label {
                *label = best;
                changed = true;
            }
        }
        let dim = features.dim;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(features.row(i)) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn iso(prior: f64, mean: &[f64], var: f64) -> GaussianComponent {
        let d = mean.len();
        GaussianComponent::new(prior, mean.to_vec(), DMatrix::identity(d, d) * var).unwrap()
    }

    #[test]
    fn standard_normal_modes() {
        let one = iso(1.0, &[0.0], 1.0);
        assert!((gaussian_pdf(&one, &[0.0]).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-15);
        let two = iso(1.0, &[0.0, 0.0], 1.0);
        assert!(
            (gaussian_pdf(&two, &[0.0, 0.0]).unwrap() - 0.159_154_943_091_895_35).abs() < 1e-15
        );
        assert!(gaussian_pdf(&two, &[100.0, 0.0]).unwrap() < 1e-300);
        assert!(matches!(
            gaussian_pdf(&two, &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn posteriors_basic_cases() {
        let a = iso(1.0, &[0.0, 0.0], 1.0);
        assert_eq!(posteriors(&[a.clone()], &[3.0, 1.0]), vec![1.0]);

        let half = iso(0.5, &[1.0, 2.0], 0.3);
        let g = posteriors(&[half.clone(), half], &[-4.0, 7.0]);
        assert_eq!(g, vec![0.5, 0.5]);

        let near = iso(0.5, &[0.0, 0.0], 1.0);
        let far = iso(0.5, &[10.0, 0.0], 1.0);
        let g = posteriors(&[near, far], &[0.0, 0.0]);
        // Density ratio exp(-50).
        assert!(g[0] > 0.999);
        assert!((g[1] - libm::exp(-50.0) / (1.0 + libm::exp(-50.0))).abs() < 1e-30);
    }

    #[test]
    fn posteriors_underflow_picks_mahalanobis_nearest() {
        let a = iso(0.5, &[0.0, 0.0], 1.0);
        let b = iso(0.5, &[10.0, 0.0], 4.0);
        let g = posteriors(&[a, b], &[1e4, 0.0]);
        assert_eq!(g, vec![0.0, 1.0]);
    }

    #[test]
    fn bhattacharyya_closed_forms() {
        let a = iso(1.0, &[0.0], 1.0);
        assert!((bhattacharyya_coefficient(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let b = iso(1.0, &[2.0], 1.0);
        let bc = bhattacharyya_coefficient(&a, &b).unwrap();
        assert!((bc - libm::exp(-0.5)).abs() < 1e-15);
    }

    #[test]
    fn fit_single_component_matches_sample_moments() {
        let points: Vec<ReferencePoint> = (0..20)
            .map(|i| {
                let t = i as f64;
                ReferencePoint::new(vec![t, 0.5 * t + (i % 3) as f64], vec![1.0, 0.5])
            })
            .collect();
        let fit = fit_gmm(&points, 1, 3).unwrap();
        assert_eq!(fit.len(), 1);
        let n = points.len() as f64;
        let mx: f64 = points.iter().map(|p| p.position[0]).sum::<f64>() / n;
        let my: f64 = points.iter().map(|p| p.position[1]).sum::<f64>() / n;
        let c = &fit.components[0];
        assert!((c.mean()[0] - mx).abs() < 1e-12 && (c.mean()[1] - my).abs() < 1e-12);
        let sxy: f64 = points
            .iter()
            .map(|p| (p.position[0] - mx) * (p.position[1] - my))
            .sum::<f64>()
            / n;
        assert!((c.covariance()[(0, 1)] - sxy).abs() < 1e-9);
        assert_eq!(c.prior(), 1.0);
    }

    #[test]
    fn fit_recovers_two_separated_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let centers = [[0.0, 0.0], [6.0, 0.0]];
        let vel = [[1.0, 0.0], [-1.0, 0.0]];
        let sigma = 0.5;
        let mut points = Vec::new();
        for (c, v) in centers.iter().zip(vel) {
            for _ in 0..150 {
                let dx: f64 = StandardNormal.sample(&mut rng);
                let dy: f64 = StandardNormal.sample(&mut rng);
                points.push(ReferencePoint::new(
                    vec![c[0] + sigma * dx, c[1] + sigma * dy],
                    v.to_vec(),
                ));
            }
        }
        let fit = fit_gmm(&points, 5, 1).unwrap();
        assert_eq!(fit.len(), 2);
        for half in points.chunks(150) {
            let c = [
                half.iter().map(|p| p.position[0]).sum::<f64>() / 150.0,
                half.iter().map(|p| p.position[1]).sum::<f64>() / 150.0,
            ];
            let best = fit
                .components
                .iter()
                .map(|g| math::dist(g.mean(), &c))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.1 * sigma, "mean off by {best}");
        }
        let total: f64 = fit.components.iter().map(|c| c.prior()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_and_small_inputs() {
        let same: Vec<ReferencePoint> = (0..10)
            .map(|_| ReferencePoint::new(vec![0.0, 0.0], vec![1.0, 0.0]))
            .collect();
        assert_eq!(fit_gmm(&same, 3, 0).unwrap_err(), Error::DegenerateData);
        assert!(matches!(
            fit_gmm(&same[..3], 3, 0),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn every_component_keeps_enough_points() {
        let points: Vec<ReferencePoint> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.25;
                ReferencePoint::new(vec![t, libm::sin(t)], vec![1.0, libm::cos(t)])
            })
            .collect();
        let fit = fit_gmm(&points, 8, 5).unwrap();
        for k in 0..fit.len() {
            assert!(fit.cluster(k).len() >= 3);
        }
    }
}
