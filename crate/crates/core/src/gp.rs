//! Gaussian-process trajectory refinement.
//!
//! Each trajectory channel (box center x, center y, width, height) is
//! modelled as an independent zero-mean GP over time sharing one squared
//! exponential kernel
//!
//! ```text
//! K[p][q] = signal * exp(-band * (z_p - z_q)^2 / 2) + noise * [p == q]
//! ```
//!
//! Hyperparameters maximize the log marginal likelihood with analytic
//! gradients. The fitted posterior fills missing frames, and compensation
//! proposals inside a gap are vetted with a likelihood-ratio test whose
//! statistic is compared to a chi-square quantile.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::model::{BoundingBox, Detection, StreamHeader};
use crate::trajectory::{Gap, Sample, SampleSource, Status, Trajectory};

const JITTER: f64 = 1e-9;

/// Kernel hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    /// Signal variance, `theta_rbf`.
    pub signal: f64,
    /// Inverse squared bandwidth, `theta_band`.
    pub band: f64,
    /// Observation noise variance.
    pub noise: f64,
}

impl Hyper {
    pub const fn new(signal: f64, band: f64, noise: f64) -> Self {
        Hyper {
            signal,
            band,
            noise,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.signal > 0.0
            && self.band > 0.0
            && self.noise >= 0.0
            && self.signal.is_finite()
            && self.band.is_finite()
            && self.noise.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid hyperparameters {self:?}")))
        }
    }

    fn to_log(self) -> [f64; 3] {
        [self.signal.ln(), self.band.ln(), self.noise.ln()]
    }

    fn from_log(u: [f64; 3]) -> Self {
        Hyper::new(u[0].exp(), u[1].exp(), u[2].exp())
    }
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper::new(1.0, 1.0, 0.1)
    }
}

/// Partial derivatives of the log marginal likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmlGradient {
    pub signal: f64,
    pub band: f64,
    pub noise: f64,
}

impl LmlGradient {
    pub fn as_array(&self) -> [f64; 3] {
        [self.signal, self.band, self.noise]
    }
}

fn check_times(z: &[f64]) -> Result<()> {
    if z.iter().any(|t| !t.is_finite()) {
        return Err(Error::Input("non-finite input time".into()));
    }
    Ok(())
}

fn signal_kernel(z: &[f64], theta: &Hyper) -> DMatrix<f64> {
    let n = z.len();
    DMatrix::from_fn(n, n, |p, q| {
        let d = z[p] - z[q];
        theta.signal * (-0.5 * theta.band * d * d).exp()
    })
}

/// Covariance of the observations at times `z`.
pub fn kernel_matrix(z: &[f64], theta: &Hyper) -> Result<DMatrix<f64>> {
    check_times(z)?;
    theta.validate()?;
    let mut k = signal_kernel(z, theta);
    for p in 0..z.len() {
        k[(p, p)] += theta.noise;
    }
    Ok(k)
}

/// Cholesky factor of `k`, retrying once with diagonal jitter.
fn factorize(k: DMatrix<f64>, signal: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c, 0.0));
    }
    let jitter = JITTER * signal;
    let mut k = k;
    for p in 0..k.nrows() {
        k[(p, p)] += jitter;
    }
    Cholesky::new(k)
        .map(|c| (c, jitter))
        .ok_or_else(|| Error::Numerical("kernel matrix is not positive definite".into()))
}

fn ln_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

fn check_data(z: &[f64], x: &DMatrix<f64>) -> Result<()> {
    check_times(z)?;
    if x.nrows() != z.len() {
        return Err(Error::Input(format!(
            "{} observations for {} input times",
            x.nrows(),
            z.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite observation".into()));
    }
    Ok(())
}

/// `-(dn/2) ln 2pi - (d/2) ln|K| - tr(K^-1 X X^T) / 2` for `X` of shape `n x d`.
pub fn log_marginal_likelihood(z: &[f64], x: &DMatrix<f64>, theta: &Hyper) -> Result<f64> {
    check_data(z, x)?;
    let (chol, _) = factorize(kernel_matrix(z, theta)?, theta.signal)?;
    Ok(lml_from_factor(&chol, x))
}

fn lml_from_factor(chol: &Cholesky<f64, Dyn>, x: &DMatrix<f64>) -> f64 {
    let (n, d) = (x.nrows() as f64, x.ncols() as f64);
    let alpha = chol.solve(x);
    let quad = x.component_mul(&alpha).sum();
    -0.5 * d * n * (2.0 * PI).ln() - 0.5 * d * ln_det(chol) - 0.5 * quad
}

/// Log marginal likelihood and its gradient in one factorization.
fn lml_and_gradient(z: &[f64], x: &DMatrix<f64>, theta: &Hyper) -> Result<(f64, LmlGradient)> {
    let kf = signal_kernel(z, theta);
    let mut k = kf.clone();
    for p in 0..z.len() {
        k[(p, p)] += theta.noise;
    }
    let (chol, _) = factorize(k, theta.signal)?;
    let value = lml_from_factor(&chol, x);
    let d = x.ncols() as f64;
    let k_inv = chol.inverse();
    let alpha = &k_inv * x;
    // dL/dK = (alpha alpha^T - d K^-1) / 2
    let g = (&alpha * alpha.transpose() - k_inv * d) * 0.5;
    let n = z.len();
    let mut d_signal = 0.0;
    let mut d_band = 0.0;
    let mut d_noise = 0.0;
    for q in 0..n {
        for p in 0..n {
            let gpq = g[(p, q)];
            let diff = z[p] - z[q];
            d_signal += gpq * kf[(p, q)];
            d_band += gpq * kf[(p, q)] * (-0.5 * diff * diff);
        }
        d_noise += g[(q, q)];
    }
    Ok((
        value,
        LmlGradient {
            signal: d_signal / theta.signal,
            band: d_band,
            noise: d_noise,
        },
    ))
}

/// Analytic gradient of [`log_marginal_likelihood`] with respect to
/// `(signal, band, noise)`.
pub fn lml_gradient(z: &[f64], x: &DMatrix<f64>, theta: &Hyper) -> Result<LmlGradient> {
    check_data(z, x)?;
    theta.validate()?;
    lml_and_gradient(z, x, theta).map(|(_, g)| g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iters: usize,
    /// Stop once every log-parameter gradient component is at most this.
    pub grad_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iters: 500,
            grad_tol: 1e-6,
        }
    }
}

// ln-space box for the optimizer.
const LOG_LOWER: f64 = -18.0;
const LOG_UPPER: f64 = 14.0;

/// A GP with fitted hyperparameters and its training data.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub theta: Hyper,
    pub z: Vec<f64>,
    pub x: DMatrix<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best log likelihood seen after each iteration (first entry is `theta0`).
    pub history: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DMatrix<f64>,
}

impl GpModel {
    /// Condition on `(z, x)` with fixed hyperparameters.
    pub fn with_hyper(z: Vec<f64>, x: DMatrix<f64>, theta: Hyper) -> Result<Self> {
        check_data(&z, &x)?;
        let (chol, _) = factorize(kernel_matrix(&z, &theta)?, theta.signal)?;
        let log_likelihood = lml_from_factor(&chol, &x);
        let alpha = chol.solve(&x);
        Ok(GpModel {
            theta,
            z,
            x,
            log_likelihood,
            iterations: 0,
            converged: true,
            history: vec![log_likelihood],
            chol,
            alpha,
        })
    }

    pub fn dims(&self) -> usize {
        self.x.ncols()
    }
}

/// Maximize the log marginal likelihood by projected gradient ascent in
/// log-parameter space with a backtracking (Armijo) line search.
/// Step lengths start from the Barzilai-Borwein estimate.
pub fn fit(z: &[f64], x: &DMatrix<f64>, theta0: Hyper, opts: &FitOptions) -> Result<GpModel> {
    check_data(z, x)?;
    if z.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            found: z.len(),
        });
    }
    if !(theta0.signal > 0.0 && theta0.band > 0.0 && theta0.noise > 0.0) {
        return Err(Error::Parameter(format!(
            "initial hyperparameters must be positive, got {theta0:?}"
        )));
    }
    let clamp = |u: [f64; 3]| u.map(|v| v.clamp(LOG_LOWER, LOG_UPPER));
    let eval = |u: [f64; 3]| -> Option<(f64, [f64; 3])> {
        let th = Hyper::from_log(u);
        let (l, g) = lml_and_gradient(z, x, &th).ok()?;
        let gu = [g.signal * th.signal, g.band * th.band, g.noise * th.noise];
        (l.is_finite() && gu.iter().all(|v| v.is_finite())).then_some((l, gu))
    };

    let mut u = clamp(theta0.to_log());
    let (mut l, mut g) = eval(u)
        .ok_or_else(|| Error::Numerical("likelihood undefined at the initial hyperparameters".into()))?;
    let mut history = vec![l];
    let mut step = 1.0 / g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut prev: Option<([f64; 3], [f64; 3])> = None;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..opts.max_iters {
        // Components pinned at a bound and pushing outward do not count.
        let proj: [f64; 3] = std::array::from_fn(|k| {
            let at_lo = u[k] <= LOG_LOWER && g[k] < 0.0;
            let at_hi = u[k] >= LOG_UPPER && g[k] > 0.0;
            if at_lo || at_hi {
                0.0
            } else {
                g[k]
            }
        });
        if proj.iter().all(|v| v.abs() <= opts.grad_tol) {
            converged = true;
            break;
        }
        if let Some((pu, pg)) = prev {
            let s: [f64; 3] = std::array::from_fn(|k| u[k] - pu[k]);
            let y: [f64; 3] = std::array::from_fn(|k| g[k] - pg[k]);
            let sy: f64 = (0..3).map(|k| s[k] * y[k]).sum();
            let ss: f64 = (0..3).map(|k| s[k] * s[k]).sum();
            let bb = -ss / sy;
            if bb.is_finite() && bb > 0.0 {
                step = bb.min(1e6);
            }
        }
        let mut accepted = None;
        let mut eta = step;
        for _ in 0..60 {
            let cand = clamp(std::array::from_fn(|k| u[k] + eta * proj[k]));
            let ascent: f64 = (0..3).map(|k| proj[k] * (cand[k] - u[k])).sum();
            if ascent <= 0.0 {
                break;
            }
            if let Some((lc, gc)) = eval(cand) {
                if lc >= l + 1e-4 * ascent {
                    accepted = Some((cand, lc, gc, eta));
                    break;
                }
            }
            eta *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((cand, lc, gc, eta)) => {
                prev = Some((u, g));
                u = cand;
                l = lc;
                g = gc;
                step = eta;
                history.push(l);
            }
            None => {
                // No uphill step at machine precision: treat as stationary.
                history.push(l);
                converged = true;
                break;
            }
        }
    }

    let theta = Hyper::from_log(u);
    let mut model = GpModel::with_hyper(z.to_vec(), x.clone(), theta)?;
    model.iterations = iterations;
    model.converged = converged;
    model.history = history;
    Ok(model)
}

/// Per-channel Gaussian predictive distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Posterior predictive for a new observation at time `t`. The variance
/// includes the observation noise.
pub fn predict(model: &GpModel, t: f64) -> PredictiveDistribution {
    let th = &model.theta;
    let kstar = DVector::from_iterator(
        model.z.len(),
        model.z.iter().map(|zp| {
            let d = t - zp;
            th.signal * (-0.5 * th.band * d * d).exp()
        }),
    );
    let mean: Vec<f64> = (0..model.dims())
        .map(|j| kstar.dot(&model.alpha.column(j)))
        .collect();
    let v = model.chol.solve(&kstar);
    let var = (th.signal + th.noise - kstar.dot(&v)).max(0.0);
    PredictiveDistribution {
        variance: vec![var; mean.len()],
        mean,
    }
}

// ---------------------------------------------------------------------------
// Likelihood-ratio acceptance

/// Quantile of the chi-square distribution with `dof` degrees of freedom,
/// found by bisection on the regularized lower incomplete gamma function.
pub fn chi2_quantile(p: f64, dof: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) || !(dof > 0.0) {
        return Err(Error::Parameter(format!(
            "chi-square quantile needs 0 < p < 1 and dof > 0, got p={p}, dof={dof}"
        )));
    }
    let cdf = |x: f64| statrs::function::gamma::gamma_lr(dof / 2.0, x / 2.0);
    let mut lo = 0.0;
    let mut hi = dof.max(1.0);
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilksOutcome {
    pub accept: bool,
    /// `-2 ln Lambda`, the summed squared standardized residual.
    pub statistic: f64,
    pub threshold: f64,
}

/// Test whether `obs` is a plausible draw from `pred`: accept when
/// `sum_j (obs_j - mean_j)^2 / var_j` stays within the `1 - alpha`
/// chi-square quantile with `d` degrees of freedom.
pub fn wilks_accept(pred: &PredictiveDistribution, obs: &[f64], alpha: f64) -> Result<WilksOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if obs.len() != pred.mean.len() || pred.variance.len() != pred.mean.len() {
        return Err(Error::Input(format!(
            "observation has {} channels, prediction {}",
            obs.len(),
            pred.mean.len()
        )));
    }
    let threshold = chi2_quantile(1.0 - alpha, obs.len() as f64)?;
    let mut statistic = 0.0;
    for ((o, m), v) in obs.iter().zip(&pred.mean).zip(&pred.variance) {
        let r = o - m;
        if *v > 0.0 {
            statistic += r * r / v;
        } else if r != 0.0 {
            statistic = f64::INFINITY;
        }
    }
    Ok(WilksOutcome {
        accept: statistic <= threshold,
        statistic,
        threshold,
    })
}

// ---------------------------------------------------------------------------
// Trajectory refinement

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    /// Test size for proposal acceptance.
    pub alpha: f64,
    /// Below this many training samples, gaps are linearly interpolated.
    pub min_gp_points: usize,
    /// Frames on each side of a gap used for training.
    pub context_frames: u64,
    /// Upper bound on training samples per fit; the ones nearest the gap win.
    pub max_train_points: usize,
    /// Proposals whose center lies within this many box sizes of the
    /// predicted center are tested.
    pub gate: f64,
    pub theta0: Hyper,
    pub fit: FitOptions,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            alpha: 0.05,
            min_gp_points: 4,
            context_frames: 30,
            max_train_points: 64,
            gate: 1.0,
            theta0: Hyper::default(),
            fit: FitOptions::default(),
        }
    }
}

/// What happened while refining one trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefineReport {
    /// Wall-clock milliseconds of each GP fit.
    pub fit_millis: Vec<f64>,
    pub proposals_accepted: usize,
    pub proposals_rejected: usize,
    pub interpolated_frames: usize,
    pub gp_frames: usize,
}

/// Box channels `(cx, cy, w, h)` standardized to zero mean, unit variance.
#[derive(Debug, Clone, Copy)]
struct Standardizer {
    mean: [f64; 4],
    scale: [f64; 4],
}

impl Standardizer {
    fn fit(rows: &[[f64; 4]]) -> Self {
        let n = rows.len() as f64;
        let mut mean = [0.0; 4];
        let mut scale = [1.0; 4];
        for c in 0..4 {
            mean[c] = rows.iter().map(|r| r[c]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 1e-9 {
                scale[c] = sd;
            }
        }
        Standardizer { mean, scale }
    }

    fn forward(&self, r: [f64; 4]) -> [f64; 4] {
        std::array::from_fn(|c| (r[c] - self.mean[c]) / self.scale[c])
    }

    fn inverse(&self, r: &[f64]) -> [f64; 4] {
        std::array::from_fn(|c| r[c] * self.scale[c] + self.mean[c])
    }
}

fn channels(b: &BoundingBox) -> [f64; 4] {
    let (cx, cy) = b.center();
    [cx, cy, b.w, b.h]
}

fn box_from_channels(c: [f64; 4]) -> BoundingBox {
    BoundingBox::from_center(c[0], c[1], c[2].max(1.0), c[3].max(1.0))
}

/// Fill every gap of `traj`, returning a gap-free refined trajectory.
pub fn refine(traj: &Trajectory, proposals: &[Detection], hdr: &StreamHeader, cfg: &RefineConfig) -> Result<Trajectory> {
    refine_with_report(traj, proposals, hdr, cfg).map(|(t, _)| t)
}

pub fn refine_with_report(
    traj: &Trajectory,
    proposals: &[Detection],
    hdr: &StreamHeader,
    cfg: &RefineConfig,
) -> Result<(Trajectory, RefineReport)> {
    let (filled, report) = fill_gaps(traj, &traj.gaps, proposals, hdr, cfg)?;
    let mut samples = traj.samples.clone();
    samples.extend(filled);
    samples.sort_by_key(|s| s.frame);
    let mut refined = Trajectory::from_samples(traj.cluster_id, samples, Status::Refined)?;
    refined.mean_embedding = traj.mean_embedding.clone();
    Ok((refined, report))
}

/// Samples for every frame of `gaps` (each a gap of `traj`), trained on the
/// observed samples of `traj` around them.
pub fn fill_gaps(
    traj: &Trajectory,
    gaps: &[Gap],
    proposals: &[Detection],
    hdr: &StreamHeader,
    cfg: &RefineConfig,
) -> Result<(Vec<Sample>, RefineReport)> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {}", cfg.alpha)));
    }
    let mut report = RefineReport::default();
    if gaps.is_empty() {
        return Ok((Vec::new(), report));
    }

    // Gaps whose training windows overlap share one fit.
    let ctx = cfg.context_frames;
    let mut groups: Vec<Vec<Gap>> = Vec::new();
    for &g in gaps {
        match groups.last_mut() {
            Some(last) if last.last().unwrap().1 + 2 * ctx + 1 >= g.0 => last.push(g),
            _ => groups.push(vec![g]),
        }
    }

    let mut filled: Vec<Sample> = Vec::new();
    for group in &groups {
        let lo = group[0].0.saturating_sub(ctx);
        let hi = group.last().unwrap().1 + ctx;
        let mut train: Vec<&Sample> = traj
            .samples
            .iter()
            .filter(|s| s.frame >= lo && s.frame <= hi)
            .collect();
        if train.len() > cfg.max_train_points {
            let dist = |f: u64| {
                group
                    .iter()
                    .map(|&(a, b)| if f < a { a - f } else { f - b })
                    .min()
                    .unwrap_or(0)
            };
            train.sort_by_key(|s| (dist(s.frame), s.frame));
            train.truncate(cfg.max_train_points);
            train.sort_by_key(|s| s.frame);
        }

        let model = if train.len() >= cfg.min_gp_points.max(2) {
            let rows: Vec<[f64; 4]> = train.iter().map(|s| channels(&s.bbox)).collect();
            let stdz = Standardizer::fit(&rows);
            let z: Vec<f64> = train.iter().map(|s| s.frame as f64 / hdr.fps).collect();
            let x = DMatrix::from_fn(rows.len(), 4, |p, c| stdz.forward(rows[p])[c]);
            let started = Instant::now();
            let fitted = fit(&z, &x, cfg.theta0, &cfg.fit);
            report.fit_millis.push(started.elapsed().as_secs_f64() * 1e3);
            fitted.ok().map(|m| (m, stdz))
        } else {
            None
        };

        for &(a, b) in group {
            for f in a..=b {
                let sample = match &model {
                    Some((m, stdz)) => {
                        let pred = predict(m, f as f64 / hdr.fps);
                        let mean_box = box_from_channels(stdz.inverse(&pred.mean));
                        let (mx, my) = mean_box.center();
                        let reach = cfg.gate * mean_box.w.max(mean_box.h);
                        let mut best: Option<(f64, &Detection)> = None;
                        for p in proposals.iter().filter(|p| p.frame == f) {
                            let (px, py) = p.center();
                            if (px - mx).hypot(py - my) > reach {
                                continue;
                            }
                            let obs = stdz.forward(channels(&p.bbox));
                            let w = wilks_accept(&pred, &obs, cfg.alpha)?;
                            if w.accept {
                                report.proposals_accepted += 1;
                                if best.is_none_or(|(bw, _)| w.statistic < bw) {
                                    best = Some((w.statistic, p));
                                }
                            } else {
                                report.proposals_rejected += 1;
                            }
                        }
                        match best {
                            Some((_, p)) => Sample {
                                frame: f,
                                bbox: p.bbox,
                                source: SampleSource::Proposal,
                            },
                            None => {
                                report.gp_frames += 1;
                                Sample {
                                    frame: f,
                                    bbox: mean_box,
                                    source: SampleSource::Gp,
                                }
                            }
                        }
                    }
                    None => {
                        report.interpolated_frames += 1;
                        interpolate(traj, f)
                    }
                };
                filled.push(sample);
            }
        }
    }

    Ok((filled, report))
}

/// Linear interpolation between the samples bracketing `frame`.
fn interpolate(traj: &Trajectory, frame: u64) -> Sample {
    let idx = traj.samples.partition_point(|s| s.frame < frame);
    let before = &traj.samples[idx.saturating_sub(1)];
    let after = &traj.samples[idx.min(traj.samples.len() - 1)];
    let span = after.frame.saturating_sub(before.frame).max(1) as f64;
    let t = (frame.saturating_sub(before.frame)) as f64 / span;
    let a = channels(&before.bbox);
    let b = channels(&after.bbox);
    Sample {
        frame,
        bbox: box_from_channels(std::array::from_fn(|c| a[c] + t * (b[c] - a[c]))),
        source: SampleSource::Gp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kernel_single_point() {
        let k = kernel_matrix(&[0.0], &Hyper::new(2.0, 0.5, 0.1)).unwrap();
        assert_relative_eq!(k[(0, 0)], 2.1, epsilon = 1e-15);
    }

    #[test]
    fn kernel_two_points() {
        let k = kernel_matrix(&[0.0, 1.0], &Hyper::new(2.0, 0.5, 0.1)).unwrap();
        let off = 2.0 * (-0.25f64).exp();
        assert_relative_eq!(k[(0, 1)], off, epsilon = 1e-15);
        assert_relative_eq!(k[(0, 1)], 1.5576015661428098, epsilon = 1e-12);
        assert_relative_eq!(k[(1, 1)], 2.1, epsilon = 1e-15);
    }

    #[test]
    fn kernel_wide_band_is_diagonal() {
        let k = kernel_matrix(&[0.0, 1.0, 2.0], &Hyper::new(2.0, 1e6, 0.1)).unwrap();
        assert_eq!(k[(0, 1)], 0.0);
        assert_relative_eq!(k[(2, 2)], 2.1);
    }

    #[test]
    fn kernel_rejects_bad_input() {
        assert!(matches!(kernel_matrix(&[f64::NAN], &Hyper::default()), Err(Error::Input(_))));
        assert!(kernel_matrix(&[0.0], &Hyper::new(0.0, 1.0, 0.1)).is_err());
    }

    // Unit-variance Gaussian log density: ln N(x | 0, 1).
    #[test]
    fn lml_scalar_gaussian() {
        let th = Hyper::new(0.9, 1.0, 0.1);
        let zero = DMatrix::from_element(1, 1, 0.0);
        let one = DMatrix::from_element(1, 1, 1.0);
        assert_relative_eq!(
            log_marginal_likelihood(&[0.0], &zero, &th).unwrap(),
            -0.9189385332046727,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            log_marginal_likelihood(&[0.0], &one, &th).unwrap(),
            -1.4189385332046727,
            epsilon = 1e-12
        );
    }

    #[test]
    fn lml_duplicated_column_adds_one_dimension() {
        let z = [0.0, 0.4, 1.1];
        let th = Hyper::new(1.3, 2.0, 0.2);
        let x1 = DMatrix::from_column_slice(3, 1, &[0.3, -0.5, 1.2]);
        let x2 = DMatrix::from_fn(3, 2, |p, _| x1[(p, 0)]);
        let l1 = log_marginal_likelihood(&z, &x1, &th).unwrap();
        let l2 = log_marginal_likelihood(&z, &x2, &th).unwrap();
        assert!(l2 < l1);
        assert_relative_eq!(l2, 2.0 * l1, epsilon = 1e-12);
    }

    #[test]
    fn single_point_band_gradient_is_zero() {
        let x = DMatrix::from_element(1, 4, 0.7);
        let g = lml_gradient(&[0.3], &x, &Hyper::new(1.0, 2.0, 0.1)).unwrap();
        assert_eq!(g.band, 0.0);
    }

    #[test]
    fn zero_data_noise_gradient_closed_form() {
        let z = [0.0, 0.5, 1.5];
        let th = Hyper::new(1.2, 0.8, 0.3);
        let x = DMatrix::zeros(3, 4);
        let g = lml_gradient(&z, &x, &th).unwrap();
        let k_inv = kernel_matrix(&z, &th).unwrap().try_inverse().unwrap();
        let expect = -2.0 * k_inv.trace();
        assert_relative_eq!(g.noise, expect, max_relative = 1e-10);
        assert!(g.noise < 0.0);
    }

    #[test]
    fn fit_requires_two_points() {
        let x = DMatrix::from_element(1, 4, 0.0);
        assert!(matches!(
            fit(&[0.0], &x, Hyper::default(), &FitOptions::default()),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn predict_interpolates_noiseless_training_point() {
        let z = vec![0.0, 1.0, 2.5];
        let x = DMatrix::from_column_slice(3, 1, &[0.5, -1.0, 2.0]);
        let m = GpModel::with_hyper(z, x, Hyper::new(1.0, 1.0, 0.0)).unwrap();
        let p = predict(&m, 1.0);
        assert_relative_eq!(p.mean[0], -1.0, epsilon = 1e-6);
        assert!(p.variance[0] >= 0.0 && p.variance[0] < 1e-6);
    }

    #[test]
    fn predict_far_away_reverts_to_prior() {
        let z = vec![0.0, 1.0];
        let x = DMatrix::from_column_slice(2, 1, &[0.5, -1.0]);
        let th = Hyper::new(1.5, 2.0, 0.2);
        let m = GpModel::with_hyper(z, x, th).unwrap();
        let p = predict(&m, 1e4);
        assert_relative_eq!(p.mean[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.variance[0], 1.7, epsilon = 1e-12);
    }

    // Two symmetric points: the midpoint mean is k*^T K^-1 x with equal
    // kernel weights, i.e. (x0 + x1) * k / (s + n + k01).
    #[test]
    fn predict_midpoint_of_two_points() {
        let th = Hyper::new(1.0, 1.0, 0.0);
        let z = vec![-1.0, 1.0];
        let x = DMatrix::from_column_slice(2, 1, &[2.0, 4.0]);
        let m = GpModel::with_hyper(z, x, th).unwrap();
        let k_mid = (-0.5f64).exp();
        let k01 = (-2.0f64).exp();
        let expect = (2.0 + 4.0) * k_mid / (1.0 + k01);
        let p = predict(&m, 0.0);
        assert_relative_eq!(p.mean[0], expect, epsilon = 1e-12);
        // Same weights on both points, so with equal values it is their average.
        let x = DMatrix::from_column_slice(2, 1, &[3.0, 3.0]);
        let m = GpModel::with_hyper(vec![-1.0, 1.0], x, th).unwrap();
        assert_relative_eq!(predict(&m, 0.0).mean[0], 3.0 * 2.0 * k_mid / (1.0 + k01), epsilon = 1e-12);
    }

    #[test]
    fn chi2_quantiles() {
        assert_relative_eq!(chi2_quantile(0.95, 1.0).unwrap(), 3.841458820694124, epsilon = 1e-8);
        assert_relative_eq!(chi2_quantile(0.95, 4.0).unwrap(), 9.487729036781154, epsilon = 1e-8);
        assert_relative_eq!(chi2_quantile(0.5, 2.0).unwrap(), 2.0 * 2f64.ln(), epsilon = 1e-10);
        assert!(chi2_quantile(1.0, 1.0).is_err());
    }

    #[test]
    fn wilks_zero_residual_accepts() {
        let pred = PredictiveDistribution {
            mean: vec![1.0, 2.0],
            variance: vec![0.5, 0.5],
        };
        let w = wilks_accept(&pred, &[1.0, 2.0], 0.05).unwrap();
        assert!(w.accept);
        assert_eq!(w.statistic, 0.0);
    }

    #[test]
    fn wilks_three_sigma_rejects() {
        let pred = PredictiveDistribution {
            mean: vec![0.0],
            variance: vec![1.0],
        };
        let w = wilks_accept(&pred, &[3.0], 0.05).unwrap();
        assert!(!w.accept);
        assert_eq!(w.statistic, 9.0);
        assert_relative_eq!(w.threshold, 3.841458820694124, epsilon = 1e-8);
    }

    #[test]
    fn wilks_zero_variance_nonzero_residual_is_infinite() {
        let pred = PredictiveDistribution {
            mean: vec![0.0],
            variance: vec![0.0],
        };
        let w = wilks_accept(&pred, &[0.1], 0.05).unwrap();
        assert!(!w.accept);
        assert!(w.statistic.is_infinite());
        assert!(wilks_accept(&pred, &[0.0], 0.05).unwrap().accept);
        assert!(wilks_accept(&pred, &[0.0], 0.0).is_err());
    }

    fn traj_from(frames: &[u64], f: impl Fn(u64) -> BoundingBox) -> Trajectory {
        let samples = frames
            .iter()
            .map(|&fr| Sample {
                frame: fr,
                bbox: f(fr),
                source: SampleSource::Detector,
            })
            .collect();
        Trajectory::from_samples(1, samples, Status::Raw).unwrap()
    }

    #[test]
    fn refine_without_gaps_is_identity() {
        let hdr = StreamHeader::new(30.0, 640, 480, 4).unwrap();
        let t = traj_from(&(0..20).collect::<Vec<_>>(), |f| BoundingBox::from_center(100.0 + f as f64, 100.0, 40.0, 50.0));
        let r = refine(&t, &[], &hdr, &RefineConfig::default()).unwrap();
        assert_eq!(r.samples, t.samples);
        assert_eq!(r.status, Status::Refined);
    }

    #[test]
    fn refine_short_trajectory_interpolates() {
        let hdr = StreamHeader::new(30.0, 640, 480, 4).unwrap();
        let t = traj_from(&[0, 4], |f| BoundingBox::from_center(100.0 + 10.0 * f as f64, 100.0, 40.0, 40.0));
        let (r, rep) = refine_with_report(&t, &[], &hdr, &RefineConfig::default()).unwrap();
        assert!(r.is_gap_free());
        assert_eq!(rep.interpolated_frames, 3);
        assert_relative_eq!(r.sample_at(2).unwrap().bbox.center().0, 120.0, epsilon = 1e-9);
    }
}
