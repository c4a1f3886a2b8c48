//! Modal EM on a generic local design.
//!
//! Both the scalar local-polynomial fit and the varying-coefficient fit
//! reduce to the same problem once the local design rows `zᵢ`, kernel
//! weights `kᵢ` and responses `yᵢ` are fixed:
//!
//! ```text
//! maximise  (1/n) Σᵢ kᵢ φ_{h₂}(yᵢ − zᵢᵀθ)
//! ```
//!
//! The E-step turns the summands into responsibilities, the M-step is a
//! weighted least-squares solve. Rows with zero kernel weight are dropped
//! when the design is built.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ModalError, Result};
use crate::kernels::response_kernel;
use crate::linalg;
use crate::stats;

/// Percentile levels of the local residuals used to shift the intercept of starts 2..=5.
pub(crate) const START_PERCENTILES: [f64; 4] = [0.10, 0.35, 0.65, 0.90];
/// Objectives closer than this (relative) are treated as tied between starts.
const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub(crate) struct LocalDesign {
    pub q: usize,
    pub rows: Vec<f64>,
    pub kw: Vec<f64>,
    pub y: Vec<f64>,
    /// Position of every kept row in the original sample.
    pub index: Vec<usize>,
    pub n_total: usize,
    pub h2: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EmSettings {
    pub max_iter: usize,
    pub tol_obj: f64,
    pub tol_param: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct EmRun {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct MultiStartRun {
    pub best: EmRun,
    pub start_objectives: Vec<f64>,
}

impl LocalDesign {
    pub fn len(&self) -> usize {
        self.kw.len()
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.q..(i + 1) * self.q]
    }

    #[inline]
    pub fn residual(&self, theta: &[f64], i: usize) -> f64 {
        let fitted: f64 = self.row(i).iter().zip(theta).map(|(z, t)| z * t).sum();
        self.y[i] - fitted
    }

    /// `(1/n) Σ kᵢ φ_{h₂}(yᵢ − zᵢᵀθ)`.
    pub fn objective(&self, theta: &[f64]) -> f64 {
        let sum: f64 = (0..self.len())
            .map(|i| self.kw[i] * response_kernel(self.residual(theta, i), self.h2))
            .sum();
        sum / self.n_total as f64
    }

    /// Normalised responsibilities over the kept rows, computed in log space so that
    /// residuals far out in the tail of `φ_{h₂}` cannot underflow every term at once.
    pub fn responsibilities(&self, theta: &[f64], center: f64) -> Result<Vec<f64>> {
        if self.len() == 0 {
            return Err(ModalError::DegenerateWindow { center });
        }
        let inv = 1.0 / (2.0 * self.h2 * self.h2);
        let logs: Vec<f64> = (0..self.len())
            .map(|i| {
                let r = self.residual(theta, i);
                self.kw[i].ln() - r * r * inv
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(ModalError::DegenerateWindow { center });
        }
        let mut w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        Ok(w)
    }

    pub fn weighted_ls(&self, weights: &[f64]) -> Result<Vec<f64>> {
        linalg::weighted_least_squares(&self.rows, self.q, weights, &self.y)
    }

    /// Kernel-weighted least-squares fit, the mean-regression counterpart of the modal fit.
    pub fn mean_fit(&self, center: f64) -> Result<Vec<f64>> {
        if self.len() == 0 {
            return Err(ModalError::DegenerateWindow { center });
        }
        self.weighted_ls(&self.kw)
    }
}

/// One E-step followed by one M-step.
pub(crate) fn em_cycle(design: &LocalDesign, theta: &[f64], center: f64) -> Result<Vec<f64>> {
    let w = design.responsibilities(theta, center)?;
    design.weighted_ls(&w)
}

/// Runs EM from `start`. When `trace` is given, the objective before the first
/// iteration and after every iteration is appended to it.
pub(crate) fn run_em(
    design: &LocalDesign,
    start: &[f64],
    settings: EmSettings,
    center: f64,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<EmRun> {
    let mut theta = start.to_vec();
    let mut obj = design.objective(&theta);
    if let Some(t) = trace.as_deref_mut() {
        t.push(obj);
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iter {
        let next = em_cycle(design, &theta, center)?;
        let next_obj = design.objective(&next);
        iterations += 1;
        if let Some(t) = trace.as_deref_mut() {
            t.push(next_obj);
        }
        let d_param = theta
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let d_obj = if obj > 0.0 {
            (next_obj - obj).abs() / obj
        } else if next_obj == obj {
            0.0
        } else {
            f64::INFINITY
        };
        theta = next;
        obj = next_obj;
        if d_param < settings.tol_param && d_obj < settings.tol_obj {
            converged = true;
            break;
        }
    }
    Ok(EmRun {
        theta,
        objective: obj,
        iterations,
        converged,
    })
}

/// Starting values: the kernel-weighted mean fit, then the same fit with the
/// intercept (coordinate 0) shifted by residual percentiles; starts beyond the
/// fifth shift the intercept by residuals drawn from the window with a
/// generator seeded by `(seed, stream)`.
pub(crate) fn starting_values(
    design: &LocalDesign,
    n_starts: usize,
    seed: u64,
    stream: u64,
    center: f64,
) -> Result<Vec<Vec<f64>>> {
    let first = design.mean_fit(center)?;
    let mut starts = vec![first.clone()];
    if n_starts <= 1 {
        return Ok(starts);
    }
    let mut residuals: Vec<f64> = (0..design.len()).map(|i| design.residual(&first, i)).collect();
    residuals.sort_by(f64::total_cmp);
    for &level in START_PERCENTILES.iter().take(n_starts - 1) {
        let mut s = first.clone();
        s[0] += stats::quantile_sorted(&residuals, level);
        starts.push(s);
    }
    if n_starts > 1 + START_PERCENTILES.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        for _ in starts.len()..n_starts {
            let mut s = first.clone();
            s[0] += residuals[rng.random_range(0..residuals.len())];
            starts.push(s);
        }
    }
    Ok(starts)
}

/// Runs EM from every start and keeps the highest objective. Near-ties go to
/// the solution whose intercept is closest to the first start's intercept.
/// A start whose iterations fail is skipped (its objective is recorded as NaN);
/// the first error is returned only when every start fails.
pub(crate) fn multi_start(
    design: &LocalDesign,
    starts: &[Vec<f64>],
    settings: EmSettings,
    center: f64,
) -> Result<MultiStartRun> {
    let anchor = starts[0][0];
    let mut best: Option<EmRun> = None;
    let mut first_error = None;
    let mut start_objectives = Vec::with_capacity(starts.len());
    for start in starts {
        let run = match run_em(design, start, settings, center, None) {
            Ok(run) => run,
            Err(e) => {
                start_objectives.push(f64::NAN);
                first_error.get_or_insert(e);
                continue;
            }
        };
        start_objectives.push(run.objective);
        best = Some(match best {
            None => run,
            Some(cur) => {
                let scale = cur.objective.abs().max(run.objective.abs());
                let tied = (run.objective - cur.objective).abs() <= TIE_TOLERANCE * scale;
                let better = if tied {
                    (run.theta[0] - anchor).abs() < (cur.theta[0] - anchor).abs()
                } else {
                    run.objective > cur.objective
                };
                if better {
                    run
                } else {
                    cur
                }
            }
        });
    }
    match best {
        Some(best) => Ok(MultiStartRun { best, start_objectives }),
        None => Err(first_error.unwrap_or(ModalError::AllFitsFailed)),
    }
}
