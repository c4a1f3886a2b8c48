use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{plugin_bandwidths, vc_plugin_bandwidths, VcCurvatureForm};
use crate::baselines::{
    baseline_curve, cv_bandwidth, vc_baseline_fit, vc_cv_bandwidth, BaselineSpec, Method, CV_DEFAULT_FOLDS,
};
use crate::error::{ModalError, Result};
use crate::modal_lpr::{fit_curve, Bandwidths, Dataset, EMConfig};
use crate::stats;
use crate::study::scenario::{DesignPoint, Scenario};
use crate::study::{linspace, substream};
use crate::varying_coeff::{vc_fit_curves, VCDataset};

/// Largest tolerated share of failed replications per method.
pub const MAX_FAILURE_SHARE: f64 = 0.10;

/// How a tabulated width `w` (in units of σ) becomes a prediction interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum IntervalConvention {
    /// `[c − wσ, c + wσ]`
    #[default]
    HalfWidth,
    /// `[c − wσ/2, c + wσ/2]`
    FullLength,
}

impl IntervalConvention {
    /// Total interval length for a width given in σ units.
    pub fn length(self, width: f64, sigma: f64) -> f64 {
        match self {
            IntervalConvention::HalfWidth => 2.0 * width * sigma,
            IntervalConvention::FullLength => width * sigma,
        }
    }
}

/// `P(Y ∈ [center − width/2, center + width/2] | point)` under the scenario's conditional law.
pub fn coverage_probability(center: f64, width: f64, point: &DesignPoint, scenario: &Scenario) -> f64 {
    if !(width > 0.0) {
        return 0.0;
    }
    let (loc, s) = scenario.conditional_law(point);
    let half = 0.5 * width;
    let p = scenario.error.cdf((center + half - loc) / s) - scenario.error.cdf((center - half - loc) / s);
    p.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    pub n: usize,
    pub replications: usize,
    /// Widths in σ units.
    pub widths: Vec<f64>,
    /// Scalar prediction grid size on [0.1, 0.9].
    pub grid_size: usize,
    /// Points per axis of the varying-coefficient grid on [0.1, 0.9]³.
    pub vc_grid_size: usize,
    pub seed: u64,
    pub em: EMConfig,
    /// The σ of "width·σ".
    pub sigma: f64,
    pub convention: IntervalConvention,
    pub cv_folds: usize,
    pub vc_curvature: VcCurvatureForm,
}

impl CoverageConfig {
    pub fn new(scenario: Scenario, methods: Vec<Method>, n: usize, replications: usize, widths: Vec<f64>, seed: u64) -> Self {
        CoverageConfig {
            scenario,
            methods,
            n,
            replications,
            widths,
            grid_size: 200,
            vc_grid_size: 30,
            seed,
            em: EMConfig::default(),
            sigma: 2.0,
            convention: IntervalConvention::HalfWidth,
            cv_folds: CV_DEFAULT_FOLDS,
            vc_curvature: VcCurvatureForm::Bias,
        }
    }

    fn validate(&self) -> Result<()> {
        self.em.validate()?;
        if self.methods.is_empty() || self.widths.is_empty() {
            return Err(ModalError::InvalidInput("need at least one method and one width".into()));
        }
        if self.replications == 0 || self.n < 10 {
            return Err(ModalError::InvalidInput("need replications ≥ 1 and n ≥ 10".into()));
        }
        if self.widths.iter().any(|w| !(*w >= 0.0)) {
            return Err(ModalError::InvalidInput("widths must be nonnegative".into()));
        }
        if self.grid_size < 2 || self.vc_grid_size < 2 || self.cv_folds < 2 {
            return Err(ModalError::InvalidInput("grid sizes and fold count must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub method: Method,
    pub n: usize,
    pub width: f64,
    pub mean: f64,
    pub sd: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub method: Method,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStudy {
    /// One row per (method, width), methods in configuration order.
    pub reports: Vec<CoverageReport>,
    pub failures: Vec<ReplicationFailure>,
    /// Replications whose plug-in failed and that used the fallback bandwidths.
    pub plugin_fallbacks: Vec<usize>,
    pub fallback_bandwidths: Option<Bandwidths>,
}

enum Sample {
    Scalar(Dataset),
    Vc(VCDataset),
}

fn draw(cfg: &CoverageConfig, rep: usize) -> Result<Sample> {
    let mut rng = substream(cfg.seed, rep as u64);
    if cfg.scenario.is_vc() {
        Ok(Sample::Vc(cfg.scenario.generate_vc(cfg.n, &mut rng)?))
    } else {
        Ok(Sample::Scalar(cfg.scenario.generate_scalar(cfg.n, &mut rng)?))
    }
}

fn plugin(cfg: &CoverageConfig, sample: &Sample) -> Result<Bandwidths> {
    let km = cfg.em.kernel.moments(1);
    match sample {
        Sample::Scalar(d) => plugin_bandwidths(d, &cfg.em, &km).map(|r| r.1),
        Sample::Vc(d) => vc_plugin_bandwidths(d, &cfg.em, &km, cfg.vc_curvature).map(|r| r.1),
    }
}

fn first_error<T>(items: Vec<Result<T>>) -> Result<Vec<T>> {
    items.into_iter().collect()
}

/// Per-grid-point coverage for each width, averaged over the grid.
fn average_coverage(cfg: &CoverageConfig, centers: &[(DesignPoint, f64)]) -> Vec<f64> {
    cfg.widths
        .iter()
        .map(|&w| {
            let len = cfg.convention.length(w, cfg.sigma);
            centers
                .iter()
                .map(|(pt, c)| coverage_probability(*c, len, pt, &cfg.scenario))
                .sum::<f64>()
                / centers.len() as f64
        })
        .collect()
}

fn scalar_centers(cfg: &CoverageConfig, data: &Dataset, method: Method, bw: Bandwidths) -> Result<Vec<(DesignPoint, f64)>> {
    let grid = linspace(0.1, 0.9, cfg.grid_size);
    let values = if method == Method::LLMR {
        let em = cfg.em.with_order(1);
        let est = fit_curve(data, &grid, bw, &em, 0)?;
        first_error(est.fits)?.into_iter().map(|f| f.coefficients.beta[0]).collect::<Vec<_>>()
    } else {
        let h = cv_bandwidth(data, method, cfg.cv_folds)?;
        first_error(baseline_curve(data, &grid, &BaselineSpec::new(method, h)?))?
    };
    Ok(grid.into_iter().map(DesignPoint::Scalar).zip(values).collect())
}

fn vc_centers(cfg: &CoverageConfig, data: &VCDataset, method: Method, bw: Bandwidths) -> Result<Vec<(DesignPoint, f64)>> {
    let axis = linspace(0.1, 0.9, cfg.vc_grid_size);
    let coefs: Vec<Vec<f64>> = if method == Method::LLMR {
        let est = vc_fit_curves(data, &axis, bw, &cfg.em.with_order(1))?;
        first_error(est.fits)?.into_iter().map(|f| f.coefficients.b).collect()
    } else {
        let spec = BaselineSpec::new(method, vc_cv_bandwidth(data, method, cfg.cv_folds)?)?;
        first_error(axis.par_iter().map(|&u| vc_baseline_fit(data, u, &spec)).collect())?
    };
    let mut out = Vec::with_capacity(axis.len().pow(3));
    for (&u, g) in axis.iter().zip(&coefs) {
        for &x1 in &axis {
            for &x2 in &axis {
                let center = g[0] + g[1] * x1 + g[2] * x2;
                out.push((DesignPoint::Vc { u, x: [x1, x2] }, center));
            }
        }
    }
    Ok(out)
}

fn replicate(cfg: &CoverageConfig, sample: &Sample, method: Method, bw: Option<Bandwidths>) -> Result<Vec<f64>> {
    let bw = match (method, bw) {
        (Method::LLMR, None) => return Err(ModalError::InvalidPlugin("no LLMR bandwidths available".into())),
        (_, bw) => bw.unwrap_or(Bandwidths { h1: 1.0, h2: 1.0 }),
    };
    let centers = match sample {
        Sample::Scalar(d) => scalar_centers(cfg, d, method, bw)?,
        Sample::Vc(d) => vc_centers(cfg, d, method, bw)?,
    };
    Ok(average_coverage(cfg, &centers))
}

/// Monte-Carlo coverage study: fresh sample per replication, plug-in bandwidths for
/// LLMR, cross-validated bandwidths for the baselines, coverage averaged over the
/// prediction grid and then over replications.
///
/// A replication whose plug-in fails uses the medians of the successful plug-in
/// bandwidths. Failed (replication, method) pairs are excluded and reported; more
/// than `MAX_FAILURE_SHARE` failures for any method aborts the study.
pub fn run_coverage_study(cfg: &CoverageConfig) -> Result<CoverageStudy> {
    cfg.validate()?;
    let samples: Vec<Sample> = first_error((0..cfg.replications).into_par_iter().map(|r| draw(cfg, r)).collect())?;
    let needs_plugin = cfg.methods.contains(&Method::LLMR);
    let plugins: Vec<Option<Result<Bandwidths>>> = samples
        .par_iter()
        .map(|s| needs_plugin.then(|| plugin(cfg, s)))
        .collect();
    let ok_bw: Vec<Bandwidths> = plugins.iter().flatten().filter_map(|r| r.as_ref().ok().copied()).collect();
    let fallback = (!ok_bw.is_empty()).then(|| Bandwidths {
        h1: stats::median(&ok_bw.iter().map(|b| b.h1).collect::<Vec<_>>()),
        h2: stats::median(&ok_bw.iter().map(|b| b.h2).collect::<Vec<_>>()),
    });
    let mut plugin_fallbacks = Vec::new();
    let bws: Vec<Option<Bandwidths>> = plugins
        .iter()
        .enumerate()
        .map(|(r, p)| match p {
            Some(Ok(bw)) => Some(*bw),
            Some(Err(_)) => {
                plugin_fallbacks.push(r);
                fallback
            }
            None => None,
        })
        .collect();

    let results: Vec<Vec<Result<Vec<f64>>>> = samples
        .par_iter()
        .zip(&bws)
        .map(|(s, bw)| cfg.methods.iter().map(|&m| replicate(cfg, s, m, *bw)).collect())
        .collect();

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (k, &method) in cfg.methods.iter().enumerate() {
        let mut per_width: Vec<Vec<f64>> = vec![Vec::new(); cfg.widths.len()];
        for (r, rep) in results.iter().enumerate() {
            match &rep[k] {
                Ok(cov) => cov.iter().zip(per_width.iter_mut()).for_each(|(c, v)| v.push(*c)),
                Err(e) => failures.push(ReplicationFailure {
                    replication: r,
                    method,
                    code: e.code().to_string(),
                    message: e.to_string(),
                }),
            }
        }
        let failed = cfg.replications - per_width[0].len();
        if failed as f64 > MAX_FAILURE_SHARE * cfg.replications as f64 {
            return Err(ModalError::TooManyFailures {
                failed,
                total: cfg.replications,
            });
        }
        for (&width, values) in cfg.widths.iter().zip(&per_width) {
            reports.push(CoverageReport {
                method,
                n: cfg.n,
                width,
                mean: stats::mean(values),
                sd: if values.len() > 1 { stats::std_dev(values) } else { 0.0 },
                reps: values.len(),
            });
        }
    }
    Ok(CoverageStudy {
        reports,
        failures,
        plugin_fallbacks,
        fallback_bandwidths: fallback,
    })
}
