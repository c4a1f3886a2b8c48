use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::plugin_bandwidths;
use crate::baselines::{baseline_curve, cv_bandwidth, BaselineSpec, Method, CV_DEFAULT_FOLDS};
use crate::error::{ModalError, Result};
use crate::modal_lpr::{fit_curve, Bandwidths, Dataset, EMConfig};
use crate::stats;
use crate::study::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CvMode {
    /// `d` folds from one random partition.
    KFold(usize),
    /// `reps` random splits, each holding out `round(n/d)` observations.
    Mccv { d: usize, reps: usize },
}

/// How each method picks its bandwidth on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub em: EMConfig,
    /// Fold count of the inner bandwidth search for the baselines.
    pub inner_folds: usize,
    /// Fixed LLMR bandwidths; `None` runs the plug-in on every training set.
    pub llmr_bandwidths: Option<Bandwidths>,
    /// Fixed baseline bandwidth; `None` cross-validates on every training set.
    pub baseline_h: Option<f64>,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            em: EMConfig::default(),
            inner_folds: CV_DEFAULT_FOLDS,
            llmr_bandwidths: None,
            baseline_h: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MspeReport {
    pub method: Method,
    /// Median over folds of the per-fold median squared prediction error.
    pub median: f64,
    pub sd: f64,
    pub splits: usize,
    pub failed: usize,
    pub per_split: Vec<Option<f64>>,
}

fn splits(n: usize, mode: CvMode, seed: u64) -> Result<Vec<Vec<usize>>> {
    match mode {
        CvMode::KFold(d) => {
            if d < 2 || d > n {
                return Err(ModalError::InvalidInput(format!("fold count must be in 2..={n}")));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut substream(seed, 0));
            let mut folds = vec![Vec::new(); d];
            for (k, i) in order.into_iter().enumerate() {
                folds[k % d].push(i);
            }
            folds.iter_mut().for_each(|f| f.sort_unstable());
            Ok(folds)
        }
        CvMode::Mccv { d, reps } => {
            if d < 2 || reps == 0 {
                return Err(ModalError::InvalidInput("MCCV needs d ≥ 2 and at least one split".into()));
            }
            let size = ((n as f64 / d as f64).round() as usize).clamp(1, n - 1);
            Ok((0..reps)
                .map(|r| {
                    let mut order: Vec<usize> = (0..n).collect();
                    order.shuffle(&mut substream(seed, r as u64));
                    let mut test = order[..size].to_vec();
                    test.sort_unstable();
                    test
                })
                .collect())
        }
    }
}

fn predict(train: &Dataset, at: &[f64], method: Method, opts: &CvOptions) -> Result<Vec<f64>> {
    if method == Method::LLMR {
        let bw = match opts.llmr_bandwidths {
            Some(bw) => bw,
            None => plugin_bandwidths(train, &opts.em, &opts.em.kernel.moments(1))?.1,
        };
        let est = fit_curve(train, at, bw, &opts.em.with_order(1), 0)?;
        est.fits.into_iter().map(|f| f.map(|f| f.coefficients.beta[0])).collect()
    } else {
        let h = match opts.baseline_h {
            Some(h) => h,
            None => cv_bandwidth(train, method, opts.inner_folds)?,
        };
        baseline_curve(train, at, &BaselineSpec::new(method, h)?).into_iter().collect()
    }
}

/// Median squared prediction error across folds or random splits.
pub fn cv_mspe(data: &Dataset, method: Method, mode: CvMode, seed: u64, opts: &CvOptions) -> Result<MspeReport> {
    let n = data.len();
    let tests = splits(n, mode, seed)?;
    let per_split: Vec<Option<f64>> = tests
        .par_iter()
        .map(|test| {
            let mut held = vec![false; n];
            test.iter().for_each(|&i| held[i] = true);
            let train: Vec<usize> = (0..n).filter(|&i| !held[i]).collect();
            let train = data.subset(&train).ok()?;
            let at: Vec<f64> = test.iter().map(|&i| data.x()[i]).collect();
            let pred = predict(&train, &at, method, opts).ok()?;
            let sq: Vec<f64> = pred.iter().zip(test).map(|(p, &i)| (data.y()[i] - p).powi(2)).collect();
            Some(stats::median(&sq))
        })
        .collect();
    let ok: Vec<f64> = per_split.iter().flatten().copied().collect();
    if ok.is_empty() {
        return Err(ModalError::AllFitsFailed);
    }
    Ok(MspeReport {
        method,
        median: stats::median(&ok),
        sd: if ok.len() > 1 { stats::std_dev(&ok) } else { 0.0 },
        splits: tests.len(),
        failed: tests.len() - ok.len(),
        per_split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_fit_has_zero_error() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let y = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let data = Dataset::new(x, y).unwrap();
        let opts = CvOptions { baseline_h: Some(0.3), ..CvOptions::default() };
        let r = cv_mspe(&data, Method::LL, CvMode::KFold(5), 1, &opts).unwrap();
        assert!(r.median < 1e-20);
        assert_eq!(r.failed, 0);
    }

    #[test]
    fn leave_one_out_partition() {
        let s = splits(7, CvMode::KFold(7), 3).unwrap();
        assert!(s.iter().all(|f| f.len() == 1));
        let mut all: Vec<usize> = s.concat();
        all.sort_unstable();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
        let m = splits(20, CvMode::Mccv { d: 4, reps: 3 }, 0).unwrap();
        assert!(m.iter().all(|f| f.len() == 5));
        assert!(splits(5, CvMode::KFold(1), 0).is_err());
    }
}
