//! Simulation scenarios, coverage studies, cross-validated prediction error,
//! brute-force oracles and Monte-Carlo checks of the asymptotic theory.
//!
//! Every replication draws from its own ChaCha20 stream, keyed by the study
//! seed and the replication index, so results do not depend on how many
//! threads run the replications.

pub mod coverage;
pub mod cv;
pub mod mixture;
pub mod oracle;
pub mod scenario;
pub mod theory;

pub use coverage::{coverage_probability, run_coverage_study, CoverageConfig, CoverageReport, CoverageStudy, IntervalConvention};
pub use cv::{cv_mspe, CvMode, CvOptions, MspeReport};
pub use mixture::ErrorMixture;
pub use oracle::grid_search_mode_oracle;
pub use scenario::{generate_example1, generate_vc_model, DesignPoint, LinearScale, Scenario, ScenarioKind, Target};
pub use theory::{mc_theory_check, reference_bandwidths, vc_theory_check, TheoryCheckConfig, TheoryQuantities, TheoryReport, VcTheoryCheckConfig, VcTheoryQuantities, VcTheoryReport};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::kernels::normal_cdf;

/// Generator for stream `index` of `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `k` evenly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect(),
    }
}

/// Maximiser of a unimodal `f` on `[a, b]` by golden-section search.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        if b - a <= f64::EPSILON * (a.abs() + b.abs()) {
            break;
        }
    }
    let mid = 0.5 * (a + b);
    [a, mid, b].into_iter().max_by(|x, y| f(*x).total_cmp(&f(*y))).expect("three candidates")
}

/// Kolmogorov–Smirnov distance between the sample's empirical CDF and `N(0, 1)`.
pub fn ks_distance_normal(sample: &[f64]) -> f64 {
    let mut z = sample.to_vec();
    z.sort_by(f64::total_cmp);
    let n = z.len() as f64;
    z.iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = normal_cdf(v);
            ((i + 1) as f64 / n - c).max(c - i as f64 / n)
        })
        .fold(0.0, f64::max)
}
