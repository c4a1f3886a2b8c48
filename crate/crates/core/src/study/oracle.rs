use crate::error::{ModalError, Result};
use crate::kernels::{response_kernel, KernelSpec};
use crate::modal_lpr::{Bandwidths, Dataset};
use crate::study::golden_section_max;

pub const MIN_ORACLE_GRID: usize = 100;

/// `(1/n) Σ K_{h₁}(xᵢ − x₀) φ_{h₂}(yᵢ − y)`, the local constant modal objective.
pub fn local_constant_profile(data: &Dataset, x0: f64, bw: Bandwidths, kernel: KernelSpec, y: f64) -> f64 {
    let sum: f64 = data
        .x()
        .iter()
        .zip(data.y())
        .map(|(&xi, &yi)| kernel.scaled(xi - x0, bw.h1) * response_kernel(yi - y, bw.h2))
        .sum();
    sum / data.len() as f64
}

/// Brute-force maximiser of the local constant objective over an even grid on
/// `y_range`, refined by golden-section search between the neighbours of the best
/// grid point.
pub fn grid_search_mode_oracle(
    data: &Dataset,
    x0: f64,
    bw: Bandwidths,
    kernel: KernelSpec,
    y_range: (f64, f64),
    grid_size: usize,
) -> Result<f64> {
    if grid_size < MIN_ORACLE_GRID {
        return Err(ModalError::InvalidInput(format!("oracle grid needs at least {MIN_ORACLE_GRID} points")));
    }
    let (lo, hi) = y_range;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(ModalError::InvalidInput("y range must be a finite increasing pair".into()));
    }
    if !data.x().iter().any(|&xi| kernel.scaled(xi - x0, bw.h1) > 0.0) {
        return Err(ModalError::DegenerateWindow { center: x0 });
    }
    let step = (hi - lo) / (grid_size - 1) as f64;
    let profile = |y: f64| local_constant_profile(data, x0, bw, kernel, y);
    let mut best = (0, f64::NEG_INFINITY);
    for k in 0..grid_size {
        let v = profile(lo + k as f64 * step);
        if v > best.1 {
            best = (k, v);
        }
    }
    let center = lo + best.0 as f64 * step;
    let (a, b) = ((center - step).max(lo), (center + step).min(hi));
    Ok(golden_section_max(profile, a, b, 1e-12 * step.max(1e-300)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_in_window_observation() {
        let data = Dataset::new(vec![0.5, 3.0], vec![1.234, -7.0]).unwrap();
        let bw = Bandwidths::new(0.2, 0.3).unwrap();
        let y = grid_search_mode_oracle(&data, 0.5, bw, KernelSpec::Epanechnikov, (-2.0, 4.0), 200).unwrap();
        assert!((y - 1.234).abs() < 1e-8);
    }

    #[test]
    fn two_separated_bumps() {
        let h2 = 0.1;
        let data = Dataset::new(vec![0.5, 0.5], vec![0.0, 10.0 * h2]).unwrap();
        let bw = Bandwidths::new(0.2, h2).unwrap();
        let y = grid_search_mode_oracle(&data, 0.5, bw, KernelSpec::Epanechnikov, (-1.0, 2.0), 1001).unwrap();
        // each bump's maximiser sits a hair inside its own centre
        let step = 3.0 / 1000.0;
        assert!(y.abs() < step || (y - 1.0).abs() < step, "{y}");
    }

    #[test]
    fn empty_window_and_bad_grid() {
        let data = Dataset::new(vec![0.0, 0.1], vec![0.0, 1.0]).unwrap();
        let bw = Bandwidths::new(0.2, 0.3).unwrap();
        assert!(matches!(
            grid_search_mode_oracle(&data, 5.0, bw, KernelSpec::Epanechnikov, (0.0, 1.0), 200),
            Err(ModalError::DegenerateWindow { .. })
        ));
        assert!(grid_search_mode_oracle(&data, 0.0, bw, KernelSpec::Epanechnikov, (0.0, 1.0), 50).is_err());
    }
}
