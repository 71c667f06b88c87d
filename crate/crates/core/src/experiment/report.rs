use serde::Serialize;

use super::config::Mode;

/// Steady-state statistics of a norm series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadyStats {
    pub from: f64,
    pub to: f64,
    pub max: f64,
    /// Trapezoidal time average over `[from, to]`.
    pub avg: f64,
    /// `avg < 0.8 max`, for a series above [`OSCILLATION_FLOOR`].
    pub oscillating: bool,
}

/// Below this steady maximum a series counts as settled, whatever its
/// shape: a norm decaying at roundoff level is not an oscillation.
pub const OSCILLATION_FLOOR: f64 = 1e-8;

/// Max and trapezoidal mean of `values` over `[from, to]`; samples are
/// clipped to the window, whose ends are interpolated.
pub fn steady_stats(times: &[f64], values: &[f64], from: f64, to: f64) -> Option<SteadyStats> {
    let at = |t: f64| -> Option<f64> {
        let tol = 1e-9 * t.abs().max(1.0);
        let k = times.partition_point(|&s| s < t - tol);
        if (*times.get(k)? - t).abs() <= tol {
            return Some(values[k]);
        }
        if k == 0 {
            return None;
        }
        let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
        Some(values[k - 1] + w * (values[k] - values[k - 1]))
    };
    let (va, vb) = (at(from)?, at(to)?);
    let mut pts = vec![(from, va)];
    pts.extend(times.iter().zip(values).filter(|(t, _)| **t > from && **t < to).map(|(t, v)| (*t, *v)));
    pts.push((to, vb));
    let max = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let integral: f64 = pts.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();
    let avg = integral / (to - from);
    Some(SteadyStats {
        from,
        to,
        max,
        avg,
        oscillating: max > OSCILLATION_FLOOR && avg < 0.8 * max,
    })
}

/// First time the series falls to half its initial value, with linear
/// interpolation between samples.
pub fn half_life(times: &[f64], values: &[f64]) -> Option<f64> {
    let v0 = *values.first()?;
    let target = 0.5 * v0;
    for k in 1..values.len() {
        if values[k] <= target {
            let (a, b) = (values[k - 1], values[k]);
            let w = if a == b { 1.0 } else { (a - target) / (a - b) };
            return Some(times[k - 1] + w * (times[k] - times[k - 1]));
        }
    }
    None
}

/// Half-life of the exponential through the first and last samples. Used
/// when the series has not halved within the run.
pub fn half_life_estimate(times: &[f64], values: &[f64]) -> Option<f64> {
    let (v0, v1) = (*values.first()?, *values.last()?);
    let span = times.last()? - times.first()?;
    (v0 > 0.0 && v1 > 0.0 && v1 < v0 && span > 0.0).then(|| span * 2f64.ln() / (v0 / v1).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub name: String,
    pub initial: f64,
    pub last: f64,
    pub max: f64,
    pub steady: Option<SteadyStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovSummary {
    /// Gain above threshold and no perturbation, so violations count.
    pub certified: bool,
    pub samples: usize,
    pub violations: usize,
    pub worst_excess: f64,
    pub initial: f64,
    pub last: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeSummary {
    pub signal: String,
    pub window: f64,
    pub starts: Vec<f64>,
    pub kappa: Vec<f64>,
    pub first: f64,
    pub last: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub amplitude: f64,
    pub steady_max: f64,
    pub steady_avg: f64,
    pub oscillating: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// `steady_max` strictly increases over the first `k` amplitudes.
    pub fn increasing_prefix(&self, k: usize) -> bool {
        self.rows.len() >= k && self.rows[..k].windows(2).all(|w| w[1].steady_max > w[0].steady_max)
    }

    /// Smallest amplitude with the oscillation signature.
    pub fn onset(&self) -> Option<f64> {
        self.rows.iter().find(|r| r.oscillating).map(|r| r.amplitude)
    }
}

/// Trend of the kernel error and the control over a long perturbed run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftSummary {
    pub amplitude: f64,
    pub w_initial: f64,
    pub w_mid: f64,
    pub w_end: f64,
    /// Least-squares slope of `||w~||` over the final third.
    pub w_slope_final_third: f64,
    pub u1_max_middle_third: f64,
    pub u1_max_final_third: f64,
}

impl DriftSummary {
    pub fn diverging(&self) -> bool {
        self.w_end > self.w_mid && self.w_end > self.w_initial
    }
}

/// Least-squares slope of `values` against `times` over samples with
/// `t >= from`.
pub fn trend_slope(times: &[f64], values: &[f64], from: f64) -> f64 {
    let pts: Vec<(f64, f64)> = times.iter().zip(values).filter(|(t, _)| **t >= from).map(|(t, v)| (*t, *v)).collect();
    let n = pts.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let (mt, mv) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let (num, den) = pts
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mt) * (p.1 - mv), a.1 + (p.0 - mt) * (p.0 - mt)));
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub name: String,
    pub mode: Mode,
    pub times: Vec<f64>,
    pub metric_names: Vec<String>,
    /// One row per recorded time.
    pub metrics: Vec<Vec<f64>>,
    pub summary: Vec<MetricSummary>,
    /// Name of the norm the steady statistics refer to.
    pub primary: String,
    pub steady: Option<SteadyStats>,
    /// Name of the kernel error series, if the mode estimates kernels.
    pub kernel_error: Option<String>,
    /// Measured half-life of the kernel error.
    pub kernel_half_life: Option<f64>,
    /// Exponential extrapolation from the end points of the kernel error.
    pub kernel_half_life_estimate: Option<f64>,
    pub lyapunov: Option<LyapunovSummary>,
    pub pe: Option<PeSummary>,
    pub sweep: Option<SweepTable>,
    pub drift: Option<DriftSummary>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn metric(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.metric_names.iter().position(|n| n == name)?;
        Some(self.metrics.iter().map(|row| row[k]).collect())
    }

    pub fn summary_of(&self, name: &str) -> Option<&MetricSummary> {
        self.summary.iter().find(|s| s.name == name)
    }

    /// Value of a metric at the last record not after `t`.
    pub fn metric_at(&self, name: &str, t: f64) -> Option<f64> {
        let k = self.metric_names.iter().position(|n| n == name)?;
        let i = self.times.partition_point(|&s| s <= t + 1e-12).checked_sub(1)?;
        Some(self.metrics[i][k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steady_stats_of_a_constant() {
        let t: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let v = vec![2.0; t.len()];
        let s = steady_stats(&t, &v, 5.0, 10.0).unwrap();
        assert!((s.max - 2.0).abs() < 1e-15 && (s.avg - 2.0).abs() < 1e-12);
        assert!(!s.oscillating);
    }

    #[test]
    fn steady_stats_of_a_ramp_and_a_rectified_sine() {
        let t: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.01).collect();
        let ramp: Vec<f64> = t.clone();
        let s = steady_stats(&t, &ramp, 5.0, 10.0).unwrap();
        assert!((s.max - 10.0).abs() < 1e-12);
        assert!((s.avg - 7.5).abs() < 1e-9);
        let rect: Vec<f64> = t.iter().map(|x| (std::f64::consts::PI * x).sin().abs()).collect();
        let s = steady_stats(&t, &rect, 5.0, 10.0).unwrap();
        // mean of |sin| is 2 / pi < 0.8
        assert!((s.avg - 2.0 / std::f64::consts::PI).abs() < 1e-4);
        assert!(s.oscillating);
    }

    #[test]
    fn window_past_the_data_is_none() {
        let t = [0.0, 1.0, 2.0];
        assert!(steady_stats(&t, &[1.0, 1.0, 1.0], 1.0, 3.0).is_none());
        assert!(steady_stats(&t, &[1.0, 2.0, 3.0], 0.5, 1.5).is_some());
    }

    #[test]
    fn half_life_of_an_exponential() {
        let t: Vec<f64> = (0..=2000).map(|k| k as f64 * 1e-3).collect();
        let v: Vec<f64> = t.iter().map(|x| (-x).exp()).collect();
        assert!((half_life(&t, &v).unwrap() - 2f64.ln()).abs() < 1e-6);
        assert_eq!(half_life(&t, &vec![1.0; t.len()]), None);
    }

    #[test]
    fn roundoff_decay_is_not_an_oscillation() {
        let t: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.01).collect();
        let v: Vec<f64> = t.iter().map(|x| 1e-20 * (-5.0 * x).exp()).collect();
        assert!(!steady_stats(&t, &v, 5.0, 10.0).unwrap().oscillating);
    }

    #[test]
    fn extrapolated_half_life() {
        let t: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let v: Vec<f64> = t.iter().map(|x| 2.0 * (-0.01 * x).exp()).collect();
        assert_eq!(half_life(&t, &v), None);
        let h = half_life_estimate(&t, &v).unwrap();
        assert!((h - 2f64.ln() / 0.01).abs() < 1e-9, "{h}");
        assert_eq!(half_life_estimate(&t, &vec![1.0; t.len()]), None);
    }

    #[test]
    fn slope_of_a_line() {
        let t: Vec<f64> = (0..50).map(|k| k as f64).collect();
        let v: Vec<f64> = t.iter().map(|x| 3.0 - 0.5 * x).collect();
        assert!((trend_slope(&t, &v, 10.0) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn sweep_diagnostics() {
        let row = |a, m, osc| SweepRow {
            amplitude: a,
            steady_max: m,
            steady_avg: m,
            oscillating: osc,
        };
        let s = SweepTable {
            rows: vec![row(0.0, 0.0, false), row(1.0, 0.1, false), row(2.0, 0.3, false), row(12.0, 2.0, true)],
        };
        assert!(s.increasing_prefix(3));
        assert_eq!(s.onset(), Some(12.0));
    }
}
