use std::collections::VecDeque;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::DelayError;

/// Interpolation used between stored history samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    Linear,
    /// Cubic Hermite on the stored values and right-hand-side slopes.
    #[default]
    CubicHermite,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Sample {
    pub t: f64,
    pub y: Vec<f64>,
    /// Slope used on the interval ending at this sample.
    pub left: Vec<f64>,
    /// Slope used on the interval starting at this sample.
    pub right: Vec<f64>,
}

/// Ring of past states covering at least `[t_now - horizon, t_now]`.
///
/// Only the leading `width` entries of the system state are kept; the
/// integrator stores delayed components first.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    width: usize,
    horizon: f64,
    interp: Interp,
    samples: VecDeque<Sample>,
}

fn time_tol(t: f64) -> f64 {
    1e-9 * (1.0 + t.abs())
}

impl HistoryBuffer {
    pub fn new(width: usize, horizon: f64, interp: Interp) -> Self {
        Self {
            width,
            horizon: horizon.max(0.0),
            interp,
            samples: VecDeque::new(),
        }
    }

    /// History constant in time on `[t0 - horizon, t0]`, sampled every `dt`.
    pub fn constant(value: &[f64], t0: f64, horizon: f64, dt: f64, interp: Interp) -> Self {
        Self::from_fn(value.len(), t0, horizon, dt, interp, |_, out| out.copy_from_slice(value), None)
    }

    /// Samples `f` on the grid `t0 - k dt` covering the horizon. Slopes come
    /// from `df` when given, otherwise from centred finite differences.
    pub fn from_fn(
        width: usize,
        t0: f64,
        horizon: f64,
        dt: f64,
        interp: Interp,
        f: impl Fn(f64, &mut [f64]),
        df: Option<&dyn Fn(f64, &mut [f64])>,
    ) -> Self {
        let mut buf = Self::new(width, horizon, interp);
        let k = if horizon > 0.0 {
            (horizon / dt - 1e-9).ceil() as usize
        } else {
            0
        };
        for i in (0..=k).rev() {
            let t = t0 - i as f64 * dt;
            let mut y = vec![0.0; width];
            f(t, &mut y);
            let mut slope = vec![0.0; width];
            match df {
                Some(df) => df(t, &mut slope),
                None => {
                    let h = 1e-6 * dt.max(1e-3);
                    let (mut a, mut b) = (vec![0.0; width], vec![0.0; width]);
                    f(t + h, &mut a);
                    f(t - h, &mut b);
                    for j in 0..width {
                        slope[j] = (a[j] - b[j]) / (2.0 * h);
                    }
                }
            }
            buf.samples.push_back(Sample {
                t,
                y,
                left: slope.clone(),
                right: slope,
            });
        }
        buf
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn interp(&self) -> Interp {
        self.interp
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first_time(&self) -> Option<f64> {
        self.samples.front().map(|s| s.t)
    }

    pub fn last_time(&self) -> Option<f64> {
        self.samples.back().map(|s| s.t)
    }

    pub fn last_values(&self) -> Option<&[f64]> {
        self.samples.back().map(|s| s.y.as_slice())
    }

    /// Stored samples, oldest first.
    pub fn iter(&self) -> impl DoubleEndedIterator<Item = (f64, &[f64])> + '_ {
        self.samples.iter().map(|s| (s.t, s.y.as_slice()))
    }

    pub(crate) fn samples(&self) -> &VecDeque<Sample> {
        &self.samples
    }

    pub(crate) fn from_samples(width: usize, horizon: f64, interp: Interp, samples: Vec<Sample>) -> Self {
        Self {
            width,
            horizon,
            interp,
            samples: samples.into(),
        }
    }

    /// Overrides the slope leaving the newest sample (the integrator knows it
    /// only after evaluating the right-hand side there).
    pub fn set_last_right_slope(&mut self, slope: &[f64]) {
        if let Some(s) = self.samples.back_mut() {
            s.right.copy_from_slice(&slope[..self.width]);
        }
    }

    /// Appends a sample whose slope is continuous; drops samples no longer
    /// needed to cover the horizon.
    pub fn push(&mut self, t: f64, y: &[f64], slope: &[f64]) -> Result<(), DelayError> {
        if let Some(last) = self.last_time() {
            if t <= last {
                return Err(DelayError::Config(format!(
                    "history times must increase: {t} after {last}"
                )));
            }
        }
        let w = self.width;
        let cutoff = t - self.horizon - time_tol(t);
        let recycled = if self.samples.len() >= 2 && self.samples[1].t <= cutoff {
            self.samples.pop_front()
        } else {
            None
        };
        let sample = match recycled {
            Some(mut s) => {
                s.t = t;
                s.y.copy_from_slice(&y[..w]);
                s.left.copy_from_slice(&slope[..w]);
                s.right.copy_from_slice(&slope[..w]);
                s
            }
            None => Sample {
                t,
                y: y[..w].to_vec(),
                left: slope[..w].to_vec(),
                right: slope[..w].to_vec(),
            },
        };
        self.samples.push_back(sample);
        while self.samples.len() >= 2 && self.samples[1].t <= cutoff {
            self.samples.pop_front();
        }
        Ok(())
    }

    fn locate(&self, t: f64) -> Result<(usize, f64), DelayError> {
        let (first, last) = match (self.first_time(), self.last_time()) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(DelayError::HistoryUnderflow {
                    t_query: t,
                    earliest: f64::NAN,
                })
            }
        };
        if t < first - time_tol(t) {
            return Err(DelayError::HistoryUnderflow {
                t_query: t,
                earliest: first,
            });
        }
        if t > last + time_tol(t) {
            return Err(DelayError::HistoryOverflow { t_query: t, latest: last });
        }
        if self.samples.len() == 1 {
            return Ok((0, 0.0));
        }
        let t = t.clamp(first, last);
        let idx = self.samples.partition_point(|s| s.t <= t);
        let k = idx.saturating_sub(1).min(self.samples.len() - 2);
        let (a, b) = (&self.samples[k], &self.samples[k + 1]);
        Ok((k, (t - a.t) / (b.t - a.t)))
    }

    /// Interpolated values of entries `range` at time `t`.
    pub fn interpolate_into(&self, t: f64, range: Range<usize>, out: &mut [f64]) -> Result<(), DelayError> {
        let (k, theta) = self.locate(t)?;
        let a = &self.samples[k];
        if theta == 0.0 {
            out.copy_from_slice(&a.y[range]);
            return Ok(());
        }
        let b = &self.samples[k + 1];
        if theta == 1.0 {
            out.copy_from_slice(&b.y[range]);
            return Ok(());
        }
        match self.interp {
            Interp::Linear => {
                for (o, i) in out.iter_mut().zip(range) {
                    *o = (1.0 - theta) * a.y[i] + theta * b.y[i];
                }
            }
            Interp::CubicHermite => {
                let h = b.t - a.t;
                let (t2, t3) = (theta * theta, theta * theta * theta);
                let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
                let h10 = t3 - 2.0 * t2 + theta;
                let h01 = -2.0 * t3 + 3.0 * t2;
                let h11 = t3 - t2;
                for (o, i) in out.iter_mut().zip(range) {
                    *o = h00 * a.y[i] + h10 * h * a.right[i] + h01 * b.y[i] + h11 * h * b.left[i];
                }
            }
        }
        Ok(())
    }

    /// Single-entry query.
    pub fn value(&self, t: f64, index: usize) -> Result<f64, DelayError> {
        let mut out = [0.0];
        self.interpolate_into(t, index..index + 1, &mut out)?;
        Ok(out[0])
    }

    /// `history_query`: entry `point * dim + c` of a field stored at `offset`,
    /// `delay` seconds before `t`.
    pub fn query_point(
        &self,
        t: f64,
        delay: f64,
        offset: usize,
        dim: usize,
        point: usize,
        out: &mut [f64],
    ) -> Result<(), DelayError> {
        let start = offset + point * dim;
        self.interpolate_into(t - delay, start..start + dim, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_history_any_interp() {
        for interp in [Interp::Linear, Interp::CubicHermite] {
            let h = HistoryBuffer::constant(&[1.5, -2.0], 0.0, 0.1, 1e-3, interp);
            for &t in &[-0.1, -0.0537, -1e-4, 0.0] {
                assert_eq!(h.value(t, 0).unwrap(), 1.5);
                assert_eq!(h.value(t, 1).unwrap(), -2.0);
            }
        }
    }

    #[test]
    fn linear_history_is_exact_with_linear_interp() {
        let h = HistoryBuffer::from_fn(1, 0.0, 1.0, 0.1, Interp::Linear, |t, o| o[0] = 3.0 * t - 1.0, None);
        for &t in &[-0.95, -0.5, -0.333, -0.01] {
            assert!((h.value(t, 0).unwrap() - (3.0 * t - 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn samples_are_returned_exactly() {
        let h = HistoryBuffer::from_fn(1, 0.0, 1.0, 0.1, Interp::CubicHermite, |t, o| o[0] = (7.0 * t).sin(), None);
        for (t, y) in h.iter() {
            assert_eq!(h.value(t, 0).unwrap(), y[0]);
        }
    }

    #[test]
    fn hermite_matches_sine_closely() {
        let dt = 1e-3;
        let f = |t: f64, o: &mut [f64]| o[0] = (10.0 * t).sin();
        let df = |t: f64, o: &mut [f64]| o[0] = 10.0 * (10.0 * t).cos();
        let h = HistoryBuffer::from_fn(1, 0.0, 1.0, dt, Interp::CubicHermite, f, Some(&df));
        let mut worst: f64 = 0.0;
        for i in 0..10_000 {
            let t = -1.0 + i as f64 * 1e-4 + 3.3e-5;
            worst = worst.max((h.value(t, 0).unwrap() - (10.0 * t).sin()).abs());
        }
        assert!(worst < 1e-7, "max error {worst}");
    }

    #[test]
    fn query_before_start_is_an_error() {
        let h = HistoryBuffer::constant(&[0.0], 0.0, 0.1, 1e-2, Interp::Linear);
        assert!(matches!(h.value(-0.2, 0), Err(DelayError::HistoryUnderflow { .. })));
        assert!(matches!(h.value(0.5, 0), Err(DelayError::HistoryOverflow { .. })));
    }

    #[test]
    fn pruning_keeps_the_horizon_covered() {
        let mut h = HistoryBuffer::constant(&[0.0], 0.0, 0.05, 0.01, Interp::Linear);
        for k in 1..=200 {
            let t = k as f64 * 0.01;
            h.push(t, &[t], &[1.0]).unwrap();
            assert!(h.first_time().unwrap() <= t - 0.05 + 1e-12);
            assert!(h.len() <= 8);
        }
        assert!((h.value(2.0 - 0.05, 0).unwrap() - 1.95).abs() < 1e-12);
    }

    #[test]
    fn pushes_must_move_forward() {
        let mut h = HistoryBuffer::constant(&[0.0], 0.0, 0.1, 0.01, Interp::Linear);
        assert!(h.push(0.0, &[1.0], &[0.0]).is_err());
    }
}
