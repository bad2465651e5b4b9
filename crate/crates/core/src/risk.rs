//! Equity returns, realized shortfall, cycle statistics and Poincaré sections.

use crate::error::RiskError;
use crate::model::{State, Trajectory};

/// Share of the series range a peak must rise above its surroundings.
pub const PEAK_PROMINENCE: f64 = 0.1;
/// Minimum span of data for a period estimate.
pub const MIN_PERIOD_YEARS: f64 = 50.0;
/// Default price plane of the Poincaré section.
pub const DEFAULT_PLANE_PRICE: f64 = 20.0;

/// Per-step log equity returns of the bank. Entries where the loss exceeded
/// equity are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub values: Vec<f64>,
    pub tau: f64,
}

impl ReturnSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the first non-finite entry.
    pub fn first_invalid(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }

    /// The series without its first `n` entries.
    pub fn skip(&self, n: usize) -> ReturnSeries {
        ReturnSeries {
            values: self.values.iter().skip(n).copied().collect(),
            tau: self.tau,
        }
    }

    /// The first `n` entries.
    pub fn take(&self, n: usize) -> ReturnSeries {
        ReturnSeries {
            values: self.values.iter().take(n).copied().collect(),
            tau: self.tau,
        }
    }
}

/// `l(t) = ln((E_B(t) + n(t) (p(t+1) - p(t))) / E_B(t))` over consecutive
/// recorded points.
pub fn equity_returns(traj: &Trajectory) -> Result<ReturnSeries, RiskError> {
    let pts = &traj.points;
    if pts.len() < 2 {
        return Err(RiskError::TooShort {
            needed: 2,
            have: pts.len(),
        });
    }
    let values = pts
        .windows(2)
        .map(|w| {
            let e = w[0].derived.e_b;
            let gain = w[0].state.n * (w[1].state.p - w[0].state.p);
            let ratio = (e + gain) / e;
            if e > 0.0 && ratio > 0.0 {
                ratio.ln()
            } else {
                f64::NAN
            }
        })
        .collect();
    Ok(ReturnSeries {
        values,
        tau: traj.tau,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskScore {
    pub rs_q: f64,
    pub q: f64,
    pub t_len: usize,
}

/// Negated mean of the `qT` smallest returns. Ties are broken by index.
pub fn realized_shortfall(series: &ReturnSeries, q: f64) -> Result<RiskScore, RiskError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(RiskError::Quantile(q));
    }
    if let Some(i) = series.first_invalid() {
        return Err(RiskError::InvalidEntry(i));
    }
    let t_len = series.len();
    let qt = q * t_len as f64;
    let k = qt.round();
    if k < 1.0 || (qt - k).abs() > 1e-9 * qt.max(1.0) {
        return Err(RiskError::NonIntegerTail(qt));
    }
    let k = k as usize;
    let mut idx: Vec<usize> = (0..t_len).collect();
    idx.sort_by(|&a, &b| series.values[a].total_cmp(&series.values[b]).then(a.cmp(&b)));
    let sum: f64 = idx[..k].iter().map(|&i| series.values[i]).sum();
    Ok(RiskScore {
        rs_q: -sum / k as f64,
        q,
        t_len,
    })
}

/// Indices of local maxima whose prominence is at least `min_prominence`.
/// Flat-topped maxima are reported at the middle of the plateau.
pub fn prominent_peaks(xs: &[f64], min_prominence: f64) -> Vec<usize> {
    let n = xs.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if xs[i] > xs[i - 1] {
            let mut j = i;
            while j + 1 < n && xs[j + 1] == xs[i] {
                j += 1;
            }
            if j + 1 < n && xs[j + 1] < xs[i] {
                peaks.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
        .into_iter()
        .filter(|&p| prominence(xs, p) >= min_prominence)
        .collect()
}

/// Height of a peak above the higher of the two minima that separate it
/// from taller terrain (or the series ends).
pub fn prominence(xs: &[f64], peak: usize) -> f64 {
    let h = xs[peak];
    let mut left_min = h;
    for &v in xs[..peak].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &xs[peak + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

fn range(xs: &[f64]) -> f64 {
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    hi - lo
}

/// Mean spacing in years between prominent price peaks.
pub fn cycle_period(prices: &[f64], tau: f64) -> Result<f64, RiskError> {
    let needed = (MIN_PERIOD_YEARS / tau).ceil() as usize;
    if prices.len() < needed {
        return Err(RiskError::TooShort {
            needed,
            have: prices.len(),
        });
    }
    if prices.iter().any(|p| !p.is_finite()) {
        return Err(RiskError::BadSeries);
    }
    let peaks = prominent_peaks(prices, PEAK_PROMINENCE * range(prices));
    if peaks.len() < 3 || range(prices) == 0.0 {
        return Err(RiskError::TooFewPeaks(peaks.len()));
    }
    let span = (peaks[peaks.len() - 1] - peaks[0]) as f64;
    Ok(span / (peaks.len() - 1) as f64 * tau)
}

/// Mean over prominent peaks of the peak price divided by the lowest price
/// since the previous peak. A series without prominent peaks scores 1.
pub fn peak_to_trough(prices: &[f64]) -> Result<f64, RiskError> {
    if prices.is_empty() || prices.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(RiskError::BadSeries);
    }
    let r = range(prices);
    if r == 0.0 {
        return Ok(1.0);
    }
    let peaks = prominent_peaks(prices, PEAK_PROMINENCE * r);
    if peaks.is_empty() {
        return Ok(1.0);
    }
    let mut start = 0;
    let mut total = 0.0;
    for &pk in &peaks {
        let trough = prices[start..=pk].iter().copied().fold(f64::INFINITY, f64::min);
        total += prices[pk] / trough;
        start = pk;
    }
    Ok(total / peaks.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingDirection {
    Upward,
    Downward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionPoint {
    /// Interpolated crossing time.
    pub t_years: f64,
    pub n: f64,
    pub sigma_sq: f64,
    pub price: f64,
}

/// Linearly interpolated states where the price crosses `plane_price`.
/// An upward crossing is a step with `p(t) < plane <= p(t + tau)`.
pub fn poincare_section(
    traj: &Trajectory,
    plane_price: f64,
    direction: CrossingDirection,
) -> Vec<SectionPoint> {
    let mut states: Vec<(f64, State)> = Vec::with_capacity(traj.len() + 1);
    states.push((0.0, traj.initial));
    states.extend(
        traj.points
            .iter()
            .map(|pt| (pt.step as f64 * traj.tau, pt.state)),
    );
    states
        .windows(2)
        .filter_map(|w| {
            let (t0, a) = w[0];
            let (t1, b) = w[1];
            let hit = match direction {
                CrossingDirection::Upward => a.p < plane_price && plane_price <= b.p,
                CrossingDirection::Downward => a.p > plane_price && plane_price >= b.p,
            };
            if !hit {
                return None;
            }
            let f = (plane_price - a.p) / (b.p - a.p);
            Some(SectionPoint {
                t_years: t0 + f * (t1 - t0),
                n: a.n + f * (b.n - a.n),
                sigma_sq: a.sigma_sq + f * (b.sigma_sq - a.sigma_sq),
                price: a.p + f * (b.p - a.p),
            })
        })
        .collect()
}

/// Fraction of cells of a `grid x grid` partition of the section's bounding
/// box that contain at least one point. Thin, folded sets occupy few cells;
/// a cloud filling its box approaches 1.
pub fn section_occupancy(points: &[SectionPoint], grid: usize) -> f64 {
    if points.is_empty() || grid == 0 {
        return 0.0;
    }
    let xs: Vec<f64> = points.iter().map(|p| p.n).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.sigma_sq).collect();
    let lo_x = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let lo_y = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let (rx, ry) = (range(&xs), range(&ys));
    let cell = |v: f64, lo: f64, r: f64| {
        if r == 0.0 {
            0
        } else {
            (((v - lo) / r * grid as f64) as usize).min(grid - 1)
        }
    };
    let mut occupied = vec![false; grid * grid];
    for (x, y) in xs.iter().zip(&ys) {
        occupied[cell(*x, lo_x, rx) * grid + cell(*y, lo_y, ry)] = true;
    }
    occupied.iter().filter(|&&o| o).count() as f64 / (grid * grid) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: &[f64]) -> ReturnSeries {
        ReturnSeries {
            values: v.to_vec(),
            tau: 0.1,
        }
    }

    #[test]
    fn shortfall_small_example() {
        let s = series(&[0.01, -0.03, 0.02, -0.07, 0.00]);
        let rs = realized_shortfall(&s, 0.4).unwrap();
        assert!((rs.rs_q - 0.05).abs() < 1e-15);
        assert_eq!(rs.t_len, 5);
    }

    #[test]
    fn shortfall_of_constant_loss() {
        let s = series(&[-0.02; 100]);
        assert_eq!(realized_shortfall(&s, 0.05).unwrap().rs_q, 0.02);
    }

    #[test]
    fn shortfall_rejects_bad_inputs() {
        let s = series(&[0.1, 0.2, 0.3]);
        assert_eq!(realized_shortfall(&s, 0.0), Err(RiskError::Quantile(0.0)));
        assert!(matches!(
            realized_shortfall(&s, 0.5),
            Err(RiskError::NonIntegerTail(_))
        ));
        let s = series(&[0.1, f64::NAN]);
        assert_eq!(realized_shortfall(&s, 0.5), Err(RiskError::InvalidEntry(1)));
    }

    #[test]
    fn peak_ratio_examples() {
        assert_eq!(peak_to_trough(&[5.0; 10]).unwrap(), 1.0);
        assert_eq!(peak_to_trough(&[10.0, 20.0, 10.0]).unwrap(), 2.0);
        assert_eq!(peak_to_trough(&[]), Err(RiskError::BadSeries));
    }

    #[test]
    fn sinusoid_period() {
        let tau = 0.1;
        for period in [7.0, 10.0, 15.3] {
            let xs: Vec<f64> = (0..3000)
                .map(|k| 20.0 + 5.0 * (2.0 * std::f64::consts::PI * k as f64 * tau / period).sin())
                .collect();
            let est = cycle_period(&xs, tau).unwrap();
            assert!((est - period).abs() <= tau, "{est} vs {period}");
        }
    }

    #[test]
    fn short_or_flat_series_have_no_period() {
        assert!(matches!(
            cycle_period(&[1.0; 100], 0.1),
            Err(RiskError::TooShort { .. })
        ));
        assert_eq!(cycle_period(&[1.0; 1000], 0.1), Err(RiskError::TooFewPeaks(0)));
    }

    #[test]
    fn prominence_ignores_small_wiggles() {
        let xs = [0.0, 10.0, 9.5, 9.8, 0.0, 10.0, 0.0];
        assert_eq!(prominent_peaks(&xs, 1.0), vec![1, 5]);
        assert!((prominence(&xs, 3) - 0.3).abs() < 1e-12);
    }
}
