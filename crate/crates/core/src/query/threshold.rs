use serde::Serialize;

use super::QueryError;

/// Interval of candidate similarity thresholds, `0 ≤ lo < hi ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdWindow {
    pub lo: f64,
    pub hi: f64,
}

impl ThresholdWindow {
    pub fn new(lo: f64, hi: f64) -> Result<Self, QueryError> {
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(QueryError::InvalidWindow { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// `[center − half_width, center + half_width] ∩ [0, 1]`.
    pub fn recentered(center: f64, half_width: f64) -> Result<Self, QueryError> {
        Self::new((center - half_width).max(0.0), (center + half_width).min(1.0))
    }
}

/// Five evenly spaced thresholds, both endpoints included.
pub fn sample_thresholds(window: &ThresholdWindow) -> [f64; 5] {
    let step = window.width() / 4.0;
    [window.lo, window.lo + step, window.lo + 2.0 * step, window.lo + 3.0 * step, window.hi]
}

/// Median, taking the lower of the two middle values for an even count.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_window_samples() {
        let w = ThresholdWindow::new(0.5, 1.0).unwrap();
        assert_eq!(sample_thresholds(&w), [0.5, 0.625, 0.75, 0.875, 1.0]);
    }

    #[test]
    fn narrow_window_stays_ascending() {
        let eps = 1e-9;
        let w = ThresholdWindow::new(0.6, 0.6 + 4.0 * eps).unwrap();
        let t = sample_thresholds(&w);
        assert!(t.windows(2).all(|p| p[0] < p[1]));
        assert_eq!((t[0], t[4]), (w.lo, w.hi));
    }

    #[test]
    fn recentering() {
        let w = ThresholdWindow::recentered(0.7, 0.2).unwrap();
        assert!((w.lo - 0.5).abs() < 1e-12 && (w.hi - 0.9).abs() < 1e-12);
        let w = ThresholdWindow::recentered(0.95, 0.2).unwrap();
        assert_eq!(w.hi, 1.0);
        assert!((w.lo - 0.75).abs() < 1e-12);
        assert!(ThresholdWindow::new(0.7, 0.7).is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(lower_median(&[0.875, 0.625, 0.75]), Some(0.75));
        assert_eq!(lower_median(&[0.75]), Some(0.75));
        assert_eq!(lower_median(&[0.9, 0.6]), Some(0.6));
        assert_eq!(lower_median(&[]), None);
    }
}
