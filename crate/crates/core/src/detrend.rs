//! Transit segmentation and geometric slope correction: breakpoint
//! detection from the smoothed gradient, per-zone linear detrending, and
//! baseline alignment of the flat zones.

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::types::LightCurve;

/// Ingress/egress breakpoints and the five zones of one curve.
///
/// Zones are half-open and partition [0, T):
/// left [0, t1-g), ingress [t1-g, t1+g), middle [t1+g, t2-g),
/// egress [t2-g, t2+g), right [t2+g, T).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitSegmentation {
    pub t1: usize,
    pub t2: usize,
    pub guard: usize,
    pub len: usize,
}

impl TransitSegmentation {
    pub fn new(t1: usize, t2: usize, guard: usize, len: usize) -> Result<Self> {
        let seg = Self { t1, t2, guard, len };
        seg.validate()?;
        Ok(seg)
    }

    fn validate(&self) -> Result<()> {
        let g = self.guard;
        if self.t1 <= g {
            return Err(Error::Segmentation(format!("left zone empty: t1={} g={g}", self.t1)));
        }
        if self.t1 + g >= self.t2.saturating_sub(g) {
            return Err(Error::Segmentation(format!(
                "ingress and egress overlap: t1={} t2={} g={g}",
                self.t1, self.t2
            )));
        }
        if self.t2 + g > self.len {
            return Err(Error::Segmentation(format!(
                "egress extends past end: t2={} g={g} T={}",
                self.t2, self.len
            )));
        }
        if self.middle().len() < 4 {
            return Err(Error::Segmentation("middle zone shorter than 4 samples".into()));
        }
        Ok(())
    }

    pub fn left(&self) -> Range<usize> {
        0..self.t1 - self.guard
    }

    pub fn ingress(&self) -> Range<usize> {
        self.t1 - self.guard..self.t1 + self.guard
    }

    pub fn middle(&self) -> Range<usize> {
        self.t1 + self.guard..self.t2 - self.guard
    }

    pub fn egress(&self) -> Range<usize> {
        self.t2 - self.guard..self.t2 + self.guard
    }

    pub fn right(&self) -> Range<usize> {
        self.t2 + self.guard..self.len
    }

    /// The three flat zones, out-of-transit first.
    pub fn flat_zones(&self) -> [Range<usize>; 3] {
        [self.left(), self.middle(), self.right()]
    }

    pub fn out_of_transit(&self) -> [Range<usize>; 2] {
        [self.left(), self.right()]
    }

    /// Default guard half-width for a curve of length `t`.
    pub fn default_guard(t: usize) -> usize {
        (t / 50).max(3)
    }
}

/// Centered moving average; the window shrinks at the edges.
fn smooth(flux: &Array1<f64>, window: usize) -> Array1<f64> {
    let t = flux.len();
    let hw = window / 2;
    Array1::from_shape_fn(t, |i| {
        let lo = i.saturating_sub(hw);
        let hi = (i + hw + 1).min(t);
        flux.slice(ndarray::s![lo..hi]).mean().expect("non-empty window")
    })
}

/// Locate ingress/egress as the extrema of the smoothed first difference:
/// t1 = argmin over the first 60% of frames, t2 = argmax over frames after
/// t1. Ties break to the smallest index.
pub fn find_breakpoints(curve: &LightCurve, smooth_window: usize, guard: usize) -> Result<TransitSegmentation> {
    let t = curve.len();
    if t < 16 {
        return Err(Error::Segmentation(format!("curve too short: {t} < 16")));
    }
    if smooth_window == 0 || smooth_window % 2 == 0 {
        return Err(Error::Config(format!("smooth window must be odd and positive, got {smooth_window}")));
    }
    if smooth_window >= t / 4 {
        return Err(Error::Config(format!("smooth window {smooth_window} >= T/4 = {}", t / 4)));
    }
    if guard == 0 {
        return Err(Error::Config("guard must be positive".into()));
    }
    let s = smooth(&curve.flux, smooth_window);
    let diffs: Vec<f64> = (0..t - 1).map(|i| s[i + 1] - s[i]).collect();

    let limit = (0.6 * t as f64).floor() as usize;
    let mut t1 = 0;
    for i in 1..limit.min(diffs.len()) {
        if diffs[i] < diffs[t1] {
            t1 = i;
        }
    }
    if diffs[t1] >= 0.0 {
        return Err(Error::Segmentation("no flux dip found (non-negative minimum gradient)".into()));
    }
    let mut t2 = t1 + 1;
    if t2 >= diffs.len() {
        return Err(Error::Segmentation("no room for egress after ingress".into()));
    }
    for i in t1 + 1..diffs.len() {
        if diffs[i] > diffs[t2] {
            t2 = i;
        }
    }
    if diffs[t2] <= 0.0 {
        return Err(Error::Segmentation("no flux recovery found (non-positive maximum gradient)".into()));
    }
    // the difference d[t] sits between samples t and t+1
    TransitSegmentation::new(t1 + 1, t2 + 1, guard, t)
}

fn ols_line(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, &v) in y.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (v - y_mean);
        sxx += dx * dx;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (y_mean - slope * x_mean, slope)
}

/// Remove the least-squares linear trend from each flat zone independently,
/// preserving the zone mean. Ingress/egress samples are untouched here.
pub fn detrend_zones(curve: &LightCurve, seg: &TransitSegmentation) -> Result<LightCurve> {
    if seg.len != curve.len() {
        return Err(Error::Segmentation(format!(
            "segmentation length {} != curve length {}",
            seg.len,
            curve.len()
        )));
    }
    let mut flux = curve.flux.clone();
    for zone in seg.flat_zones() {
        if zone.len() < 3 {
            return Err(Error::Segmentation(format!("flat zone {zone:?} shorter than 3 samples")));
        }
        let values: Vec<f64> = zone.clone().map(|i| flux[i]).collect();
        let (intercept, slope) = ols_line(&values);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        for (local, i) in zone.enumerate() {
            flux[i] = flux[i] - (intercept + slope * local as f64) + mean;
        }
    }
    LightCurve::new(flux, curve.label.clone())
}

/// Shift both out-of-transit zones to their common mean level, leave the
/// middle zone untouched, and linearly re-interpolate the transition
/// samples between their adjacent zone endpoints.
pub fn align_baseline(curve: &LightCurve, seg: &TransitSegmentation) -> Result<LightCurve> {
    if seg.len != curve.len() {
        return Err(Error::Segmentation("segmentation does not match curve".into()));
    }
    let zone_mean = |r: Range<usize>| -> Result<f64> {
        if r.is_empty() {
            return Err(Error::Segmentation(format!("empty zone {r:?}")));
        }
        Ok(r.clone().map(|i| curve.flux[i]).sum::<f64>() / r.len() as f64)
    };
    let left_mean = zone_mean(seg.left())?;
    let right_mean = zone_mean(seg.right())?;
    zone_mean(seg.middle())?;
    let n_out = (seg.left().len() + seg.right().len()) as f64;
    let baseline = (left_mean * seg.left().len() as f64 + right_mean * seg.right().len() as f64) / n_out;

    let mut flux = curve.flux.clone();
    for i in seg.left() {
        flux[i] += baseline - left_mean;
    }
    for i in seg.right() {
        flux[i] += baseline - right_mean;
    }
    // bridge each transition zone with a straight line between the samples
    // flanking it, removing the step left by the per-zone shifts
    for zone in [seg.ingress(), seg.egress()] {
        let lo = zone.start - 1;
        let hi = zone.end;
        let span = (hi - lo) as f64;
        let (a, b) = (flux[lo], flux[hi]);
        for i in zone {
            let frac = (i - lo) as f64 / span;
            flux[i] = a + frac * (b - a);
        }
    }
    LightCurve::new(flux, curve.label.clone())
}

/// mean(left + right) - mean(middle) on an aligned curve.
pub fn transit_depth(curve: &LightCurve, seg: &TransitSegmentation) -> Result<f64> {
    if seg.len != curve.len() {
        return Err(Error::Segmentation("segmentation does not match curve".into()));
    }
    let sum_len = |r: Range<usize>| (r.clone().map(|i| curve.flux[i]).sum::<f64>(), r.len());
    let (ls, ln) = sum_len(seg.left());
    let (rs, rn) = sum_len(seg.right());
    let (ms, mn) = sum_len(seg.middle());
    Ok((ls + rs) / (ln + rn) as f64 - ms / mn as f64)
}

/// Build a noiseless trapezoid light curve; test and simulation helper.
/// `t1`/`t2` are ingress/egress centers, `ramp` the full transition width.
pub fn trapezoid(t: usize, t1: f64, t2: f64, ramp: f64, depth: f64) -> Array1<f64> {
    Array1::from_shape_fn(t, |i| 1.0 - depth * trapezoid_weight(i as f64, t1, t2, ramp))
}

/// In-transit weight in [0, 1] at time x for ingress/egress centers t1/t2.
pub fn trapezoid_weight(x: f64, t1: f64, t2: f64, ramp: f64) -> f64 {
    let half = ramp / 2.0;
    if x <= t1 - half || x >= t2 + half {
        0.0
    } else if x >= t1 + half && x <= t2 - half {
        1.0
    } else if x < t1 + half {
        (x - (t1 - half)) / ramp
    } else {
        ((t2 + half) - x) / ramp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(flux: Array1<f64>) -> LightCurve {
        LightCurve::new(flux, "test").unwrap()
    }

    #[test]
    fn zones_partition_entire_curve() {
        let seg = TransitSegmentation::new(60, 130, 5, 187).unwrap();
        let mut covered = vec![0u8; 187];
        for r in [seg.left(), seg.ingress(), seg.middle(), seg.egress(), seg.right()] {
            for i in r {
                covered[i] += 1;
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
    }

    #[test]
    fn invalid_segmentations_rejected() {
        assert!(TransitSegmentation::new(3, 130, 5, 187).is_err()); // left empty
        assert!(TransitSegmentation::new(60, 62, 5, 187).is_err()); // overlap
        assert!(TransitSegmentation::new(60, 185, 5, 187).is_err()); // past end
    }

    #[test]
    fn breakpoints_on_noiseless_trapezoid() {
        let flux = trapezoid(187, 60.0, 130.0, 8.0, 0.01);
        let seg = find_breakpoints(&curve(flux), 9, 5).unwrap();
        assert!((seg.t1 as i64 - 60).abs() <= 1, "t1 = {}", seg.t1);
        assert!((seg.t2 as i64 - 130).abs() <= 1, "t2 = {}", seg.t2);
    }

    #[test]
    fn monotone_curve_has_no_transit() {
        let flux = Array1::from_shape_fn(100, |i| 1.0 + i as f64 * 1e-3);
        assert!(matches!(
            find_breakpoints(&curve(flux), 9, 3),
            Err(Error::Segmentation(_))
        ));
    }

    #[test]
    fn argmin_tie_breaks_to_smallest_index() {
        // two identical dips; detection must settle on the first
        let mut flux = Array1::from_elem(120, 1.0);
        for i in 30..40 {
            flux[i] = 0.99;
        }
        for i in 70..80 {
            flux[i] = 0.99;
        }
        let seg = find_breakpoints(&curve(flux), 1, 3).unwrap();
        assert_eq!(seg.t1, 30);
    }

    #[test]
    fn breakpoints_translation_invariant() {
        // logistic edges give the smoothed difference a sharp, unique
        // extremum, so the argmin/argmax is robust to the last-bit rounding
        // changes a constant offset introduces (a linear ramp would leave
        // plateau ties decided by float noise)
        let flux = Array1::from_shape_fn(187, |i| {
            let edge = |c: f64| 1.0 / (1.0 + (-(i as f64 - c)).exp());
            // centers off the sample grid so no two samples straddle an
            // edge symmetrically
            1.0 - 0.01 * edge(60.3) * (1.0 - edge(130.3))
        });
        let seg_a = find_breakpoints(&curve(flux.clone()), 9, 5).unwrap();
        let seg_b = find_breakpoints(&curve(flux.mapv(|v| v + 3.0)), 9, 5).unwrap();
        assert_eq!((seg_a.t1, seg_a.t2), (seg_b.t1, seg_b.t2));
    }

    #[test]
    fn detrend_exact_line_becomes_zone_mean() {
        let seg = TransitSegmentation::new(60, 130, 5, 187).unwrap();
        let mut flux = trapezoid(187, 60.0, 130.0, 8.0, 0.01);
        // overlay a linear trend on the left zone only
        let (a, b) = (0.002, 1e-4);
        for i in seg.left() {
            flux[i] += a + b * i as f64;
        }
        let out = detrend_zones(&curve(flux), &seg).unwrap();
        let left: Vec<f64> = seg.left().map(|i| out.flux[i]).collect();
        let mean = left.iter().sum::<f64>() / left.len() as f64;
        for v in &left {
            assert!((v - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn detrend_zero_slope_is_identity() {
        let seg = TransitSegmentation::new(60, 130, 5, 187).unwrap();
        let flux = trapezoid(187, 60.0, 130.0, 8.0, 0.01);
        let out = detrend_zones(&curve(flux.clone()), &seg).unwrap();
        for i in 0..187 {
            assert!((out.flux[i] - flux[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn detrend_residual_slope_vanishes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let seg = TransitSegmentation::new(60, 130, 5, 187).unwrap();
        let flux = Array1::from_shape_fn(187, |_| rng.random_range(0.9..1.1));
        let out = detrend_zones(&curve(flux), &seg).unwrap();
        for zone in seg.flat_zones() {
            let values: Vec<f64> = zone.map(|i| out.flux[i]).collect();
            let (_, slope) = ols_line(&values);
            assert!(slope.abs() < 1e-12, "residual slope {slope}");
        }
    }

    #[test]
    fn detrend_preserves_zone_means() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(18);
        let seg = TransitSegmentation::new(60, 130, 5, 187).unwrap();
        let flux = Array1::from_shape_fn(187, |_| rng.random_range(0.9..1.1));
        let c = curve(flux);
        let out = detrend_zones(&c, &seg).unwrap();
        for zone in seg.flat_zones() {
            let before: f64 = zone.clone().map(|i| c.flux[i]).sum::<f64>() / zone.len() as f64;
            let after: f64 = zone.clone().map(|i| out.flux[i]).sum::<f64>() / zone.len() as f64;
            assert!((before - after).abs() < 1e-12);
        }
    }

    #[test]
    fn align_moves_out_zones_to_common_level() {
        let seg = TransitSegmentation::new(60, 130, 6, 187).unwrap();
        let mut flux = trapezoid(187, 60.0, 130.0, 8.0, 0.01);
        // equal-length shifts around the reference 1.0 baseline
        for i in seg.left() {
            flux[i] += 0.000; // 1.000
        }
        for i in seg.right() {
            flux[i] += 0.002; // 1.002
        }
        let out = align_baseline(&curve(flux), &seg).unwrap();
        let mean = |r: Range<usize>| r.clone().map(|i| out.flux[i]).sum::<f64>() / r.len() as f64;
        let expected = (1.0 * seg.left().len() as f64 + 1.002 * seg.right().len() as f64)
            / (seg.left().len() + seg.right().len()) as f64;
        assert!((mean(seg.left()) - expected).abs() < 1e-12);
        assert!((mean(seg.right()) - expected).abs() < 1e-12);
        // middle untouched
        for i in seg.middle() {
            assert!((out.flux[i] - 0.99).abs() < 1e-12);
        }
    }

    #[test]
    fn align_already_aligned_is_identity() {
        let seg = TransitSegmentation::new(60, 130, 6, 187).unwrap();
        // flat out zones at a common level, transitions exactly linear
        // between their flanking samples
        let (out_level, in_level) = (1.0, 0.99);
        let mut flux = Array1::from_elem(187, out_level);
        for i in seg.middle() {
            flux[i] = in_level;
        }
        for zone in [seg.ingress(), seg.egress()] {
            let (lo, hi) = (zone.start - 1, zone.end);
            let (a, b) = (flux[lo], flux[hi]);
            for i in zone {
                flux[i] = a + (i - lo) as f64 / (hi - lo) as f64 * (b - a);
            }
        }
        let c = curve(flux);
        let out = align_baseline(&c, &seg).unwrap();
        for i in 0..187 {
            assert!((out.flux[i] - c.flux[i]).abs() < 1e-15, "sample {i}");
        }
    }

    #[test]
    fn drift_injection_round_trip_recovers_depth() {
        let depth = 0.01;
        let seg = TransitSegmentation::new(60, 130, 6, 187).unwrap();
        let mut flux = trapezoid(187, 60.0, 130.0, 8.0, depth);
        // pure slope per flat zone, centered so the zone level is untouched
        // (a constant per-zone offset is indistinguishable from depth)
        for (k, zone) in seg.flat_zones().into_iter().enumerate() {
            let slope = [3e-5, -2e-5, 5e-5][k];
            let center = (zone.len() - 1) as f64 / 2.0;
            for (local, i) in zone.enumerate() {
                flux[i] += slope * (local as f64 - center);
            }
        }
        let c = curve(flux);
        let detrended = detrend_zones(&c, &seg).unwrap();
        let aligned = align_baseline(&detrended, &seg).unwrap();
        let got = transit_depth(&aligned, &seg).unwrap();
        assert!((got - depth).abs() < 1e-9, "depth {got} vs {depth}");
    }

    #[test]
    fn depth_basics() {
        let seg = TransitSegmentation::new(60, 130, 6, 187).unwrap();
        let flat = curve(Array1::from_elem(187, 1.0));
        assert_eq!(transit_depth(&flat, &seg).unwrap(), 0.0);

        let single = curve(trapezoid(187, 60.0, 130.0, 8.0, 0.01));
        let double = curve(trapezoid(187, 60.0, 130.0, 8.0, 0.02));
        let d1 = transit_depth(&single, &seg).unwrap();
        let d2 = transit_depth(&double, &seg).unwrap();
        assert!((d2 - 2.0 * d1).abs() < 1e-9);
    }
}
