//! Seeded Monte Carlo coincidence counting and histogram statistics.
//!
//! Events are drawn from the analytic model in two stages: the idler
//! detector from the detector probability vector, then the screen
//! coordinate from that detector's conditional density by inverse CDF on a
//! fixed grid. The generator is a ChaCha8 stream, so a seed plus a
//! configuration reproduces the event sequence bit for bit.

use crate::error::{Error, Result};
use crate::geometry::DetectorId;
use crate::wave::WaveModel;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::io::Write;

/// Cells of the inverse-CDF screen grid; sampling error is bounded by the
/// grid pitch.
pub const SAMPLING_GRID: usize = 4096;

/// One joint detection: the signal lands on the screen, the delayed idler
/// fires one of D1-D4.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointEvent {
    pub screen_y: f64,
    pub idler_detector: DetectorId,
    pub signal_time: f64,
    pub idler_time: f64,
}

/// Counts of screen coordinates over uniform bins.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Config(format!("need at least 2 bins, got {bins}")));
        }
        if !(lo < hi) {
            return Err(Error::Config(format!("empty histogram range [{lo}, {hi}]")));
        }
        let bin_edges = (0..=bins)
            .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
            .collect();
        Ok(Histogram {
            bin_edges,
            counts: vec![0; bins],
            total: 0,
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_edges[1] - self.bin_edges[0]
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect()
    }

    /// Record a coordinate. The top edge is inclusive; values outside the
    /// range are dropped and `false` is returned.
    pub fn record(&mut self, y: f64) -> bool {
        let lo = self.bin_edges[0];
        let hi = *self.bin_edges.last().unwrap();
        if !(y >= lo && y <= hi) {
            return false;
        }
        let bins = self.bins();
        let idx = (((y - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1);
        self.counts[idx] += 1;
        self.total += 1;
        true
    }

    /// Fractions per bin; all zeros when the histogram is empty.
    pub fn normalized(&self) -> Vec<f64> {
        if self.total == 0 {
            return vec![0.0; self.bins()];
        }
        let n = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// Merge counts from a histogram with identical binning.
    pub fn merge(&mut self, other: &Histogram) -> Result<()> {
        if self.bin_edges != other.bin_edges {
            return Err(Error::Config("histogram binnings differ".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    /// Write `bin_center,count` rows.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "bin_center,count")?;
        for (c, n) in self.bin_centers().iter().zip(&self.counts) {
            writeln!(out, "{c},{n}")?;
        }
        Ok(())
    }
}

/// Map a raw 64-bit draw to a uniform double in `[0, 1)`.
fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / 9007199254740992.0)
}

/// Deterministic generator of joint detection events.
pub struct EventSampler {
    model: WaveModel,
    /// `(detector, cumulative probability)` over reachable detectors.
    detector_cdf: Vec<(DetectorId, f64)>,
    /// Per reachable detector: cumulative screen masses, length grid+1.
    screen_cdfs: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
    next_index: u64,
}

impl EventSampler {
    pub fn new(model: WaveModel, seed: u64) -> Result<Self> {
        let geometry = model.geometry().clone();
        let detectors = geometry.reachable_detectors();
        let mut detector_cdf = Vec::with_capacity(detectors.len());
        let mut acc = 0.0;
        for det in &detectors {
            acc += geometry.detector_probability(*det);
            detector_cdf.push((*det, acc));
        }
        // Guard against rounding on the last cell.
        if let Some(last) = detector_cdf.last_mut() {
            last.1 = 1.0;
        }

        let [lo, hi] = geometry.screen_extent;
        let pitch = (hi - lo) / SAMPLING_GRID as f64;
        let mut screen_cdfs = Vec::with_capacity(detectors.len());
        for det in &detectors {
            let mut cdf = Vec::with_capacity(SAMPLING_GRID + 1);
            cdf.push(0.0);
            let mut acc = 0.0;
            for cell in 0..SAMPLING_GRID {
                let center = lo + (cell as f64 + 0.5) * pitch;
                acc += model.conditional_density(*det, center)?;
                cdf.push(acc);
            }
            if acc <= 0.0 {
                return Err(Error::Config(format!(
                    "conditional density for {} vanishes on the whole grid",
                    det.label()
                )));
            }
            for v in cdf.iter_mut() {
                *v /= acc;
            }
            *cdf.last_mut().unwrap() = 1.0;
            screen_cdfs.push(cdf);
        }

        Ok(EventSampler {
            model,
            detector_cdf,
            screen_cdfs,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_index: 0,
        })
    }

    pub fn model(&self) -> &WaveModel {
        &self.model
    }

    /// Draw the next joint event.
    pub fn sample(&mut self) -> JointEvent {
        let u_det = unit_f64(self.rng.next_u64());
        let slot = self
            .detector_cdf
            .partition_point(|(_, c)| *c <= u_det)
            .min(self.detector_cdf.len() - 1);
        let detector = self.detector_cdf[slot].0;

        let u_y = unit_f64(self.rng.next_u64());
        let cdf = &self.screen_cdfs[slot];
        let cell = cdf.partition_point(|c| *c <= u_y).saturating_sub(1);
        let cell = cell.min(SAMPLING_GRID - 1);
        let span = cdf[cell + 1] - cdf[cell];
        let frac = if span > 0.0 {
            (u_y - cdf[cell]) / span
        } else {
            0.5
        };
        let [lo, hi] = self.model.geometry().screen_extent;
        let pitch = (hi - lo) / SAMPLING_GRID as f64;
        let screen_y = lo + (cell as f64 + frac) * pitch;

        let signal_time = self.next_index as f64;
        self.next_index += 1;
        JointEvent {
            screen_y,
            idler_detector: detector,
            signal_time,
            idler_time: signal_time + self.model.geometry().idler_delay,
        }
    }

    pub fn take_events(&mut self, n: usize) -> Vec<JointEvent> {
        (0..n).map(|_| self.sample()).collect()
    }
}

impl Iterator for EventSampler {
    type Item = JointEvent;

    fn next(&mut self) -> Option<JointEvent> {
        Some(self.sample())
    }
}

/// Histogram of screen coordinates for events coincident with `det`.
pub fn coincidence_histogram(
    events: &[JointEvent],
    det: DetectorId,
    bins: usize,
    extent: [f64; 2],
) -> Result<Histogram> {
    let mut h = Histogram::new(extent[0], extent[1], bins)?;
    for e in events.iter().filter(|e| e.idler_detector == det) {
        h.record(e.screen_y);
    }
    Ok(h)
}

/// Histogram over all events regardless of the idler detector.
pub fn unconditioned_histogram(
    events: &[JointEvent],
    bins: usize,
    extent: [f64; 2],
) -> Result<Histogram> {
    let mut h = Histogram::new(extent[0], extent[1], bins)?;
    for e in events {
        h.record(e.screen_y);
    }
    Ok(h)
}

/// `(max - min) / (max + min)` over smoothed central bins of a profile.
///
/// The central half of the bins is smoothed with a short moving average so
/// single-bin noise does not masquerade as contrast.
pub fn visibility_of_profile(values: &[f64]) -> f64 {
    let len = values.len();
    if len < 4 {
        return 0.0;
    }
    let central = &values[len / 4..len - len / 4];
    let window = ((central.len() / 10).max(1)) | 1;
    let half = window / 2;
    let mut smoothed = Vec::with_capacity(central.len());
    for i in half..central.len() - half {
        let s: f64 = central[i - half..=i + half].iter().sum();
        smoothed.push(s / window as f64);
    }
    if smoothed.is_empty() {
        smoothed.extend_from_slice(central);
    }
    let max = smoothed.iter().cloned().fold(f64::MIN, f64::max);
    let min = smoothed.iter().cloned().fold(f64::MAX, f64::min);
    if max + min <= 0.0 {
        return 0.0;
    }
    (max - min) / (max + min)
}

/// Fringe visibility of a histogram; zero contrast gives 0, a fully
/// modulated pattern gives 1.
pub fn fringe_visibility(h: &Histogram) -> Result<f64> {
    if h.total == 0 {
        return Err(Error::Domain("visibility of an empty histogram".into()));
    }
    let values: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
    Ok(visibility_of_profile(&values))
}

/// Result of a chi-square goodness-of-fit comparison.
#[derive(Clone, Copy, Debug)]
pub struct GofReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square test of observed counts against expected counts.
///
/// Adjacent bins are pooled until every pooled expectation reaches 5, the
/// usual validity rule for the chi-square approximation.
pub fn chi_square_gof(observed: &[u64], expected: &[f64]) -> Result<GofReport> {
    if observed.len() != expected.len() || observed.is_empty() {
        return Err(Error::Domain("mismatched GOF inputs".into()));
    }
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let mut acc_o = 0.0;
    let mut acc_e = 0.0;
    for (&o, &e) in observed.iter().zip(expected) {
        acc_o += o as f64;
        acc_e += e;
        if acc_e >= 5.0 {
            pooled.push((acc_o, acc_e));
            acc_o = 0.0;
            acc_e = 0.0;
        }
    }
    if acc_e > 0.0 || acc_o > 0.0 {
        if let Some(last) = pooled.last_mut() {
            last.0 += acc_o;
            last.1 += acc_e;
        } else {
            pooled.push((acc_o, acc_e));
        }
    }
    if pooled.len() < 2 {
        return Err(Error::Domain(
            "too few populated bins for a chi-square test".into(),
        ));
    }
    let statistic: f64 = pooled
        .iter()
        .map(|(o, e)| {
            let d = o - e;
            d * d / e
        })
        .sum();
    let dof = pooled.len() - 1;
    let dist = ChiSquared::new(dof as f64)
        .map_err(|e| Error::Domain(format!("chi-square dof: {e}")))?;
    Ok(GofReport {
        statistic,
        dof,
        p_value: 1.0 - dist.cdf(statistic),
    })
}

/// L1 distance between two normalized histograms with identical binning.
pub fn l1_distance(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.bin_edges != b.bin_edges {
        return Err(Error::Config("histogram binnings differ".into()));
    }
    Ok(a.normalized()
        .iter()
        .zip(b.normalized())
        .map(|(x, y)| (x - y).abs())
        .sum())
}

/// Mean-plus-three-sigma bound on the L1 distance between two empirical
/// multinomial frequency vectors drawn from the same bin masses.
///
/// Per bin the frequency difference is approximately normal with variance
/// `p(1-p)(1/n1 + 1/n2)`; the half-normal moments give the mean and
/// variance of its absolute value.
pub fn l1_three_sigma_bound(masses: &[f64], n1: u64, n2: u64) -> f64 {
    let inv = 1.0 / n1 as f64 + 1.0 / n2 as f64;
    let mut mean = 0.0;
    let mut var = 0.0;
    for &p in masses {
        let v = p * (1.0 - p) * inv;
        mean += (2.0 * v / std::f64::consts::PI).sqrt();
        var += v * (1.0 - 2.0 / std::f64::consts::PI);
    }
    mean + 3.0 * var.sqrt()
}

/// Expected bin masses of a detector's analytic density over a histogram's
/// bins (Simpson rule per bin; `det = None` for the marginal).
pub fn analytic_bin_masses(
    model: &WaveModel,
    det: Option<DetectorId>,
    bins: usize,
) -> Result<Vec<f64>> {
    let [lo, hi] = model.geometry().screen_extent;
    let edge = |i: usize| lo + (hi - lo) * i as f64 / bins as f64;
    let mut masses = Vec::with_capacity(bins);
    for b in 0..bins {
        let mut err = None;
        let m = crate::wave::simpson(edge(b), edge(b + 1).min(hi), 16, |y| {
            let r = match det {
                Some(det) => model.conditional_density(det, y),
                None => model.marginal_density(y),
            };
            match r {
                Ok(v) => v,
                Err(e) => {
                    err = Some(e);
                    0.0
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        masses.push(m);
    }
    // Normalize so the masses describe the law restricted to the extent.
    let total: f64 = masses.iter().sum();
    if total > 0.0 {
        for m in masses.iter_mut() {
            *m /= total;
        }
    }
    Ok(masses)
}

/// L1 distance between a histogram's frequencies and reference masses.
pub fn l1_to_masses(h: &Histogram, masses: &[f64]) -> Result<f64> {
    if h.bins() != masses.len() {
        return Err(Error::Config("mass vector does not match binning".into()));
    }
    Ok(h.normalized()
        .iter()
        .zip(masses)
        .map(|(f, m)| (f - m).abs())
        .sum())
}

/// Per-detector summary row for the JSON report.
#[derive(Clone, Debug, Serialize)]
pub struct DetectorSummary {
    pub detector: String,
    pub total: u64,
    pub visibility: f64,
}

pub fn write_summaries_json<W: Write>(summaries: &[DetectorSummary], out: &mut W) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, summaries)
        .map_err(|e| Error::Config(format!("summary serialization: {e}")))?;
    writeln!(out)?;
    Ok(())
}
