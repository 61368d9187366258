//! Experiment configuration: slit layout, screen placement and idler optics.
//!
//! The geometry is two-dimensional. The propagation axis is `x`, the
//! transverse axis is `y`. Both slits sit on the plane `x = 0` and the
//! screen is the line `x = screen_distance`. The idler arm is not spatially
//! resolved; it enters through the detector roles and the optional
//! which-path mirrors.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Which slit a wavefunction branch (and the particle pair) originated from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slit {
    Upper,
    Lower,
}

impl Slit {
    pub const BOTH: [Slit; 2] = [Slit::Upper, Slit::Lower];
}

/// Detector roles. `D0` is the screen; `D1`/`D2` sit behind the erasing
/// beamsplitter; `D3`/`D4` record which-path information.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DetectorId {
    D0,
    D1,
    D2,
    D3,
    D4,
}

impl DetectorId {
    /// The four idler-side detectors in index order.
    pub const IDLER: [DetectorId; 4] = [
        DetectorId::D1,
        DetectorId::D2,
        DetectorId::D3,
        DetectorId::D4,
    ];

    /// True for the outputs of the erasing beamsplitter.
    pub fn erases_path_information(self) -> bool {
        matches!(self, DetectorId::D1 | DetectorId::D2)
    }

    /// True for the detectors that reveal the slit of origin.
    pub fn reveals_path_information(self) -> bool {
        matches!(self, DetectorId::D3 | DetectorId::D4)
    }

    pub fn label(self) -> &'static str {
        match self {
            DetectorId::D0 => "D0",
            DetectorId::D1 => "D1",
            DetectorId::D2 => "D2",
            DetectorId::D3 => "D3",
            DetectorId::D4 => "D4",
        }
    }
}

/// Guard radius around a slit: wave evaluation inside it is rejected
/// because of the 1/r singularity of the point-source waves.
pub const SOURCE_RADIUS_MIN: f64 = 1e-9;

/// Static description of the interferometer.
///
/// Loadable from JSON with exactly these field names; unknown fields are
/// rejected. `bs_reflectivity` is fixed at 0.5: the beamsplitters of the
/// modeled setup are all 50-50 and the detector probabilities below assume
/// that split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGeometry {
    /// Wave number k in radians per length unit.
    pub wave_number: f64,
    /// Transverse position of the upper slit.
    pub slit_upper_y: f64,
    /// Transverse position of the lower slit.
    pub slit_lower_y: f64,
    /// Distance from the slit plane to the screen.
    pub screen_distance: f64,
    /// Observed interval `[y_min, y_max]` on the screen.
    pub screen_extent: [f64; 2],
    /// Optical path excess of the idler, in time units. Only the ordering
    /// of detections depends on it.
    #[serde(default)]
    pub idler_delay: f64,
    /// When true, moveable mirrors reflect every idler into D3/D4 and the
    /// eraser is unreachable.
    #[serde(default)]
    pub mirrors_in: bool,
    /// Intensity reflectivity of the beamsplitters. Fixed at 0.5.
    #[serde(default = "default_bs_reflectivity")]
    pub bs_reflectivity: f64,
}

fn default_bs_reflectivity() -> f64 {
    0.5
}

impl Default for ExperimentGeometry {
    /// Desk-scale defaults: unit wavelength, slit separation 3, screen at
    /// distance 50 spanning [-25, 25]. Gives a handful of visible fringes.
    fn default() -> Self {
        ExperimentGeometry {
            wave_number: 2.0 * PI,
            slit_upper_y: 1.5,
            slit_lower_y: -1.5,
            screen_distance: 50.0,
            screen_extent: [-25.0, 25.0],
            idler_delay: 8.0,
            mirrors_in: false,
            bs_reflectivity: 0.5,
        }
    }
}

impl ExperimentGeometry {
    /// Parse a JSON configuration document and validate it.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let g: ExperimentGeometry = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid geometry JSON: {e}")))?;
        g.validate()?;
        Ok(g)
    }

    /// Check every invariant; returns the geometry unchanged on success.
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.wave_number,
            self.slit_upper_y,
            self.slit_lower_y,
            self.screen_distance,
            self.screen_extent[0],
            self.screen_extent[1],
            self.idler_delay,
            self.bs_reflectivity,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("geometry fields must be finite".into()));
        }
        if self.wave_number <= 0.0 {
            return Err(Error::Config(format!(
                "wave_number must be > 0, got {}",
                self.wave_number
            )));
        }
        if self.screen_distance <= 0.0 {
            return Err(Error::Config(format!(
                "screen_distance must be > 0, got {}",
                self.screen_distance
            )));
        }
        if self.slit_upper_y <= self.slit_lower_y {
            return Err(Error::Config(format!(
                "slit_upper_y ({}) must exceed slit_lower_y ({})",
                self.slit_upper_y, self.slit_lower_y
            )));
        }
        if self.screen_extent[0] >= self.screen_extent[1] {
            return Err(Error::Config(format!(
                "screen_extent must satisfy y_min < y_max, got [{}, {}]",
                self.screen_extent[0], self.screen_extent[1]
            )));
        }
        if self.idler_delay < 0.0 {
            return Err(Error::Config(format!(
                "idler_delay must be >= 0, got {}",
                self.idler_delay
            )));
        }
        if self.bs_reflectivity != 0.5 {
            return Err(Error::Config(format!(
                "bs_reflectivity is fixed at 0.5, got {}",
                self.bs_reflectivity
            )));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        2.0 * PI / self.wave_number
    }

    pub fn slit_separation(&self) -> f64 {
        self.slit_upper_y - self.slit_lower_y
    }

    pub fn slit_y(&self, slit: Slit) -> f64 {
        match slit {
            Slit::Upper => self.slit_upper_y,
            Slit::Lower => self.slit_lower_y,
        }
    }

    pub fn contains_screen_y(&self, y: f64) -> bool {
        y >= self.screen_extent[0] && y <= self.screen_extent[1]
    }

    /// Distance from the given slit to the plane point `(x, y)`.
    pub fn distance_from_slit(&self, slit: Slit, x: f64, y: f64) -> f64 {
        let dy = y - self.slit_y(slit);
        x.hypot(dy)
    }

    /// Distances from both slits to the screen point at transverse `y`.
    pub fn screen_distances(&self, y: f64) -> (f64, f64) {
        (
            self.distance_from_slit(Slit::Upper, self.screen_distance, y),
            self.distance_from_slit(Slit::Lower, self.screen_distance, y),
        )
    }

    /// Probability that the idler ends at the given detector.
    ///
    /// With 50-50 beamsplitters every idler detector receives 1/4 of the
    /// pairs; with the mirrors in place D3/D4 receive 1/2 each and the
    /// eraser outputs are unreachable.
    pub fn detector_probability(&self, det: DetectorId) -> f64 {
        match det {
            DetectorId::D0 => 1.0,
            DetectorId::D1 | DetectorId::D2 => {
                if self.mirrors_in {
                    0.0
                } else {
                    0.25
                }
            }
            DetectorId::D3 | DetectorId::D4 => {
                if self.mirrors_in {
                    0.5
                } else {
                    0.25
                }
            }
        }
    }

    /// Idler detectors with nonzero probability under this configuration.
    pub fn reachable_detectors(&self) -> Vec<DetectorId> {
        DetectorId::IDLER
            .into_iter()
            .filter(|d| self.detector_probability(*d) > 0.0)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry_is_valid() {
        ExperimentGeometry::default().validate().unwrap();
    }

    #[test]
    fn rejects_unknown_fields() {
        let text = r#"{
            "wave_number": 6.28, "slit_upper_y": 1.0, "slit_lower_y": -1.0,
            "screen_distance": 10.0, "screen_extent": [-5.0, 5.0],
            "lens_focal_length": 2.0
        }"#;
        let err = ExperimentGeometry::from_json_str(text).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
    }

    #[test]
    fn rejects_swapped_slits() {
        let mut g = ExperimentGeometry::default();
        g.slit_upper_y = -2.0;
        assert!(g.validate().is_err());
    }

    #[test]
    fn rejects_non_half_reflectivity() {
        let mut g = ExperimentGeometry::default();
        g.bs_reflectivity = 0.4;
        assert!(g.validate().is_err());
    }

    #[test]
    fn rejects_empty_extent() {
        let mut g = ExperimentGeometry::default();
        g.screen_extent = [3.0, 3.0];
        assert!(g.validate().is_err());
    }

    #[test]
    fn json_round_trip_preserves_fields() {
        let g = ExperimentGeometry::default();
        let text = serde_json::to_string(&g).unwrap();
        let back = ExperimentGeometry::from_json_str(&text).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn detector_probabilities_sum_to_one() {
        for mirrors_in in [false, true] {
            let g = ExperimentGeometry {
                mirrors_in,
                ..Default::default()
            };
            let total: f64 = DetectorId::IDLER
                .iter()
                .map(|d| g.detector_probability(*d))
                .sum();
            assert!((total - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mirrors_make_eraser_unreachable() {
        let g = ExperimentGeometry {
            mirrors_in: true,
            ..Default::default()
        };
        assert_eq!(g.reachable_detectors(), vec![DetectorId::D3, DetectorId::D4]);
    }
}
