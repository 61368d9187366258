//! Analytic wave amplitudes and coincidence densities on the screen.
//!
//! The post-slit pair state is a two-branch superposition: each branch
//! carries a point-source wave for the signal particle and an orthogonal
//! idler factor tagging the slit of origin. Conditioning on an idler
//! detector collapses the signal to one of four combinations:
//!
//! * `D1` -> `i*psi1 - psi2` (fringes)
//! * `D2` -> `-psi1 + i*psi2` (anti-fringes, the exact phase opposite)
//! * `D3` -> `psi2`, `D4` -> `psi1` (single-slit clumps)
//!
//! Normalization is carried explicitly: with `C` the screen integral of
//! `|psi1|^2 + |psi2|^2`, the marginal density `(|psi1|^2 + |psi2|^2)/C`
//! integrates to one, and the conditional densities are scaled so that the
//! detector-probability-weighted sum reproduces the marginal pointwise.

use crate::error::{Error, Result};
use crate::geometry::{DetectorId, ExperimentGeometry, SOURCE_RADIUS_MIN};
use num_complex::Complex64;
use std::io::Write;

/// Complex wavefunction value.
pub type Amplitude = Complex64;

/// Grid resolution used for the screen normalization integral.
const NORM_INTERVALS: usize = 4096;

/// Unit-modulus plane wave `e^{ikx}`.
pub fn plane_wave(k: f64, x: f64) -> Amplitude {
    Amplitude::from_polar(1.0, k * x)
}

/// Point-source wave `e^{ikr}/r` with modulus `1/r`.
///
/// Rejects radii below [`SOURCE_RADIUS_MIN`] where the amplitude diverges.
pub fn spherical_wave(k: f64, r: f64) -> Result<Amplitude> {
    if !(r >= SOURCE_RADIUS_MIN) {
        return Err(Error::Domain(format!(
            "spherical wave evaluated at r = {r}, below the source guard radius"
        )));
    }
    Ok(Amplitude::from_polar(1.0 / r, k * r))
}

/// Route the two idler branch amplitudes through the erasing beamsplitter.
///
/// Each reflection contributes a factor `i`; one path reaches each output
/// with two reflections, the other with one:
///
/// ```text
/// upper -> ( i*upper - lower) / sqrt(2)   at D1
/// lower -> (-upper + i*lower) / sqrt(2)   at D2
/// ```
///
/// The map is unitary: output power equals input power exactly.
pub fn eraser_transform(upper: Amplitude, lower: Amplitude) -> (Amplitude, Amplitude) {
    let i = Amplitude::i();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    ((i * upper - lower) * s, (-upper + i * lower) * s)
}

/// One branch of the entangled pair state: a signal factor and an idler
/// factor. Idler factors of different branches are orthogonal.
#[derive(Clone, Copy, Debug)]
pub struct BranchAmplitudes {
    pub signal: Amplitude,
    pub idler: Amplitude,
}

/// Two-branch pair state `norm * (s_u (x) i_u + s_l (x) i_l)`.
///
/// The branches are kept separate until a density is requested; the squared
/// norm has no cross term because the idler factors do not overlap.
#[derive(Clone, Copy, Debug)]
pub struct JointState {
    pub branch_upper: BranchAmplitudes,
    pub branch_lower: BranchAmplitudes,
    pub normalization: f64,
}

impl JointState {
    /// Squared norm of the state; the branch cross term vanishes by idler
    /// orthogonality.
    pub fn density(&self) -> f64 {
        let u = self.branch_upper.signal.norm_sqr() * self.branch_upper.idler.norm_sqr();
        let l = self.branch_lower.signal.norm_sqr() * self.branch_lower.idler.norm_sqr();
        self.normalization * self.normalization * (u + l)
    }
}

/// Analytic model of one experiment configuration with its screen
/// normalization precomputed.
#[derive(Clone, Debug)]
pub struct WaveModel {
    geometry: ExperimentGeometry,
    /// Screen integral of `|psi1|^2 + |psi2|^2` over the extent.
    screen_norm: f64,
    /// `sqrt(2 / screen_norm)`; scales every collapsed signal amplitude.
    collapse_scale: f64,
}

impl WaveModel {
    pub fn new(geometry: ExperimentGeometry) -> Result<Self> {
        geometry.validate()?;
        let [lo, hi] = geometry.screen_extent;
        let screen_norm = simpson(lo, hi, NORM_INTERVALS, |y| {
            let (r1, r2) = geometry.screen_distances(y);
            1.0 / (r1 * r1) + 1.0 / (r2 * r2)
        });
        if !(screen_norm.is_finite() && screen_norm > 0.0) {
            return Err(Error::Config(
                "screen normalization integral is not positive and finite".into(),
            ));
        }
        Ok(WaveModel {
            geometry,
            screen_norm,
            collapse_scale: (2.0 / screen_norm).sqrt(),
        })
    }

    pub fn geometry(&self) -> &ExperimentGeometry {
        &self.geometry
    }

    /// Screen integral of the unnormalized clump profile.
    pub fn screen_norm(&self) -> f64 {
        self.screen_norm
    }

    fn check_on_screen(&self, y: f64) -> Result<()> {
        if !self.geometry.contains_screen_y(y) {
            return Err(Error::Domain(format!(
                "screen point y = {y} outside extent [{}, {}]",
                self.geometry.screen_extent[0], self.geometry.screen_extent[1]
            )));
        }
        Ok(())
    }

    /// Branch amplitudes `(psi1, psi2)` at the screen point `y`, each a
    /// point-source wave evaluated at the slit-to-point distance.
    pub fn slit_amplitudes(&self, y: f64) -> Result<(Amplitude, Amplitude)> {
        self.check_on_screen(y)?;
        let k = self.geometry.wave_number;
        let (r1, r2) = self.geometry.screen_distances(y);
        Ok((spherical_wave(k, r1)?, spherical_wave(k, r2)?))
    }

    /// Entangled pair state at the screen point, normalized so that
    /// [`JointState::density`] is the marginal probability density.
    pub fn joint_state(&self, y: f64) -> Result<JointState> {
        let (psi1, psi2) = self.slit_amplitudes(y)?;
        let unit = Amplitude::new(1.0, 0.0);
        Ok(JointState {
            branch_upper: BranchAmplitudes {
                signal: psi1,
                idler: unit,
            },
            branch_lower: BranchAmplitudes {
                signal: psi2,
                idler: unit,
            },
            normalization: 1.0 / self.screen_norm.sqrt(),
        })
    }

    fn check_conditioning(&self, det: DetectorId) -> Result<()> {
        match det {
            DetectorId::D0 => Err(Error::Config(
                "cannot condition on D0: it is the screen itself".into(),
            )),
            DetectorId::D1 | DetectorId::D2 if self.geometry.mirrors_in => {
                Err(Error::Config(format!(
                    "{} is unreachable while the which-path mirrors are in",
                    det.label()
                )))
            }
            _ => Ok(()),
        }
    }

    /// Signal amplitude at `y` after the idler is found at `det`.
    pub fn conditional_amplitude(&self, det: DetectorId, y: f64) -> Result<Amplitude> {
        self.check_conditioning(det)?;
        let (psi1, psi2) = self.slit_amplitudes(y)?;
        let amp = match det {
            DetectorId::D1 => eraser_transform(psi1, psi2).0,
            DetectorId::D2 => eraser_transform(psi1, psi2).1,
            DetectorId::D3 => psi2,
            DetectorId::D4 => psi1,
            DetectorId::D0 => unreachable!(),
        };
        Ok(self.collapse_scale * amp)
    }

    /// Probability density of a coincidence at `(y, det)` given `det`.
    ///
    /// Weighted by [`ExperimentGeometry::detector_probability`] these sum
    /// over detectors to [`WaveModel::marginal_density`] at every point.
    pub fn conditional_density(&self, det: DetectorId, y: f64) -> Result<f64> {
        Ok(self.conditional_amplitude(det, y)?.norm_sqr())
    }

    /// Density of signal detections at `y` regardless of the idler's fate.
    ///
    /// Equal to `(|psi1|^2 + |psi2|^2) / C`: no interference term, and no
    /// dependence on the mirror setting.
    pub fn marginal_density(&self, y: f64) -> Result<f64> {
        Ok(self.joint_state(y)?.density())
    }

    /// Weighted sum of conditional densities over reachable detectors.
    ///
    /// Algebraically identical to the marginal; exposed so callers can
    /// measure the cancellation residual.
    pub fn detector_sum_density(&self, y: f64) -> Result<f64> {
        let mut total = 0.0;
        for det in self.geometry.reachable_detectors() {
            total += self.geometry.detector_probability(det) * self.conditional_density(det, y)?;
        }
        Ok(total)
    }

    /// Uniform grid of `points >= 2` screen positions spanning the extent.
    pub fn screen_grid(&self, points: usize) -> Vec<f64> {
        let [lo, hi] = self.geometry.screen_extent;
        let n = points.max(2);
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    /// Sampled density profile: `(y, density)` pairs on a uniform grid.
    /// `det = None` yields the marginal.
    pub fn density_profile(
        &self,
        det: Option<DetectorId>,
        points: usize,
    ) -> Result<Vec<(f64, f64)>> {
        self.screen_grid(points)
            .into_iter()
            .map(|y| {
                let d = match det {
                    Some(det) => self.conditional_density(det, y)?,
                    None => self.marginal_density(y)?,
                };
                Ok((y, d))
            })
            .collect()
    }

    /// Write a density profile as CSV with header `y,density`.
    pub fn write_density_csv<W: Write>(
        &self,
        det: Option<DetectorId>,
        points: usize,
        out: &mut W,
    ) -> Result<()> {
        writeln!(out, "y,density")?;
        for (y, d) in self.density_profile(det, points)? {
            writeln!(out, "{y},{d}")?;
        }
        Ok(())
    }
}

/// Composite Simpson rule with `n` (rounded up to even) intervals.
pub(crate) fn simpson(a: f64, b: f64, n: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let n = if n % 2 == 0 { n.max(2) } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * i as f64);
    }
    acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const TOL: f64 = 1e-12;

    fn close(a: Amplitude, b: Amplitude, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    fn default_model() -> WaveModel {
        WaveModel::new(ExperimentGeometry::default()).unwrap()
    }

    /// Bisect for the screen point y > 0 where r2 - r1 equals `target`.
    fn solve_path_difference(g: &ExperimentGeometry, target: f64) -> f64 {
        let diff = |y: f64| {
            let (r1, r2) = g.screen_distances(y);
            r2 - r1 - target
        };
        let (mut lo, mut hi) = (0.0, g.screen_extent[1]);
        assert!(diff(lo) < 0.0 && diff(hi) > 0.0, "target not bracketed");
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if diff(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn plane_wave_reference_points() {
        assert!(close(plane_wave(1.0, 0.0), Amplitude::new(1.0, 0.0), TOL));
        assert!(close(plane_wave(PI, 1.0), Amplitude::new(-1.0, 0.0), TOL));
        assert!(close(
            plane_wave(2.0 * PI, 0.25),
            Amplitude::new(0.0, 1.0),
            TOL
        ));
    }

    #[test]
    fn spherical_wave_reference_points() {
        assert!(close(
            spherical_wave(0.0, 1.0).unwrap(),
            Amplitude::new(1.0, 0.0),
            TOL
        ));
        assert!(close(
            spherical_wave(2.0 * PI, 2.0).unwrap(),
            Amplitude::new(0.5, 0.0),
            TOL
        ));
        assert!(close(
            spherical_wave(PI / 2.0, 1.0).unwrap(),
            Amplitude::new(0.0, 1.0),
            TOL
        ));
    }

    #[test]
    fn spherical_wave_rejects_singularity() {
        assert!(spherical_wave(1.0, 0.0).is_err());
        assert!(spherical_wave(1.0, 1e-10).is_err());
        assert!(spherical_wave(1.0, f64::NAN).is_err());
    }

    #[test]
    fn slit_amplitudes_symmetric_point() {
        let model = default_model();
        let mid = 0.5 * (model.geometry().slit_upper_y + model.geometry().slit_lower_y);
        let (psi1, psi2) = model.slit_amplitudes(mid).unwrap();
        assert!(close(psi1, psi2, TOL));
    }

    #[test]
    fn slit_amplitudes_axis_modulus() {
        // d = 1, L = 10: both distances are sqrt(100 + 0.25).
        let g = ExperimentGeometry {
            wave_number: 2.0 * PI,
            slit_upper_y: 0.5,
            slit_lower_y: -0.5,
            screen_distance: 10.0,
            screen_extent: [-5.0, 5.0],
            ..Default::default()
        };
        let model = WaveModel::new(g).unwrap();
        let (psi1, psi2) = model.slit_amplitudes(0.0).unwrap();
        let expected = 1.0 / 100.25_f64.sqrt();
        assert!((psi1.norm() - expected).abs() < TOL);
        assert!(close(psi1, psi2, TOL));
    }

    #[test]
    fn half_wavelength_offset_flips_sign() {
        let model = default_model();
        let g = model.geometry();
        let y = solve_path_difference(g, g.wavelength() / 2.0);
        let (psi1, psi2) = model.slit_amplitudes(y).unwrap();
        let (r1, r2) = g.screen_distances(y);
        // r2 - r1 = lambda/2 implies psi2 = -psi1 * r1/r2.
        assert!(close(psi2, -psi1 * (r1 / r2), 1e-9));
    }

    #[test]
    fn eraser_transform_reference_points() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let one = Amplitude::new(1.0, 0.0);
        let zero = Amplitude::new(0.0, 0.0);

        let (d1, d2) = eraser_transform(one, zero);
        assert!(close(d1, Amplitude::new(0.0, s), TOL));
        assert!(close(d2, Amplitude::new(-s, 0.0), TOL));

        let (d1, d2) = eraser_transform(zero, one);
        assert!(close(d1, Amplitude::new(-s, 0.0), TOL));
        assert!(close(d2, Amplitude::new(0.0, s), TOL));

        // Symmetric input gives equal outputs by linearity.
        let (d1, d2) = eraser_transform(one, one);
        assert!(close(d1, d2, TOL));
        assert!(close(d1, Amplitude::new(-s, s), TOL));
    }

    #[test]
    fn conditional_amplitude_d4_tracks_upper_branch() {
        let model = default_model();
        for y in [-20.0, -3.3, 0.0, 7.1, 24.0] {
            let (psi1, _) = model.slit_amplitudes(y).unwrap();
            let amp = model
                .conditional_amplitude(DetectorId::D4, y)
                .unwrap();
            assert!(close(amp, model.collapse_scale * psi1, TOL));
        }
    }

    #[test]
    fn eraser_outputs_match_at_symmetric_point() {
        let model = default_model();
        let d1 = model.conditional_amplitude(DetectorId::D1, 0.0).unwrap();
        let d2 = model.conditional_amplitude(DetectorId::D2, 0.0).unwrap();
        // |i - 1| = |-1 + i|: equal moduli at psi1 = psi2.
        assert!((d1.norm() - d2.norm()).abs() < TOL);
        let (psi, _) = model.slit_amplitudes(0.0).unwrap();
        let n_sq = model.collapse_scale * model.collapse_scale / 2.0;
        assert!((d1.norm_sqr() - 2.0 * n_sq * psi.norm_sqr()).abs() < TOL);
    }

    #[test]
    fn conditional_density_quarter_period_point() {
        let model = default_model();
        let g = model.geometry();
        // k (r2 - r1) = pi/2: the interference term is +-2/(r1 r2).
        let y = solve_path_difference(g, g.wavelength() / 4.0);
        let (r1, r2) = g.screen_distances(y);
        let n_sq = 1.0 / model.screen_norm();
        let base = 1.0 / (r1 * r1) + 1.0 / (r2 * r2);
        let cross = 2.0 / (r1 * r2);
        let d1 = model.conditional_density(DetectorId::D1, y).unwrap();
        let d2 = model.conditional_density(DetectorId::D2, y).unwrap();
        assert!((d1 - n_sq * (base - cross)).abs() < 1e-9 * n_sq);
        assert!((d2 - n_sq * (base + cross)).abs() < 1e-9 * n_sq);
    }

    #[test]
    fn whichpath_densities_have_no_interference_term() {
        let model = default_model();
        let m_sq = model.collapse_scale * model.collapse_scale;
        for y in model.screen_grid(101) {
            let (psi1, psi2) = model.slit_amplitudes(y).unwrap();
            let d3 = model.conditional_density(DetectorId::D3, y).unwrap();
            let d4 = model.conditional_density(DetectorId::D4, y).unwrap();
            let expected = m_sq * (psi1.norm_sqr() + psi2.norm_sqr());
            assert!((d3 + d4 - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_equals_detector_weighted_sum() {
        for mirrors_in in [false, true] {
            let model = WaveModel::new(ExperimentGeometry {
                mirrors_in,
                ..Default::default()
            })
            .unwrap();
            for y in model.screen_grid(257) {
                let marginal = model.marginal_density(y).unwrap();
                let summed = model.detector_sum_density(y).unwrap();
                assert!(
                    (marginal - summed).abs() < 1e-12,
                    "residual {} at y = {y}",
                    (marginal - summed).abs()
                );
            }
        }
    }

    #[test]
    fn marginal_is_mirror_independent() {
        let without = default_model();
        let with = WaveModel::new(ExperimentGeometry {
            mirrors_in: true,
            ..Default::default()
        })
        .unwrap();
        for y in without.screen_grid(513) {
            let a = without.marginal_density(y).unwrap();
            let b = with.marginal_density(y).unwrap();
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn marginal_at_symmetric_point() {
        let model = default_model();
        let (psi, _) = model.slit_amplitudes(0.0).unwrap();
        let c = 1.0 / model.screen_norm();
        let marginal = model.marginal_density(0.0).unwrap();
        assert!((marginal - 2.0 * c * psi.norm_sqr()).abs() < TOL);
    }

    #[test]
    fn marginal_integrates_to_one() {
        let model = default_model();
        let [lo, hi] = model.geometry().screen_extent;
        let total = simpson(lo, hi, 4096, |y| model.marginal_density(y).unwrap());
        assert!((total - 1.0).abs() < 1e-9, "integral = {total}");
    }

    #[test]
    fn conditioning_on_unreachable_detector_is_rejected() {
        let model = WaveModel::new(ExperimentGeometry {
            mirrors_in: true,
            ..Default::default()
        })
        .unwrap();
        assert!(model.conditional_density(DetectorId::D1, 0.0).is_err());
        assert!(model.conditional_density(DetectorId::D3, 0.0).is_ok());
        let screen = default_model().conditional_density(DetectorId::D0, 0.0);
        assert!(screen.is_err());
    }

    #[test]
    fn densities_are_nonnegative_on_grid() {
        let model = default_model();
        for y in model.screen_grid(1001) {
            for det in DetectorId::IDLER {
                assert!(model.conditional_density(det, y).unwrap() >= 0.0);
            }
            assert!(model.marginal_density(y).unwrap() >= 0.0);
        }
    }

    #[test]
    fn density_csv_has_header_and_rows() {
        let model = default_model();
        let mut buf = Vec::new();
        model
            .write_density_csv(Some(DetectorId::D1), 16, &mut buf)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("y,density"));
        assert_eq!(lines.count(), 16);
    }

    proptest! {
        #[test]
        fn eraser_transform_is_unitary(
            re1 in -10.0..10.0f64, im1 in -10.0..10.0f64,
            re2 in -10.0..10.0f64, im2 in -10.0..10.0f64,
        ) {
            let u = Amplitude::new(re1, im1);
            let l = Amplitude::new(re2, im2);
            let (d1, d2) = eraser_transform(u, l);
            let input = u.norm_sqr() + l.norm_sqr();
            let output = d1.norm_sqr() + d2.norm_sqr();
            prop_assert!((input - output).abs() <= 1e-12 * input.max(1.0));
        }

        #[test]
        fn spherical_wave_modulus_is_inverse_radius(
            r in 1e-9..1e6f64, k in 0.0..100.0f64,
        ) {
            let psi = spherical_wave(k, r).unwrap();
            prop_assert!((psi.norm() * r - 1.0).abs() < 4.0 * f64::EPSILON);
        }

        #[test]
        fn interference_terms_are_opposite(y in -25.0..25.0f64) {
            // Fringe and anti-fringe oscillations cancel pairwise.
            let model = default_model();
            let d1 = model.conditional_density(DetectorId::D1, y).unwrap();
            let d2 = model.conditional_density(DetectorId::D2, y).unwrap();
            let (psi1, psi2) = model.slit_amplitudes(y).unwrap();
            let clump = (psi1.norm_sqr() + psi2.norm_sqr()) / model.screen_norm();
            prop_assert!((0.5 * (d1 + d2) - clump).abs() < 1e-12);
        }
    }
}
