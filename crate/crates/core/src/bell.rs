//! Two-qubit reduction of the experiment.
//!
//! The pair creation behind the slits acts as a CNOT on a superposed
//! control: it turns `(|0> + |1>)/sqrt(2) (x) |0>` into the Bell pair
//! `(|00> + |11>)/sqrt(2)`. Measuring the idler qubit in the computational
//! basis is the which-path readout; measuring it in the diagonal basis is
//! the eraser. The mapping onto the wave model is fixed as
//!
//! | wave model        | qubit model        |
//! |-------------------|--------------------|
//! | upper slit        | signal `|0>`       |
//! | lower slit        | signal `|1>`       |
//! | D4 click          | idler `0`          |
//! | D3 click          | idler `1`          |
//! | D1 click          | idler `+`          |
//! | D2 click          | idler `-`          |
//!
//! The `D1 <-> +` row is a convention: the wave model leaves the absolute
//! phase dictionary open, and only the sign structure of the correlations
//! is observable.

use crate::error::{Error, Result};
use crate::geometry::DetectorId;
use crate::wave::{Amplitude, WaveModel};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::Serialize;
use std::f64::consts::FRAC_1_SQRT_2;
use std::io::Write;

/// Norm slack accepted on input states; constructed states stay normalized
/// to machine precision.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QubitState {
    pub amplitudes: [Amplitude; 2],
}

impl QubitState {
    pub fn new(amplitudes: [Amplitude; 2]) -> Result<Self> {
        let s = QubitState { amplitudes };
        s.check_norm()?;
        Ok(s)
    }

    pub fn zero() -> Self {
        QubitState {
            amplitudes: [Amplitude::new(1.0, 0.0), Amplitude::new(0.0, 0.0)],
        }
    }

    pub fn one() -> Self {
        QubitState {
            amplitudes: [Amplitude::new(0.0, 0.0), Amplitude::new(1.0, 0.0)],
        }
    }

    pub fn plus() -> Self {
        QubitState {
            amplitudes: [
                Amplitude::new(FRAC_1_SQRT_2, 0.0),
                Amplitude::new(FRAC_1_SQRT_2, 0.0),
            ],
        }
    }

    pub fn minus() -> Self {
        QubitState {
            amplitudes: [
                Amplitude::new(FRAC_1_SQRT_2, 0.0),
                Amplitude::new(-FRAC_1_SQRT_2, 0.0),
            ],
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    fn check_norm(&self) -> Result<()> {
        let n = self.norm_sq();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Norm { norm_sq: n });
        }
        Ok(())
    }
}

/// Two-qubit state over `|00>, |01>, |10>, |11>`; the first slot is the
/// signal qubit, the second the idler.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoQubitState {
    pub amplitudes: [Amplitude; 4],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Signal,
    Idler,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Computational,
    Diagonal,
}

impl TwoQubitState {
    pub fn new(amplitudes: [Amplitude; 4]) -> Result<Self> {
        let s = TwoQubitState { amplitudes };
        s.check_norm()?;
        Ok(s)
    }

    pub fn product(signal: &QubitState, idler: &QubitState) -> Self {
        let mut amplitudes = [Amplitude::new(0.0, 0.0); 4];
        for s in 0..2 {
            for i in 0..2 {
                amplitudes[2 * s + i] = signal.amplitudes[s] * idler.amplitudes[i];
            }
        }
        TwoQubitState { amplitudes }
    }

    /// The maximally entangled pair the source produces.
    pub fn bell_pair() -> Self {
        apply_cnot(&TwoQubitState::product(&QubitState::plus(), &QubitState::zero()))
            .expect("plus (x) zero is normalized")
    }

    pub fn norm_sq(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    fn check_norm(&self) -> Result<()> {
        let n = self.norm_sq();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Norm { norm_sq: n });
        }
        Ok(())
    }

    fn amplitude(&self, s: usize, i: usize) -> Amplitude {
        self.amplitudes[2 * s + i]
    }
}

/// CNOT with the signal slot as control: `|s, i> -> |s, i xor s>`.
pub fn apply_cnot(state: &TwoQubitState) -> Result<TwoQubitState> {
    state.check_norm()?;
    let a = &state.amplitudes;
    Ok(TwoQubitState {
        amplitudes: [a[0], a[1], a[3], a[2]],
    })
}

/// Coefficients of the state over `{|0>, |1>} (x) {|+>, |->}`.
///
/// Slot order is preserved: index `2s + d` holds the coefficient of
/// `|s> (x) |+>` for `d = 0` and `|s> (x) |->` for `d = 1`. The transform
/// is involutive, so applying it to the returned coefficients recovers the
/// originals.
pub fn rewrite_in_diagonal(state: &TwoQubitState) -> Result<TwoQubitState> {
    state.check_norm()?;
    let a = &state.amplitudes;
    let h = FRAC_1_SQRT_2;
    Ok(TwoQubitState {
        amplitudes: [
            (a[0] + a[1]) * h,
            (a[0] - a[1]) * h,
            (a[2] + a[3]) * h,
            (a[2] - a[3]) * h,
        ],
    })
}

/// Result of a projective measurement on one slot.
#[derive(Clone, Copy, Debug)]
pub struct Measurement {
    /// 0/1 in the computational basis; 0 for `+`, 1 for `-` in the
    /// diagonal basis.
    pub outcome: usize,
    pub probability: f64,
    pub collapsed: TwoQubitState,
}

/// Basis vector `outcome` of `basis` as a single-qubit state.
fn basis_vector(basis: Basis, outcome: usize) -> QubitState {
    match (basis, outcome) {
        (Basis::Computational, 0) => QubitState::zero(),
        (Basis::Computational, _) => QubitState::one(),
        (Basis::Diagonal, 0) => QubitState::plus(),
        (Basis::Diagonal, _) => QubitState::minus(),
    }
}

/// Probability of `outcome` and the collapsed state, without randomness.
pub fn project(
    state: &TwoQubitState,
    slot: Slot,
    basis: Basis,
    outcome: usize,
) -> Result<(f64, TwoQubitState)> {
    state.check_norm()?;
    let e = basis_vector(basis, outcome);
    // Partial inner product <e|psi> on the measured slot.
    let mut rest = [Amplitude::new(0.0, 0.0); 2];
    for other in 0..2 {
        rest[other] = match slot {
            Slot::Signal => {
                e.amplitudes[0].conj() * state.amplitude(0, other)
                    + e.amplitudes[1].conj() * state.amplitude(1, other)
            }
            Slot::Idler => {
                e.amplitudes[0].conj() * state.amplitude(other, 0)
                    + e.amplitudes[1].conj() * state.amplitude(other, 1)
            }
        };
    }
    let probability: f64 = rest.iter().map(|a| a.norm_sqr()).sum();
    if probability <= 0.0 {
        // Zero-probability branch: collapse is undefined; return a dummy
        // normalized state that callers must not use.
        return Ok((0.0, *state));
    }
    let scale = 1.0 / probability.sqrt();
    let mut amplitudes = [Amplitude::new(0.0, 0.0); 4];
    for other in 0..2 {
        for m in 0..2 {
            let coeff = e.amplitudes[m] * rest[other] * scale;
            match slot {
                Slot::Signal => amplitudes[2 * m + other] = coeff,
                Slot::Idler => amplitudes[2 * other + m] = coeff,
            }
        }
    }
    Ok((probability, TwoQubitState { amplitudes }))
}

/// Born-rule measurement of one slot. The collapsed state is renormalized;
/// measuring the slots in either order yields the same joint distribution.
pub fn measure<R: RngCore>(
    state: &TwoQubitState,
    slot: Slot,
    basis: Basis,
    rng: &mut R,
) -> Result<Measurement> {
    let (p0, collapsed0) = project(state, slot, basis, 0)?;
    let u = (rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0);
    if u < p0 {
        Ok(Measurement {
            outcome: 0,
            probability: p0,
            collapsed: collapsed0,
        })
    } else {
        let (p1, collapsed1) = project(state, slot, basis, 1)?;
        Ok(Measurement {
            outcome: 1,
            probability: p1,
            collapsed: collapsed1,
        })
    }
}

/// Reduced state of the signal qubit: trace out the idler slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix {
    pub elements: [[Amplitude; 2]; 2],
}

impl DensityMatrix {
    pub fn maximally_mixed() -> Self {
        DensityMatrix {
            elements: [
                [Amplitude::new(0.5, 0.0), Amplitude::new(0.0, 0.0)],
                [Amplitude::new(0.0, 0.0), Amplitude::new(0.5, 0.0)],
            ],
        }
    }

    pub fn trace(&self) -> Amplitude {
        self.elements[0][0] + self.elements[1][1]
    }

    pub fn hermiticity_residual(&self) -> f64 {
        (self.elements[0][1] - self.elements[1][0].conj()).norm()
    }

    /// Smallest eigenvalue of the 2x2 Hermitian matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let a = self.elements[0][0].re;
        let d = self.elements[1][1].re;
        let b = self.elements[0][1].norm();
        let mid = 0.5 * (a + d);
        let radius = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        mid - radius
    }

    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                worst = worst.max((self.elements[r][c] - other.elements[r][c]).norm());
            }
        }
        worst
    }
}

pub fn partial_trace_idler(state: &TwoQubitState) -> DensityMatrix {
    let mut elements = [[Amplitude::new(0.0, 0.0); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            for i in 0..2 {
                elements[r][c] += state.amplitude(r, i) * state.amplitude(c, i).conj();
            }
        }
    }
    DensityMatrix { elements }
}

/// Joint outcome distribution of measuring `first` then the other slot.
///
/// Mathematically the order cannot matter; computing both orders through
/// the collapse rule makes that an executable check. Rows index the signal
/// outcome, columns the idler outcome.
pub fn joint_distribution_ordered(
    state: &TwoQubitState,
    signal_basis: Basis,
    idler_basis: Basis,
    first: Slot,
) -> Result<[[f64; 2]; 2]> {
    let mut table = [[0.0; 2]; 2];
    let (first_basis, second_slot, second_basis) = match first {
        Slot::Signal => (signal_basis, Slot::Idler, idler_basis),
        Slot::Idler => (idler_basis, Slot::Signal, signal_basis),
    };
    for a in 0..2 {
        let (pa, collapsed) = project(state, first, first_basis, a)?;
        if pa == 0.0 {
            continue;
        }
        for b in 0..2 {
            let (pb, _) = project(&collapsed, second_slot, second_basis, b)?;
            let (s, i) = match first {
                Slot::Signal => (a, b),
                Slot::Idler => (b, a),
            };
            table[s][i] = pa * pb;
        }
    }
    Ok(table)
}

/// Exact joint distribution for Bell-pair shots with the signal read in
/// the diagonal basis.
pub fn analytic_joint(idler_basis: Basis) -> [[f64; 2]; 2] {
    match idler_basis {
        // Perfect correlation: + with +, - with -.
        Basis::Diagonal => [[0.5, 0.0], [0.0, 0.5]],
        // Mismatched bases: no correlation at all.
        Basis::Computational => [[0.25, 0.25], [0.25, 0.25]],
    }
}

/// Sampled joint counts over `n` Bell pairs: the signal is read in the
/// diagonal basis (the fringe-phase readout), the idler in `idler_basis`.
#[derive(Clone, Debug, Serialize)]
pub struct CorrelationTable {
    #[serde(rename = "basis")]
    pub idler_basis: Basis,
    /// `counts[signal_outcome][idler_outcome]`.
    pub counts: [[u64; 2]; 2],
    pub n: u64,
    pub seed: u64,
}

pub fn correlation_table(n: u64, idler_basis: Basis, seed: u64) -> CorrelationTable {
    correlation_table_ordered(n, idler_basis, seed, Slot::Idler)
}

/// Same sampling with an explicit measurement order, for order-independence
/// checks.
pub fn correlation_table_ordered(
    n: u64,
    idler_basis: Basis,
    seed: u64,
    first: Slot,
) -> CorrelationTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = [[0u64; 2]; 2];
    for _ in 0..n {
        let state = TwoQubitState::bell_pair();
        let (first_basis, second_slot, second_basis) = match first {
            Slot::Signal => (Basis::Diagonal, Slot::Idler, idler_basis),
            Slot::Idler => (idler_basis, Slot::Signal, Basis::Diagonal),
        };
        let m1 = measure(&state, first, first_basis, &mut rng).expect("bell pair is normalized");
        let m2 =
            measure(&m1.collapsed, second_slot, second_basis, &mut rng).expect("collapsed state");
        let (s, i) = match first {
            Slot::Signal => (m1.outcome, m2.outcome),
            Slot::Idler => (m2.outcome, m1.outcome),
        };
        counts[s][i] += 1;
    }
    CorrelationTable {
        idler_basis,
        counts,
        n,
        seed,
    }
}

impl CorrelationTable {
    pub fn frequencies(&self) -> [[f64; 2]; 2] {
        let n = self.n.max(1) as f64;
        let mut f = [[0.0; 2]; 2];
        for s in 0..2 {
            for i in 0..2 {
                f[s][i] = self.counts[s][i] as f64 / n;
            }
        }
        f
    }

    pub fn write_json<W: Write>(&self, out: &mut W) -> Result<()> {
        serde_json::to_writer_pretty(&mut *out, self)
            .map_err(|e| Error::Config(format!("correlation table serialization: {e}")))?;
        writeln!(out)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Wave <-> qubit correspondence
// ---------------------------------------------------------------------------

/// Idler detector standing in for a qubit outcome under the mapping table.
pub fn detector_for_idler_outcome(basis: Basis, outcome: usize) -> DetectorId {
    match (basis, outcome) {
        (Basis::Computational, 0) => DetectorId::D4,
        (Basis::Computational, _) => DetectorId::D3,
        (Basis::Diagonal, 0) => DetectorId::D1,
        (Basis::Diagonal, _) => DetectorId::D2,
    }
}

/// Centered covariance table of a 2x2 joint distribution:
/// `cov[s][i] = J[s][i] - row_s * col_i`.
pub fn covariance_table(joint: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let row = [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1]];
    let col = [joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]];
    let mut cov = [[0.0; 2]; 2];
    for s in 0..2 {
        for i in 0..2 {
            cov[s][i] = joint[s][i] - row[s] * col[i];
        }
    }
    cov
}

/// Qubit-side covariance structure for Bell-pair shots.
pub fn qubit_covariance_table(idler_basis: Basis) -> [[f64; 2]; 2] {
    covariance_table(analytic_joint(idler_basis))
}

/// Wave-side analog of the 2x2 joint distribution.
///
/// The signal "diagonal outcome" is read from the fringe phase: outcome 0
/// collects the screen regions where the D1-conditioned density exceeds
/// the mirror-free average (the bright fringes of D1), outcome 1 the rest.
/// The idler outcome picks the detector from the mapping table, and the
/// joint mass is the detector probability times the conditional mass in
/// the region, renormalized over the basis subset (eraser arm or
/// which-path arm).
pub fn wave_joint_distribution(model: &WaveModel, idler_basis: Basis) -> Result<[[f64; 2]; 2]> {
    let g = model.geometry();
    let [lo, hi] = g.screen_extent;
    const CELLS: usize = 8192;
    let pitch = (hi - lo) / CELLS as f64;
    let mut joint = [[0.0; 2]; 2];
    for cell in 0..CELLS {
        let y = lo + (cell as f64 + 0.5) * pitch;
        let d1 = model.conditional_density(DetectorId::D1, y)?;
        let d2 = model.conditional_density(DetectorId::D2, y)?;
        // Fringe-phase region: where D1 outshines the average.
        let region = if d1 > 0.5 * (d1 + d2) { 0 } else { 1 };
        for outcome in 0..2 {
            let det = detector_for_idler_outcome(idler_basis, outcome);
            let mass = g.detector_probability(det)
                * model.conditional_density(det, y)?
                * pitch;
            joint[region][outcome] += mass;
        }
    }
    let total: f64 = joint.iter().flatten().sum();
    if !(total > 0.0) {
        return Err(Error::Domain("empty wave joint distribution".into()));
    }
    for row in joint.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(joint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ExperimentGeometry;

    const TOL: f64 = 1e-12;

    fn amp(re: f64, im: f64) -> Amplitude {
        Amplitude::new(re, im)
    }

    fn close(a: Amplitude, b: Amplitude) -> bool {
        (a - b).norm() < TOL
    }

    fn random_state(rng: &mut ChaCha8Rng) -> TwoQubitState {
        loop {
            let mut amplitudes = [Amplitude::new(0.0, 0.0); 4];
            for a in amplitudes.iter_mut() {
                let re = (rng.next_u64() >> 11) as f64 * (2.0 / 9007199254740992.0) - 1.0;
                let im = (rng.next_u64() >> 11) as f64 * (2.0 / 9007199254740992.0) - 1.0;
                *a = Amplitude::new(re, im);
            }
            let n = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            if n > 1e-3 {
                for a in amplitudes.iter_mut() {
                    *a /= n;
                }
                return TwoQubitState { amplitudes };
            }
        }
    }

    #[test]
    fn cnot_reference_points() {
        let bell = TwoQubitState::bell_pair();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(bell.amplitudes[0], amp(s, 0.0)));
        assert!(close(bell.amplitudes[1], amp(0.0, 0.0)));
        assert!(close(bell.amplitudes[2], amp(0.0, 0.0)));
        assert!(close(bell.amplitudes[3], amp(s, 0.0)));

        let zz = TwoQubitState::product(&QubitState::zero(), &QubitState::zero());
        assert_eq!(apply_cnot(&zz).unwrap(), zz);

        let oz = TwoQubitState::product(&QubitState::one(), &QubitState::zero());
        let oo = TwoQubitState::product(&QubitState::one(), &QubitState::one());
        assert_eq!(apply_cnot(&oz).unwrap(), oo);
    }

    #[test]
    fn cnot_rejects_unnormalized_states() {
        let bad = TwoQubitState {
            amplitudes: [amp(1.0, 0.0), amp(1.0, 0.0), amp(0.0, 0.0), amp(0.0, 0.0)],
        };
        assert!(matches!(apply_cnot(&bad), Err(Error::Norm { .. })));
    }

    #[test]
    fn diagonal_rewrite_of_the_bell_pair() {
        let coeffs = rewrite_in_diagonal(&TwoQubitState::bell_pair()).unwrap();
        // (1/2, 1/2, 1/2, -1/2) over {0+, 0-, 1+, 1-}.
        assert!(close(coeffs.amplitudes[0], amp(0.5, 0.0)));
        assert!(close(coeffs.amplitudes[1], amp(0.5, 0.0)));
        assert!(close(coeffs.amplitudes[2], amp(0.5, 0.0)));
        assert!(close(coeffs.amplitudes[3], amp(-0.5, 0.0)));
    }

    #[test]
    fn diagonal_rewrite_fixes_basis_elements_and_involutes() {
        // |0> (x) |+> is the first diagonal-basis element.
        let zp = TwoQubitState::product(&QubitState::zero(), &QubitState::plus());
        let coeffs = rewrite_in_diagonal(&zp).unwrap();
        assert!(close(coeffs.amplitudes[0], amp(1.0, 0.0)));
        for k in 1..4 {
            assert!(close(coeffs.amplitudes[k], amp(0.0, 0.0)));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let s = random_state(&mut rng);
            let twice = rewrite_in_diagonal(&rewrite_in_diagonal(&s).unwrap()).unwrap();
            for k in 0..4 {
                assert!(close(twice.amplitudes[k], s.amplitudes[k]));
            }
        }
    }

    #[test]
    fn bell_measurements_reference_points() {
        let bell = TwoQubitState::bell_pair();
        // Idler in the diagonal basis: equal odds, signal left in |+->.
        for outcome in 0..2 {
            let (p, collapsed) = project(&bell, Slot::Idler, Basis::Diagonal, outcome).unwrap();
            assert!((p - 0.5).abs() < TOL);
            let expected_signal = if outcome == 0 {
                QubitState::plus()
            } else {
                QubitState::minus()
            };
            let expected =
                TwoQubitState::product(&expected_signal, &basis_vector(Basis::Diagonal, outcome));
            assert!(collapsed.amplitudes.iter().zip(&expected.amplitudes).all(
                |(a, b)| (a - b).norm() < 1e-12
            ));
        }
        // Idler in the computational basis: signal collapses to the match.
        for outcome in 0..2 {
            let (p, collapsed) =
                project(&bell, Slot::Idler, Basis::Computational, outcome).unwrap();
            assert!((p - 0.5).abs() < TOL);
            let m = project(&collapsed, Slot::Signal, Basis::Computational, outcome)
                .unwrap()
                .0;
            assert!((m - 1.0).abs() < TOL);
        }
        // |00>: signal yields 0 with certainty.
        let zz = TwoQubitState::product(&QubitState::zero(), &QubitState::zero());
        let (p, _) = project(&zz, Slot::Signal, Basis::Computational, 0).unwrap();
        assert!((p - 1.0).abs() < TOL);
    }

    #[test]
    fn measure_collapses_to_normalized_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let s = random_state(&mut rng);
            for slot in [Slot::Signal, Slot::Idler] {
                for basis in [Basis::Computational, Basis::Diagonal] {
                    let m = measure(&s, slot, basis, &mut rng).unwrap();
                    assert!((m.collapsed.norm_sq() - 1.0).abs() < 1e-12);
                    assert!(m.probability > 0.0 && m.probability <= 1.0 + 1e-12);
                    let (p0, _) = project(&s, slot, basis, 0).unwrap();
                    let (p1, _) = project(&s, slot, basis, 1).unwrap();
                    assert!((p0 + p1 - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn partial_trace_reference_points() {
        let rho = partial_trace_idler(&TwoQubitState::bell_pair());
        assert!(rho.max_abs_diff(&DensityMatrix::maximally_mixed()) < TOL);

        // Product state: the reduced state is the pure signal projector.
        let psi = QubitState::new([amp(0.6, 0.0), amp(0.0, 0.8)]).unwrap();
        let phi = QubitState::new([amp(0.28, -0.96), amp(0.0, 0.0)]).unwrap();
        let rho = partial_trace_idler(&TwoQubitState::product(&psi, &phi));
        for r in 0..2 {
            for c in 0..2 {
                let expected = psi.amplitudes[r] * psi.amplitudes[c].conj();
                assert!(close(rho.elements[r][c], expected));
            }
        }
    }

    #[test]
    fn partial_trace_properties_hold_for_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let rho = partial_trace_idler(&random_state(&mut rng));
            assert!((rho.trace().re - 1.0).abs() < 1e-12);
            assert!(rho.trace().im.abs() < 1e-12);
            assert!(rho.hermiticity_residual() < 1e-12);
            assert!(rho.min_eigenvalue() >= -1e-12);
        }
    }

    #[test]
    fn measurement_order_cannot_matter() {
        let bell = TwoQubitState::bell_pair();
        for idler_basis in [Basis::Computational, Basis::Diagonal] {
            let a =
                joint_distribution_ordered(&bell, Basis::Diagonal, idler_basis, Slot::Signal)
                    .unwrap();
            let b = joint_distribution_ordered(&bell, Basis::Diagonal, idler_basis, Slot::Idler)
                .unwrap();
            for s in 0..2 {
                for i in 0..2 {
                    assert!((a[s][i] - b[s][i]).abs() < TOL);
                    assert!((a[s][i] - analytic_joint(idler_basis)[s][i]).abs() < TOL);
                }
            }
        }
    }

    #[test]
    fn sampled_tables_follow_the_born_rule() {
        let n = 20_000u64;
        let sigma = |p: f64| (p * (1.0 - p) / n as f64).sqrt();
        for idler_basis in [Basis::Computational, Basis::Diagonal] {
            let table = correlation_table(n, idler_basis, 99);
            let freq = table.frequencies();
            let expected = analytic_joint(idler_basis);
            for s in 0..2 {
                for i in 0..2 {
                    let p = expected[s][i];
                    if p == 0.0 {
                        assert_eq!(table.counts[s][i], 0, "impossible cell was sampled");
                    } else {
                        assert!(
                            (freq[s][i] - p).abs() < 3.0 * sigma(p),
                            "cell ({s},{i}): {} vs {p}",
                            freq[s][i]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn signal_marginal_ignores_idler_basis() {
        // No-signalling at the qubit level.
        for idler_basis in [Basis::Computational, Basis::Diagonal] {
            let joint = analytic_joint(idler_basis);
            let marginal = [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1]];
            assert!((marginal[0] - 0.5).abs() < TOL);
            assert!((marginal[1] - 0.5).abs() < TOL);
        }
    }

    #[test]
    fn superposition_weights_match_across_models() {
        // D1 collapses the wave to i*psi1 - psi2, the + outcome collapses
        // the qubit to (|0> + |1>)/sqrt(2): both are equal-weight
        // superpositions of the two path states.
        let (p, collapsed) =
            project(&TwoQubitState::bell_pair(), Slot::Idler, Basis::Diagonal, 0).unwrap();
        assert!(p > 0.0);
        let w0 = collapsed.amplitude(0, 0).norm_sqr() + collapsed.amplitude(0, 1).norm_sqr();
        let w1 = collapsed.amplitude(1, 0).norm_sqr() + collapsed.amplitude(1, 1).norm_sqr();
        assert!((w0 - w1).abs() < TOL);
        // Wave side: |i| = |-1| for the D1 combination's branch weights.
        assert!((Amplitude::i().norm() - Amplitude::new(-1.0, 0.0).norm()).abs() < TOL);
    }

    #[test]
    fn wave_covariances_mirror_the_qubit_tables() {
        let model = WaveModel::new(ExperimentGeometry::default()).unwrap();

        // Eraser arm vs diagonal basis: same sign structure.
        let qubit = qubit_covariance_table(Basis::Diagonal);
        let wave = covariance_table(wave_joint_distribution(&model, Basis::Diagonal).unwrap());
        for s in 0..2 {
            for i in 0..2 {
                assert_eq!(
                    wave[s][i].signum(),
                    qubit[s][i].signum(),
                    "sign mismatch at ({s},{i}): wave {wave:?} qubit {qubit:?}"
                );
                assert!(wave[s][i].abs() > 0.05, "wave correlation washed out");
            }
        }

        // Which-path arm vs computational basis: both uncorrelated.
        let qubit = qubit_covariance_table(Basis::Computational);
        let wave =
            covariance_table(wave_joint_distribution(&model, Basis::Computational).unwrap());
        for s in 0..2 {
            for i in 0..2 {
                assert!(qubit[s][i].abs() < TOL);
                assert!(
                    wave[s][i].abs() < 0.02,
                    "spurious which-path correlation: {wave:?}"
                );
            }
        }
    }
}
