//! The moving basis `|Ψₙ(t)⟩ = exp(−iH_j t)|n⟩` generated by a PST or
//! weak-coupling chain, amplitudes of a state in that frame, the exact
//! rank-1 exponential used for the LEO kick, and a numerical check of the
//! one-component (P-Q partitioned) memory-kernel equation.

use nalgebra::{DMatrix, DVector};

use crate::control::PulseShape;
use crate::engine;
use crate::lattice::{CouplingProfile, HoppingMatrix, SpectralDecomposition, State};
use crate::{Error, Result, C64};

/// Moving basis generated by `H_j`; the tracked state is `|Ψ₁(t)⟩`.
#[derive(Debug, Clone)]
pub struct LeoBasis {
    hopping: HoppingMatrix,
    generator: SpectralDecomposition,
    /// `U[0, k]`: overlap of site 1 with each eigenvector.
    first_row: Vec<f64>,
}

impl LeoBasis {
    pub fn new(profile: &CouplingProfile, n: usize) -> Result<Self> {
        Self::from_hopping(HoppingMatrix::from_profile(profile, n)?)
    }

    pub fn from_hopping(hopping: HoppingMatrix) -> Result<Self> {
        let generator = SpectralDecomposition::new(&hopping)?;
        let first_row = generator.eigenvectors().row(0).iter().copied().collect();
        Ok(LeoBasis {
            hopping,
            generator,
            first_row,
        })
    }

    pub fn n(&self) -> usize {
        self.generator.n()
    }

    pub fn generator(&self) -> &SpectralDecomposition {
        &self.generator
    }

    pub fn hopping(&self) -> &HoppingMatrix {
        &self.hopping
    }

    /// `|Ψ₁(t)⟩`.
    pub fn basis_state(&self, t: f64) -> State {
        let mut out = State::zeros(self.n());
        self.basis_state_into(t, &mut out);
        out
    }

    /// Writes `|Ψ₁(t)⟩` into `out` without allocating.
    pub fn basis_state_into(&self, t: f64, out: &mut State) {
        let u = self.generator.eigenvectors();
        out.fill(C64::new(0.0, 0.0));
        for (k, (&lambda, &w)) in self.generator.eigenvalues().iter().zip(&self.first_row).enumerate() {
            let c = C64::from_polar(w, -lambda * t);
            for (o, &a) in out.iter_mut().zip(u.column(k).iter()) {
                *o += c * a;
            }
        }
    }

    /// `|Ψ_index(t)⟩` for a 1-based site index.
    pub fn moving_state(&self, t: f64, index: usize) -> Result<State> {
        let n = self.n();
        if index == 0 || index > n {
            return Err(Error::OutOfRange(format!("basis index {index} outside 1..={n}")));
        }
        self.generator.propagate(t, &crate::lattice::site_state(n, index))
    }

    /// `aₙ(t) = ⟨Ψₙ(t)|ψ⟩`, obtained as `V(−t)ψ`.
    pub fn frame_amplitudes(&self, t: f64, psi: &State) -> Result<FrameAmplitudes> {
        check_normalized(psi, 1e-9)?;
        let a = self.generator.propagate(-t, psi)?;
        Ok(FrameAmplitudes { t, a })
    }

    /// `1 − |a₁(t)|²`, clamped to `[0, 1]`.
    pub fn leakage(&self, t: f64, psi: &State) -> Result<f64> {
        check_normalized(psi, 1e-9)?;
        if psi.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: psi.len(),
            });
        }
        Ok(leakage_from_overlap(self.basis_state(t).dotc(psi)))
    }
}

pub(crate) fn leakage_from_overlap(a1: C64) -> f64 {
    (1.0 - a1.norm_sqr()).clamp(0.0, 1.0)
}

fn check_normalized(psi: &State, tol: f64) -> Result<()> {
    let drift = (psi.norm() - 1.0).abs();
    if drift > tol {
        return Err(Error::Contract(format!("state norm off by {drift:.3e}")));
    }
    Ok(())
}

/// Amplitudes of a state in the moving basis at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAmplitudes {
    pub t: f64,
    pub a: State,
}

impl FrameAmplitudes {
    pub fn total_population(&self) -> f64 {
        self.a.norm_squared()
    }

    /// `a₁ = P(t)`.
    pub fn tracked(&self) -> C64 {
        self.a[0]
    }
}

pub fn basis_state(b: &LeoBasis, t: f64) -> State {
    b.basis_state(t)
}

pub fn frame_amplitudes(b: &LeoBasis, t: f64, psi: &State) -> Result<FrameAmplitudes> {
    b.frame_amplitudes(t, psi)
}

pub fn leakage(b: &LeoBasis, t: f64, psi: &State) -> Result<f64> {
    b.leakage(t, psi)
}

/// `exp(−iθ|φ⟩⟨φ|) ψ = ψ + (e^{−iθ} − 1) φ ⟨φ|ψ⟩` for unit `φ`.
pub fn apply_rank1_exp(psi: &State, phi: &State, theta: f64) -> Result<State> {
    if psi.len() != phi.len() {
        return Err(Error::DimensionMismatch {
            expected: phi.len(),
            got: psi.len(),
        });
    }
    let norm = phi.norm();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::Contract(format!("projector vector has norm {norm}, expected 1")));
    }
    let mut out = psi.clone();
    rank1_exp_in_place(&mut out, phi, theta);
    Ok(out)
}

/// Unchecked in-place variant for the stepper's inner loop.
pub(crate) fn rank1_exp_in_place(psi: &mut State, phi: &State, theta: f64) {
    let overlap = phi.dotc(psi);
    let factor = (C64::from_polar(1.0, -theta) - 1.0) * overlap;
    psi.axpy(factor, phi, C64::new(1.0, 0.0));
}

/// `V†(t)(H₀ − H_j)V(t) + c(t)|1⟩⟨1|`, the Hamiltonian seen by the frame
/// amplitudes: `i ȧ = H_eff a`.
pub fn effective_hamiltonian(
    b: &LeoBasis,
    h0: &HoppingMatrix,
    pulse: &PulseShape,
    t: f64,
) -> Result<DMatrix<C64>> {
    let n = b.n();
    if h0.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: h0.n() });
    }
    let diff = (h0.matrix() - b.hopping().matrix()).map(|x| C64::new(x, 0.0));
    let v = b.generator().unitary(t);
    let mut heff = v.adjoint() * diff * v;
    heff[(0, 0)] += pulse.amplitude(t);
    Ok(heff)
}

/// Largest chain handled by [`pq_kernel_check`].
pub const KERNEL_MAX_N: usize = 8;
/// Fewest grid steps accepted by [`pq_kernel_check`].
pub const KERNEL_MIN_STEPS: usize = 1000;

/// Partition blocks of the effective Hamiltonian on a time grid, together
/// with both sides of the one-component equation
/// `ṗ(t) = −∫₀ᵗ R(t) G(t,s) W(s) e^{i∫ₛᵗ h} p(s) ds`.
#[derive(Debug, Clone)]
pub struct MemoryKernelProbe {
    pub grid: Vec<f64>,
    /// `h(t)`: the (1,1) element, real for a Hermitian generator.
    pub h_diag: Vec<f64>,
    pub r_row: Vec<DVector<C64>>,
    pub w_col: Vec<DVector<C64>>,
    pub d_block: Vec<DMatrix<C64>>,
    /// `p(t) = e^{i∫₀ᵗ h} P(t)` with `P = a₁`.
    pub p_series: Vec<C64>,
    /// Central finite difference of `p` from the full evolution.
    pub pdot_fd: Vec<C64>,
    /// Trapezoid evaluation of the memory-kernel integral.
    pub pdot_kernel: Vec<C64>,
    /// Finite-difference half-width `δ = T/(50·steps)`.
    pub fd_step: f64,
    /// `max_k |pdot_fd − pdot_kernel|` over `t_k > 0`.
    pub kernel_residual: f64,
}

impl MemoryKernelProbe {
    /// Largest deviation of the reassembled block matrix from Hermitian.
    pub fn hermiticity_defect(&self) -> f64 {
        (0..self.grid.len())
            .map(|k| {
                let m = self.assemble(k);
                (&m - m.adjoint()).camax()
            })
            .fold(0.0, f64::max)
    }

    /// Reassembles `[[h, R], [W, D]]` at grid index `k`; `h` includes `c(t)`.
    pub fn assemble(&self, k: usize) -> DMatrix<C64> {
        let m = self.d_block[k].nrows() + 1;
        let mut out = DMatrix::zeros(m, m);
        out[(0, 0)] = C64::new(self.h_diag[k], 0.0);
        for i in 1..m {
            out[(0, i)] = self.r_row[k][i - 1];
            out[(i, 0)] = self.w_col[k][i - 1];
            for j in 1..m {
                out[(i, j)] = self.d_block[k][(i - 1, j - 1)];
            }
        }
        out
    }

    pub fn max_pdot(&self) -> f64 {
        self.pdot_fd.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Builds the P-Q blocks on a uniform grid over `[0, T]` and compares the
/// memory-kernel integral with the finite-difference derivative of `p(t)`
/// taken from the full evolution under `H₀ + c(t)|Ψ₁(t)⟩⟨Ψ₁(t)|`.
pub fn pq_kernel_check(
    b: &LeoBasis,
    h0: &HoppingMatrix,
    pulse: &PulseShape,
    total_time: f64,
    steps: usize,
) -> Result<MemoryKernelProbe> {
    let n = b.n();
    if n > KERNEL_MAX_N {
        return Err(Error::Contract(format!(
            "kernel check is O(steps²·n²); n = {n} exceeds the guard of {KERNEL_MAX_N}"
        )));
    }
    if steps < KERNEL_MIN_STEPS {
        return Err(Error::OutOfRange(format!(
            "kernel check needs at least {KERNEL_MIN_STEPS} steps, got {steps}"
        )));
    }
    if !(total_time > 0.0 && total_time.is_finite()) {
        return Err(Error::OutOfRange(format!("total time {total_time} must be positive")));
    }
    if h0.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: h0.n() });
    }
    pulse.validate()?;

    let dt = total_time / steps as f64;
    let grid: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let m = n - 1;

    let mut h_diag = Vec::with_capacity(steps + 1);
    let mut r_row = Vec::with_capacity(steps + 1);
    let mut w_col = Vec::with_capacity(steps + 1);
    let mut d_block = Vec::with_capacity(steps + 1);
    for &t in &grid {
        let heff = effective_hamiltonian(b, h0, pulse, t)?;
        h_diag.push(heff[(0, 0)].re);
        r_row.push(DVector::from_iterator(m, (1..n).map(|j| heff[(0, j)])));
        w_col.push(DVector::from_iterator(m, (1..n).map(|i| heff[(i, 0)])));
        d_block.push(heff.view((1, 1), (m, m)).into_owned());
    }

    // ∫₀ᵗ h: trapezoid on the smooth part, closed form for the pulse.
    let smooth: Vec<f64> = grid.iter().zip(&h_diag).map(|(&t, &h)| h - pulse.amplitude(t)).collect();
    let mut smooth_integral = vec![0.0; steps + 1];
    for k in 1..=steps {
        smooth_integral[k] = smooth_integral[k - 1] + 0.5 * dt * (smooth[k - 1] + smooth[k]);
    }
    let h_integral: Vec<f64> = grid
        .iter()
        .zip(&smooth_integral)
        .map(|(&t, &s)| s + pulse.phase_integral(t))
        .collect();

    let h0_spec = SpectralDecomposition::new(h0)?;
    let mut stepper = engine::Stepper::new(&h0_spec, Some(b), pulse);
    let fd_step = total_time / (50.0 * steps as f64);

    let tracked = |t: f64, psi: &State| b.basis_state(t).dotc(psi);

    let mut psi = crate::lattice::site_state(n, 1);
    let mut p_series = Vec::with_capacity(steps + 1);
    let mut pdot_fd = Vec::with_capacity(steps + 1);
    let fine_substeps = 8;
    for k in 0..=steps {
        let t = grid[k];
        if k > 0 {
            stepper.advance(&mut psi, grid[k - 1], t, dt / fine_substeps as f64)?;
        }
        let p_at = |tt: f64, state: &State, smooth_offset: f64| {
            let phase = smooth_integral[k] + smooth_offset + pulse.phase_integral(tt);
            C64::from_polar(1.0, phase) * tracked(tt, state)
        };
        p_series.push(C64::from_polar(1.0, h_integral[k]) * tracked(t, &psi));

        let central = |delta: f64, stepper: &mut engine::Stepper| -> Result<C64> {
            let mut fwd = psi.clone();
            stepper.advance(&mut fwd, t, t + delta, delta)?;
            let mut bwd = psi.clone();
            stepper.advance(&mut bwd, t, t - delta, delta)?;
            let plus = p_at(t + delta, &fwd, delta * smooth[k]);
            let minus = p_at(t - delta, &bwd, -delta * smooth[k]);
            Ok((plus - minus) / (2.0 * delta))
        };
        if k == 0 {
            // p is flat at t = 0 because Q(0) = 0; a one-sided stencil is not needed
            pdot_fd.push(C64::new(0.0, 0.0));
            continue;
        }
        let d1 = central(fd_step, &mut stepper)?;
        if k == steps / 2 {
            let d2 = central(2.0 * fd_step, &mut stepper)?;
            let spread = (d1 - d2).norm();
            if spread > 1e-6 * d1.norm().max(1.0) {
                return Err(Error::Numeric(format!(
                    "finite-difference derivative of p is ill-conditioned at t = {t}: \
                     δ and 2δ differ by {spread:.3e}"
                )));
            }
        }
        pdot_fd.push(d1);
    }

    // one-step Q-block propagators G(t_{j+1}, t_j)
    let q_steps: Vec<DMatrix<C64>> = (0..steps)
        .map(|j| ((&d_block[j] + &d_block[j + 1]) * C64::new(0.0, -0.5 * dt)).exp())
        .collect();

    let mut pdot_kernel = vec![C64::new(0.0, 0.0); steps + 1];
    let mut row = DVector::<C64>::zeros(m);
    for k in 1..=steps {
        // row_j = R(t_k) G(t_k, s_j), built from s_j = t_k downwards
        row.copy_from(&r_row[k]);
        let mut acc = C64::new(0.0, 0.0);
        for j in (0..=k).rev() {
            if j < k {
                row = q_steps[j].tr_mul(&row);
            }
            let weight = if j == 0 || j == k { 0.5 * dt } else { dt };
            let g = row.dot(&w_col[j]);
            let phase = C64::from_polar(1.0, h_integral[k] - h_integral[j]);
            let p_s = p_series[j];
            acc += weight * g * phase * p_s;
        }
        pdot_kernel[k] = -acc;
    }

    let kernel_residual = (1..=steps)
        .map(|k| (pdot_fd[k] - pdot_kernel[k]).norm())
        .fold(0.0, f64::max);

    Ok(MemoryKernelProbe {
        grid,
        h_diag,
        r_row,
        w_col,
        d_block,
        p_series,
        pdot_fd,
        pdot_kernel,
        fd_step,
        kernel_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::site_state;
    use rand::{rngs::StdRng, Rng, SeedableRng};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_state(n: usize, rng: &mut StdRng) -> State {
        let v = State::from_fn(n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let norm = v.norm();
        v / C64::new(norm, 0.0)
    }

    #[test]
    fn basis_state_examples() {
        let b = LeoBasis::new(&CouplingProfile::Pst, 10).unwrap();
        assert!((b.basis_state(0.0) - site_state(10, 1)).norm() < 1e-15);
        let end = b.basis_state(FRAC_PI_2);
        assert!((end[9].norm() - 1.0).abs() < 1e-8);
        assert!((end.norm() - 1.0).abs() < 1e-12);
        let via_propagate = b.moving_state(0.83, 1).unwrap();
        assert!((b.basis_state(0.83) - via_propagate).norm() < 1e-13);
    }

    #[test]
    fn moving_basis_stays_orthonormal() {
        let mut rng = StdRng::seed_from_u64(5);
        for n in [3, 7, 12] {
            let b = LeoBasis::new(&CouplingProfile::Pst, n).unwrap();
            let t = rng.gen_range(0.0..5.0);
            let states: Vec<State> = (1..=n).map(|i| b.moving_state(t, i).unwrap()).collect();
            for (i, a) in states.iter().enumerate() {
                for (j, c) in states.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((a.dotc(c) - C64::new(want, 0.0)).norm() < 1e-10);
                }
            }
        }
        assert!(LeoBasis::new(&CouplingProfile::Pst, 4).unwrap().moving_state(0.0, 5).is_err());
    }

    #[test]
    fn rank1_examples() {
        let mut rng = StdRng::seed_from_u64(9);
        let psi = random_state(6, &mut rng);
        let phi = site_state(6, 2);
        assert!((apply_rank1_exp(&psi, &phi, 0.0).unwrap() - &psi).norm() < 1e-15);

        let orth = site_state(6, 3);
        assert!((apply_rank1_exp(&orth, &phi, 1.3).unwrap() - &orth).norm() < 1e-15);

        let out = apply_rank1_exp(&phi, &phi, 0.7).unwrap();
        assert!((out - &phi * C64::from_polar(1.0, -0.7)).norm() < 1e-15);

        let bad = &phi * C64::new(2.0, 0.0);
        assert!(matches!(apply_rank1_exp(&psi, &bad, 1.0), Err(Error::Contract(_))));
    }

    /// exp(A) by scaling and squaring of a Taylor series.
    fn dense_exp(a: &DMatrix<C64>) -> DMatrix<C64> {
        let n = a.nrows();
        let norm = a.iter().map(|z| z.norm()).sum::<f64>();
        let squarings = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
        let scaled = a / C64::new(2f64.powi(squarings), 0.0);
        let mut term = DMatrix::<C64>::identity(n, n);
        let mut sum = term.clone();
        for k in 1..30 {
            term = &term * &scaled / C64::new(k as f64, 0.0);
            sum += &term;
        }
        for _ in 0..squarings {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn rank1_matches_dense_exponential() {
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..50 {
            let n = rng.gen_range(2..=16);
            let psi = random_state(n, &mut rng);
            let phi = random_state(n, &mut rng);
            let theta = rng.gen_range(-40.0..40.0);
            let gen = (&phi * phi.adjoint()) * C64::new(0.0, -theta);
            let want = dense_exp(&gen) * &psi;
            let got = apply_rank1_exp(&psi, &phi, theta).unwrap();
            assert!((got - want).camax() <= 1e-10);
        }
    }

    #[test]
    fn frame_amplitude_examples() {
        let b = LeoBasis::new(&CouplingProfile::Pst, 6).unwrap();
        let t = 0.4;
        let a = b.frame_amplitudes(t, &b.basis_state(t)).unwrap();
        assert!((a.a.clone() - site_state(6, 1)).norm() < 1e-10);
        let a = b.frame_amplitudes(0.0, &site_state(6, 2)).unwrap();
        assert!((a.a - site_state(6, 2)).norm() < 1e-15);

        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..20 {
            let psi = random_state(6, &mut rng);
            let a = b.frame_amplitudes(rng.gen_range(0.0..3.0), &psi).unwrap();
            assert!((a.total_population() - 1.0).abs() < 1e-9);
        }
        let unnormalized = site_state(6, 1) * C64::new(1.1, 0.0);
        assert!(b.frame_amplitudes(0.0, &unnormalized).is_err());
    }

    #[test]
    fn leakage_examples() {
        let b = LeoBasis::new(&CouplingProfile::Pst, 5).unwrap();
        let t = 0.9;
        assert!(b.leakage(t, &b.basis_state(t)).unwrap() < 1e-10);
        let orth = b.moving_state(t, 3).unwrap();
        assert!((b.leakage(t, &orth).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn effective_hamiltonian_examples() {
        let n = 5;
        let uni = HoppingMatrix::from_profile(&CouplingProfile::uniform(), n).unwrap();
        let pst = HoppingMatrix::from_profile(&CouplingProfile::Pst, n).unwrap();
        let b = LeoBasis::from_hopping(pst.clone()).unwrap();

        let zero = effective_hamiltonian(&b, &pst, &PulseShape::None, 0.7).unwrap();
        assert!(zero.camax() < 1e-12);

        let pulse = PulseShape::rectangular(40.0, PI / 20.0);
        let at0 = effective_hamiltonian(&b, &uni, &pulse, 0.0).unwrap();
        let mut want = (uni.matrix() - pst.matrix()).map(|x| C64::new(x, 0.0));
        want[(0, 0)] += 40.0;
        assert!((at0 - want).camax() < 1e-12);

        let t = 0.37;
        let heff = effective_hamiltonian(&b, &uni, &pulse, t).unwrap();
        assert!((&heff - heff.adjoint()).camax() < 1e-10);
        let psi1 = b.basis_state(t);
        let to_c = |m: &DMatrix<f64>| m.map(|x| C64::new(x, 0.0));
        let direct = psi1.dotc(&(to_c(uni.matrix()) * &psi1)) - psi1.dotc(&(to_c(pst.matrix()) * &psi1))
            + pulse.amplitude(t);
        assert!((heff[(0, 0)] - direct).norm() < 1e-12);

        let trace_want = (uni.matrix() - pst.matrix()).trace() + pulse.amplitude(t);
        assert!((heff.trace() - C64::new(trace_want, 0.0)).norm() < 1e-9);

        let wrong = HoppingMatrix::from_profile(&CouplingProfile::uniform(), 4).unwrap();
        assert!(effective_hamiltonian(&b, &wrong, &pulse, t).is_err());
    }

    #[test]
    fn kernel_guards() {
        let big = LeoBasis::new(&CouplingProfile::Pst, 9).unwrap();
        let h0 = HoppingMatrix::from_profile(&CouplingProfile::uniform(), 9).unwrap();
        assert!(pq_kernel_check(&big, &h0, &PulseShape::None, 0.5, 1000).is_err());
        let small = LeoBasis::new(&CouplingProfile::Pst, 3).unwrap();
        let h0 = HoppingMatrix::from_profile(&CouplingProfile::uniform(), 3).unwrap();
        assert!(pq_kernel_check(&small, &h0, &PulseShape::None, 0.5, 999).is_err());
    }

    #[test]
    fn kernel_reproduces_derivative_and_converges() {
        let b = LeoBasis::new(&CouplingProfile::Pst, 3).unwrap();
        let h0 = HoppingMatrix::from_profile(&CouplingProfile::uniform(), 3).unwrap();
        let coarse = pq_kernel_check(&b, &h0, &PulseShape::None, 0.5, 1000).unwrap();
        let fine = pq_kernel_check(&b, &h0, &PulseShape::None, 0.5, 2000).unwrap();
        assert!((coarse.p_series[0] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(coarse.kernel_residual <= 1e-3, "residual {}", coarse.kernel_residual);
        assert!(
            fine.kernel_residual * 2.0 <= coarse.kernel_residual,
            "{} -> {}",
            coarse.kernel_residual,
            fine.kernel_residual
        );
        assert!(coarse.hermiticity_defect() <= 1e-10);
    }

    #[test]
    fn pulse_suppresses_tracked_amplitude_drift() {
        let b = LeoBasis::new(&CouplingProfile::Pst, 4).unwrap();
        let h0 = HoppingMatrix::from_profile(&CouplingProfile::uniform(), 4).unwrap();
        let free = pq_kernel_check(&b, &h0, &PulseShape::None, 0.5, 1000).unwrap();
        let pulsed = pq_kernel_check(&b, &h0, &PulseShape::rectangular(40.0, PI / 20.0), 0.5, 1000).unwrap();
        assert!(
            5.0 * pulsed.max_pdot() <= free.max_pdot(),
            "pulsed {} free {}",
            pulsed.max_pdot(),
            free.max_pdot()
        );
        assert!(pulsed.kernel_residual <= 1e-2, "residual {}", pulsed.kernel_residual);
    }
}
