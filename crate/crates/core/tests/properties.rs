use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use proptest::prelude::*;

use aest::control::PulseShape;
use aest::engine::{evolve, fidelity, DtPolicy, EvolutionSpec};
use aest::frame::{apply_rank1_exp, effective_hamiltonian, LeoBasis};
use aest::lab::find_peaks;
use aest::lattice::{couplings, site_state, CouplingProfile, HoppingMatrix, SpectralDecomposition, State};

fn unit(parts: &[(f64, f64)]) -> State {
    let v = State::from_iterator(parts.len(), parts.iter().map(|&(a, b)| C64::new(a, b)));
    let n = v.norm();
    v / C64::new(n, 0.0)
}

fn state(n: usize) -> impl Strategy<Value = State> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n)
        .prop_filter("non-zero", |p| p.iter().any(|&(a, b)| a.abs() + b.abs() > 1e-3))
        .prop_map(|p| unit(&p))
}

fn profile() -> impl Strategy<Value = CouplingProfile> {
    prop_oneof![
        (0.1..3.0f64).prop_map(|j| CouplingProfile::Uniform { j }),
        Just(CouplingProfile::Pst),
        (0.01..0.99f64).prop_map(CouplingProfile::weak_ends),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pst_chain_mirrors_at_half_pi(n in 2usize..=64) {
        let sd = SpectralDecomposition::new(&HoppingMatrix::from_profile(&CouplingProfile::Pst, n).unwrap()).unwrap();
        let out = sd.propagate(PI / 2.0, &site_state(n, 1)).unwrap();
        prop_assert!((fidelity(&out, n) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pst_spectrum_is_equally_spaced(n in 2usize..=64) {
        let sd = SpectralDecomposition::new(&HoppingMatrix::from_profile(&CouplingProfile::Pst, n).unwrap()).unwrap();
        for (k, &lam) in sd.eigenvalues().iter().enumerate() {
            let expected = 2.0 * k as f64 - (n - 1) as f64;
            prop_assert!((lam - expected).abs() < 1e-9, "n={} k={} {} vs {}", n, k, lam, expected);
        }
    }

    #[test]
    fn effective_hamiltonian_trace(
        j0 in 0.02..0.9f64,
        use_pst in any::<bool>(),
        n in 3usize..12,
        t in 0.0..5.0f64,
        tau in 0.05..0.5f64,
    ) {
        let generator = if use_pst { CouplingProfile::Pst } else { CouplingProfile::weak_ends(j0) };
        let b = LeoBasis::new(&generator, n).unwrap();
        let h0 = HoppingMatrix::from_profile(&CouplingProfile::uniform(), n).unwrap();
        let pulse = PulseShape::sine(30.0, PI / tau);
        let heff = effective_hamiltonian(&b, &h0, &pulse, t).unwrap();
        let base = (h0.matrix() - b.hopping().matrix()).trace();
        prop_assert!((heff.trace().re - base - pulse.amplitude(t)).abs() < 1e-9);
        prop_assert!(heff.trace().im.abs() < 1e-9);
        prop_assert!((&heff - heff.adjoint()).norm() < 1e-10);
    }

    #[test]
    fn hopping_is_symmetric_tridiagonal(p in profile(), n in 3usize..40) {
        let h = HoppingMatrix::from_profile(&p, n).unwrap();
        let bonds = couplings(&p, n).unwrap();
        prop_assert_eq!(bonds.len(), n - 1);
        let m = h.matrix();
        for i in 0..n {
            for j in 0..n {
                let expected = if j == i + 1 { bonds[i] } else if i == j + 1 { bonds[j] } else { 0.0 };
                prop_assert_eq!(m[(i, j)], expected);
            }
        }
        for k in 0..bonds.len() {
            prop_assert!((bonds[k] - bonds[n - 2 - k]).abs() < 1e-12);
        }
    }

    #[test]
    fn propagation_composes_and_preserves_norm(
        p in profile(),
        v in state(9),
        t1 in -5.0..5.0f64,
        t2 in -5.0..5.0f64,
    ) {
        let sd = SpectralDecomposition::new(&HoppingMatrix::from_profile(&p, 9).unwrap()).unwrap();
        let a = sd.propagate(t2, &sd.propagate(t1, &v).unwrap()).unwrap();
        let b = sd.propagate(t1 + t2, &v).unwrap();
        prop_assert!((&a - &b).norm() < 1e-11);
        prop_assert!((b.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank1_exponential_is_invertible_and_unitary(
        psi in state(12),
        phi in state(12),
        theta in -100.0..100.0f64,
    ) {
        let fwd = apply_rank1_exp(&psi, &phi, theta).unwrap();
        prop_assert!((fwd.norm() - 1.0).abs() < 1e-12);
        let back = apply_rank1_exp(&fwd, &phi, -theta).unwrap();
        prop_assert!((&back - &psi).norm() < 1e-12);
        let period = apply_rank1_exp(&psi, &phi, 2.0 * PI).unwrap();
        prop_assert!((&period - &psi).norm() < 1e-12);
    }

    #[test]
    fn fidelity_ignores_global_phase(v in state(6), phase in -PI..PI, target in 1usize..=6) {
        let f = fidelity(&v, target);
        prop_assert!((0.0..=1.0).contains(&f));
        let w = &v * C64::from_polar(1.0, phase);
        prop_assert!((fidelity(&w, target) - f).abs() < 1e-15);
    }

    #[test]
    fn frame_populations_sum_to_one(v in state(7), t in 0.0..3.0f64) {
        let b = LeoBasis::new(&CouplingProfile::Pst, 7).unwrap();
        let a = b.frame_amplitudes(t, &v).unwrap();
        prop_assert!((a.total_population() - 1.0).abs() < 1e-9);
        let leak = b.leakage(t, &v).unwrap();
        prop_assert!((leak + a.tracked().norm_sqr() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pulsed_evolution_stays_normalized(
        n in 3usize..12,
        intensity in 5.0..80.0f64,
        tau in 0.02..0.4f64,
        t in 0.1..1.6f64,
        shape in 0usize..3,
    ) {
        let pulse = match shape {
            0 => PulseShape::rectangular(intensity, tau),
            1 => PulseShape::sine(intensity, PI / tau),
            _ => PulseShape::bang_bang(intensity, tau),
        };
        let spec = EvolutionSpec {
            n,
            channel: CouplingProfile::uniform(),
            leo_generator: Some(CouplingProfile::Pst),
            pulse,
            total_time: t,
            dt_policy: DtPolicy { substeps_per_pulse_segment: 8, ..DtPolicy::default() },
            sample_stride: 3,
        };
        let tr = evolve(&spec).unwrap();
        prop_assert!(tr.max_norm_drift() <= 1e-8);
        prop_assert_eq!(tr.times.len(), spec.sample_count());
        prop_assert_eq!(*tr.times.last().unwrap(), t);
        prop_assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(tr.fidelity.iter().all(|f| (0.0..=1.0).contains(f)));
    }

    #[test]
    fn integration_grid_contains_every_breakpoint(
        intensity in 5.0..80.0f64,
        tau in 0.02..0.4f64,
        t in 0.1..3.0f64,
        shape in 0usize..3,
    ) {
        let pulse = match shape {
            0 => PulseShape::rectangular(intensity, tau),
            1 => PulseShape::sine(intensity, PI / tau),
            _ => PulseShape::bang_bang(intensity, tau),
        };
        let spec = EvolutionSpec {
            n: 4,
            channel: CouplingProfile::uniform(),
            leo_generator: Some(CouplingProfile::Pst),
            pulse,
            total_time: t,
            dt_policy: DtPolicy::default(),
            sample_stride: 1,
        };
        let segs = spec.segments();
        prop_assert_eq!(segs.first().unwrap().start, 0.0);
        prop_assert_eq!(segs.last().unwrap().end, t);
        for w in segs.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
        }
        for bp in pulse.breakpoints(0.0, t) {
            prop_assert!(segs.iter().any(|s| s.end == bp));
        }
        for s in &segs {
            prop_assert!((s.end - s.start) / s.substeps as f64 <= spec.dt_policy.max_step * (1.0 + 1e-9));
        }
    }

    #[test]
    fn peaks_are_strict_local_maxima(ys in prop::collection::vec(0.0..1.0f64, 3..80)) {
        let data: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| (i as f64 * 0.1, y)).collect();
        for p in find_peaks(&data) {
            let i = p.index;
            prop_assert!(i > 0 && i + 1 < data.len());
            prop_assert!(data[i - 1].1 < data[i].1);
            let mut j = i;
            while data[j + 1].1 == data[i].1 {
                j += 1;
            }
            prop_assert!(data[j + 1].1 < data[i].1);
            prop_assert!(p.value >= data[i - 1].0 && p.value <= data[j + 1].0);
            prop_assert!(p.fidelity >= data[i].1);
        }
    }
}
