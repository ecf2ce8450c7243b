//! Control waveforms `c(t)` for the leakage-elimination pulse, their exact
//! phase integrals `Φ(t) = ∫₀ᵗ c`, and the decoupling condition
//! `∫₀^τ exp(−iΦ(s)) ds = 0` that the pulse parameters must satisfy.

use std::f64::consts::{FRAC_PI_4, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

/// Default relative tolerance for [`ConditionReport::satisfied`].
pub const DEFAULT_CONDITION_TOL: f64 = 1e-6;

/// Sign pattern of bang-bang kicks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KickParity {
    /// `+gain·I` in odd intervals, `−gain·I` in even ones (first kick negative).
    #[default]
    OddPositive,
    /// Opposite pattern, matching the rectangular pulse's leading sign.
    EvenPositive,
}

impl KickParity {
    fn sign(self, interval: u64) -> f64 {
        let odd = interval % 2 == 1;
        match (self, odd) {
            (KickParity::OddPositive, true) | (KickParity::EvenPositive, false) => 1.0,
            _ => -1.0,
        }
    }
}

fn default_duty() -> f64 {
    1.0 / 50.0
}

fn default_gain() -> f64 {
    50.0
}

/// Parametric control waveform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PulseShape {
    None,
    /// `+I` on `[nτ, (n+1)τ)` for even `n`, `−I` for odd `n`.
    Rectangular { intensity: f64, half_period: f64 },
    /// `I sin(ωt)`.
    Sine { intensity: f64, omega: f64 },
    /// Narrow kicks of height `gain·I` and width `duty·τ` at the start of
    /// every interval `[nτ, (n+1)τ)`, zero elsewhere.
    BangBang {
        intensity: f64,
        half_period: f64,
        #[serde(default = "default_duty")]
        duty: f64,
        #[serde(default = "default_gain")]
        gain: f64,
        #[serde(default)]
        parity: KickParity,
    },
}

impl PulseShape {
    pub fn rectangular(intensity: f64, half_period: f64) -> Self {
        PulseShape::Rectangular { intensity, half_period }
    }

    pub fn sine(intensity: f64, omega: f64) -> Self {
        PulseShape::Sine { intensity, omega }
    }

    /// Bang-bang train with the default duty (1/50) and gain (50).
    pub fn bang_bang(intensity: f64, half_period: f64) -> Self {
        PulseShape::BangBang {
            intensity,
            half_period,
            duty: default_duty(),
            gain: default_gain(),
            parity: KickParity::OddPositive,
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, PulseShape::None)
    }

    pub fn label(&self) -> &'static str {
        match self {
            PulseShape::None => "none",
            PulseShape::Rectangular { .. } => "rect",
            PulseShape::Sine { .. } => "sine",
            PulseShape::BangBang { .. } => "bb",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidPulse(format!("{name} = {v} must be positive and finite")))
            }
        };
        match *self {
            PulseShape::None => Ok(()),
            PulseShape::Rectangular { intensity, half_period } => {
                positive("intensity", intensity)?;
                positive("half_period", half_period)
            }
            PulseShape::Sine { intensity, omega } => {
                positive("intensity", intensity)?;
                positive("omega", omega)
            }
            PulseShape::BangBang {
                intensity,
                half_period,
                duty,
                gain,
                ..
            } => {
                positive("intensity", intensity)?;
                positive("half_period", half_period)?;
                if !(duty > 0.0 && duty <= 1.0) {
                    return Err(Error::InvalidPulse(format!("duty = {duty} must lie in (0, 1]")));
                }
                if !(gain >= 1.0 && gain.is_finite()) {
                    return Err(Error::InvalidPulse(format!("gain = {gain} must be at least 1")));
                }
                Ok(())
            }
        }
    }

    /// Length of one half-period `τ`. For the sine this is `π/ω`.
    pub fn half_period(&self) -> Option<f64> {
        match *self {
            PulseShape::None => None,
            PulseShape::Rectangular { half_period, .. } | PulseShape::BangBang { half_period, .. } => {
                Some(half_period)
            }
            PulseShape::Sine { omega, .. } => Some(PI / omega),
        }
    }

    /// Signed area of a single bang-bang kick; `None` for other shapes.
    pub fn kick_area(&self) -> Option<f64> {
        match *self {
            PulseShape::BangBang {
                intensity,
                half_period,
                duty,
                gain,
                ..
            } => Some(gain * intensity * duty * half_period),
            _ => None,
        }
    }

    /// Same shape with a new half-period (for the sine, `ω = π/τ`).
    pub fn with_half_period(&self, tau: f64) -> Self {
        match *self {
            PulseShape::None => PulseShape::None,
            PulseShape::Rectangular { intensity, .. } => PulseShape::rectangular(intensity, tau),
            PulseShape::Sine { intensity, .. } => PulseShape::sine(intensity, PI / tau),
            PulseShape::BangBang {
                intensity,
                duty,
                gain,
                parity,
                ..
            } => PulseShape::BangBang {
                intensity,
                half_period: tau,
                duty,
                gain,
                parity,
            },
        }
    }

    pub fn with_intensity(&self, intensity: f64) -> Self {
        let mut out = *self;
        match &mut out {
            PulseShape::None => {}
            PulseShape::Rectangular { intensity: i, .. }
            | PulseShape::Sine { intensity: i, .. }
            | PulseShape::BangBang { intensity: i, .. } => *i = intensity,
        }
        out
    }

    /// `c(t)`.
    pub fn amplitude(&self, t: f64) -> f64 {
        match *self {
            PulseShape::None => 0.0,
            PulseShape::Rectangular { intensity, half_period } => {
                let (n, _) = split_interval(t, half_period);
                if n % 2 == 0 {
                    intensity
                } else {
                    -intensity
                }
            }
            PulseShape::Sine { intensity, omega } => intensity * (omega * t).sin(),
            PulseShape::BangBang {
                intensity,
                half_period,
                duty,
                gain,
                parity,
            } => {
                let (n, r) = split_interval(t, half_period);
                if r < duty * half_period {
                    parity.sign(n) * gain * intensity
                } else {
                    0.0
                }
            }
        }
    }

    /// `Φ(t) = ∫₀ᵗ c(s) ds`, in closed form.
    pub fn phase_integral(&self, t: f64) -> f64 {
        match *self {
            PulseShape::None => 0.0,
            PulseShape::Rectangular { intensity, half_period } => {
                let (n, r) = split_interval(t, half_period);
                if n % 2 == 0 {
                    intensity * r
                } else {
                    intensity * half_period - intensity * r
                }
            }
            PulseShape::Sine { intensity, omega } => intensity / omega * (1.0 - (omega * t).cos()),
            PulseShape::BangBang {
                intensity,
                half_period,
                duty,
                gain,
                parity,
            } => {
                let (n, r) = split_interval(t, half_period);
                let height = gain * intensity;
                let area = height * duty * half_period;
                // completed kicks alternate in sign, so they cancel pairwise
                let completed = if n % 2 == 1 { parity.sign(0) * area } else { 0.0 };
                completed + parity.sign(n) * height * r.min(duty * half_period)
            }
        }
    }

    /// Switching instants of `c(t)` strictly inside `(t0, t1)`, ascending.
    ///
    /// Every breakpoint is built as `k·τ` or `(k + duty)·τ` so the same
    /// instant is bit-identical wherever it is requested.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let (tau, duty) = match *self {
            PulseShape::None | PulseShape::Sine { .. } => return Vec::new(),
            PulseShape::Rectangular { half_period, .. } => (half_period, None),
            PulseShape::BangBang { half_period, duty, .. } => {
                (half_period, if duty < 1.0 { Some(duty) } else { None })
            }
        };
        if !(t1 > t0) {
            return Vec::new();
        }
        let eps = 1e-12 * t1.abs().max(tau);
        let first = ((t0 / tau).floor() as i64 - 1).max(0) as u64;
        let last = (t1 / tau).ceil() as u64 + 1;
        let mut out = Vec::new();
        for k in first..=last {
            let kf = k as f64;
            let mut push = |b: f64| {
                if b > t0 + eps && b < t1 - eps {
                    out.push(b);
                }
            };
            push(kf * tau);
            if let Some(d) = duty {
                push((kf + d) * tau);
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

/// Interval index `n = ⌊t/τ⌋` and offset `t − nτ ∈ [0, τ)`.
fn split_interval(t: f64, tau: f64) -> (u64, f64) {
    let n = (t / tau).floor().max(0.0);
    let r = (t - n * tau).clamp(0.0, tau);
    (n as u64, r)
}

/// Outcome of evaluating `∫₀^w exp(−iΦ(s)) ds` for a pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionReport {
    #[serde(serialize_with = "ser_complex")]
    pub residual: C64,
    pub satisfied: bool,
    /// Nearest member of the pulse's admissible family: the integer `m`
    /// for rectangular pulses, the nearest Bessel zero for the sine, and
    /// the kick area in units of `π` for bang-bang trains.
    pub nearest_family_member: f64,
    /// Relative tolerance; satisfied means `|residual| ≤ tolerance·window`.
    pub tolerance: f64,
    pub window: f64,
    /// Richardson estimate of the quadrature error.
    pub quadrature_error: f64,
}

fn ser_complex<S: serde::Serializer>(c: &C64, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeStruct;
    let mut st = s.serialize_struct("complex", 3)?;
    st.serialize_field("re", &c.re)?;
    st.serialize_field("im", &c.im)?;
    st.serialize_field("abs", &c.norm())?;
    st.end()
}

const GL_ORDER: usize = 16;
const MAX_REFINEMENTS: usize = 12;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    let nf = order as f64;
    let mut rule = Vec::with_capacity(order);
    for i in 1..=order {
        let mut x = (PI * (i as f64 - 0.25) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=order {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        rule.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    rule
}

fn integrate_panels(
    pulse: &PulseShape,
    segments: &[(f64, f64, usize)],
    refine: usize,
    rule: &[(f64, f64)],
) -> C64 {
    let mut total = C64::new(0.0, 0.0);
    for &(a, b, panels) in segments {
        let count = panels << refine;
        let h = (b - a) / count as f64;
        for p in 0..count {
            let lo = a + p as f64 * h;
            let mid = lo + 0.5 * h;
            let mut acc = C64::new(0.0, 0.0);
            for &(x, w) in rule {
                let s = mid + 0.5 * h * x;
                acc += w * C64::from_polar(1.0, -pulse.phase_integral(s));
            }
            total += acc * (0.5 * h);
        }
    }
    total
}

/// Evaluates `∫₀^window exp(−iΦ(s)) ds` with the default tolerance.
pub fn condition_residual(pulse: &PulseShape, window: f64, quad_points: usize) -> Result<ConditionReport> {
    condition_residual_with_tol(pulse, window, quad_points, DEFAULT_CONDITION_TOL)
}

/// Composite 16-point Gauss-Legendre over breakpoint-delimited segments,
/// doubled until two successive levels agree to `1e−9·window`.
pub fn condition_residual_with_tol(
    pulse: &PulseShape,
    window: f64,
    quad_points: usize,
    tolerance: f64,
) -> Result<ConditionReport> {
    pulse.validate()?;
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::OutOfRange(format!("window = {window} must be positive")));
    }
    if quad_points < 64 {
        return Err(Error::OutOfRange(format!("quad_points = {quad_points} must be at least 64")));
    }
    let mut edges = vec![0.0];
    edges.extend(pulse.breakpoints(0.0, window));
    edges.push(window);
    let total_panels = quad_points.div_ceil(GL_ORDER);
    let segments: Vec<(f64, f64, usize)> = edges
        .windows(2)
        .map(|e| {
            let share = (e[1] - e[0]) / window * total_panels as f64;
            (e[0], e[1], (share.ceil() as usize).max(1))
        })
        .collect();

    let rule = gauss_legendre(GL_ORDER);
    let target = 1e-9 * window;
    let mut coarse = integrate_panels(pulse, &segments, 0, &rule);
    let mut converged = None;
    for level in 1..=MAX_REFINEMENTS {
        let fine = integrate_panels(pulse, &segments, level, &rule);
        let err = (fine - coarse).norm();
        if err <= target {
            converged = Some((fine, err));
            break;
        }
        coarse = fine;
    }
    let (residual, quadrature_error) = converged.ok_or_else(|| {
        Error::Numeric(format!(
            "condition quadrature did not reach {target:.1e} after {MAX_REFINEMENTS} refinements"
        ))
    })?;
    Ok(ConditionReport {
        residual,
        satisfied: residual.norm() <= tolerance * window,
        nearest_family_member: nearest_family_member(pulse),
        tolerance,
        window,
        quadrature_error,
    })
}

fn nearest_family_member(pulse: &PulseShape) -> f64 {
    match *pulse {
        PulseShape::None => 0.0,
        PulseShape::Rectangular { intensity, half_period } => rect_condition(intensity, half_period).1 as f64,
        PulseShape::Sine { intensity, omega } => {
            let x = intensity / omega;
            (1..=MAX_ZERO_INDEX)
                .filter_map(|k| bessel_j0_zero(k).ok())
                .min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()))
                .unwrap_or(f64::NAN)
        }
        PulseShape::BangBang { .. } => (pulse.kick_area().unwrap_or(0.0).abs() / PI).round(),
    }
}

/// `Iτ = 2πm` check. Returns whether it holds and the nearest `m ≥ 1`.
pub fn rect_condition(intensity: f64, half_period: f64) -> (bool, u64) {
    let ratio = intensity * half_period / TAU;
    let nearest = ratio.round();
    let satisfied = (ratio - nearest).abs() <= 1e-9 && nearest >= 1.0;
    (satisfied, nearest.max(1.0) as u64)
}

/// Kick-area check for bang-bang trains: each kick carries area `±π`.
pub fn bang_bang_condition(pulse: &PulseShape) -> Option<bool> {
    pulse.kick_area().map(|a| (a.abs() - PI).abs() <= 1e-9 * PI)
}

const SERIES_LIMIT: f64 = 12.0;

fn j0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= -q / (kf * kf);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) && k > 4 {
            break;
        }
    }
    sum
}

fn j0_asymptotic(x: f64) -> f64 {
    // Hankel expansion; a_k/x^k with a_k/a_{k-1} = −(2k−1)²/(8k)
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..200usize {
        let kf = k as f64;
        let next = term * -((2.0 * kf - 1.0).powi(2)) / (8.0 * kf * x);
        if next.abs() >= last || next.abs() < 1e-18 {
            break;
        }
        last = next.abs();
        term = next;
        // P collects even k with sign (−1)^{k/2}, Q odd k with (−1)^{(k−1)/2}
        match k % 4 {
            0 => p += term,
            1 => q += term,
            2 => p -= term,
            _ => q -= term,
        }
    }
    let chi = x - FRAC_PI_4;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// Bessel function of the first kind, order zero.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x < SERIES_LIMIT {
        j0_series(x)
    } else {
        j0_asymptotic(x)
    }
}

pub const MAX_ZERO_INDEX: usize = 20;

/// The `k`-th positive zero of `J₀`, `1 ≤ k ≤ 20`.
pub fn bessel_j0_zero(k: usize) -> Result<f64> {
    if !(1..=MAX_ZERO_INDEX).contains(&k) {
        return Err(Error::OutOfRange(format!(
            "Bessel zero index {k} outside 1..={MAX_ZERO_INDEX}"
        )));
    }
    let beta = (k as f64 - 0.25) * PI;
    let (mut lo, mut hi) = (beta - 0.1, beta + 0.4);
    let mut f_lo = bessel_j0(lo);
    if f_lo * bessel_j0(hi) > 0.0 {
        return Err(Error::Numeric(format!("no sign change bracketing zero {k} of J0")));
    }
    while hi - lo > 4.0 * f64::EPSILON * hi {
        let mid = 0.5 * (lo + hi);
        let f_mid = bessel_j0(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if (f_mid > 0.0) == (f_lo > 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let (a, b) = (bessel_j0(lo), bessel_j0(hi));
    Ok(if a.abs() <= b.abs() { lo } else { hi })
}

/// Sine pulse with `ωτ = π` and `Iτ/π` at the `k`-th zero of `J₀`.
pub fn sine_for_zero(intensity: f64, k: usize) -> Result<PulseShape> {
    if !(intensity > 0.0 && intensity.is_finite()) {
        return Err(Error::InvalidPulse(format!("intensity = {intensity} must be positive")));
    }
    let zero = bessel_j0_zero(k)?;
    let tau = zero * PI / intensity;
    Ok(PulseShape::sine(intensity, PI / tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    #[test]
    fn amplitudes() {
        let rect = PulseShape::rectangular(40.0, PI / 20.0);
        assert_eq!(rect.amplitude(0.01), 40.0);
        assert_eq!(rect.amplitude(PI / 20.0 + 0.01), -40.0);
        assert_eq!(PulseShape::sine(7.0, 3.0).amplitude(0.0), 0.0);
        assert_eq!(PulseShape::None.amplitude(1.0), 0.0);

        let tau = PI / 120.0;
        let bb = PulseShape::bang_bang(120.0, tau);
        let kick = tau / 50.0;
        assert!((bb.amplitude(0.5 * kick) + 6000.0).abs() < 1e-9);
        assert!((bb.amplitude(tau + 0.5 * kick) - 6000.0).abs() < 1e-9);
        assert_eq!(bb.amplitude(0.5 * tau), 0.0);
    }

    #[test]
    fn phase_integrals() {
        let tau = PI / 20.0;
        let rect = PulseShape::rectangular(40.0, tau);
        assert!((rect.phase_integral(tau) - TAU).abs() < 1e-12);
        assert_eq!(rect.phase_integral(2.0 * tau), 0.0);
        assert_eq!(PulseShape::sine(80.0, 33.0).phase_integral(0.0), 0.0);

        let bbtau = PI / 120.0;
        let bb = PulseShape::bang_bang(120.0, bbtau);
        // first kick is negative under the odd-positive parity
        assert!((bb.phase_integral(bbtau) + PI).abs() < 1e-12);
        assert!((bb.phase_integral(2.0 * bbtau) - bb.phase_integral(bbtau) - PI).abs() < 1e-12);
        assert_eq!(bb.phase_integral(2.0 * bbtau), 0.0);
        assert!((bb.kick_area().unwrap() - PI).abs() < 1e-12);
    }

    #[test]
    fn even_positive_parity_flips_sign() {
        let tau = PI / 120.0;
        let bb = PulseShape::BangBang {
            intensity: 120.0,
            half_period: tau,
            duty: 0.02,
            gain: 50.0,
            parity: KickParity::EvenPositive,
        };
        assert!((bb.phase_integral(tau) - PI).abs() < 1e-12);
        assert!(bb.amplitude(1e-6) > 0.0);
    }

    #[test]
    fn breakpoint_lists() {
        let tau = PI / 20.0;
        let got = PulseShape::rectangular(40.0, tau).breakpoints(0.0, PI / 5.0);
        assert_eq!(got, vec![tau, 2.0 * tau, 3.0 * tau]);
        assert!(PulseShape::sine(1.0, 1.0).breakpoints(0.0, 10.0).is_empty());

        let bbtau = PI / 120.0;
        let got = PulseShape::bang_bang(120.0, bbtau).breakpoints(0.0, PI / 60.0);
        let want = [bbtau / 50.0, bbtau, bbtau + bbtau / 50.0];
        assert_eq!(got.len(), 3);
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn validation() {
        assert!(PulseShape::rectangular(-1.0, 1.0).validate().is_err());
        assert!(PulseShape::sine(1.0, 0.0).validate().is_err());
        let mut bb = PulseShape::bang_bang(1.0, 1.0);
        if let PulseShape::BangBang { duty, .. } = &mut bb {
            *duty = 1.5;
        }
        assert!(bb.validate().is_err());
    }

    #[test]
    fn derivative_of_phase_matches_amplitude() {
        let mut rng = StdRng::seed_from_u64(7);
        let shapes = [
            PulseShape::rectangular(40.0, PI / 20.0),
            sine_for_zero(80.0, 1).unwrap(),
            PulseShape::bang_bang(120.0, PI / 120.0),
        ];
        let h = 1e-6;
        for shape in shapes {
            let mut checked = 0;
            while checked < 10_000 {
                let t: f64 = rng.gen_range(h..1.5);
                if !shape.breakpoints(t - 2.0 * h, t + 2.0 * h).is_empty() {
                    continue;
                }
                let fd = (shape.phase_integral(t + h) - shape.phase_integral(t - h)) / (2.0 * h);
                assert!(
                    (fd - shape.amplitude(t)).abs() <= 1e-6 * shape.amplitude(t).abs().max(1.0),
                    "{shape:?} at t={t}: fd={fd} c={}",
                    shape.amplitude(t)
                );
                checked += 1;
            }
        }
    }

    #[test]
    fn zero_energy_change() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..200 {
            let i: f64 = rng.gen_range(1.0..200.0);
            let tau: f64 = rng.gen_range(0.001..1.0);
            assert_eq!(PulseShape::rectangular(i, tau).phase_integral(2.0 * tau), 0.0);
            assert_eq!(PulseShape::bang_bang(i, tau).phase_integral(2.0 * tau), 0.0);
        }
    }

    /// Exact ∫ exp(−iΦ) over a piecewise-linear phase, built independently.
    fn rect_residual_oracle(i: f64, tau: f64, window: f64) -> C64 {
        let mut total = C64::new(0.0, 0.0);
        let mut phase = 0.0;
        let mut a = 0.0;
        let mut sign = 1.0;
        while a < window {
            let b = (a + tau).min(window);
            let slope = sign * i;
            let len = b - a;
            let piece = (C64::new(1.0, 0.0) - C64::from_polar(1.0, -slope * len)) / C64::new(0.0, slope);
            total += C64::from_polar(1.0, -phase) * piece;
            phase += slope * len;
            a = b;
            sign = -sign;
        }
        total
    }

    #[test]
    fn residual_matches_closed_form() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..100 {
            let i: f64 = rng.gen_range(1.0..100.0);
            let tau: f64 = rng.gen_range(0.01..1.0);
            for window in [tau, 2.0 * tau] {
                let rep = condition_residual(&PulseShape::rectangular(i, tau), window, 64).unwrap();
                let want = rect_residual_oracle(i, tau, window);
                assert!((rep.residual - want).norm() <= 1e-8, "I={i} tau={tau}");
            }
        }
    }

    #[test]
    fn residual_examples() {
        let rect = PulseShape::rectangular(40.0, PI / 20.0);
        let rep = condition_residual(&rect, PI / 20.0, 64).unwrap();
        assert!(rep.residual.norm() <= 1e-8);
        assert!(rep.satisfied);
        assert_eq!(rep.nearest_family_member, 1.0);

        let rep = condition_residual(&PulseShape::None, 0.7, 64).unwrap();
        assert!((rep.residual - C64::new(0.7, 0.0)).norm() < 1e-14);
        assert!(!rep.satisfied);

        let sine = sine_for_zero(80.0, 1).unwrap();
        let tau = sine.half_period().unwrap();
        let rep = condition_residual(&sine, tau, 64).unwrap();
        assert!(rep.residual.norm() <= 1e-6 * tau);
        assert!((rep.nearest_family_member - 2.404825557695773).abs() < 1e-12);

        let sine = sine_for_zero(50.0, 2).unwrap();
        let tau = sine.half_period().unwrap();
        assert!(condition_residual(&sine, tau, 64).unwrap().residual.norm() <= 1e-6 * tau);
    }

    #[test]
    fn residual_argument_errors() {
        assert!(condition_residual(&PulseShape::None, 1.0, 10).is_err());
        assert!(condition_residual(&PulseShape::None, 0.0, 64).is_err());
    }

    #[test]
    fn rect_condition_examples() {
        assert_eq!(rect_condition(40.0, PI / 20.0), (true, 1));
        assert_eq!(rect_condition(60.0, PI / 30.0), (true, 1));
        assert_eq!(rect_condition(50.0, 0.1), (false, 1));
        assert_eq!(rect_condition(50.0, 4.0 * PI / 50.0), (true, 2));
    }

    /// Independent power series for J₀, summed term by term in reverse.
    fn j0_oracle(x: f64) -> f64 {
        let mut terms = Vec::new();
        let mut t = 1.0f64;
        for k in 0..40 {
            if k > 0 {
                t *= -(x * x / 4.0) / ((k * k) as f64);
            }
            terms.push(t);
        }
        terms.iter().rev().sum()
    }

    #[test]
    fn bessel_values() {
        assert_eq!(bessel_j0(0.0), 1.0);
        assert!((bessel_j0(1.0) - j0_oracle(1.0)).abs() < 1e-15);
        assert!((bessel_j0(1.0) - 0.765_197_686_557_966_6).abs() < 1e-14);
        assert!(bessel_j0(2.404826).abs() < 1e-6);
        for x in [0.5, 3.3, 7.1, 9.9, 11.5] {
            assert!((bessel_j0(x) - j0_oracle(x)).abs() < 1e-11, "x={x}");
        }
        assert_eq!(bessel_j0(-3.0), bessel_j0(3.0));
    }

    #[test]
    fn bessel_branches_agree_at_switch() {
        for x in [11.9, 12.0, 12.1, 13.0] {
            assert!((j0_series(x) - j0_asymptotic(x)).abs() < 1e-10, "x={x}");
        }
    }

    #[test]
    fn bessel_zeros() {
        let want = [2.404826, 5.520078, 8.653728];
        for (k, w) in want.iter().enumerate() {
            let z = bessel_j0_zero(k + 1).unwrap();
            assert!((z - w).abs() < 1e-6, "k={} z={z}", k + 1);
        }
        let zeros: Vec<f64> = (1..=20).map(|k| bessel_j0_zero(k).unwrap()).collect();
        for w in zeros.windows(2) {
            assert!(w[0] < w[1]);
        }
        for z in &zeros {
            assert!(bessel_j0(*z).abs() <= 1e-10);
            assert!(bessel_j0(z - 1e-3) * bessel_j0(z + 1e-3) < 0.0);
        }
        assert!(bessel_j0_zero(0).is_err());
        assert!(bessel_j0_zero(21).is_err());
    }

    #[test]
    fn sine_for_zero_parameters() {
        let p = sine_for_zero(80.0, 1).unwrap();
        let tau = p.half_period().unwrap();
        assert!((tau - 2.404826 * PI / 80.0).abs() < 1e-7);
        let p = sine_for_zero(120.0, 1).unwrap();
        assert!((p.half_period().unwrap() - 2.404826 * PI / 120.0).abs() < 1e-7);
        assert!(sine_for_zero(-1.0, 1).is_err());
        assert!(sine_for_zero(1.0, 0).is_err());
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = gauss_legendre(16);
        let w: f64 = rule.iter().map(|(_, w)| w).sum();
        assert!((w - 2.0).abs() < 1e-14);
        let x30: f64 = rule.iter().map(|(x, w)| w * x.powi(30)).sum();
        assert!((x30 - 2.0 / 31.0).abs() < 1e-14);
    }
}
