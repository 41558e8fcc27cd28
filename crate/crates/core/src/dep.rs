//! Complex permittivity, Clausius–Mossotti factor and the time-averaged DEP
//! force on a homogeneous sphere:
//!
//! ```text
//! F = 2π r³ ε0 ε_m Re[K*(ω)] ∇(E_rms²),   K* = (ε_p* − ε_m*) / (ε_p* + 2ε_m*)
//! ```
//!
//! with ε* = ε0 ε_r − jσ/ω.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{VectorField3, VectorQuantity};
use crate::scalar::{Real, VACUUM_PERMITTIVITY};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DielectricProps<T> {
    pub eps_r: T,
    /// S/m
    pub sigma: T,
}

impl<T: Real> DielectricProps<T> {
    pub fn new(eps_r: T, sigma: T) -> Result<Self> {
        let p = Self { eps_r, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_r > T::zero()) || !self.eps_r.is_finite() {
            return Err(Error::validation("eps_r", "must be positive"));
        }
        if !(self.sigma >= T::zero()) || !self.sigma.is_finite() {
            return Err(Error::validation("sigma", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleModel<T> {
    /// m
    pub radius: T,
    pub props: DielectricProps<T>,
}

impl<T: Real> ParticleModel<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > T::zero()) || !self.radius.is_finite() {
            return Err(Error::validation("radius", "must be positive"));
        }
        self.props.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CMSpectrum<T> {
    pub frequencies: Vec<T>,
    pub re_k: Vec<T>,
    pub im_k: Vec<T>,
    pub particle: DielectricProps<T>,
    pub medium: DielectricProps<T>,
}

pub fn angular_frequency<T: Real>(hz: T) -> T {
    T::two() * T::PI() * hz
}

/// ε0·ε_r − jσ/ω in F/m.
pub fn complex_permittivity<T: Real>(p: &DielectricProps<T>, omega: T) -> Result<Complex<T>> {
    if !(omega > T::zero()) {
        return Err(Error::ZeroFrequency);
    }
    Ok(Complex::new(T::of(VACUUM_PERMITTIVITY) * p.eps_r, -p.sigma / omega))
}

pub fn cm_factor<T: Real>(particle: &DielectricProps<T>, medium: &DielectricProps<T>, omega: T) -> Result<Complex<T>> {
    let ep = complex_permittivity(particle, omega)?;
    let em = complex_permittivity(medium, omega)?;
    let den = ep + em * T::two();
    if den.norm_sqr() == T::zero() || !den.norm_sqr().is_finite() {
        return Err(Error::DegenerateDenominator);
    }
    Ok((ep - em) / den)
}

/// Re[K*] on a log-spaced frequency grid from `f_min` to `f_max` inclusive.
pub fn cm_spectrum<T: Real>(
    particle: &DielectricProps<T>,
    medium: &DielectricProps<T>,
    f_min: T,
    f_max: T,
    points_per_decade: usize,
) -> Result<CMSpectrum<T>> {
    if !(f_min > T::zero()) || !(f_max > f_min) {
        return Err(Error::invalid("spectrum needs 0 < f_min < f_max"));
    }
    if points_per_decade == 0 {
        return Err(Error::invalid("points_per_decade must be at least 1"));
    }
    let (lo, hi) = (f_min.log10(), f_max.log10());
    let steps = ((hi - lo) * T::of(points_per_decade as f64)).ceil().to_usize().unwrap_or(1).max(1);
    let mut frequencies = Vec::with_capacity(steps + 1);
    let mut re_k = Vec::with_capacity(steps + 1);
    let mut im_k = Vec::with_capacity(steps + 1);
    for n in 0..=steps {
        let f = if n == 0 {
            f_min
        } else if n == steps {
            f_max
        } else {
            T::of(10.0).powf(lo + (hi - lo) * T::of(n as f64) / T::of(steps as f64))
        };
        let k = cm_factor(particle, medium, angular_frequency(f))?;
        frequencies.push(f);
        re_k.push(k.re);
        im_k.push(k.im);
    }
    Ok(CMSpectrum { frequencies, re_k, im_k, particle: *particle, medium: *medium })
}

/// Frequency (Hz) in [1 Hz, 1 THz] where Re[K*] changes sign, located by
/// bisection on log f to 1e-4 relative. `None` when there is no sign change.
pub fn crossover_frequency<T: Real>(particle: &DielectricProps<T>, medium: &DielectricProps<T>) -> Option<T> {
    let re = |f: T| cm_factor(particle, medium, angular_frequency(f)).ok().map(|k| k.re);
    // Scan 20 points per decade to bracket the change, then bisect.
    let mut prev_f = T::one();
    let mut prev = re(prev_f)?;
    for n in 1..=240 {
        let f = T::of(10.0).powf(T::of(n as f64 / 20.0));
        let cur = re(f)?;
        if cur == T::zero() {
            continue;
        }
        if prev != T::zero() && (prev > T::zero()) != (cur > T::zero()) {
            let (mut lo, mut hi) = (prev_f, f);
            let lo_positive = prev > T::zero();
            while (hi - lo) > T::of(1e-4) * lo {
                let mid = (lo * hi).sqrt();
                let v = re(mid)?;
                if v != T::zero() && (v > T::zero()) == lo_positive {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some((lo * hi).sqrt());
        }
        prev_f = f;
        prev = cur;
    }
    None
}

/// Scalar prefactor 2π r³ ε0 ε_m Re[K*] mapping ∇(E²) to force.
pub fn dep_prefactor<T: Real>(model: &ParticleModel<T>, medium: &DielectricProps<T>, omega: T) -> Result<T> {
    model.validate()?;
    medium.validate()?;
    let k = cm_factor(&model.props, medium, omega)?;
    Ok(dep_prefactor_with(model.radius, medium.eps_r, k.re))
}

/// Same prefactor with Re[K*] given directly.
pub fn dep_prefactor_with<T: Real>(radius: T, eps_r_medium: T, re_k: T) -> T {
    T::two() * T::PI() * radius * radius * radius * T::of(VACUUM_PERMITTIVITY) * eps_r_medium * re_k
}

/// Pointwise DEP force (N) from a ∇(E²) field computed with RMS fields.
pub fn dep_force_field<T: Real>(
    model: &ParticleModel<T>,
    medium: &DielectricProps<T>,
    omega: T,
    grad_e2: &VectorField3<T>,
) -> Result<VectorField3<T>> {
    let c = dep_prefactor(model, medium, omega)?;
    Ok(force_from_prefactor(c, grad_e2))
}

pub fn force_from_prefactor<T: Real>(prefactor: T, grad_e2: &VectorField3<T>) -> VectorField3<T> {
    VectorField3 {
        grid: grad_e2.grid,
        values: grad_e2.values.par_iter().map(|g| [prefactor * g[0], prefactor * g[1], prefactor * g[2]]).collect(),
        quantity: VectorQuantity::DepForce,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::VectorField3;
    use crate::grid::Grid3;
    use proptest::prelude::*;

    const EPS0: f64 = 8.854187817e-12;

    fn cell() -> DielectricProps<f64> {
        DielectricProps { eps_r: 2.5, sigma: 0.01 }
    }
    fn buffer() -> DielectricProps<f64> {
        DielectricProps { eps_r: 78.0, sigma: 1.76e-3 }
    }

    /// Closed-form crossover for a single-dispersion pair.
    fn crossover_oracle(p: DielectricProps<f64>, m: DielectricProps<f64>) -> f64 {
        let (ep, em) = (p.eps_r * EPS0, m.eps_r * EPS0);
        let num = (m.sigma - p.sigma) * (p.sigma + 2.0 * m.sigma);
        let den = (ep - em) * (ep + 2.0 * em);
        (num / den).sqrt() / (2.0 * std::f64::consts::PI)
    }

    #[test]
    fn lossless_dielectric_is_real() {
        let e = complex_permittivity(&DielectricProps { eps_r: 78.0, sigma: 0.0 }, 12.3).unwrap();
        assert_eq!(e.im, 0.0);
        assert_eq!(e.re, 78.0 * EPS0);
    }

    #[test]
    fn buffer_loss_at_one_megahertz() {
        let e = complex_permittivity(&buffer(), angular_frequency(1e6)).unwrap();
        assert!((e.im - (-2.801e-10)).abs() < 1e-13, "{}", e.im);
    }

    #[test]
    fn permittivity_matches_independent_complex_arithmetic() {
        let omega = 3.7e5;
        let e = complex_permittivity(&DielectricProps { eps_r: 2.5, sigma: 0.01 }, omega).unwrap();
        // (a, b) pair arithmetic without num-complex.
        let (re, im) = (2.5 * EPS0, -0.01 / omega);
        assert_eq!((e.re, e.im), (re, im));
    }

    #[test]
    fn zero_frequency_is_rejected() {
        assert!(matches!(complex_permittivity(&buffer(), 0.0), Err(Error::ZeroFrequency)));
        assert!(matches!(cm_factor(&cell(), &buffer(), -1.0), Err(Error::ZeroFrequency)));
    }

    #[test]
    fn identical_media_give_zero() {
        let k = cm_factor(&buffer(), &buffer(), 1e4).unwrap();
        assert_eq!(k, Complex::new(0.0, 0.0));
        let s = cm_spectrum(&buffer(), &buffer(), 1e3, 1e9, 5).unwrap();
        assert!(s.re_k.iter().all(|&v| v == 0.0));
        assert_eq!(crossover_frequency(&buffer(), &buffer()), None);
    }

    #[test]
    fn degenerate_denominator() {
        let vacuum = DielectricProps { eps_r: 0.0, sigma: 0.0 };
        assert!(matches!(cm_factor(&vacuum, &vacuum, 1.0), Err(Error::DegenerateDenominator)));
    }

    #[test]
    fn analytic_limits() {
        let low = cm_factor(&cell(), &buffer(), angular_frequency(1.0)).unwrap().re;
        let expect_low = (0.01 - 0.00176) / (0.01 + 2.0 * 0.00176);
        assert!((low - expect_low).abs() < 1e-3);
        assert!((low - 0.609).abs() < 1e-3);
        let high = cm_factor(&cell(), &buffer(), angular_frequency(1e12)).unwrap().re;
        assert!((high - (2.5 - 78.0) / (2.5 + 156.0)).abs() < 1e-3);
        assert!((high + 0.4764).abs() < 1e-3);
    }

    #[test]
    fn spectrum_is_monotone_between_plateaus() {
        let s = cm_spectrum(&cell(), &buffer(), 1.0, 1e12, 20).unwrap();
        assert_eq!(s.frequencies.len(), 241);
        assert!(s.frequencies.windows(2).all(|w| w[1] > w[0]));
        assert!(s.re_k.windows(2).all(|w| w[1] <= w[0]));
        assert!((s.re_k[0] - 0.609).abs() < 1e-3);
        assert!((s.re_k[240] + 0.476).abs() < 1e-3);
        let change = s.re_k.windows(2).position(|w| w[0] > 0.0 && w[1] <= 0.0).unwrap();
        assert!(s.frequencies[change] < 1.73e6 && s.frequencies[change + 1] > 1.73e6);
    }

    #[test]
    fn crossover_matches_closed_form() {
        let oracle = crossover_oracle(cell(), buffer());
        assert!((oracle - 1.73e6).abs() / 1.73e6 < 0.01, "oracle {oracle}");
        let f = crossover_frequency(&cell(), &buffer()).unwrap();
        assert!((f - oracle).abs() / oracle < 0.01, "found {f}, oracle {oracle}");
    }

    #[test]
    fn dominant_particle_has_no_crossover() {
        let p = DielectricProps { eps_r: 120.0, sigma: 0.5 };
        assert_eq!(crossover_frequency(&p, &buffer()), None);
    }

    #[test]
    fn eq1_worked_value() {
        let f: f64 = dep_prefactor_with(5e-6, 78.0, 0.5) * 1e13;
        let direct = 2.0 * std::f64::consts::PI * 1.25e-16 * 8.854e-12 * 78.0 * 0.5 * 1e13;
        assert!((f - 2.71e-12).abs() < 0.01e-12, "{f}");
        assert!((f - direct).abs() / direct < 1e-3);
    }

    #[test]
    fn radius_doubling_scales_force_by_eight() {
        let a = dep_prefactor_with(3e-6, 78.0, 0.4);
        let b = dep_prefactor_with(6e-6, 78.0, 0.4);
        assert_eq!(b, 8.0 * a);
    }

    #[test]
    fn zero_gradient_gives_zero_force_and_sign_rule() {
        let g = Grid3::new([3, 3, 3], [1e-6; 3], [0.0; 3]).unwrap();
        let zero = VectorField3::from_fn(g, VectorQuantity::GradE2, |_| [0.0; 3]);
        let model = ParticleModel { radius: 5e-6, props: cell() };
        let f = dep_force_field(&model, &buffer(), angular_frequency(1e3), &zero).unwrap();
        assert!(f.values.iter().flatten().all(|&c| c == 0.0));

        let grad = VectorField3::from_fn(g, VectorQuantity::GradE2, |p| [p[0] * 1e18, -3e12, p[2] * 1e17]);
        let pos = dep_force_field(&model, &buffer(), angular_frequency(1e3), &grad).unwrap();
        let neg = dep_force_field(&model, &buffer(), angular_frequency(1e9), &grad).unwrap();
        for ((gv, pv), nv) in grad.values.iter().zip(&pos.values).zip(&neg.values) {
            let dp: f64 = (0..3).map(|a| gv[a] * pv[a]).sum();
            let dn: f64 = (0..3).map(|a| gv[a] * nv[a]).sum();
            assert!(dp > 0.0 && dn < 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn re_k_is_bounded(
            ep in 1e-3f64..1e4, em in 1e-3f64..1e4,
            sp in 0.0f64..10.0, sm in 0.0f64..10.0,
            log_f in 0.0f64..12.0,
        ) {
            let p = DielectricProps { eps_r: ep, sigma: sp };
            let m = DielectricProps { eps_r: em, sigma: sm };
            let k = cm_factor(&p, &m, angular_frequency(10f64.powf(log_f))).unwrap();
            prop_assert!(k.re >= -0.5 - 1e-12 && k.re <= 1.0 + 1e-12);
        }

        #[test]
        fn conductivity_limit(sp in 1e-3f64..1.0, sm in 1e-3f64..1.0, ep in 1.0f64..100.0, em in 1.0f64..100.0) {
            let omega = angular_frequency(1.0);
            // Only meaningful when ωε ≪ σ for both media.
            prop_assume!(omega * ep * EPS0 < 1e-6 * sp && omega * em * EPS0 < 1e-6 * sm);
            let k = cm_factor(&DielectricProps { eps_r: ep, sigma: sp }, &DielectricProps { eps_r: em, sigma: sm }, omega).unwrap();
            let limit = (sp - sm) / (sp + 2.0 * sm);
            prop_assert!((k.re - limit).abs() <= 1e-6 * limit.abs().max(1e-3));
        }

        #[test]
        fn force_is_linear_in_gradient(alpha in -1e3f64..1e3, gx in -1e14f64..1e14, gy in -1e14f64..1e14) {
            let g = Grid3::new([3, 3, 3], [1e-6; 3], [0.0; 3]).unwrap();
            let base = VectorField3::from_fn(g, VectorQuantity::GradE2, |p| [gx, gy * p[1] * 1e6, 1e12]);
            let model = ParticleModel { radius: 7.5e-6, props: DielectricProps { eps_r: 60.0, sigma: 0.2 } };
            let w = angular_frequency(1e6);
            let f1 = dep_force_field(&model, &buffer(), w, &base.scaled(alpha)).unwrap();
            let f2 = dep_force_field(&model, &buffer(), w, &base).unwrap().scaled(alpha);
            for (a, b) in f1.values.iter().flatten().zip(f2.values.iter().flatten()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300));
            }
        }
    }
}
