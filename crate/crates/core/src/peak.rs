//! Gamma peak-height model: parameters, effective allele doses after
//! stutter, and the per-position likelihood term.
//!
//! A contributor with fraction `phi_i` and `n` copies of allele `a`
//! contributes a gamma variate with shape `rho * phi_i * n` and scale `eta`
//! to the peak at `a`. A proportion `xi` of that signal moves one repeat unit
//! down (stutter). Heights below the detection threshold `C` are censored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{gamma_ln_cdf, gamma_ln_pdf};

/// Model parameters of one trace in the `(mu, sigma, xi, phi)` form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Mean peak height (rfu) of a heterozygous single-source allele.
    pub mu: f64,
    /// Coefficient of variation of peak heights.
    pub sigma: f64,
    /// Mean stutter proportion.
    pub xi: f64,
    /// Contributor fractions, in roster order.
    pub phi: Vec<f64>,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::Domain(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Domain(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(0.0..1.0).contains(&self.xi) {
            return Err(Error::Domain(format!("xi must lie in [0, 1), got {}", self.xi)));
        }
        if self.phi.is_empty() || self.phi.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Domain(format!("invalid contributor fractions {:?}", self.phi)));
        }
        let s: f64 = self.phi.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("contributor fractions sum to {s}, not 1")));
        }
        Ok(())
    }

    /// Shape-scale form used by the likelihood.
    pub fn gamma_form(&self) -> GammaParams {
        let (rho, eta) = to_shape_scale(self.mu, self.sigma).expect("validated parameters");
        GammaParams {
            rho,
            eta,
            xi: self.xi,
            phi: self.phi.clone(),
        }
    }
}

/// Parameters in the `(rho, eta, xi, phi)` form: a dose `D` gives a peak
/// distributed as Gamma(shape = rho * D, scale = eta).
#[derive(Debug, Clone, PartialEq)]
pub struct GammaParams {
    pub rho: f64,
    pub eta: f64,
    pub xi: f64,
    pub phi: Vec<f64>,
}

/// `(mu, sigma) -> (rho, eta)` with `rho = 1/sigma^2`, `eta = mu sigma^2`.
pub fn to_shape_scale(mu: f64, sigma: f64) -> Result<(f64, f64)> {
    if !(mu > 0.0 && sigma > 0.0 && mu.is_finite() && sigma.is_finite()) {
        return Err(Error::Domain(format!("mu and sigma must be positive, got ({mu}, {sigma})")));
    }
    let s2 = sigma * sigma;
    Ok((1.0 / s2, mu * s2))
}

/// Inverse of [`to_shape_scale`]: `mu = rho eta`, `sigma = 1/sqrt(rho)`.
pub fn from_shape_scale(rho: f64, eta: f64) -> Result<(f64, f64)> {
    if !(rho > 0.0 && eta > 0.0 && rho.is_finite() && eta.is_finite()) {
        return Err(Error::Domain(format!("rho and eta must be positive, got ({rho}, {eta})")));
    }
    Ok((rho * eta, 1.0 / rho.sqrt()))
}

/// Dose at one panel position.
///
/// `here[i]` is contributor `i`'s allele count at the position and
/// `above[i]` its count at the next panel allele; `above` is `None` when that
/// allele is not exactly one repeat unit higher, in which case nothing
/// stutters into this position.
pub fn dose_at(here: &[u8], above: Option<&[u8]>, phi: &[f64], xi: f64) -> f64 {
    let own: f64 = here.iter().zip(phi).map(|(&n, p)| p * n as f64).sum();
    let stutter: f64 = match above {
        Some(up) => up.iter().zip(phi).map(|(&n, p)| p * n as f64).sum(),
        None => 0.0,
    };
    (1.0 - xi) * own + xi * stutter
}

/// Effective doses at every panel position.
///
/// `counts[i][a]` is contributor `i`'s count of allele `a`;
/// `stutter_from_above[a]` says whether allele `a + 1` stutters into `a`.
/// Stutter from the lowest allele, or across a gap, is lost.
pub fn effective_doses(counts: &[Vec<u8>], phi: &[f64], xi: f64, stutter_from_above: &[bool]) -> Vec<f64> {
    let n_alleles = stutter_from_above.len();
    let mut here = vec![0u8; counts.len()];
    let mut above = vec![0u8; counts.len()];
    (0..n_alleles)
        .map(|a| {
            for (i, c) in counts.iter().enumerate() {
                here[i] = c[a];
                above[i] = if a + 1 < n_alleles { c[a + 1] } else { 0 };
            }
            let up = stutter_from_above[a].then_some(above.as_slice());
            dose_at(&here, up, phi, xi)
        })
        .collect()
}

/// Log-likelihood contribution of one position.
///
/// `z` is the recorded height, `None` when no peak was recorded. Heights at
/// or above `threshold` contribute the gamma log density; anything lower
/// contributes the log probability of falling below the threshold. A zero
/// shape is a point mass at zero.
pub fn peak_log_term(z: Option<f64>, threshold: f64, shape: f64, scale: f64) -> Result<f64> {
    if let Some(h) = z {
        if h < 0.0 || !h.is_finite() {
            return Err(Error::Domain(format!("peak height must be nonnegative, got {h}")));
        }
    }
    if !(threshold > 0.0 && shape >= 0.0 && scale > 0.0) {
        return Err(Error::Domain(format!(
            "invalid peak term arguments: C={threshold}, shape={shape}, scale={scale}"
        )));
    }
    Ok(log_term(z.filter(|h| *h >= threshold), threshold, shape, scale))
}

/// Unchecked form of [`peak_log_term`] for the inner loop. `observed` must
/// already be `None` for sub-threshold heights.
#[inline]
pub(crate) fn log_term(observed: Option<f64>, threshold: f64, shape: f64, scale: f64) -> f64 {
    match observed {
        Some(h) => {
            if shape <= 0.0 {
                f64::NEG_INFINITY
            } else {
                gamma_ln_pdf(h, shape, scale)
            }
        }
        None => {
            if shape <= 0.0 {
                0.0
            } else {
                gamma_ln_cdf(threshold, shape, scale)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_het_dose_is_one() {
        assert_eq!(dose_at(&[1], None, &[1.0], 0.0), 1.0);
    }

    #[test]
    fn stutter_moves_mass_down() {
        // counts: allele a has 0, allele a+1 has 2, xi = 0.1
        let d = effective_doses(&[vec![0, 2]], &[1.0], 0.1, &[true, false]);
        assert!((d[0] - 0.2).abs() < 1e-15);
        assert!((d[1] - 1.8).abs() < 1e-15);
    }

    #[test]
    fn stutter_lost_across_gap() {
        let d = effective_doses(&[vec![0, 2]], &[1.0], 0.1, &[false, false]);
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 1.8).abs() < 1e-15);
    }

    #[test]
    fn two_contributor_dose() {
        // 0.978 * 1 + 0.022 * 2
        let d = dose_at(&[1, 2], None, &[0.978, 0.022], 0.0);
        assert!((d - 1.022).abs() < 1e-12);
    }

    #[test]
    fn doses_sum_to_two_without_stutter() {
        let counts = vec![vec![1, 0, 1, 0], vec![0, 2, 0, 0], vec![0, 0, 1, 1]];
        let phi = [0.5, 0.3, 0.2];
        let d = effective_doses(&counts, &phi, 0.0, &[true, true, true, false]);
        assert!((d.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        // with stutter only the lowest allele's outgoing share is lost
        let xi = 0.07;
        let d = effective_doses(&counts, &phi, xi, &[true, true, true, false]);
        let lost = xi * 0.5;
        assert!((d.iter().sum::<f64>() - (2.0 - lost)).abs() < 1e-12);
    }

    #[test]
    fn zero_shape_cases() {
        assert_eq!(peak_log_term(None, 50.0, 0.0, 100.0).unwrap(), 0.0);
        assert_eq!(peak_log_term(Some(200.0), 50.0, 0.0, 100.0).unwrap(), f64::NEG_INFINITY);
        assert_eq!(peak_log_term(Some(20.0), 50.0, 0.0, 100.0).unwrap(), 0.0);
    }

    #[test]
    fn observed_and_censored() {
        let got = peak_log_term(Some(150.0), 50.0, 2.0, 100.0).unwrap();
        assert!((got - -5.69970507787992720).abs() < 1e-12);
        let cens = peak_log_term(None, 50.0, 2.0, 100.0).unwrap();
        assert!((cens - -2.40568139136037118).abs() < 1e-10);
        // a recorded sub-threshold height is censored
        assert_eq!(peak_log_term(Some(49.0), 50.0, 2.0, 100.0).unwrap(), cens);
    }

    #[test]
    fn negative_height_is_domain_error() {
        assert!(matches!(peak_log_term(Some(-1.0), 50.0, 1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn censored_term_decreases_in_shape() {
        let mut last = 0.0;
        for k in 1..40 {
            let v = peak_log_term(None, 50.0, k as f64 * 0.25, 300.0).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn reparam_examples() {
        let (rho, eta) = to_shape_scale(807.0, 1.18).unwrap();
        assert!((rho - 0.7182).abs() < 5e-5);
        assert!((eta - 1123.7).abs() < 0.05);
        assert!(((rho * eta) - 807.0).abs() / 807.0 < 1e-12);
        assert_eq!(to_shape_scale(1.0, 1.0).unwrap(), (1.0, 1.0));
        let (rho, eta) = to_shape_scale(3858.0, 0.408).unwrap();
        let (mu, sigma) = from_shape_scale(rho, eta).unwrap();
        assert!((mu - 3858.0).abs() / 3858.0 < 1e-12);
        assert!((sigma - 0.408).abs() / 0.408 < 1e-12);
        assert!(to_shape_scale(0.0, 1.0).is_err());
        assert!(from_shape_scale(1.0, -1.0).is_err());
    }

    #[test]
    fn params_validation() {
        let ok = ModelParams {
            mu: 800.0,
            sigma: 0.6,
            xi: 0.0,
            phi: vec![0.7, 0.3],
        };
        assert!(ok.validate().is_ok());
        let bad = ModelParams { xi: 1.0, ..ok.clone() };
        assert!(bad.validate().is_err());
        let bad = ModelParams {
            phi: vec![0.7, 0.2],
            ..ok
        };
        assert!(bad.validate().is_err());
    }
}
