//! Discrete DDPM-family noise schedules and the forward diffusion process.
//!
//! A schedule is the per-step variance sequence `beta[1..=T]` together with
//! the derived `alpha[t] = 1 - beta[t]` and the cumulative product
//! `alpha_bar[t] = prod_{s<=t} alpha[s]`. Two auxiliary scalars are kept for
//! the closed-form analysis in [`crate::increment`]:
//!
//! * `delta_beta = max_t beta[t] - min_t beta[t]`
//! * `beta0 = beta[1] - delta_beta / T`
//!
//! The forward process perturbs a data point as
//! `x_t = sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * eps`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// `beta` is an arithmetic series from `beta_start` to `beta_end`.
    Linear,
    /// `sqrt(beta)` is an arithmetic series from `sqrt(beta_start)` to `sqrt(beta_end)`.
    Quadratic,
    /// `alpha_bar` follows a squared-cosine profile; betas are derived from
    /// its step ratios and clipped to `[1e-8, 0.999]`.
    Cosine,
}

fn default_t_total() -> usize {
    1000
}
fn default_beta_start() -> f64 {
    1e-4
}
fn default_beta_end() -> f64 {
    0.02
}
fn default_cosine_offset() -> f64 {
    0.008
}

/// User-facing description of a schedule; parseable from the CLI config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    #[serde(default = "default_t_total")]
    pub t_total: usize,
    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_end")]
    pub beta_end: f64,
    /// Offset of the cosine profile; ignored by the other kinds.
    #[serde(default = "default_cosine_offset")]
    pub cosine_offset: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            kind: ScheduleKind::Linear,
            t_total: default_t_total(),
            beta_start: default_beta_start(),
            beta_end: default_beta_end(),
            cosine_offset: default_cosine_offset(),
        }
    }
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t_total < 2 {
            return Err(Error::InvalidSpec(format!(
                "t_total must be >= 2, got {}",
                self.t_total
            )));
        }
        if !(self.beta_start > 0.0 && self.beta_start < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "beta_start must lie in (0, 1), got {}",
                self.beta_start
            )));
        }
        if !(self.beta_end > self.beta_start && self.beta_end < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "beta_end must lie in (beta_start, 1), got {}",
                self.beta_end
            )));
        }
        if !(self.cosine_offset.is_finite() && self.cosine_offset >= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "cosine_offset must be finite and >= 0, got {}",
                self.cosine_offset
            )));
        }
        Ok(())
    }
}

/// Precomputed schedule arrays, 1-indexed by time step.
///
/// Immutable after construction; shared references are safe across threads.
#[derive(Clone, Debug)]
pub struct ScheduleTable<F> {
    t_total: usize,
    beta: Vec<F>,
    alpha: Vec<F>,
    alpha_bar: Vec<F>,
    sqrt_alpha_bar: Vec<F>,
    sqrt_one_minus_alpha_bar: Vec<F>,
    delta_beta: F,
    beta0: F,
    beta_max: F,
}

impl<F: Real> ScheduleTable<F> {
    pub fn build(spec: &ScheduleSpec) -> Result<Self> {
        spec.validate()?;
        let t_total = spec.t_total;
        let beta = match spec.kind {
            ScheduleKind::Linear => linear_betas(t_total, spec.beta_start, spec.beta_end),
            ScheduleKind::Quadratic => quadratic_betas(t_total, spec.beta_start, spec.beta_end),
            ScheduleKind::Cosine => cosine_betas(t_total, spec.cosine_offset),
        };

        let alpha: Vec<F> = beta.iter().map(|&b| F::one() - b).collect();

        // Accumulate in log space so that T-step products do not drift.
        let mut alpha_bar = Vec::with_capacity(t_total);
        let mut log_ab = F::zero();
        for (i, &a) in alpha.iter().enumerate() {
            log_ab += a.ln();
            let ab = log_ab.exp();
            if ab == F::zero() {
                return Err(Error::Underflow { t: i + 1 });
            }
            alpha_bar.push(ab);
        }

        let sqrt_alpha_bar: Vec<F> = alpha_bar.iter().map(|&ab| ab.sqrt()).collect();
        let sqrt_one_minus_alpha_bar: Vec<F> =
            alpha_bar.iter().map(|&ab| (F::one() - ab).sqrt()).collect();

        let beta_min = beta.iter().cloned().fold(F::infinity(), F::min);
        let beta_max = beta.iter().cloned().fold(F::neg_infinity(), F::max);
        let delta_beta = beta_max - beta_min;
        let beta0 = beta[0] - delta_beta / F::of_usize(t_total);

        Ok(ScheduleTable {
            t_total,
            beta,
            alpha,
            alpha_bar,
            sqrt_alpha_bar,
            sqrt_one_minus_alpha_bar,
            delta_beta,
            beta0,
            beta_max,
        })
    }

    pub fn t_total(&self) -> usize {
        self.t_total
    }

    pub fn delta_beta(&self) -> F {
        self.delta_beta
    }

    pub fn beta0(&self) -> F {
        self.beta0
    }

    pub fn beta_max(&self) -> F {
        self.beta_max
    }

    fn check_t(&self, t: usize) -> Result<usize> {
        if t >= 1 && t <= self.t_total {
            Ok(t - 1)
        } else {
            Err(Error::IndexOutOfRange {
                t,
                max: self.t_total,
            })
        }
    }

    pub fn beta(&self, t: usize) -> Result<F> {
        Ok(self.beta[self.check_t(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<F> {
        Ok(self.alpha[self.check_t(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<F> {
        Ok(self.alpha_bar[self.check_t(t)?])
    }

    /// Raw arrays in step order `t = 1..=T`.
    pub fn betas(&self) -> &[F] {
        &self.beta
    }

    pub fn alphas(&self) -> &[F] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[F] {
        &self.alpha_bar
    }

    /// `(sqrt(alpha_bar[t]), sqrt(1 - alpha_bar[t]))`.
    pub fn marginal_coeffs(&self, t: usize) -> Result<(F, F)> {
        let i = self.check_t(t)?;
        Ok((self.sqrt_alpha_bar[i], self.sqrt_one_minus_alpha_bar[i]))
    }

    /// Precomputed coefficient arrays for hot loops, in step order.
    pub fn marginal_coeff_slices(&self) -> (&[F], &[F]) {
        (&self.sqrt_alpha_bar, &self.sqrt_one_minus_alpha_bar)
    }

    /// One forward-process draw: `sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * noise`,
    /// componentwise. The noise is passed in so callers control determinism.
    pub fn forward_sample(&self, x0: &[F], t: usize, noise: &[F]) -> Result<Vec<F>> {
        if x0.len() != noise.len() {
            return Err(Error::ShapeMismatch(format!(
                "x0 has {} components, noise has {}",
                x0.len(),
                noise.len()
            )));
        }
        let (a, s) = self.marginal_coeffs(t)?;
        Ok(x0
            .iter()
            .zip(noise.iter())
            .map(|(&x, &n)| a * x + s * n)
            .collect())
    }
}

fn linear_betas<F: Real>(t_total: usize, beta_start: f64, beta_end: f64) -> Vec<F> {
    let bs = F::of(beta_start);
    let be = F::of(beta_end);
    let denom = F::of_usize(t_total - 1);
    // Two-weight form keeps both endpoints exact.
    (1..=t_total)
        .map(|t| {
            let w = F::of_usize(t - 1) / denom;
            bs * (F::one() - w) + be * w
        })
        .collect()
}

fn quadratic_betas<F: Real>(t_total: usize, beta_start: f64, beta_end: f64) -> Vec<F> {
    let rs = F::of(beta_start).sqrt();
    let re = F::of(beta_end).sqrt();
    let denom = F::of_usize(t_total - 1);
    (1..=t_total)
        .map(|t| {
            let w = F::of_usize(t - 1) / denom;
            let r = rs * (F::one() - w) + re * w;
            r * r
        })
        .collect()
}

fn cosine_betas<F: Real>(t_total: usize, offset: f64) -> Vec<F> {
    let s = F::of(offset);
    let half_pi = F::of(std::f64::consts::FRAC_PI_2);
    let profile = |u: F| {
        let c = ((u + s) / (F::one() + s) * half_pi).cos();
        c * c
    };
    let f0 = profile(F::zero());
    let lo = F::of(1e-8);
    let hi = F::of(0.999);
    let mut prev = F::one();
    (1..=t_total)
        .map(|t| {
            let ab = profile(F::of_usize(t) / F::of_usize(t_total)) / f0;
            let b = (F::one() - ab / prev).max(lo).min(hi);
            prev = ab;
            b
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ddpm() -> ScheduleTable<f64> {
        ScheduleTable::build(&ScheduleSpec::default()).unwrap()
    }

    #[test]
    fn linear_ddpm_endpoints_and_derived_scalars() {
        let table = ddpm();
        assert_eq!(table.beta(1).unwrap(), 1e-4);
        assert_eq!(table.beta(1000).unwrap(), 0.02);
        assert_relative_eq!(table.delta_beta(), 0.0199, max_relative = 1e-15);
        assert_relative_eq!(table.beta0(), 8.01e-5, max_relative = 1e-12);
        assert_eq!(table.beta_max(), 0.02);
    }

    #[test]
    fn linear_betas_equally_spaced() {
        let table = ddpm();
        let b = table.betas();
        let step = (0.02 - 1e-4) / 999.0;
        for t in 1..b.len() {
            assert_relative_eq!(b[t] - b[t - 1], step, max_relative = 1e-9);
        }
        // Second differences vanish to round-off.
        for t in 2..b.len() {
            let dd = (b[t] - b[t - 1]) - (b[t - 1] - b[t - 2]);
            assert!(dd.abs() <= 1e-12 * b[t].abs());
        }
    }

    #[test]
    fn two_step_alpha_bar_is_plain_product() {
        let spec = ScheduleSpec {
            kind: ScheduleKind::Linear,
            t_total: 2,
            beta_start: 0.1,
            beta_end: 0.3,
            cosine_offset: 0.008,
        };
        let table: ScheduleTable<f64> = ScheduleTable::build(&spec).unwrap();
        assert_relative_eq!(
            table.alpha_bar(2).unwrap(),
            (1.0 - 0.1) * (1.0 - 0.3),
            max_relative = 1e-14
        );
    }

    #[test]
    fn alpha_bar_matches_independent_product() {
        // Oracle: straight sequential product, a different route than the
        // log-space accumulation used by build().
        let table = ddpm();
        let mut prod = 1.0f64;
        for &a in table.alphas() {
            prod *= a;
        }
        assert_relative_eq!(table.alpha_bar(1000).unwrap(), prod, max_relative = 1e-12);
        // Frozen value from an extended-precision evaluation.
        assert_relative_eq!(
            table.alpha_bar(1000).unwrap(),
            4.035829765375683e-5,
            max_relative = 1e-10
        );
    }

    #[test]
    fn alpha_bar_strictly_decreasing() {
        for spec in [
            ScheduleSpec::default(),
            ScheduleSpec {
                kind: ScheduleKind::Quadratic,
                ..ScheduleSpec::default()
            },
            ScheduleSpec {
                kind: ScheduleKind::Cosine,
                ..ScheduleSpec::default()
            },
        ] {
            let table: ScheduleTable<f64> = ScheduleTable::build(&spec).unwrap();
            let ab = table.alpha_bars();
            for t in 1..ab.len() {
                assert!(ab[t] < ab[t - 1], "{:?} not decreasing at t={}", spec.kind, t + 1);
            }
            for (i, &b) in table.betas().iter().enumerate() {
                assert!(b > 0.0 && b < 1.0, "beta out of range at t={}", i + 1);
            }
        }
    }

    #[test]
    fn recursion_invariant_holds() {
        let table = ddpm();
        let ab = table.alpha_bars();
        let a = table.alphas();
        assert_relative_eq!(ab[0], a[0], max_relative = 1e-15);
        for t in 1..ab.len() {
            assert_relative_eq!(ab[t], ab[t - 1] * a[t], max_relative = 1e-12);
        }
    }

    #[test]
    fn quadratic_is_linear_in_sqrt_space() {
        let spec = ScheduleSpec {
            kind: ScheduleKind::Quadratic,
            ..ScheduleSpec::default()
        };
        let table: ScheduleTable<f64> = ScheduleTable::build(&spec).unwrap();
        let r: Vec<f64> = table.betas().iter().map(|b| b.sqrt()).collect();
        let step = (0.02f64.sqrt() - 1e-4f64.sqrt()) / 999.0;
        for t in 1..r.len() {
            assert_relative_eq!(r[t] - r[t - 1], step, max_relative = 1e-9);
        }
        assert_eq!(table.beta(1).unwrap(), 1e-4);
        assert_relative_eq!(table.beta(1000).unwrap(), 0.02, max_relative = 1e-15);
    }

    #[test]
    fn cosine_betas_clipped_and_valid() {
        let spec = ScheduleSpec {
            kind: ScheduleKind::Cosine,
            ..ScheduleSpec::default()
        };
        let table: ScheduleTable<f64> = ScheduleTable::build(&spec).unwrap();
        for &b in table.betas() {
            assert!((1e-8..=0.999).contains(&b));
        }
        // The profile reaches the upper clip near t = T.
        assert_eq!(table.beta(1000).unwrap(), 0.999);
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = [
            ScheduleSpec {
                t_total: 1,
                ..ScheduleSpec::default()
            },
            ScheduleSpec {
                beta_start: 0.0,
                ..ScheduleSpec::default()
            },
            ScheduleSpec {
                beta_start: 0.02,
                beta_end: 0.01,
                ..ScheduleSpec::default()
            },
            ScheduleSpec {
                beta_end: 1.0,
                ..ScheduleSpec::default()
            },
        ];
        for spec in bad {
            assert!(matches!(
                ScheduleTable::<f64>::build(&spec),
                Err(Error::InvalidSpec(_))
            ));
        }
    }

    #[test]
    fn forward_sample_linearity_and_coeffs() {
        let table = ddpm();
        // Zero data: the output is the scaled noise.
        let out = table.forward_sample(&[0.0, 0.0], 700, &[1.0, -2.0]).unwrap();
        let (_, s) = table.marginal_coeffs(700).unwrap();
        assert_eq!(out, vec![s, -2.0 * s]);

        // Zero noise: the output is the scaled data.
        let out = table.forward_sample(&[3.0, 4.0], 700, &[0.0, 0.0]).unwrap();
        let (a, _) = table.marginal_coeffs(700).unwrap();
        assert_eq!(out, vec![3.0 * a, 4.0 * a]);

        // Squared coefficients sum to one at every step.
        for t in 1..=1000 {
            let (a, s) = table.marginal_coeffs(t).unwrap();
            assert!((a * a + s * s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn forward_sample_frozen_endpoint() {
        let table = ddpm();
        let out = table
            .forward_sample(&[1.0, 0.0], 1000, &[0.0, 1.0])
            .unwrap();
        let ab: f64 = 4.035829765375683e-5;
        assert_relative_eq!(out[0], ab.sqrt(), max_relative = 1e-9);
        assert_relative_eq!(out[1], (1.0 - ab).sqrt(), max_relative = 1e-9);
    }

    #[test]
    fn out_of_range_step_rejected() {
        let table = ddpm();
        assert!(matches!(
            table.forward_sample(&[0.0, 0.0], 0, &[0.0, 0.0]),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            table.beta(1001),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn builds_at_f32() {
        let table: ScheduleTable<f32> = ScheduleTable::build(&ScheduleSpec::default()).unwrap();
        assert_eq!(table.t_total(), 1000);
        assert!(table.alpha_bar(1000).unwrap() > 0.0);
    }
}
