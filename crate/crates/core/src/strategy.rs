//! Time-step sampling and per-step loss weighting.
//!
//! The asymmetric sampler draws steps from a two-piece probability mass
//! function: every step `t <= tau` carries `k / (T + tau*(k-1))`, every step
//! `t > tau` carries `1 / (T + tau*(k-1))`. With `k > 1` this boosts the
//! early steps and suppresses the late ones; `k = 1` collapses to the
//! uniform sampler.
//!
//! Change-aware weighting rescales the variance-bound rate affinely into
//! `[1-lambda, lambda]`, so steps where the process changes fastest carry
//! the largest loss weight.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::increment::IncrementProfile;
use crate::num::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Uniform,
    Asymmetric,
}

/// Two-piece probability mass function over `{1..=T}`.
///
/// Immutable after construction. Sampling takes a caller-owned random
/// source; parallel consumers must each own a distinct seeded source.
#[derive(Clone, Debug)]
pub struct TimeStepSampler<F> {
    t_total: usize,
    kind: SamplerKind,
    tau: usize,
    k: F,
    p_early: F,
    p_late: F,
}

impl<F: Real> TimeStepSampler<F> {
    /// `pmf(t) = 1/T` for every step.
    pub fn uniform(t_total: usize) -> Result<Self> {
        if t_total < 1 {
            return Err(Error::InvalidParameter("t_total must be >= 1".into()));
        }
        let p = F::one() / F::of_usize(t_total);
        Ok(TimeStepSampler {
            t_total,
            kind: SamplerKind::Uniform,
            tau: t_total,
            k: F::one(),
            p_early: p,
            p_late: p,
        })
    }

    /// Boost steps `t <= tau` by the factor `k >= 1` relative to steps
    /// `t > tau`, keeping the mass normalized.
    pub fn asymmetric(t_total: usize, k: F, tau: usize) -> Result<Self> {
        if t_total < 1 {
            return Err(Error::InvalidParameter("t_total must be >= 1".into()));
        }
        if !(k >= F::one()) || !k.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "suppression intensity k must be >= 1, got {k}"
            )));
        }
        if tau < 1 || tau > t_total {
            return Err(Error::InvalidParameter(format!(
                "tau must lie in [1, {t_total}], got {tau}"
            )));
        }
        let total = F::of_usize(t_total) + F::of_usize(tau) * (k - F::one());
        Ok(TimeStepSampler {
            t_total,
            kind: SamplerKind::Asymmetric,
            tau,
            k,
            p_early: k / total,
            p_late: F::one() / total,
        })
    }

    pub fn t_total(&self) -> usize {
        self.t_total
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn k(&self) -> F {
        self.k
    }

    /// Per-step probability for `t <= tau`.
    pub fn p_early(&self) -> F {
        self.p_early
    }

    /// Per-step probability for `t > tau`.
    pub fn p_late(&self) -> F {
        self.p_late
    }

    pub fn pmf(&self, t: usize) -> Result<F> {
        if t < 1 || t > self.t_total {
            return Err(Error::IndexOutOfRange {
                t,
                max: self.t_total,
            });
        }
        Ok(if t <= self.tau {
            self.p_early
        } else {
            self.p_late
        })
    }

    /// Draw one step by inverting the two-piece CDF on a single uniform.
    ///
    /// The scaled coordinate `x = u * (T + tau*(k-1))` lands in `[0, k*tau)`
    /// for the boosted region and in `[k*tau, T + tau*(k-1))` otherwise.
    /// Integer offsets of this size subtract exactly in f64, so a `k = 1`
    /// sampler draws the same steps as the uniform one from the same
    /// random stream.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let k = self.k.as_f64();
        let tau = self.tau as f64;
        let total = self.t_total as f64 + tau * (k - 1.0);
        let x = rng.gen::<f64>() * total;
        let cut = k * tau;
        if x < cut {
            let t = (x / k) as usize + 1;
            t.min(self.tau)
        } else {
            let t = self.tau + 1 + (x - cut) as usize;
            t.min(self.t_total)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    Constant,
    /// Affine rescale of the variance-bound rate into `[1-lambda, lambda]`.
    Caw,
}

/// Per-step loss weights.
#[derive(Clone, Debug)]
pub struct WeightTable<F> {
    t_total: usize,
    kind: WeightKind,
    w: Vec<F>,
    lambda: F,
    source_min: F,
    source_max: F,
}

impl<F: Real> WeightTable<F> {
    /// `w(t) = c` for every step; the `c = 1` table is the plain objective.
    pub fn constant(t_total: usize, c: F) -> Result<Self> {
        if t_total < 1 {
            return Err(Error::InvalidParameter("t_total must be >= 1".into()));
        }
        if !(c > F::zero()) || !c.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "constant weight must be positive, got {c}"
            )));
        }
        Ok(WeightTable {
            t_total,
            kind: WeightKind::Constant,
            w: vec![c; t_total],
            lambda: c,
            source_min: c,
            source_max: c,
        })
    }

    /// Change-aware weights: clamp the variance-bound rate to
    /// `[max(0, min), min(1, max)]` and map that interval affinely onto
    /// `[1-lambda, lambda]`. The interpolation is written so the endpoints
    /// come out exact.
    pub fn change_aware(profile: &IncrementProfile<F>, lambda: F) -> Result<Self> {
        let half = F::of(0.5);
        if !(lambda >= half && lambda <= F::one()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must lie in [0.5, 1], got {lambda}"
            )));
        }
        let rate = profile.var_bound_rates();
        let raw_min = rate.iter().cloned().fold(F::infinity(), F::min);
        let raw_max = rate.iter().cloned().fold(F::neg_infinity(), F::max);
        let source_min = raw_min.max(F::zero());
        let source_max = raw_max.min(F::one());

        let w = if lambda == half || source_max <= source_min {
            vec![half; profile.t_total()]
        } else {
            let span = source_max - source_min;
            let lo = F::one() - lambda;
            rate.iter()
                .map(|&x| {
                    let u = (x.max(source_min).min(source_max) - source_min) / span;
                    let w = lo * (F::one() - u) + lambda * u;
                    w.max(lo).min(lambda)
                })
                .collect()
        };

        Ok(WeightTable {
            t_total: profile.t_total(),
            kind: WeightKind::Caw,
            w,
            lambda,
            source_min,
            source_max,
        })
    }

    pub fn t_total(&self) -> usize {
        self.t_total
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn lambda(&self) -> F {
        self.lambda
    }

    /// Clamped extrema of the source curve the affine map was fit to.
    pub fn source_range(&self) -> (F, F) {
        (self.source_min, self.source_max)
    }

    pub fn weight(&self, t: usize) -> Result<F> {
        if t < 1 || t > self.t_total {
            return Err(Error::IndexOutOfRange {
                t,
                max: self.t_total,
            });
        }
        Ok(self.w[t - 1])
    }

    pub fn weights(&self) -> &[F] {
        &self.w
    }
}
