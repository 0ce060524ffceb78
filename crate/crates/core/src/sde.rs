//! Continuous scale-noise schedule analysis.
//!
//! A schedule is the pair `(s(t), sigma^2(t))` defining the perturbation
//! `x_t = s(t) * x0 + s(t) * sigma(t) * eps`, together with the rates
//! `ds/dt` and `d(sigma^2)/dt`. Between two nearby times `t` and `t + dt`
//! (marginals with independent noises) the step increment has
//!
//! * mean coefficient `Delta = s(t+dt) - s(t)`,
//! * variance `Sigma = s(t+dt)^2 sigma(t+dt)^2 + s(t)^2 sigma(t)^2`,
//!
//! with rates `Delta_dot = s_dot(t+dt) - s_dot(t)` and `Sigma_dot` obtained
//! by differentiating each product against its own argument.
//!
//! Three presets are provided. The variance-preserving schedule mirrors
//! the discrete linear-beta analysis (same exponent, with `t` rescaled to
//! the unit interval); the variance-exploding one uses `sigma^2 = t`; the
//! third uses `sigma^2 = t^2`. Note the stored noise rate is the rate of
//! `sigma^2`, not of `sigma` — it is what the increment formulas consume.

use crate::error::{Error, Result};
use crate::increment::Area;
use crate::num::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdeKind {
    Vp,
    Ve,
    Edm,
    Custom,
}

/// Parameters of the variance-preserving preset. For consistency with a
/// discrete table over `T` steps evaluated on the unit interval, use
/// `delta_beta = T * table.delta_beta()` and `beta0 = T * table.beta0()`.
#[derive(Clone, Copy, Debug)]
pub struct VpParams<F> {
    pub delta_beta: F,
    pub beta0: F,
}

type ScalarFn<F> = Box<dyn Fn(F) -> F + Send + Sync>;

/// Bundle of pure schedule functions; safe for concurrent evaluation.
pub struct SdeSchedule<F> {
    kind: SdeKind,
    scale: ScalarFn<F>,
    noise_var: ScalarFn<F>,
    scale_rate: ScalarFn<F>,
    noise_var_rate: ScalarFn<F>,
}

/// Step-increment moments and their rates at one `(t, dt)`.
#[derive(Clone, Copy, Debug)]
pub struct SdeIncrement<F> {
    /// `Delta`: coefficient of the data point in the increment mean.
    pub mean_coeff: F,
    /// `Sigma`: increment variance.
    pub variance: F,
    /// `Delta_dot`.
    pub mean_coeff_rate: F,
    /// `Sigma_dot`.
    pub variance_rate: F,
}

impl<F: Real> SdeSchedule<F> {
    /// Variance-preserving: `s = exp(-delta_beta t^2/4 - beta0 t/2)`,
    /// `sigma^2 = exp(delta_beta t^2/2 + beta0 t) - 1`, so `s^2 (1 + sigma^2) = 1`.
    pub fn vp(params: VpParams<F>) -> Result<Self> {
        if !params.delta_beta.is_finite() || !params.beta0.is_finite() {
            return Err(Error::InvalidParameter(
                "vp parameters must be finite".into(),
            ));
        }
        let VpParams { delta_beta, beta0 } = params;
        let half = F::of(0.5);
        let quarter = F::of(0.25);
        let exponent = move |t: F| delta_beta * half * t * t + beta0 * t;
        let scale = move |t: F| (-(quarter * delta_beta * t * t + half * beta0 * t)).exp();
        Ok(SdeSchedule {
            kind: SdeKind::Vp,
            scale: Box::new(scale),
            noise_var: Box::new(move |t| exponent(t).exp() - F::one()),
            // d/dt of exp(-(delta_beta t^2/4 + beta0 t/2)) = -(delta_beta t + beta0)/2 * s.
            scale_rate: Box::new(move |t| {
                -half * (delta_beta * t + beta0) * scale(t)
            }),
            // d(sigma^2)/dt = (delta_beta t + beta0) * (1 + sigma^2).
            noise_var_rate: Box::new(move |t| (delta_beta * t + beta0) * exponent(t).exp()),
        })
    }

    /// Variance-exploding: `s = 1`, `sigma^2 = t`.
    pub fn ve() -> Self {
        SdeSchedule {
            kind: SdeKind::Ve,
            scale: Box::new(|_| F::one()),
            noise_var: Box::new(|t| t),
            scale_rate: Box::new(|_| F::zero()),
            noise_var_rate: Box::new(|_| F::one()),
        }
    }

    /// Unit scale with `sigma^2 = t^2`.
    pub fn edm() -> Self {
        SdeSchedule {
            kind: SdeKind::Edm,
            scale: Box::new(|_| F::one()),
            noise_var: Box::new(|t| t * t),
            scale_rate: Box::new(|_| F::zero()),
            noise_var_rate: Box::new(|t| F::of(2.0) * t),
        }
    }

    pub fn preset(kind: SdeKind, vp: Option<VpParams<F>>) -> Result<Self> {
        match kind {
            SdeKind::Vp => {
                let params = vp.ok_or_else(|| {
                    Error::InvalidParameter("vp preset needs {delta_beta, beta0}".into())
                })?;
                Self::vp(params)
            }
            SdeKind::Ve => Ok(Self::ve()),
            SdeKind::Edm => Ok(Self::edm()),
            SdeKind::Custom => Err(Error::InvalidParameter(
                "custom schedules are built from explicit functions".into(),
            )),
        }
    }

    /// User-supplied schedule. The rate functions are checked against
    /// central finite differences of the moment functions at the probe
    /// points (relative tolerance 1e-3) before the schedule is accepted.
    pub fn custom(
        scale: ScalarFn<F>,
        noise_var: ScalarFn<F>,
        scale_rate: ScalarFn<F>,
        noise_var_rate: ScalarFn<F>,
        probe: &[F],
    ) -> Result<Self> {
        if probe.is_empty() {
            return Err(Error::InvalidParameter(
                "custom schedule needs at least one probe point".into(),
            ));
        }
        let h = F::of(1e-5);
        let tol = F::of(1e-3);
        for &t in probe {
            let fd_s = ((scale)(t + h) - (scale)(t - h)) / (F::of(2.0) * h);
            let fd_v = ((noise_var)(t + h) - (noise_var)(t - h)) / (F::of(2.0) * h);
            let an_s = (scale_rate)(t);
            let an_v = (noise_var_rate)(t);
            let bad = |an: F, fd: F| {
                let scale = an.abs().max(fd.abs()).max(F::one());
                (an - fd).abs() > tol * scale
            };
            if bad(an_s, fd_s) || bad(an_v, fd_v) {
                return Err(Error::Domain(format!(
                    "custom schedule rates disagree with finite differences at t = {t}"
                )));
            }
        }
        Ok(SdeSchedule {
            kind: SdeKind::Custom,
            scale,
            noise_var,
            scale_rate,
            noise_var_rate,
        })
    }

    pub fn kind(&self) -> SdeKind {
        self.kind
    }

    pub fn scale(&self, t: F) -> F {
        (self.scale)(t)
    }

    pub fn noise_var(&self, t: F) -> F {
        (self.noise_var)(t)
    }

    pub fn scale_rate(&self, t: F) -> F {
        (self.scale_rate)(t)
    }

    pub fn noise_var_rate(&self, t: F) -> F {
        (self.noise_var_rate)(t)
    }

    fn check_args(&self, t: F, dt: F) -> Result<()> {
        if !(t >= F::zero()) || !t.is_finite() {
            return Err(Error::Domain(format!("t must be finite and >= 0, got {t}")));
        }
        if !(dt >= F::zero()) || !dt.is_finite() {
            return Err(Error::Domain(format!(
                "dt must be finite and >= 0, got {dt}"
            )));
        }
        Ok(())
    }

    fn finite(&self, x: F, what: &str, t: F) -> Result<F> {
        if x.is_finite() {
            Ok(x)
        } else {
            Err(Error::Domain(format!(
                "{what} is not finite at t = {t}; outside schedule support"
            )))
        }
    }

    /// `(Delta, Sigma)` between `t` and `t + dt`.
    pub fn increment_moments(&self, t: F, dt: F) -> Result<(F, F)> {
        self.check_args(t, dt)?;
        let tp = t + dt;
        let s = self.finite(self.scale(t), "scale", t)?;
        let sp = self.finite(self.scale(tp), "scale", tp)?;
        let v = self.finite(self.noise_var(t), "noise variance", t)?;
        let vp = self.finite(self.noise_var(tp), "noise variance", tp)?;
        Ok((sp - s, sp * sp * vp + s * s * v))
    }

    /// `(Delta_dot, Sigma_dot)` between `t` and `t + dt`. The variance rate
    /// pairs each factor's derivative with the argument of its moment
    /// counterpart:
    /// `Sigma_dot = s+^2 (sigma^2)'(t+dt) + sigma+^2 (s^2)'(t+dt)
    ///            + s^2 (sigma^2)'(t) + sigma^2 (s^2)'(t)`.
    pub fn increment_rates(&self, t: F, dt: F) -> Result<(F, F)> {
        self.check_args(t, dt)?;
        let tp = t + dt;
        let s = self.finite(self.scale(t), "scale", t)?;
        let sp = self.finite(self.scale(tp), "scale", tp)?;
        let v = self.finite(self.noise_var(t), "noise variance", t)?;
        let vp = self.finite(self.noise_var(tp), "noise variance", tp)?;
        let sd = self.finite(self.scale_rate(t), "scale rate", t)?;
        let spd = self.finite(self.scale_rate(tp), "scale rate", tp)?;
        let vd = self.finite(self.noise_var_rate(t), "noise variance rate", t)?;
        let vpd = self.finite(self.noise_var_rate(tp), "noise variance rate", tp)?;

        let two = F::of(2.0);
        let s2_rate = two * s * sd;
        let sp2_rate = two * sp * spd;
        let variance_rate = sp * sp * vpd + vp * sp2_rate + s * s * vd + v * s2_rate;
        Ok((spd - sd, variance_rate))
    }

    /// All four quantities at once.
    pub fn increment(&self, t: F, dt: F) -> Result<SdeIncrement<F>> {
        let (mean_coeff, variance) = self.increment_moments(t, dt)?;
        let (mean_coeff_rate, variance_rate) = self.increment_rates(t, dt)?;
        Ok(SdeIncrement {
            mean_coeff,
            variance,
            mean_coeff_rate,
            variance_rate,
        })
    }
}

/// Label each grid point: acceleration while the variance rate still rises,
/// deceleration once it falls, convergence once the variance is within
/// `1 - 1/r` of its grid maximum. The bands are contiguous by construction,
/// in that order; with a constant rate everything before the cutoff is
/// deceleration, with a strictly rising rate there is no deceleration band.
pub fn area_decomposition<F: Real>(
    sched: &SdeSchedule<F>,
    grid: &[F],
    dt: F,
    r: F,
) -> Result<Vec<Area>> {
    if grid.len() < 3 {
        return Err(Error::DegenerateGrid(format!(
            "need at least 3 grid points, got {}",
            grid.len()
        )));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::DegenerateGrid(
            "grid must be strictly increasing".into(),
        ));
    }
    if !(r > F::one()) {
        return Err(Error::InvalidParameter(format!(
            "magnitude r must be > 1, got {r}"
        )));
    }

    let mut variance = Vec::with_capacity(grid.len());
    let mut rate = Vec::with_capacity(grid.len());
    for &t in grid {
        let (_, var) = sched.increment_moments(t, dt)?;
        let (_, var_rate) = sched.increment_rates(t, dt)?;
        variance.push(var);
        rate.push(var_rate);
    }

    let var_max = variance.iter().cloned().fold(F::neg_infinity(), F::max);
    if !(var_max > F::zero()) {
        return Err(Error::Domain(
            "increment variance vanishes on the whole grid".into(),
        ));
    }
    let threshold = (F::one() - F::one() / r) * var_max;
    let i_conv = variance
        .iter()
        .position(|&v| v > threshold)
        .expect("grid maximum exceeds its own fraction");

    let mut i_peak = i_conv;
    for i in 0..i_conv {
        if rate[i + 1] <= rate[i] {
            i_peak = i;
            break;
        }
    }

    Ok((0..grid.len())
        .map(|i| {
            if i < i_peak {
                Area::Acceleration
            } else if i < i_conv {
                Area::Deceleration
            } else {
                Area::Convergence
            }
        })
        .collect())
}

/// Inclusive linspace helper for analysis grids.
pub fn linspace<F: Real>(start: F, end: F, n: usize) -> Vec<F> {
    if n == 1 {
        return vec![start];
    }
    let denom = F::of_usize(n - 1);
    (0..n)
        .map(|i| {
            let w = F::of_usize(i) / denom;
            start * (F::one() - w) + end * w
        })
        .collect()
}
