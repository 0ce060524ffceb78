//! Scalar abstraction for the analysis core.
//!
//! Schedule construction, the increment bounds, the sampler/weighting math
//! and the continuous-schedule analysis are generic over [`Real`], so they
//! run at `f32` or `f64`. The trainer and the CLI use the `f64` aliases
//! exported from the crate root.

use std::fmt::{Debug, Display};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Conversion from an `f64` constant or config value.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to Real")
    }

    /// Step count or index as a scalar.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize converts to Real")
    }

    /// Widening conversion used for reporting and serialization.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl<T> Real for T where
    T: num_traits::Float
        + num_traits::FromPrimitive
        + num_traits::ToPrimitive
        + num_traits::NumAssign
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}
