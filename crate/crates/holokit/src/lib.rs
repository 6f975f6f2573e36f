//! Numerical laboratory for Kobayashi geometry of the ball and of convex
//! domains, orbit analytics of holomorphic self-maps, canonical model
//! extraction by rescaled iterates, stopping-time backward orbits and local
//! normal-form charts near strongly pseudoconvex boundary points.
//!
//! Distances follow one normalization throughout: on the unit disc
//! `k(0, t) = log((1 + t) / (1 - t))` (curvature -1). See [`NORMALIZATION`].
//!
//! The exact ball kernel in [`ball`] is generic over the scalar type
//! ([`Real`], implemented for `f32` and `f64`); everything built on sampling
//! and optimization works in `f64`.

pub mod ball;
pub mod cli;
pub mod convex;
pub mod dynamics;
pub mod error;
pub mod localization;
pub mod models_backward;
pub mod models_forward;
pub mod numerics;
pub mod series;

use num_traits::{Float, FloatConst, FromPrimitive};
use std::fmt::{Debug, Display};

pub use error::{HoloError, Result};
pub use numerics::{CPoint, ConvergenceReport, SeededSampler};

/// Scalar type accepted by the generic geometry kernel.
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Display + Send + Sync + Default + 'static
{
    /// Converts an `f64` literal into `Self`.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex scalar over `T`.
pub type Complex<T> = num_complex::Complex<T>;
/// Double-precision complex scalar.
pub type C64 = num_complex::Complex<f64>;
/// Double-precision point of `C^q`.
pub type Point = CPoint<f64>;
/// Single-precision point of `C^q`.
pub type Point32 = CPoint<f32>;
/// Dense complex matrix used by the `f64` pipelines.
pub type CMatrix = nalgebra::DMatrix<C64>;

/// Banner embedded in every report so numbers are never read under the wrong
/// curvature convention.
pub const NORMALIZATION: &str =
    "Kobayashi distance normalized so that k_D(0,t) = log((1+t)/(1-t)) on the unit disc (curvature -1)";
