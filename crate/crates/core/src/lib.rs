//! H-type (Heisenberg-type) nilpotent Lie groups: group structure, the
//! subelliptic heat kernel evaluated from its Fourier integral representation,
//! Carnot–Carathéodory geometry in geodesic coordinates, exact polynomial heat
//! semigroup calculus, and numerical checks of heat-kernel and gradient
//! estimates.

pub mod algebra;
pub mod error;
pub mod geometry;
pub mod heat_kernel;
pub mod polynomial;
pub mod quadrature;
pub mod special;
pub mod verification;

pub use algebra::{EuclideanGradient, GrowthCertificate, HTypeGroup, Point, ScalarField};
pub use error::{Error, Result};
