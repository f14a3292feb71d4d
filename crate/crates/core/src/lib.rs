//! Fourth-order symplectic splittings with extended-linear coefficients.
//!
//! - [`error_kernel`]: closed-form BCH error coefficients of any splitting.
//! - [`extended_linear`]: constructors for velocity-type, position-type and
//!   linear coefficient families, and the named algorithms built from them.
//! - [`bch_oracle`]: numerical extraction of the same coefficients from
//!   random matrix pairs.
//! - [`stepper`]: executable maps for separable Hamiltonians, including the
//!   force-gradient kick, and convergence studies.

pub mod bch_oracle;
pub mod error_kernel;
pub mod extended_linear;
pub mod linalg;
pub mod stepper;

pub use error_kernel::{
    classify_order, delta_g, error_coefficients, g_sum, prefix_suffix_sums, Arrangement, CoefficientFile,
    ErrorCoefficients, OrderClass, PrefixSums, SplitCoefficients,
};
pub use extended_linear::{make_family, Family, FamilyKind, FamilyOutput, ExtendedLinearParams};
