//! Tractable functional forms for demand and cost, with the numerical machinery
//! built on them: radical and iterative polynomial solving, monopoly solutions,
//! generalized EOQ estimation, a desk-scale trade equilibrium, Laplace-log
//! classification, closed-form aggregation and several applied closed forms.

pub mod aggregation;
pub mod applications;
pub mod eoq;
pub mod io;
pub mod jet;
pub mod laplace_log;
pub mod dual;
pub mod error;
pub mod monopoly;
pub mod numeric;
pub mod poly_roots;
pub mod power_forms;
pub mod trade_equilibrium;
pub mod trade_firm;

pub use error::{Error, ErrorClass, Result};
pub use poly_roots::Polynomial;
pub use power_forms::{PowerSum, PowerTerm, TractabilityReport};
