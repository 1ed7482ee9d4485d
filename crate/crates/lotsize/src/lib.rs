//! Single-item capacitated lot sizing with a one-breakpoint all-units
//! discount and non-increasing prices.
//!
//! [`solver::solve`] runs the segment dynamic program over the augmented
//! AVL tree in [`bst`]; [`oracle`] is the pseudo-polynomial table DP used to
//! check it.

pub mod bst;
pub mod cli;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod segments;
pub mod solver;

pub use model::{Instance, Money, Plan, ValidatedInstance};
