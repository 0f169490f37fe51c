//! Numerical laboratory for three sub-Riemannian contact groups: the
//! Heisenberg group, the roto-translation group and the affine-additive group.
//!
//! The crate provides group laws and frames, horizontal curves, estimates of
//! Carnot–Carathéodory distances, discrete `p`-modulus of curve families,
//! the contact and quasiregular maps between the affine-additive and
//! Heisenberg groups, and Monte-Carlo volume growth scans.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ccdist;
pub mod curves;
pub mod error;
pub mod frames;
pub mod groups;
pub mod maps;
pub mod measure;
pub mod modulus;

pub use error::{Error, Result};
pub use groups::{GroupId, GroupPoint};
