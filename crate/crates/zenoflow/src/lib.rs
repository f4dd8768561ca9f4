//! Measurement-driven transport of free fermions on decorated lattices.
//!
//! Sites are repeatedly measured following a periodic schedule; only small
//! sets of sites (mostly isolated bonds) evolve freely between measurements.
//! The crate provides
//!
//! * [`lattice`] — geometry, measurement schedules and validation,
//! * [`quantum`] — exact free-fermion evolution of correlation matrices,
//! * [`zeno`] — the classical hopping model reached in the frequent
//!   measurement limit, its counting statistics and Bloch analysis,
//! * [`bulkedge`] — the closed-form bulk and edge parts of the flow,
//! * [`nearzeno`] — the first-order correction away from that limit.

pub mod bulkedge;
pub mod error;
pub mod lattice;
pub mod nearzeno;
pub mod quantum;
pub mod zeno;

pub use error::{Error, Result};
