//! Chords on contact-type energy hypersurfaces of one-parameter Hamiltonian
//! families: shooting, pseudo-arclength continuation, Rabinowitz action
//! diagnostics and Floer-style flow lines of the action functional.

pub mod error;
pub mod flow;
pub mod action;
pub mod atlas_io;
pub mod banded;
pub mod floer;
pub mod chord;
pub mod contact;
pub mod continuation;
pub mod phase;
pub mod systems;

pub use error::{ChordError, Result};
pub use phase::{AffineLagrangian, Hamiltonian, LambdaChoice, PhaseState, SystemDescriptor};
