//! Stability certificates for products of (sub-)stochastic matrices.
//!
//! A sequence of single-row updates is cut into slices: a slice opens at the
//! first row whose running row sum drops below one and closes once every row
//! has. Each finished slice has infinity norm at most
//! `1 - beta1^(len-1) (1 - beta2)`, and the [`certify`] module turns a list of
//! slice lengths into a stability certificate. [`sim`] generates such
//! sequences from a mobile leader-follower network.

pub mod bounds;
pub mod certify;
pub mod error;
pub mod harness;
pub mod io;
pub mod matrix;
pub mod parallel;
pub mod products;
pub mod sim;
pub mod slice;

pub use bounds::{slice_gap, slice_norm_bound, RowBoundInput};
pub use certify::{Case, Certificate, GammaGrid, SubsetDeclaration, Verdict};
pub use error::{Error, Result};
pub use matrix::{
    inf_norm, multiply, spectral_radius, validate_update, Matrix, Params, SystemMatrix,
};
pub use parallel::{par_map, Execution};
pub use products::{adversarial_slice, run_products, ProductSettings};
pub use sim::{run_leader_follower, World, WorldConfig};
pub use slice::{run_sequence, Mode, Slice, SliceEvent, SliceState};
