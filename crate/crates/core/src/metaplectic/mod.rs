pub mod frame;
pub mod grid_ops;
pub mod transport;

pub use frame::{frame_from_symplectic, siegel_action, trace_identity_residual, HagedornFrame, SiegelMatrix};
pub use grid_ops::metaplectic_apply_grid;
pub use transport::transport_excited;
