pub mod dilation;
pub mod metrics;
pub mod slope;
pub mod sizing;
pub mod split_step;

pub use dilation::dilation_exact;
pub use metrics::{compare, ErrorMetrics};
pub use slope::{convergence_slope, linear_fit, SlopeFit};
pub use split_step::{default_dt, split_step_evolve, split_step_evolve_with, split_step_observe, OracleRun, SplitStepOptions};
pub use sizing::{trajectory_axes, GridSizing};
