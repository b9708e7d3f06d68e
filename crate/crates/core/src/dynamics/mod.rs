pub mod flow;
pub mod graph;
pub mod rates;
pub mod shadow;
pub mod splitting;

pub use flow::{flow_map, flow_point, integrate_flow, integrate_variational, FlowOptions, Trajectory};
pub use rates::{central_growth, estimate_rates, lyapunov_max, sample_k, time_thresholds, DynamicalRates, ThresholdParams, Thresholds};
pub use splitting::{adapted_frame, hyperbolic_splitting, Splitting};
