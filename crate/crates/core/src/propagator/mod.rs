pub mod expansion;
pub mod hybrid;
pub mod io;

pub use expansion::{
    evolve_expansion, propagate_order0, propagate_order_n, propagate_order_n_with, segmented_propagate, ExpansionState, PropagationOptions,
};
pub use hybrid::{
    estimate_report, eval_hybrid, eval_hybrid_chart, hybrid_from_wavepacket, propagate_hybrid_leading, t_i_adjoint, t_i_apply, EstimateReport,
    HybridOptions, HybridState,
};
pub use io::{read_expansion, read_hybrid, write_expansion, write_hybrid};
