pub mod bargmann;
pub mod grid;
pub mod io;
pub mod sobolev;
pub mod wavepacket;

pub use bargmann::{bargmann_norm, fourier_bargmann, reconstruct_from_bargmann, PhaseSpaceGrid};
pub use grid::{inner_product, weyl_heisenberg, Axis, GridWavefunction};
pub use sobolev::weighted_sobolev_norm;
pub use wavepacket::{apply_creation, eval_wavepacket, GaussianWavepacket, MultiIndexPolynomial};
