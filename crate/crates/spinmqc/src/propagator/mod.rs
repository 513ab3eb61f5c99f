//! Time evolution: Chebyshev expansion for state vectors, dense block
//! eigendecomposition for density matrices, and pulse trains.

pub mod chebyshev;
pub mod exact;
pub mod pulse;

pub use chebyshev::{Chebyshev, ChebyshevPlan, evolve_chebyshev};
pub use exact::{DensityMatrix, ExactEvolver, evolve_exact};
pub use pulse::{
    Event, Phase, PulseAxis, PulseEngine, PulseMode, PulseSequence, apply_pulse_sequence,
    cycle_propagator, dq16, dq16_pair, effective_hamiltonian,
};
