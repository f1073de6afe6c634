//! Numerical audits of the Carleman machinery for the beam, heat and coupled systems.

pub mod beam;
pub mod coupled;
pub mod decomposition;
pub mod heat;
pub mod ibp;
pub mod samples;
pub mod symbolic;

pub use decomposition::{conjugate_decompose, AuditGrid, ConjugateDecomposition, TimeDerivatives, Zd};
pub use samples::{BeamSample, HeatSample};
