//! Spin projection of constrained unrestricted Hartree-Fock determinants by
//! non-orthogonal configuration interaction over spin reassignments.
//!
//! Pipeline: [`integrals`] loads an FCIDUMP, [`scf`] solves UHF with an
//! `<S^2>` constraint, [`projection`] builds the reassigned determinants,
//! [`noci`] diagonalizes in their span, and [`driver`] scans the constraint.
//! [`fci`] and [`recoupling`] provide exact references.

pub mod driver;
pub mod error;
pub mod fci;
pub mod integrals;
pub mod linalg;
pub mod noci;
pub mod projection;
pub mod recoupling;
pub mod scf;
pub mod selfcheck;
pub mod synthetic;

pub use driver::{run_restricted_scan, run_scan, ScanConfig, ScanMode, SpinScan};
pub use error::{Error, Result};
pub use fci::{solve_fci, FciResult};
pub use integrals::{read_fcidump, IntegralSet, SpinBlockedOperator, SystemSpec};
pub use noci::{classify_states, solve_noci, transition_element, NociSpectrum};
pub use projection::{build_noci_basis, NociBasis, ProjectionSpace};
pub use scf::{cuhf_solve, CUHFSolution, ScfOptions, SlaterDeterminant};
