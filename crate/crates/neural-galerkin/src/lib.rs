//! Structure-preserving time integration of nonlinear parametrizations for
//! evolution equations.
//!
//! A parametrized field `u(θ, x)` — typically a small periodic network —
//! follows a PDE `∂u/∂t = f(x, u)` by moving its parameter vector with the
//! least-squares optimal velocity over a set of sample points. On top of
//! that tangent-space flow, the crate provides machinery that conserves
//! *sampled* invariants (mass, energy estimated from point samples):
//! constrained stage velocities, post-step embeddings onto the invariant
//! manifold, and structure-preserving weighted systems for factorizable
//! Hamiltonians. Pseudo-spectral reference solvers and an experiment
//! harness (behind the `ng` command-line tool) close the loop for the
//! benchmark equations.
//!
//! The rendered guide under `book/` walks through every layer; its code
//! blocks compile and run as doctests via the hook at the bottom of this
//! file, so guide and library cannot drift apart.

pub mod embed;
pub mod experiment;
pub mod galerkin;
pub mod models;
pub mod params;
pub mod reference;
pub mod timeint;
pub mod weighted;

/// Runs every fenced Rust block in the guide as a doctest. Each struct's
/// docs are one book chapter included verbatim; `cargo test` therefore
/// fails if a chapter's example stops compiling or asserting.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            pub struct $name;
        };
    }

    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(Parametrizations, "../../../book/src/parametrizations.md");
    chapter!(TimeStepping, "../../../book/src/time-stepping.md");
    chapter!(Conservation, "../../../book/src/conservation.md");
    chapter!(Hamiltonian, "../../../book/src/hamiltonian.md");
    chapter!(ReferenceSolvers, "../../../book/src/reference-solvers.md");
    chapter!(Experiments, "../../../book/src/experiments.md");
    chapter!(FileFormats, "../../../book/src/file-formats.md");
}
