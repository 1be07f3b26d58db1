//! Multi-material density topology optimization for a magnetized rotor sector.
//!
//! Material properties are blended by a recursive tree of convex polytopes
//! with Wachspress coordinates, the field is a 2D nonlinear magnetostatic
//! problem on a single pole, and designs are improved by projected gradient
//! steps driven by adjoint sensitivities of the linked flux.

pub mod fem;
pub mod interp;
pub mod linalg;
pub mod materials;
pub mod mesh;
pub mod polytope;
pub mod sensitivity;
pub mod optimizer;
pub mod export;
pub mod study;
