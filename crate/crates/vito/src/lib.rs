//! Volumetric path tracing with per-voxel differentiation, plus the
//! surrounding machinery to reconstruct a scattering medium from posed
//! brightfield photographs and re-render it under new lighting, slicing, or
//! immersion media.

pub mod adjoint;
pub mod color;
pub mod initfit;
pub mod io;
pub mod math;
pub mod optimize;
pub mod phantom;
pub mod phase;
pub mod rerender;
pub mod rng;
pub mod sensor;
pub mod transport;
pub mod volume;
