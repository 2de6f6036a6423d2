//! Domain geometry, device rasterization, wave-prior encoding and model
//! input assembly.

mod device;
mod domain;
mod instance;
mod prior;
mod source;

pub use device::{rasterize_device, DeviceKind, DeviceSpec, Port, PortSide, Rect};
pub use domain::{build_domain, SimDomain};
pub use instance::{assemble_instance, SimulationInstance};
pub use prior::wave_prior;
pub use source::{
    mask_source, mask_sources, PortGeometry, SourceProfile, SourceSpec, WAVELENGTH_BOUNDS,
};
