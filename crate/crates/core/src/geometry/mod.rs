//! Mesh loading and the canonical camera rig.

mod camera;
mod mesh;
mod obj;
pub mod shapes;

pub use camera::{canonical_viewpoints, CameraConfig, Viewpoint};
pub use mesh::{Corner, Mesh};
pub use obj::{load_mesh, parse_obj, parse_obj_bytes};
