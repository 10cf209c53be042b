//! Implicit geometry, flow and correspondence fields for volumetric
//! deformable objects.
//!
//! The crate bundles a tetrahedral soft-body simulator that produces ground
//! truth, triplanar feature fields with small dense decoders, geodesic-aware
//! contrastive training for dense correspondence, evaluation metrics, and a
//! sampling-based planner that scores candidate action sequences by the
//! corresponded distance to a target configuration.

pub mod decoders;
pub mod error;
pub mod losses;
pub mod matching;
pub mod metrics;
pub mod neural;
pub mod par;
pub mod pipeline;
pub mod planner;
pub mod shapes;
pub mod softsim;
pub mod tetmesh;
pub mod triplane;

pub use error::{Error, Result};

/// 3-vector in meters unless noted.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Tool version embedded in every output.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Short stable hash of any serializable configuration.
pub fn config_hash<T: serde::Serialize + ?Sized>(cfg: &T) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(cfg).expect("configuration serializes");
    hex::encode(&Sha256::digest(&bytes)[..8])
}
