//! Detected categories and their per-class reference statistics.

use crate::camera::Size3;

pub const NUM_CLASSES: usize = 3;
pub const CAR: usize = 0;
pub const PEDESTRIAN: usize = 1;
pub const CYCLIST: usize = 2;
/// Class id for annotated categories outside the detected set (Van, Truck, ...).
pub const OTHER: usize = NUM_CLASSES;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["Car", "Pedestrian", "Cyclist"];

pub fn class_name(id: usize) -> &'static str {
    CLASS_NAMES.get(id).copied().unwrap_or("Misc")
}

pub fn class_id(name: &str) -> usize {
    CLASS_NAMES.iter().position(|n| *n == name).unwrap_or(OTHER)
}

/// Annotated categories that the benchmark neither rewards nor penalizes when
/// evaluating `class` (e.g. a Van detected as a Car).
pub fn neighbor_class(class: usize) -> Option<&'static str> {
    match class {
        CAR => Some("Van"),
        PEDESTRIAN => Some("Person_sitting"),
        _ => None,
    }
}

/// Reference 3D size and relative-depth statistics for one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassPrior {
    pub size: Size3,
    pub mu_z: f64,
    pub sigma_z: f64,
}

impl ClassPrior {
    pub fn is_valid(&self) -> bool {
        self.size.is_valid() && self.mu_z > 0.0 && self.sigma_z > 0.0
    }
}

/// Reference sizes (W, H, L) in meters.
pub const CAR_SIZE: Size3 = Size3::new(1.63, 1.53, 3.84);
pub const PEDESTRIAN_SIZE: Size3 = Size3::new(0.63, 1.77, 0.83);
pub const CYCLIST_SIZE: Size3 = Size3::new(0.57, 1.73, 1.78);

pub const DEFAULT_MU_Z: f64 = 3.0;
pub const DEFAULT_SIGMA_Z: f64 = 1.0;

pub fn default_priors() -> [ClassPrior; NUM_CLASSES] {
    [CAR_SIZE, PEDESTRIAN_SIZE, CYCLIST_SIZE].map(|size| ClassPrior {
        size,
        mu_z: DEFAULT_MU_Z,
        sigma_z: DEFAULT_SIGMA_Z,
    })
}
