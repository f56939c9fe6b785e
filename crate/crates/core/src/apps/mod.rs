//! Pricing applications and test fixtures.

pub mod hotlane;
pub mod maps;
pub mod multiproduct;
pub mod normal;
pub mod quadratic;
pub mod truncgp;

pub use hotlane::{HotLaneInterval, HotLaneModel, HotLaneSpec};
pub use maps::ScalarMap;
pub use multiproduct::{mnl_probs, mnl_score, MultiproductModel, MultiproductSpec};
pub use quadratic::QuadraticModel;
pub use truncgp::{gp_fit, TruncGpItem, TruncGpModel, TruncGpSpec};
