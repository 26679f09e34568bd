//! Base learners: penalized logistic and ridge regression, weighted hinge
//! classification, CART trees and random forests.

pub mod forest;
pub mod hinge;
pub mod logistic;
pub mod ridge;
pub mod tree;

pub use forest::{fit_forest, predict_forest, ForestConfig, ForestModel, TreeSamples};
pub use hinge::{fit_weighted_hinge, hinge_objective, hinge_subgradient, HingeConfig, WeightedHingeModel};
pub use logistic::{fit_logistic, sigmoid, softplus, LogisticConfig, LogisticModel, LogisticObjective};
pub use ridge::{fit_ridge, RidgeModel};
pub use tree::{fit_tree, BinnedFeatures, LeafValue, TreeConfig, TreeMode, TreeModel};
