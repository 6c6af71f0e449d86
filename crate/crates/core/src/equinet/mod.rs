//! SE(3)-equivariant message passing over heterogeneous complex graphs.

pub mod batchnorm;
pub mod cg;
pub mod irreps;
pub mod model;
pub mod params;
pub mod sh;
pub mod tp;
pub mod wigner;

pub use batchnorm::{equivariant_batch_norm, BnMode, BnParams, BnStats};
pub use irreps::{IrrepFeature, IrrepLayout};
pub use model::{
    aggregate_messages, edge_weight_net, forward, forward_features, invariant_pool, node_update, predict, readout,
    EdgeNet, ForwardOutput, GraphBatch, Model, ModelConfig, NodeProjection,
};
pub use params::{Bound, ParameterStore};
pub use sh::real_spherical_harmonics;
pub use tp::{tensor_product_message, PathSet, TpPlan};
pub use wigner::{random_rotation, wigner_d, Rotation};
