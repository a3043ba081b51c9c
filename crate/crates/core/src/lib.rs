//! Temporal occupancy flow graphs (TOFG) and the TOFG-GAT trajectory model.
//!
//! Pipeline: a [`scene::Scenario`] (lanes + agent tracks) is cut into
//! fine-grained lane segments ([`graph::build_lane_graph`]), each frame gets
//! occupancy, flow and typed edges ([`graph::Ofg`]), and consecutive frames are
//! stitched by temporal edges into a [`graph::Tofg`]. The [`model`] embeds the
//! graph, runs residual graph-attention layers over the fused edge set and
//! decodes the ego trajectory through multi-head cross-attention. [`metrics`]
//! and [`simulator`] cover open-loop and closed-loop evaluation.

pub mod geometry;
pub mod scene;
pub mod graph;
pub mod nn;
pub mod model;
pub mod metrics;
pub mod simulator;
