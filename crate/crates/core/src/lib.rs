//! Exact-arithmetic experiments on the distinguishing power of message-passing
//! GNNs with bounded-information aggregations, compared against color
//! refinement.

pub mod aggregation;
pub mod cr;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod lab;
pub mod mlp;
pub mod rational;
pub mod sample;
pub mod sweep;

pub use aggregation::{Aggregator, GrowthFit, MeasureMode, ValueDomain};
pub use cr::{cr_run, ColorHistory, ColorToken};
pub use error::{LabError, Result};
pub use gnn::{gnn_eval, CachedEvaluator, EvalTrace, GnnEval, GnnModel};
pub use graph::FeaturedGraph;
pub use mlp::{MlpLayer, MlpSpec};
pub use rational::{RVec, Rat};
pub use sweep::{measure_ln, Caps, GraphDomain};
