//! Context-aware argument relation prediction with pool-based active
//! learning, transfer learning and a feature-based baseline.

pub mod acquire;
pub mod alloop;
pub mod baseline;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod graph;
pub mod markers;
pub mod optim;
pub mod pretrain;
pub mod relhead;
pub mod rng;
pub mod text;
pub mod vocab;
pub mod windowing;
