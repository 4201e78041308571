//! Instance-memory trajectory prediction.
//!
//! Training scenes are encoded into a paired past/intention memory bank.
//! At prediction time a learned addresser retrieves the most similar stored
//! instances, their intentions are decoded into destination anchors and
//! clustered into `K` destinations, and a fulfillment network completes a
//! full future trajectory for each destination.

pub mod addresser;
mod binio;
pub mod datasets;
pub mod error;
pub mod evalkit;
pub mod features;
pub mod fulfillment;
pub mod intention;
pub mod kv;
pub mod membank;
pub mod model;
pub mod numkit;
pub mod pipeline;

pub use error::{Error, Result};
pub use addresser::{Addresser, AddresserNets};
pub use datasets::{Point, Scene};
pub use evalkit::MetricReport;
pub use features::FeatureNets;
pub use fulfillment::FulfillNets;
pub use membank::MemoryBankPair;
pub use model::{PredictParams, PredictionSet, TrajectoryModel};
pub use pipeline::{Config, Pipeline};
