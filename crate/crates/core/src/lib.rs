//! Fencing strategy engine: piste calibration, motion-window features, two-stage
//! skill discovery, priority annotation, a priority-aware strategy model, and a
//! turn-based touch simulator.
//!
//! Positions are meters along a 14 m strip (left end at 0). The left fencer's
//! forward is `+x`, the right fencer's is `-x`. Priority modes are stored from the
//! left fencer's perspective and reflected when the right fencer queries a model.

pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod io;
pub mod kmeans;
pub mod labels;
pub mod pipeline;
pub mod priority;
pub mod sim;
pub mod skills;
pub mod strategy;
pub mod synthetic;
pub mod types;

pub use error::{Error, Result};
pub use types::{ActionId, BoutRecord, MotionWindow, PriorityMode, Side, StripPosition, Zone};
