//! Layered task and motion planning for urban driving with safety-aware
//! replanning, plus an abstract traffic simulator for evaluating it.

pub mod behavior;
pub mod executive;
pub mod experiment;
pub mod lane_map;
pub mod motion;
pub mod optimizer;
pub mod safety;
pub mod scenario;
pub mod service;
pub mod sim;
