//! Behavior-aware evacuation planning for capacitated buildings.
//!
//! Buildings are undirected graphs whose vertices and edges hold a bounded
//! number of people and whose edges take an integer number of ticks to
//! cross. Two planners are provided: an exact integer program over the
//! time-expanded graph ([`ilp`]) and a decomposition heuristic that solves
//! small programs around exits and stitches the results ([`bbevac`]).

pub mod bbevac;
pub mod behavior;
pub mod graph;
pub mod harness;
pub mod ilp;
pub mod schedule;

pub use behavior::{realize, BehaviorSpec};
pub use graph::{expand, load_instance, BuildingGraph, ExpandedGraph, Instance, Loc};
pub use schedule::{count_evacuated, expected_evacuated, validate_strong, validate_weak, Schedule};
