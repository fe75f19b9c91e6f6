//! Multi-robot object retrieval in planar clutter.
//!
//! A team of fixed-base manipulators must fetch target objects from a
//! cluttered tabletop. Each robot reasons about which clutter blocks its
//! grasp (obstacle selection), tasks are assigned with an
//! overlap-corrected utility (task allocation), and each retrieval is
//! solved by an iteratively expanding AND/OR graph coupled to a
//! sampling-based motion layer. The executor coordinates robots
//! turn-by-turn against a shared knowledge base; the harness sweeps
//! scenario sizes and checks the O(nd) search-effort bound.
//!
//! Module map:
//! - [`world`]: workspace model, scenario generation, JSON persistence
//! - [`geometry`]: points, rectangles, circular sectors
//! - [`selection`]: grasp fans and inflated selection regions
//! - [`allocation`]: overlap-corrected utilities and greedy assignment
//! - [`taskgraph`]: AND/OR graph templates and the expanding network
//! - [`motion`]: grasp poses and RRT path planning for a disc
//! - [`executor`]: grounding, turn-based execution, traces, replay
//! - [`harness`]: benchmark sweeps, CSV metrics, aggregates
//! - [`render`]: deterministic SVG scene rendering

pub mod allocation;
pub mod executor;
pub mod geometry;
pub mod harness;
pub mod motion;
pub mod render;
pub mod selection;
pub mod taskgraph;
pub mod world;
