//! Occupancy grid, grid path planning and the precomputed node graph.

mod graph;
mod grid;
mod planner;

pub use graph::{build_node_graph, nearest_free_node, AreaNode, NodeGraph, GRAPH_FORMAT_VERSION};
pub use grid::{Cell, GridMap, Point, Rect, MAX_CELLS};
pub use planner::{plan_path, Cost, GridAstar, Path, PathPlanner};

use thiserror::Error;

use crate::codec::CodecError;

/// Default grid resolution in meters.
pub const DEFAULT_RESOLUTION: f64 = 0.25;

#[derive(Debug, Error)]
pub enum SpatialError {
    #[error("resolution must be positive and finite, got {0}")]
    BadResolution(f64),
    #[error("grid of {width}x{height} cells exceeds the {max} cell limit")]
    TooManyCells {
        width: usize,
        height: usize,
        max: usize,
    },
    #[error("obstacle {0} lies outside the world bounds or is inverted")]
    ObstacleOutOfBounds(usize),
    #[error("point ({}, {}) is outside the grid", .0.x, .0.y)]
    OutOfBounds(Point),
    #[error("point ({}, {}) is in an occupied cell", .0.x, .0.y)]
    Occupied(Point),
    #[error("node `{0}` is not in free space")]
    NodeNotFree(String),
    #[error("node graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("node graph was built on a different grid")]
    GridMismatch,
    #[error(transparent)]
    Codec(#[from] CodecError),
}
