//! Offline all-pairs path table between working-area nodes.

use serde::{Deserialize, Serialize};

use super::grid::{GridMap, Point};
use super::planner::{Cost, Path, PathPlanner};
use super::SpatialError;
use crate::codec::{self, CodecError, Reader, Writer};

const MAGIC: [u8; 4] = *b"TPNG";
pub const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaNode {
    pub id: String,
    #[serde(flatten)]
    pub position: Point,
}

/// Paths for every ordered node pair `(i, j)`, `i != j`, that has a route.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeGraph {
    grid_hash: [u8; 32],
    nodes: Vec<AreaNode>,
    // row-major n x n; diagonal always None
    paths: Vec<Option<Path>>,
}

impl NodeGraph {
    /// A graph with no nodes.
    pub fn empty(grid: &GridMap) -> Self {
        Self {
            grid_hash: grid.hash(),
            nodes: Vec::new(),
            paths: Vec::new(),
        }
    }

    pub fn nodes(&self) -> &[AreaNode] {
        &self.nodes
    }

    pub fn grid_hash(&self) -> [u8; 32] {
        self.grid_hash
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn path(&self, from: usize, to: usize) -> Option<&Path> {
        let n = self.nodes.len();
        if from >= n || to >= n {
            return None;
        }
        self.paths[from * n + to].as_ref()
    }

    /// Travel length between two nodes; zero for the same node.
    pub fn distance(&self, from: usize, to: usize) -> Option<f64> {
        if from == to && from < self.nodes.len() {
            return Some(0.0);
        }
        self.path(from, to).map(|p| p.length)
    }

    /// Number of stored directed entries.
    pub fn entry_count(&self) -> usize {
        self.paths.iter().filter(|p| p.is_some()).count()
    }

    pub fn is_complete(&self) -> bool {
        let n = self.nodes.len();
        self.entry_count() == n * n.saturating_sub(1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(&self.grid_hash);
        w.u32(self.nodes.len() as u32);
        for node in &self.nodes {
            w.str(&node.id);
            w.f64(node.position.x);
            w.f64(node.position.y);
        }
        let n = self.nodes.len();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                match &self.paths[i * n + j] {
                    None => w.u8(0),
                    Some(p) => {
                        w.u8(1);
                        w.u32(p.cost.axial);
                        w.u32(p.cost.diagonal);
                        w.f64(p.length);
                        w.u32(p.waypoints.len() as u32);
                        for q in &p.waypoints {
                            w.f64(q.x);
                            w.f64(q.y);
                        }
                    }
                }
            }
        }
        codec::seal(MAGIC, GRAPH_FORMAT_VERSION, &w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SpatialError> {
        let payload = codec::open(MAGIC, GRAPH_FORMAT_VERSION, bytes)?;
        let mut r = Reader::new(payload);
        let grid_hash: [u8; 32] = r.raw(32)?.try_into().unwrap();
        let n = r.u32()? as usize;
        let mut nodes = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let id = r.str()?;
            let x = r.f64()?;
            let y = r.f64()?;
            nodes.push(AreaNode {
                id,
                position: Point::new(x, y),
            });
        }
        let mut paths = vec![None; n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                match r.u8()? {
                    0 => {}
                    1 => {
                        let cost = Cost {
                            axial: r.u32()?,
                            diagonal: r.u32()?,
                        };
                        let length = r.f64()?;
                        let m = r.u32()? as usize;
                        let mut waypoints = Vec::with_capacity(m.min(1 << 20));
                        for _ in 0..m {
                            let x = r.f64()?;
                            let y = r.f64()?;
                            waypoints.push(Point::new(x, y));
                        }
                        paths[i * n + j] = Some(Path {
                            waypoints,
                            cost,
                            length,
                        });
                    }
                    t => return Err(CodecError::Malformed(format!("path tag {t}")).into()),
                }
            }
        }
        r.finish()?;
        Ok(Self {
            grid_hash,
            nodes,
            paths,
        })
    }

    /// Loads a graph and checks it was built on `grid`.
    pub fn from_bytes_for(bytes: &[u8], grid: &GridMap) -> Result<Self, SpatialError> {
        let g = Self::from_bytes(bytes)?;
        if g.grid_hash != grid.hash() {
            return Err(SpatialError::GridMismatch);
        }
        Ok(g)
    }
}

/// Plans every ordered pair of distinct nodes. Unreachable pairs are absent.
pub fn build_node_graph<P: PathPlanner>(
    grid: &GridMap,
    nodes: &[AreaNode],
    planner: &P,
) -> Result<NodeGraph, SpatialError> {
    if nodes.len() < 2 {
        return Err(SpatialError::TooFewNodes(nodes.len()));
    }
    for node in nodes {
        if !grid.is_free_point(node.position) {
            return Err(SpatialError::NodeNotFree(node.id.clone()));
        }
    }
    let n = nodes.len();
    let mut paths = vec![None; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            paths[i * n + j] = planner.plan(grid, nodes[i].position, nodes[j].position)?;
        }
    }
    Ok(NodeGraph {
        grid_hash: grid.hash(),
        nodes: nodes.to_vec(),
        paths,
    })
}

/// Node closest (Euclidean) to `position`; ties go to the smallest id.
pub fn nearest_free_node(position: Point, nodes: &[AreaNode]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, node) in nodes.iter().enumerate() {
        let d = node.position.dist_sq(position);
        best = match best {
            None => Some((i, d)),
            Some((b, bd)) if d < bd || (d == bd && node.id < nodes[b].id) => Some((i, d)),
            keep => keep,
        };
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::grid::Rect;
    use crate::spatial::planner::GridAstar;

    fn node(id: &str, x: f64, y: f64) -> AreaNode {
        AreaNode {
            id: id.into(),
            position: Point::new(x, y),
        }
    }

    #[test]
    fn two_nodes_symmetric() {
        let g = GridMap::rasterize(10.0, 10.0, &[], 1.0).unwrap();
        let nodes = [node("a", 0.5, 0.5), node("b", 6.5, 3.5)];
        let graph = build_node_graph(&g, &nodes, &GridAstar).unwrap();
        assert_eq!(graph.entry_count(), 2);
        assert_eq!(graph.path(0, 1).unwrap().length, graph.path(1, 0).unwrap().length);
        assert!(graph.path(0, 0).is_none());
    }

    #[test]
    fn node_in_obstacle_named() {
        let r = Rect { x_min: 2.0, y_min: 2.0, x_max: 4.0, y_max: 4.0 };
        let g = GridMap::rasterize(10.0, 10.0, &[r], 1.0).unwrap();
        let nodes = [node("ok", 0.5, 0.5), node("inside", 3.0, 3.0)];
        match build_node_graph(&g, &nodes, &GridAstar) {
            Err(SpatialError::NodeNotFree(id)) => assert_eq!(id, "inside"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nearest_node_rules() {
        let nodes = [node("b", 1.0, 1.0), node("c", 5.0, 5.0), node("a", 3.0, 3.0)];
        assert_eq!(nearest_free_node(Point::new(5.0, 5.0), &nodes), Some(1));
        assert_eq!(nearest_free_node(Point::new(1.1, 0.9), &nodes), Some(0));
        // equidistant between b (1,1) and a (3,3): a wins on id
        assert_eq!(nearest_free_node(Point::new(2.0, 2.0), &nodes), Some(2));
        assert_eq!(nearest_free_node(Point::new(2.0, 2.0), &[]), None);
    }

    #[test]
    fn empty_graph_file_round_trips() {
        let g = GridMap::rasterize(3.0, 3.0, &[], 1.0).unwrap();
        let empty = NodeGraph::empty(&g);
        let bytes = empty.to_bytes();
        assert_eq!(NodeGraph::from_bytes_for(&bytes, &g).unwrap(), empty);
    }

    #[test]
    fn corrupt_file_fails_closed() {
        let g = GridMap::rasterize(10.0, 10.0, &[], 1.0).unwrap();
        let nodes = [node("a", 0.5, 0.5), node("b", 6.5, 3.5)];
        let graph = build_node_graph(&g, &nodes, &GridAstar).unwrap();
        let mut bytes = graph.to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(
            NodeGraph::from_bytes(&bytes),
            Err(SpatialError::Codec(CodecError::Checksum))
        ));
        let good = graph.to_bytes();
        assert!(matches!(
            NodeGraph::from_bytes(&good[..good.len() - 10]),
            Err(SpatialError::Codec(CodecError::Truncated { .. }))
        ));
        let other = GridMap::rasterize(11.0, 10.0, &[], 1.0).unwrap();
        assert!(matches!(
            NodeGraph::from_bytes_for(&good, &other),
            Err(SpatialError::GridMismatch)
        ));
    }
}
