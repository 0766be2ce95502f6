//! 8-connected grid A* with exact move-count costs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::grid::{GridMap, Point};
use super::SpatialError;

/// Path cost as a count of axial and diagonal moves, in cell units.
///
/// Ordering compares `axial + diagonal * sqrt(2)` exactly using integer
/// arithmetic, so equal-cost paths compare equal regardless of move order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Cost {
    pub axial: u32,
    pub diagonal: u32,
}

impl Cost {
    pub const ZERO: Cost = Cost {
        axial: 0,
        diagonal: 0,
    };

    pub fn value(self) -> f64 {
        self.axial as f64 + self.diagonal as f64 * std::f64::consts::SQRT_2
    }

    /// Octile distance between two cells.
    pub fn octile(dx: usize, dy: usize) -> Cost {
        let (lo, hi) = if dx < dy { (dx, dy) } else { (dy, dx) };
        Cost {
            axial: (hi - lo) as u32,
            diagonal: lo as u32,
        }
    }

    fn add(self, other: Cost) -> Cost {
        Cost {
            axial: self.axial + other.axial,
            diagonal: self.diagonal + other.diagonal,
        }
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        // sign of (a1 - a2) + (d1 - d2) * sqrt2
        let da = self.axial as i64 - other.axial as i64;
        let dd = self.diagonal as i64 - other.diagonal as i64;
        match (da.signum(), dd.signum()) {
            (0, s) | (s, 0) => s.cmp(&0),
            (1, 1) => Ordering::Greater,
            (-1, -1) => Ordering::Less,
            // opposite signs: compare da^2 with 2*dd^2
            (sa, _) => {
                let lhs = (da as i128) * (da as i128);
                let rhs = 2 * (dd as i128) * (dd as i128);
                let mag = lhs.cmp(&rhs);
                if sa > 0 {
                    mag
                } else {
                    mag.reverse()
                }
            }
        }
    }
}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A planned route through cell centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<Point>,
    pub cost: Cost,
    /// Meters: `cost.value() * resolution`.
    pub length: f64,
}

impl Path {
    pub fn segment_sum(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].dist(w[1])).sum()
    }
}

/// Planner interface; the node graph builder is generic over it.
pub trait PathPlanner {
    fn plan(&self, grid: &GridMap, start: Point, goal: Point) -> Result<Option<Path>, SpatialError>;
}

/// Optimal 8-connected A* with octile heuristic. Diagonal moves may not cut
/// an occupied corner.
#[derive(Debug, Clone, Copy, Default)]
pub struct GridAstar;

impl PathPlanner for GridAstar {
    fn plan(&self, grid: &GridMap, start: Point, goal: Point) -> Result<Option<Path>, SpatialError> {
        plan_path(grid, start, goal)
    }
}

const MOVES: [(isize, isize); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Free neighbors of cell `i` with whether the move is diagonal.
pub(crate) fn neighbors(grid: &GridMap, i: usize) -> impl Iterator<Item = (usize, bool)> + '_ {
    let c = grid.cell_at(i);
    MOVES.iter().filter_map(move |&(dc, dr)| {
        let nc = c.col as isize + dc;
        let nr = c.row as isize + dr;
        if !grid.in_bounds(nc, nr) {
            return None;
        }
        let j = nr as usize * grid.width() + nc as usize;
        if grid_occupied(grid, j) {
            return None;
        }
        let diagonal = dc != 0 && dr != 0;
        if diagonal {
            let side_a = c.row * grid.width() + nc as usize;
            let side_b = nr as usize * grid.width() + c.col;
            if grid_occupied(grid, side_a) || grid_occupied(grid, side_b) {
                return None;
            }
        }
        Some((j, diagonal))
    })
}

fn grid_occupied(grid: &GridMap, i: usize) -> bool {
    grid.is_occupied(grid.cell_at(i))
}

#[derive(PartialEq, Eq)]
struct Open {
    f: Cost,
    index: usize,
}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (f, index)
        other
            .f
            .cmp(&self.f)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Plans an optimal path between the cells containing `start` and `goal`.
///
/// Returns `Ok(None)` when the goal is unreachable.
pub fn plan_path(grid: &GridMap, start: Point, goal: Point) -> Result<Option<Path>, SpatialError> {
    let s = grid
        .world_to_cell(start)
        .ok_or(SpatialError::OutOfBounds(start))?;
    let g = grid
        .world_to_cell(goal)
        .ok_or(SpatialError::OutOfBounds(goal))?;
    if grid.is_occupied(s) {
        return Err(SpatialError::Occupied(start));
    }
    if grid.is_occupied(g) {
        return Err(SpatialError::Occupied(goal));
    }
    let si = grid.index(s);
    let gi = grid.index(g);
    let h = |i: usize| {
        let c = grid.cell_at(i);
        Cost::octile(c.col.abs_diff(g.col), c.row.abs_diff(g.row))
    };

    let n = grid.len();
    let mut best: Vec<Option<Cost>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    best[si] = Some(Cost::ZERO);
    open.push(Open { f: h(si), index: si });

    while let Some(Open { index, .. }) = open.pop() {
        if closed[index] {
            continue;
        }
        closed[index] = true;
        if index == gi {
            break;
        }
        let g_here = best[index].expect("expanded node has a cost");
        for (j, diagonal) in neighbors(grid, index) {
            if closed[j] {
                continue;
            }
            let step = if diagonal {
                Cost {
                    axial: 0,
                    diagonal: 1,
                }
            } else {
                Cost {
                    axial: 1,
                    diagonal: 0,
                }
            };
            let cand = g_here.add(step);
            if best[j].is_none_or(|b| cand < b) {
                best[j] = Some(cand);
                parent[j] = index;
                open.push(Open {
                    f: cand.add(h(j)),
                    index: j,
                });
            }
        }
    }

    let Some(cost) = best[gi].filter(|_| closed[gi]) else {
        return Ok(None);
    };
    let mut cells = vec![gi];
    let mut cur = gi;
    while cur != si {
        cur = parent[cur];
        cells.push(cur);
    }
    cells.reverse();
    Ok(Some(Path {
        waypoints: cells
            .into_iter()
            .map(|i| grid.cell_center(grid.cell_at(i)))
            .collect(),
        cost,
        length: cost.value() * grid.resolution(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::grid::{Cell, Rect};

    fn open_grid(n: usize) -> GridMap {
        GridMap::rasterize(n as f64, n as f64, &[], 1.0).unwrap()
    }

    #[test]
    fn cost_ordering_is_exact() {
        let a = Cost { axial: 3, diagonal: 0 };
        let b = Cost { axial: 0, diagonal: 2 }; // 2.828
        assert!(b < a);
        let c = Cost { axial: 1, diagonal: 1 }; // 2.414
        assert!(c < b);
        assert_eq!(c.cmp(&c), Ordering::Equal);
        let d = Cost { axial: 7, diagonal: 0 };
        let e = Cost { axial: 0, diagonal: 5 }; // 7.07
        assert!(d < e);
    }

    #[test]
    fn start_equals_goal() {
        let g = open_grid(5);
        let p = plan_path(&g, Point::new(2.5, 2.5), Point::new(2.5, 2.5))
            .unwrap()
            .unwrap();
        assert_eq!(p.waypoints.len(), 1);
        assert_eq!(p.length, 0.0);
    }

    #[test]
    fn straight_axial_line() {
        let g = GridMap::rasterize(10.0, 10.0, &[], 0.5).unwrap();
        let p = plan_path(&g, Point::new(0.25, 0.25), Point::new(2.75, 0.25))
            .unwrap()
            .unwrap();
        assert_eq!(p.length, 5.0 * 0.5);
        assert_eq!(p.waypoints.len(), 6);
        assert!((p.segment_sum() - p.length).abs() < 1e-12);
    }

    #[test]
    fn occupied_endpoint_is_error() {
        let r = Rect { x_min: 1.0, y_min: 1.0, x_max: 2.0, y_max: 2.0 };
        let g = GridMap::rasterize(5.0, 5.0, &[r], 1.0).unwrap();
        assert!(matches!(
            plan_path(&g, Point::new(1.5, 1.5), Point::new(4.5, 4.5)),
            Err(SpatialError::Occupied(_))
        ));
    }

    #[test]
    fn walled_goal_is_no_path() {
        let mut g = open_grid(5);
        for r in 0..5 {
            g.set_occupied(Cell { col: 2, row: r }, true);
        }
        assert!(plan_path(&g, Point::new(0.5, 0.5), Point::new(4.5, 4.5))
            .unwrap()
            .is_none());
    }

    #[test]
    fn no_corner_cutting() {
        let mut g = open_grid(3);
        g.set_occupied(Cell { col: 1, row: 0 }, true);
        let p = plan_path(&g, Point::new(0.5, 0.5), Point::new(1.5, 1.5))
            .unwrap()
            .unwrap();
        // diagonal blocked by the (1,0) corner: two axial moves
        assert_eq!(p.cost, Cost { axial: 2, diagonal: 0 });
    }
}
