use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SpatialError;

/// Upper bound on rasterized cell count.
pub const MAX_CELLS: usize = 10_000_000;

/// World-frame coordinate in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub(crate) fn dist_sq(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Axis-aligned rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }
}

/// Grid cell coordinate (column, row).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub col: usize,
    pub row: usize,
}

/// Occupancy grid. Cell `(col, row)` spans
/// `[origin.x + col*res, origin.x + (col+1)*res) x [origin.y + row*res, ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    resolution: f64,
    width: usize,
    height: usize,
    origin: Point,
    occupied: Vec<bool>,
}

impl GridMap {
    /// An obstacle-free grid.
    pub fn empty(
        width: usize,
        height: usize,
        resolution: f64,
        origin: Point,
    ) -> Result<Self, SpatialError> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(SpatialError::BadResolution(resolution));
        }
        let n = width
            .checked_mul(height)
            .filter(|&n| n <= MAX_CELLS)
            .ok_or(SpatialError::TooManyCells {
                width,
                height,
                max: MAX_CELLS,
            })?;
        Ok(Self {
            resolution,
            width,
            height,
            origin,
            occupied: vec![false; n],
        })
    }

    /// Builds a grid covering `[0, world_width] x [0, world_height]`, marking
    /// every cell that overlaps an obstacle with positive area as occupied.
    pub fn rasterize(
        world_width: f64,
        world_height: f64,
        obstacles: &[Rect],
        resolution: f64,
    ) -> Result<Self, SpatialError> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(SpatialError::BadResolution(resolution));
        }
        let w = (world_width / resolution).ceil();
        let h = (world_height / resolution).ceil();
        if !(w >= 1.0 && h >= 1.0) || w * h > MAX_CELLS as f64 {
            return Err(SpatialError::TooManyCells {
                width: w.max(0.0) as usize,
                height: h.max(0.0) as usize,
                max: MAX_CELLS,
            });
        }
        let mut grid = Self::empty(w as usize, h as usize, resolution, Point::new(0.0, 0.0))?;
        for (i, r) in obstacles.iter().enumerate() {
            if !(r.x_min <= r.x_max && r.y_min <= r.y_max)
                || r.x_min < 0.0
                || r.y_min < 0.0
                || r.x_max > world_width
                || r.y_max > world_height
            {
                return Err(SpatialError::ObstacleOutOfBounds(i));
            }
            grid.fill_rect(r);
        }
        Ok(grid)
    }

    fn fill_rect(&mut self, r: &Rect) {
        let res = self.resolution;
        // Candidate range, then exact strict-overlap test per cell.
        let c0 = ((r.x_min / res).floor().max(0.0)) as usize;
        let r0 = ((r.y_min / res).floor().max(0.0)) as usize;
        let c1 = ((r.x_max / res).ceil() as usize).min(self.width);
        let r1 = ((r.y_max / res).ceil() as usize).min(self.height);
        for row in r0..r1 {
            let y_lo = self.origin.y + row as f64 * res;
            let y_hi = y_lo + res;
            if !(r.y_min < y_hi && r.y_max > y_lo) {
                continue;
            }
            for col in c0..c1 {
                let x_lo = self.origin.x + col as f64 * res;
                let x_hi = x_lo + res;
                if r.x_min < x_hi && r.x_max > x_lo {
                    let i = row * self.width + col;
                    self.occupied[i] = true;
                }
            }
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn index(&self, c: Cell) -> usize {
        c.row * self.width + c.col
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell {
            col: index % self.width,
            row: index / self.width,
        }
    }

    pub fn in_bounds(&self, col: isize, row: isize) -> bool {
        col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height
    }

    pub fn is_occupied(&self, c: Cell) -> bool {
        self.occupied[self.index(c)]
    }

    pub fn set_occupied(&mut self, c: Cell, occupied: bool) {
        let i = self.index(c);
        self.occupied[i] = occupied;
    }

    pub fn free_count(&self) -> usize {
        self.occupied.iter().filter(|o| !**o).count()
    }

    /// Cell containing `p`, or `None` outside the grid.
    pub fn world_to_cell(&self, p: Point) -> Option<Cell> {
        let fx = ((p.x - self.origin.x) / self.resolution).floor();
        let fy = ((p.y - self.origin.y) / self.resolution).floor();
        if !fx.is_finite() || !fy.is_finite() {
            return None;
        }
        // Points on the far boundary belong to the last cell.
        let col = if fx as isize == self.width as isize && p.x <= self.origin.x + self.width as f64 * self.resolution {
            self.width as isize - 1
        } else {
            fx as isize
        };
        let row = if fy as isize == self.height as isize && p.y <= self.origin.y + self.height as f64 * self.resolution {
            self.height as isize - 1
        } else {
            fy as isize
        };
        self.in_bounds(col, row).then(|| Cell {
            col: col as usize,
            row: row as usize,
        })
    }

    pub fn cell_center(&self, c: Cell) -> Point {
        Point::new(
            self.origin.x + (c.col as f64 + 0.5) * self.resolution,
            self.origin.y + (c.row as f64 + 0.5) * self.resolution,
        )
    }

    pub fn is_free_point(&self, p: Point) -> bool {
        self.world_to_cell(p).is_some_and(|c| !self.is_occupied(c))
    }

    /// Indices of free cells 4/8-connected (same move rule as the planner)
    /// to `start`, in ascending index order.
    pub fn reachable_from(&self, start: Cell) -> Vec<usize> {
        let mut seen = vec![false; self.len()];
        if self.is_occupied(start) {
            return Vec::new();
        }
        let s = self.index(start);
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(i) = stack.pop() {
            for (j, _) in super::planner::neighbors(self, i) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter()
            .enumerate()
            .filter_map(|(i, s)| s.then_some(i))
            .collect()
    }

    /// Content hash over geometry and occupancy.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.resolution.to_bits().to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        h.update((self.height as u64).to_le_bytes());
        h.update(self.origin.x.to_bits().to_le_bytes());
        h.update(self.origin.y.to_bits().to_le_bytes());
        for chunk in self.occupied.chunks(8) {
            let mut b = 0u8;
            for (k, &o) in chunk.iter().enumerate() {
                b |= (o as u8) << k;
            }
            h.update([b]);
        }
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_world_is_all_free() {
        let g = GridMap::rasterize(10.0, 10.0, &[], 1.0).unwrap();
        assert_eq!(g.len(), 100);
        assert_eq!(g.free_count(), 100);
    }

    #[test]
    fn aligned_obstacle_marks_one_cell() {
        let r = Rect {
            x_min: 3.0,
            y_min: 4.0,
            x_max: 4.0,
            y_max: 5.0,
        };
        let g = GridMap::rasterize(10.0, 10.0, &[r], 1.0).unwrap();
        assert_eq!(g.len() - g.free_count(), 1);
        assert!(g.is_occupied(Cell { col: 3, row: 4 }));
    }

    #[test]
    fn partial_overlap_is_conservative() {
        let r = Rect {
            x_min: 3.5,
            y_min: 4.0,
            x_max: 4.0,
            y_max: 5.0,
        };
        let g = GridMap::rasterize(10.0, 10.0, &[r], 1.0).unwrap();
        assert!(g.is_occupied(Cell { col: 3, row: 4 }));
        assert_eq!(g.len() - g.free_count(), 1);
    }

    #[test]
    fn too_fine_resolution_rejected() {
        let err = GridMap::rasterize(1000.0, 1000.0, &[], 0.01).unwrap_err();
        assert!(matches!(err, SpatialError::TooManyCells { .. }));
        assert!(matches!(
            GridMap::rasterize(10.0, 10.0, &[], 0.0),
            Err(SpatialError::BadResolution(_))
        ));
    }

    #[test]
    fn world_cell_round_trip_within_one_cell() {
        let g = GridMap::rasterize(7.3, 4.1, &[], 0.25).unwrap();
        for i in 0..200 {
            let p = Point::new((i as f64 * 0.137) % 7.3, (i as f64 * 0.071) % 4.1);
            let c = g.world_to_cell(p).unwrap();
            let back = g.cell_center(c);
            assert!((back.x - p.x).abs() <= g.resolution());
            assert!((back.y - p.y).abs() <= g.resolution());
        }
        assert_eq!(g.world_to_cell(Point::new(-0.1, 1.0)), None);
    }

    #[test]
    fn hash_tracks_occupancy() {
        let a = GridMap::rasterize(5.0, 5.0, &[], 1.0).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.set_occupied(Cell { col: 1, row: 1 }, true);
        assert_ne!(a.hash(), b.hash());
    }
}
