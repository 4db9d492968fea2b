//! Shortest paths over the occupancy grid.
//!
//! 8-connected A* with unit cardinal and √2 diagonal steps. Diagonal moves
//! need both flanking cardinal cells free, and only `Free` cells are
//! traversable. Path costs are tracked as exact `(cardinal, diagonal)` step
//! counts so two searches that find equally short paths agree bit for bit on
//! the length.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Cell;
use crate::map::OccupancyGrid;

/// Exact step tally of a path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StepCost {
    pub cardinal: u32,
    pub diagonal: u32,
}

impl StepCost {
    pub fn value(&self) -> f64 {
        self.cardinal as f64 + self.diagonal as f64 * SQRT_2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<Cell>,
    pub cost: StepCost,
    /// Meters: step cost times grid resolution.
    pub length_m: f64,
}

impl Path {
    pub fn start(&self) -> Cell {
        self.waypoints[0]
    }

    pub fn end(&self) -> Cell {
        *self.waypoints.last().expect("paths are never empty")
    }
}

/// Octile distance, the exact free-space cost between two cells.
pub fn octile(a: Cell, b: Cell) -> f64 {
    let dx = a.x.abs_diff(b.x);
    let dy = a.y.abs_diff(b.y);
    let (lo, hi) = (dx.min(dy), dx.max(dy));
    (hi - lo) as f64 + lo as f64 * SQRT_2
}

const NEIGHBORS: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Traversable neighbors of `c` with their step kind (true = diagonal).
pub fn neighbors<'g>(grid: &'g OccupancyGrid<'_>, c: Cell) -> impl Iterator<Item = (Cell, bool)> + 'g {
    let n = grid.size as i64;
    NEIGHBORS.iter().filter_map(move |&(dx, dy)| {
        let (x, y) = (c.x as i64 + dx, c.y as i64 + dy);
        if x < 0 || y < 0 || x >= n || y >= n {
            return None;
        }
        let next = Cell::new(x as usize, y as usize);
        if !grid.is_free(next) {
            return None;
        }
        let diagonal = dx != 0 && dy != 0;
        if diagonal
            && !(grid.is_free(Cell::new(x as usize, c.y)) && grid.is_free(Cell::new(c.x, y as usize)))
        {
            return None;
        }
        Some((next, diagonal))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    h: f64,
    index: usize,
}

impl Eq for Open {}

impl Ord for Open {
    // BinaryHeap is a max-heap; reverse so the smallest f pops first, then
    // smallest h, then smallest index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn shortest_path(grid: &OccupancyGrid<'_>, start: Cell, goal: Cell) -> Result<Path> {
    for c in [start, goal] {
        if !grid.contains(c) {
            return Err(Error::OutOfBounds {
                x: c.x as i64,
                y: c.y as i64,
                size: grid.size,
            });
        }
    }
    if !grid.is_free(start) {
        return Err(Error::input(format!(
            "start cell ({}, {}) is not free",
            start.x, start.y
        )));
    }
    let n = grid.size;
    let idx = |c: Cell| c.y * n + c.x;
    let mut g: Vec<Option<StepCost>> = vec![None; n * n];
    let mut parent = vec![usize::MAX; n * n];
    let mut closed = vec![false; n * n];
    let mut open = BinaryHeap::new();
    let mut explored = 0usize;

    g[idx(start)] = Some(StepCost::default());
    let h0 = octile(start, goal);
    open.push(Open {
        f: h0,
        h: h0,
        index: idx(start),
    });

    while let Some(Open { index, .. }) = open.pop() {
        if closed[index] {
            continue;
        }
        closed[index] = true;
        explored += 1;
        let cur = Cell::new(index % n, index / n);
        let cur_cost = g[index].expect("queued cells have a cost");
        if cur == goal {
            let mut waypoints = vec![goal];
            let mut i = index;
            while parent[i] != usize::MAX {
                i = parent[i];
                waypoints.push(Cell::new(i % n, i / n));
            }
            waypoints.reverse();
            return Ok(Path {
                waypoints,
                cost: cur_cost,
                length_m: cur_cost.value() * grid.resolution,
            });
        }
        for (next, diagonal) in neighbors(grid, cur) {
            let j = idx(next);
            if closed[j] {
                continue;
            }
            let mut cand = cur_cost;
            if diagonal {
                cand.diagonal += 1;
            } else {
                cand.cardinal += 1;
            }
            if g[j].is_none_or(|old| cand.value() < old.value()) {
                g[j] = Some(cand);
                parent[j] = index;
                let h = octile(next, goal);
                open.push(Open {
                    f: cand.value() + h,
                    h,
                    index: j,
                });
            }
        }
    }
    Err(Error::NoPath {
        start: (start.x, start.y),
        goal: (goal.x, goal.y),
        explored,
    })
}

/// Closest free cell by Chebyshev ring; within a ring the smallest `(y, x)`
/// wins.
pub fn nearest_traversable(grid: &OccupancyGrid<'_>, goal: Cell, max_radius: usize) -> Result<Cell> {
    if !grid.contains(goal) {
        return Err(Error::OutOfBounds {
            x: goal.x as i64,
            y: goal.y as i64,
            size: grid.size,
        });
    }
    let n = grid.size as i64;
    let (gx, gy) = (goal.x as i64, goal.y as i64);
    for r in 0..=(max_radius as i64).min(n) {
        for y in (gy - r).max(0)..=(gy + r).min(n - 1) {
            let on_edge_row = (y - gy).abs() == r;
            let xs: Vec<i64> = if on_edge_row {
                ((gx - r).max(0)..=(gx + r).min(n - 1)).collect()
            } else {
                [gx - r, gx + r]
                    .into_iter()
                    .filter(|&x| x >= 0 && x < n)
                    .collect()
            };
            for x in xs {
                let c = Cell::new(x as usize, y as usize);
                if grid.is_free(c) {
                    return Ok(c);
                }
            }
        }
    }
    Err(Error::Snap {
        goal: (goal.x, goal.y),
        radius: max_radius,
    })
}
