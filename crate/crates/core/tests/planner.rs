mod support;

use langmap::geometry::Cell;
use langmap::map::{Occupancy, OccupancyGrid};
use langmap::planner::{nearest_traversable, octile, shortest_path, Path};
use langmap::Error;
use proptest::prelude::*;
use rand::Rng;
use support::{dijkstra, random_grid, rng};

fn assert_valid(grid: &OccupancyGrid<'_>, path: &Path, start: Cell, goal: Cell) {
    assert_eq!(path.start(), start);
    assert_eq!(path.end(), goal);
    let (mut card, mut diag) = (0, 0);
    for w in path.waypoints.windows(2) {
        let (a, b) = (w[0], w[1]);
        assert!(grid.is_free(a) && grid.is_free(b));
        assert_eq!(a.chebyshev(&b), 1, "{a:?} -> {b:?}");
        if a.x != b.x && a.y != b.y {
            diag += 1;
            assert!(grid.is_free(Cell::new(b.x, a.y)) && grid.is_free(Cell::new(a.x, b.y)), "corner cut at {a:?}");
        } else {
            card += 1;
        }
    }
    assert_eq!((path.cost.cardinal, path.cost.diagonal), (card, diag));
    assert!((path.length_m - path.cost.value() * grid.resolution).abs() < 1e-9);
    assert!(path.cost.value() + 1e-9 >= octile(start, goal));
}

#[test]
fn astar_matches_dijkstra_on_random_grids() {
    let mut r = rng(41);
    let (mut found, mut blocked) = (0, 0);
    for _ in 0..50 {
        let density = r.random_range(0.1..0.35);
        let cells = random_grid(&mut r, 64, density, 0.05);
        let grid = OccupancyGrid::new(64, 0.1, &cells).unwrap();
        for _ in 0..4 {
            let start = Cell::new(r.random_range(0..64), r.random_range(0..64));
            let goal = Cell::new(r.random_range(0..64), r.random_range(0..64));
            let oracle = dijkstra(64, &cells, start, goal);
            match shortest_path(&grid, start, goal) {
                Ok(p) => {
                    assert_eq!(Some(p.cost), oracle);
                    assert_valid(&grid, &p, start, goal);
                    found += 1;
                }
                Err(Error::NoPath { .. }) => {
                    assert_eq!(oracle, None);
                    blocked += 1;
                }
                Err(Error::Input(_)) => assert!(!grid.is_free(start)),
                Err(e) => panic!("{e}"),
            }
        }
    }
    assert!(found > 50 && blocked > 0, "{found} {blocked}");
}

#[test]
fn start_equals_goal() {
    let cells = vec![Occupancy::Free; 9];
    let grid = OccupancyGrid::new(3, 0.5, &cells).unwrap();
    let p = shortest_path(&grid, Cell::new(1, 1), Cell::new(1, 1)).unwrap();
    assert_eq!(p.waypoints, vec![Cell::new(1, 1)]);
    assert_eq!(p.length_m, 0.0);
}

#[test]
fn unknown_cells_block() {
    let mut cells = vec![Occupancy::Free; 9];
    for y in 0..3 {
        cells[y * 3 + 1] = Occupancy::Unknown;
    }
    let grid = OccupancyGrid::new(3, 0.5, &cells).unwrap();
    assert!(matches!(
        shortest_path(&grid, Cell::new(0, 0), Cell::new(2, 2)),
        Err(Error::NoPath { .. })
    ));
}

#[test]
fn snapping_picks_closest_ring() {
    let mut cells = vec![Occupancy::Obstacle; 49];
    cells[6 * 7 + 1] = Occupancy::Free;
    cells[7 + 4] = Occupancy::Free;
    let grid = OccupancyGrid::new(7, 0.1, &cells).unwrap();
    assert_eq!(nearest_traversable(&grid, Cell::new(3, 3), 5).unwrap(), Cell::new(4, 1));
    assert!(matches!(nearest_traversable(&grid, Cell::new(3, 3), 1), Err(Error::Snap { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn optimal_and_valid(seed in any::<u64>(), density in 0.0f64..0.4) {
        let mut r = rng(seed);
        let cells = random_grid(&mut r, 24, density, 0.0);
        let grid = OccupancyGrid::new(24, 0.2, &cells).unwrap();
        let start = Cell::new(r.random_range(0..24), r.random_range(0..24));
        let goal = Cell::new(r.random_range(0..24), r.random_range(0..24));
        let oracle = dijkstra(24, &cells, start, goal);
        if let Ok(p) = shortest_path(&grid, start, goal) {
            prop_assert_eq!(Some(p.cost), oracle);
            assert_valid(&grid, &p, start, goal);
        } else {
            prop_assert_eq!(oracle, None);
        }
    }

    #[test]
    fn symmetric_cost(seed in any::<u64>()) {
        let mut r = rng(seed);
        let cells = random_grid(&mut r, 20, 0.25, 0.0);
        let grid = OccupancyGrid::new(20, 0.1, &cells).unwrap();
        let a = Cell::new(r.random_range(0..20), r.random_range(0..20));
        let b = Cell::new(r.random_range(0..20), r.random_range(0..20));
        let ab = shortest_path(&grid, a, b).ok().map(|p| p.cost);
        let ba = shortest_path(&grid, b, a).ok().map(|p| p.cost);
        prop_assert_eq!(ab, ba);
    }
}
