//! Peak extraction with an angular-separation constraint, plus the
//! localization-error metric.

use crate::error::{Error, Result};
use crate::geometry::{DoaGrid, GridPoint, Vec3};

/// One ranked direction estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DoaEstimate {
    /// 1-based rank by descending score.
    pub rank: usize,
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub score: f64,
    /// Index of the estimate in its source grid.
    pub grid_index: usize,
}

/// Result of peak picking. `shortfall` is set when fewer peaks than requested
/// were available under the separation rule.
#[derive(Debug, Clone)]
pub struct PeakSelection {
    pub estimates: Vec<DoaEstimate>,
    pub shortfall: bool,
}

/// Great-circle angle between two unit directions, in degrees.
pub fn great_circle_angle_units(a: Vec3, b: Vec3) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Great-circle angle between two grid points, in degrees.
pub fn great_circle_angle(a: &GridPoint, b: &GridPoint) -> f64 {
    great_circle_angle_units(a.unit, b.unit)
}

/// Greedy peak picking over all grid points: candidates are visited by
/// descending weight (ties broken toward the lowest grid index) and rejected
/// when closer than `min_separation_deg` to an already-selected estimate.
/// Non-finite weights are never selected.
pub fn pick_peaks(
    weights: &[f64],
    grid: &DoaGrid,
    n_peaks: usize,
    min_separation_deg: f64,
) -> PeakSelection {
    let candidates: Vec<usize> = (0..weights.len()).collect();
    select_separated(weights, grid, &candidates, n_peaks, min_separation_deg)
}

/// Greedy separated selection restricted to `candidates`.
pub fn select_separated(
    weights: &[f64],
    grid: &DoaGrid,
    candidates: &[usize],
    n_peaks: usize,
    min_separation_deg: f64,
) -> PeakSelection {
    let mut order: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&i| weights[i].is_finite())
        .collect();
    order.sort_by(|&a, &b| {
        weights[b]
            .partial_cmp(&weights[a])
            .expect("weights are finite")
            .then(a.cmp(&b))
    });

    let mut estimates: Vec<DoaEstimate> = Vec::with_capacity(n_peaks);
    for idx in order {
        if estimates.len() == n_peaks {
            break;
        }
        let point = grid.point(idx);
        let too_close = estimates.iter().any(|e| {
            great_circle_angle_units(grid.point(e.grid_index).unit, point.unit)
                < min_separation_deg
        });
        if too_close {
            continue;
        }
        estimates.push(DoaEstimate {
            rank: estimates.len() + 1,
            elevation_deg: point.elevation_deg,
            azimuth_deg: point.azimuth_deg,
            score: weights[idx],
            grid_index: idx,
        });
    }
    let shortfall = estimates.len() < n_peaks;
    PeakSelection {
        estimates,
        shortfall,
    }
}

/// Indices of strict local maxima of a map laid out on the grid lattice
/// (elevation-major). A point qualifies when its value is strictly greater
/// than every existing lattice neighbor (8-neighborhood); plateau ties never
/// qualify.
pub fn grid_local_maxima(map: &[f64], grid: &DoaGrid) -> Vec<usize> {
    let ne = grid.n_elevation();
    let na = grid.n_azimuth();
    debug_assert_eq!(map.len(), ne * na);
    let mut maxima = Vec::new();
    for ei in 0..ne {
        for ai in 0..na {
            let idx = ei * na + ai;
            let v = map[idx];
            if !v.is_finite() {
                continue;
            }
            let mut is_max = true;
            'scan: for de in -1i64..=1 {
                for da in -1i64..=1 {
                    if de == 0 && da == 0 {
                        continue;
                    }
                    let (ne_i, na_i) = (ei as i64 + de, ai as i64 + da);
                    if ne_i < 0 || na_i < 0 || ne_i >= ne as i64 || na_i >= na as i64 {
                        continue;
                    }
                    if map[ne_i as usize * na + na_i as usize] >= v {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
            if is_max {
                maxima.push(idx);
            }
        }
    }
    maxima
}

/// Mean great-circle angle between each estimate and its nearest true DOA,
/// in degrees. Expects as many estimates as truths; each missing estimate is
/// charged the worst-case 180°.
pub fn localization_error(estimates: &[DoaEstimate], truths: &[GridPoint]) -> Result<f64> {
    if truths.is_empty() {
        return Err(Error::domain("localization error needs at least one truth"));
    }
    let j = truths.len();
    let mut total = 0.0;
    for e in estimates.iter().take(j) {
        let p = GridPoint::new(e.elevation_deg, e.azimuth_deg);
        let nearest = truths
            .iter()
            .map(|t| great_circle_angle(&p, t))
            .fold(f64::INFINITY, f64::min);
        total += nearest;
    }
    if estimates.len() < j {
        total += 180.0 * (j - estimates.len()) as f64;
    }
    Ok(total / j as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_doa_grid;

    #[test]
    fn great_circle_examples() {
        let a = GridPoint::new(0.0, 0.0);
        assert_eq!(great_circle_angle(&a, &a), 0.0);
        let b = GridPoint::new(0.0, 10.0);
        assert!((great_circle_angle(&a, &b) - 10.0).abs() < 1e-10);
        let pole = GridPoint::new(90.0, 123.0);
        let horizon = GridPoint::new(0.0, 7.0);
        assert!((great_circle_angle(&pole, &horizon) - 90.0).abs() < 1e-10);
    }

    #[test]
    fn pick_peaks_isolated_spikes() {
        let grid = build_doa_grid(10.0, 10.0).unwrap();
        let mut weights = vec![0.0; grid.len()];
        // three spikes well separated
        let spots = [
            grid_index(&grid, 0.0, 30.0),
            grid_index(&grid, 20.0, 90.0),
            grid_index(&grid, -40.0, 150.0),
        ];
        weights[spots[0]] = 3.0;
        weights[spots[1]] = 2.0;
        weights[spots[2]] = 1.0;
        let sel = pick_peaks(&weights, &grid, 3, 3.0);
        assert!(!sel.shortfall);
        let picked: Vec<usize> = sel.estimates.iter().map(|e| e.grid_index).collect();
        assert_eq!(picked, spots);
        assert!(sel.estimates[0].score >= sel.estimates[1].score);
        assert_eq!(sel.estimates[0].rank, 1);
        assert_eq!(sel.estimates[2].rank, 3);
    }

    #[test]
    fn pick_peaks_separation_rule() {
        let grid = build_doa_grid(2.0, 2.0).unwrap();
        let mut weights = vec![0.0; grid.len()];
        let big = grid_index(&grid, 0.0, 90.0);
        let close = grid_index(&grid, 0.0, 92.0); // 2° away
        let far = grid_index(&grid, 0.0, 120.0);
        weights[big] = 5.0;
        weights[close] = 4.0;
        weights[far] = 3.0;
        let sel = pick_peaks(&weights, &grid, 2, 3.0);
        let picked: Vec<usize> = sel.estimates.iter().map(|e| e.grid_index).collect();
        assert_eq!(picked, vec![big, far]);
    }

    #[test]
    fn pick_peaks_uniform_ties_break_to_lowest_index() {
        let grid = build_doa_grid(45.0, 45.0).unwrap();
        let weights = vec![1.0; grid.len()];
        let sel = pick_peaks(&weights, &grid, 1, 3.0);
        assert!(!sel.shortfall);
        assert_eq!(sel.estimates[0].grid_index, 0);
    }

    #[test]
    fn selection_respects_pairwise_separation() {
        let grid = build_doa_grid(5.0, 5.0).unwrap();
        let weights: Vec<f64> = (0..grid.len()).map(|i| ((i * 2654435761) % 1000) as f64).collect();
        let sel = pick_peaks(&weights, &grid, 8, 20.0);
        for a in &sel.estimates {
            for b in &sel.estimates {
                if a.grid_index != b.grid_index {
                    assert!(
                        great_circle_angle_units(
                            grid.point(a.grid_index).unit,
                            grid.point(b.grid_index).unit
                        ) >= 20.0
                    );
                }
            }
        }
    }

    #[test]
    fn local_maxima_on_lattice() {
        let grid = build_doa_grid(45.0, 45.0).unwrap(); // 5 × 5
        let mut map = vec![0.0; grid.len()];
        map[12] = 1.0; // interior point
        assert_eq!(grid_local_maxima(&map, &grid), vec![12]);
        let flat = vec![2.0; grid.len()];
        assert!(grid_local_maxima(&flat, &grid).is_empty());
        // corner point can be a maximum over its 3 neighbors
        let mut corner = vec![0.0; grid.len()];
        corner[0] = 1.0;
        assert_eq!(grid_local_maxima(&corner, &grid), vec![0]);
    }

    #[test]
    fn localization_error_examples() {
        let truths = vec![GridPoint::new(0.0, 0.0), GridPoint::new(0.0, 20.0)];
        let est = |el: f64, az: f64, rank: usize| DoaEstimate {
            rank,
            elevation_deg: el,
            azimuth_deg: az,
            score: 1.0,
            grid_index: 0,
        };
        // exact estimates → 0
        let exact = vec![est(0.0, 0.0, 1), est(0.0, 20.0, 2)];
        assert_eq!(localization_error(&exact, &truths).unwrap(), 0.0);
        // single truth, 10° off
        let one = vec![est(0.0, 10.0, 1)];
        let le = localization_error(&one, &[GridPoint::new(0.0, 0.0)]).unwrap();
        assert!((le - 10.0).abs() < 1e-10);
        // both estimates on truth 1: nearest-matching does not penalize duplicates
        let dup = vec![est(0.0, 0.0, 1), est(0.0, 0.0, 2)];
        assert_eq!(localization_error(&dup, &truths).unwrap(), 0.0);
    }

    #[test]
    fn localization_error_shortfall_padding() {
        let truths = vec![GridPoint::new(0.0, 0.0), GridPoint::new(0.0, 90.0)];
        let est = vec![DoaEstimate {
            rank: 1,
            elevation_deg: 0.0,
            azimuth_deg: 0.0,
            score: 1.0,
            grid_index: 0,
        }];
        let le = localization_error(&est, &truths).unwrap();
        assert!((le - 90.0).abs() < 1e-10); // (0 + 180)/2
        assert!(localization_error(&est, &[]).is_err());
    }

    #[test]
    fn localization_error_is_order_invariant() {
        let truths = vec![GridPoint::new(10.0, 40.0), GridPoint::new(-20.0, 120.0)];
        let a = DoaEstimate {
            rank: 1,
            elevation_deg: 12.0,
            azimuth_deg: 44.0,
            score: 2.0,
            grid_index: 0,
        };
        let b = DoaEstimate {
            rank: 2,
            elevation_deg: -25.0,
            azimuth_deg: 117.0,
            score: 1.0,
            grid_index: 1,
        };
        let le1 = localization_error(&[a.clone(), b.clone()], &truths).unwrap();
        let le2 = localization_error(&[b, a], &truths).unwrap();
        assert!((le1 - le2).abs() < 1e-12);
    }

    fn grid_index(grid: &DoaGrid, el: f64, az: f64) -> usize {
        grid.points()
            .iter()
            .position(|p| p.elevation_deg == el && p.azimuth_deg == az)
            .unwrap()
    }
}
