//! Rectangular linear assignment (Hungarian algorithm, O(n^3) shortest
//! augmenting path variant). Shared by cross-sensor track fusion, OSPA, and
//! track-to-truth assignment.

/// Minimum-cost assignment of rows to columns. `cost` is row-major with
/// `rows * cols` entries; requires `rows <= cols`. Returns, for each row, the
/// assigned column index, and the total cost. Entries may be `f64::INFINITY`
/// to forbid a pairing; forbidden pairings are only chosen if no finite
/// perfect matching exists.
pub fn solve(cost: &[f64], rows: usize, cols: usize) -> (Vec<usize>, f64) {
    assert!(rows <= cols, "assignment requires rows <= cols");
    assert_eq!(cost.len(), rows * cols);
    if rows == 0 {
        return (Vec::new(), 0.0);
    }
    // Large finite stand-in keeps the potentials arithmetic well defined.
    let big = 1e30;
    let at = |i: usize, j: usize| {
        let c = cost[i * cols + j];
        if c.is_finite() {
            c
        } else {
            big
        }
    };

    // Shortest augmenting path with dual potentials (1-based internal arrays).
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut way = vec![0usize; cols + 1];
    let mut matched = vec![0usize; cols + 1]; // matched[j] = row assigned to column j (1-based)

    for i in 1..=rows {
        matched[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![usize::MAX; rows];
    for j in 1..=cols {
        if matched[j] > 0 {
            row_to_col[matched[j] - 1] = j - 1;
        }
    }
    let total = row_to_col
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * cols + j])
        .sum();
    (row_to_col, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn brute_force(cost: &[f64], rows: usize, cols: usize) -> f64 {
        fn recur(cost: &[f64], rows: usize, cols: usize, i: usize, used: &mut Vec<bool>) -> f64 {
            if i == rows {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..cols {
                if !used[j] {
                    used[j] = true;
                    let c = cost[i * cols + j] + recur(cost, rows, cols, i + 1, used);
                    used[j] = false;
                    best = best.min(c);
                }
            }
            best
        }
        recur(cost, rows, cols, 0, &mut vec![false; cols])
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..200 {
            let rows = rng.gen_range(1..=4);
            let cols = rng.gen_range(rows..=5);
            let cost: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(0.0..10.0)).collect();
            let (assign, total) = solve(&cost, rows, cols);
            let expect = brute_force(&cost, rows, cols);
            assert!((total - expect).abs() < 1e-9, "{total} vs {expect}");
            // one-to-one
            let mut seen = vec![false; cols];
            for &j in &assign {
                assert!(!seen[j]);
                seen[j] = true;
            }
        }
    }

    #[test]
    fn dominant_diagonal_is_chosen() {
        let cost = vec![0.1, 5.0, 5.0, 0.1];
        let (assign, total) = solve(&cost, 2, 2);
        assert_eq!(assign, vec![0, 1]);
        assert!((total - 0.2).abs() < 1e-12);
    }

    #[test]
    fn infinity_entries_are_avoided() {
        let cost = vec![f64::INFINITY, 1.0, 2.0, f64::INFINITY];
        let (assign, _) = solve(&cost, 2, 2);
        assert_eq!(assign, vec![1, 0]);
    }

    #[test]
    fn empty_problem() {
        let (assign, total) = solve(&[], 0, 3);
        assert!(assign.is_empty());
        assert_eq!(total, 0.0);
    }
}
