//! Minimum-cost rectangular assignment (Hungarian method with potentials),
//! O(n^2 m) for an `n x m` cost matrix with `n <= m`.

/// Assigns each row of `cost` (row-major, `rows x cols`, `rows <= cols`) to a
/// distinct column minimizing the total cost. Returns the column of each row
/// and the total cost.
pub fn min_cost_assignment(cost: &[f64], rows: usize, cols: usize) -> (Vec<usize>, f64) {
    assert!(rows <= cols, "assignment needs rows <= cols");
    assert_eq!(cost.len(), rows * cols);
    if rows == 0 {
        return (Vec::new(), 0.0);
    }
    let at = |i: usize, j: usize| cost[(i - 1) * cols + (j - 1)];

    // 1-based arrays; column 0 is a virtual column holding the row being added.
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];

    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if !used[j] {
                    let cur = at(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * cols + j])
        .sum();
    (assignment, total)
}
