//! Exact minimum-cost perfect matching on a square cost matrix via the
//! Hungarian method (shortest augmenting paths with dual potentials),
//! O(n^3) time and O(n^2) memory.

/// Returns (assignment, total cost): `assignment[row] = column` minimizing
/// the sum of `costs[row * n + column]`. `costs` must be finite.
pub(crate) fn min_cost_assignment(costs: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(costs.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let at = |i: usize, j: usize| costs[i * n + j];

    // 1-based arrays; index 0 is the virtual root of the augmenting path.
    let mut u = vec![0.0f64; n + 1]; // row potentials
    let mut v = vec![0.0f64; n + 1]; // column potentials
    let mut row_of = vec![0usize; n + 1]; // column -> matched row (1-based, 0 = free)
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
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
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        // Unwind the augmenting path.
        while j0 != 0 {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
        }
    }

    let mut assignment = vec![0usize; n];
    let mut total = 0.0;
    for j in 1..=n {
        let i = row_of[j];
        assignment[i - 1] = j - 1;
        total += at(i - 1, j - 1);
    }
    (assignment, total)
}
