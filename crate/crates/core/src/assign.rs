//! Permutation enumeration and a Hungarian linear-assignment solver.

/// Advances `perm` to the next lexicographic permutation; returns `false`
/// after the last one.
pub fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Permutations {
    Permutations { cur: (0..n).collect(), done: false }
}

pub struct Permutations {
    cur: Vec<usize>,
    done: bool,
}

impl Iterator for Permutations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.cur.clone();
        self.done = !next_permutation(&mut self.cur);
        Some(out)
    }
}

/// Minimum-cost assignment for a rectangular cost matrix with
/// `rows ≤ cols`. Returns the column assigned to each row and the total.
///
/// Shortest augmenting path with potentials, O(rows² · cols).
pub fn hungarian(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let m = cost[0].len();
    assert!(n <= m, "hungarian needs rows <= cols ({n} > {m})");
    // 1-based arrays; column 0 is the virtual start.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    (assignment, total)
}

/// Maximum-weight one-to-one matching between rows and columns of any
/// shape. Returns `(row, col)` pairs; every row of the smaller side is
/// matched. Exhaustive (lexicographic tie-break) when the smaller side has
/// at most `exhaustive_cap` entries and the larger at most 8, otherwise
/// the Hungarian solver.
pub fn max_weight_matching(weight: &[Vec<f64>], exhaustive_cap: usize) -> Vec<(usize, usize)> {
    let rows = weight.len();
    let cols = weight.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let transpose = rows > cols;
    let (small, large) = if transpose { (cols, rows) } else { (rows, cols) };
    let w = |i: usize, j: usize| if transpose { weight[j][i] } else { weight[i][j] };

    let pairs: Vec<usize> = if large <= exhaustive_cap.min(8) {
        // Injective maps small -> large: prefixes of permutations of large.
        let mut best: Option<(f64, Vec<usize>)> = None;
        for perm in permutations(large) {
            let pre = &perm[..small];
            // Skip duplicates that differ only in the unused tail.
            if !perm[small..].windows(2).all(|w| w[0] < w[1]) {
                continue;
            }
            let s: f64 = pre.iter().enumerate().map(|(i, &j)| w(i, j)).sum();
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, pre.to_vec()));
            }
        }
        best.map(|b| b.1).unwrap_or_default()
    } else {
        let cost: Vec<Vec<f64>> = (0..small).map(|i| (0..large).map(|j| -w(i, j)).collect()).collect();
        hungarian(&cost).0
    };
    pairs
        .into_iter()
        .enumerate()
        .map(|(i, j)| if transpose { (j, i) } else { (i, j) })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutations_are_lexicographic_and_complete() {
        let all: Vec<_> = permutations(3).collect();
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], vec![0, 1, 2]);
        assert_eq!(all[1], vec![0, 2, 1]);
        assert_eq!(all[5], vec![2, 1, 0]);
        assert_eq!(permutations(0).count(), 1);
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let cost = vec![
            vec![4.0, 1.0, 3.0, 9.0],
            vec![2.0, 0.0, 5.0, 1.0],
            vec![3.0, 2.0, 2.0, 7.0],
        ];
        let (asg, total) = hungarian(&cost);
        let mut best = f64::INFINITY;
        for perm in permutations(4) {
            best = best.min((0..3).map(|i| cost[i][perm[i]]).sum());
        }
        assert_eq!(total, best);
        let mut cols = asg.clone();
        cols.sort();
        cols.dedup();
        assert_eq!(cols.len(), 3);
    }

    #[test]
    fn matching_handles_tall_matrices() {
        let w = vec![vec![1.0], vec![5.0], vec![2.0]];
        assert_eq!(max_weight_matching(&w, 8), vec![(1, 0)]);
        assert_eq!(max_weight_matching(&w, 0), vec![(1, 0)]);
    }
}
