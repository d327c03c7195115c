//! Maximum-weight bipartite assignment.

/// Best total for a rectangular score matrix restricted to `rows` x `cols`,
/// assigning `min(|rows|, |cols|)` pairs. Returns the chosen pairs as
/// indices into the original matrix.
fn solve(score: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> (f64, Vec<(usize, usize)>) {
    if rows.is_empty() || cols.is_empty() {
        return (0.0, Vec::new());
    }
    // the potential method below needs rows <= cols
    let transpose = rows.len() > cols.len();
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    let cost = |i: usize, j: usize| -> f64 {
        let (a, b) = if transpose { (c[j], r[i]) } else { (r[i], c[j]) };
        -score[a][b]
    };
    let n = r.len();
    let m = c.len();
    // 1-based arrays; column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
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
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
    let mut pairs = Vec::with_capacity(n);
    for j in 1..=m {
        if p[j] != 0 {
            let (i, jj) = (p[j] - 1, j - 1);
            pairs.push(if transpose { (c[jj], r[i]) } else { (r[i], c[jj]) });
        }
    }
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(a, b)| score[a][b]).sum();
    (total, pairs)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Assigns `min(m, n)` row/column pairs maximising the summed score.
///
/// Among optimal assignments the lexicographically smallest pair list (pairs
/// sorted by row) is returned, so equal scores resolve toward low indices.
pub fn hungarian_assign(score: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let m = score.len();
    let n = score.first().map_or(0, Vec::len);
    if m == 0 || n == 0 {
        return Vec::new();
    }
    debug_assert!(score.iter().all(|row| row.len() == n), "ragged score matrix");
    let all_rows: Vec<usize> = (0..m).collect();
    let all_cols: Vec<usize> = (0..n).collect();
    let (target, optimal) = solve(score, &all_rows, &all_cols);
    let k = m.min(n);

    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(k);
    let mut fixed = 0.0;
    let mut free_cols = all_cols;
    let mut next_row = 0;
    while pairs.len() < k {
        let need_after = k - pairs.len() - 1;
        let mut chosen = None;
        'search: for r in next_row..m {
            let rows_rest: Vec<usize> = (r + 1..m).collect();
            for (ci, &c) in free_cols.iter().enumerate() {
                let mut cols_rest = free_cols.clone();
                cols_rest.remove(ci);
                if rows_rest.len().min(cols_rest.len()) < need_after {
                    continue;
                }
                let (rest, _) = solve(score, &rows_rest, &cols_rest);
                if close(fixed + score[r][c] + rest, target) {
                    chosen = Some((r, ci));
                    break 'search;
                }
            }
        }
        let Some((r, ci)) = chosen else {
            // only reachable through floating-point trouble; fall back to the solver's pick
            return optimal;
        };
        let c = free_cols.remove(ci);
        fixed += score[r][c];
        pairs.push((r, c));
        next_row = r + 1;
    }
    pairs
}

pub fn assignment_total(score: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(r, c)| score[r][c]).sum()
}
