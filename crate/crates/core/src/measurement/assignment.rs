//! Exact minimum-cost assignment for square cost matrices.
//!
//! Small problems (n ≤ 8) use an exhaustive dynamic program over subsets;
//! larger ones use the O(n³) Hungarian method with potentials.

/// `rows[j]` is the row assigned to column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub rows: Vec<usize>,
    pub cost: f64,
}

const EXHAUSTIVE_MAX: usize = 8;

/// Sum of the assigned costs, added in sorted order so that transposed
/// problems give bit-identical totals.
fn ordered_sum(cost: &[Vec<f64>], rows: &[usize]) -> f64 {
    let mut terms: Vec<f64> = rows.iter().enumerate().map(|(j, &i)| cost[i][j]).collect();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

pub fn min_assignment(cost: &[Vec<f64>]) -> Assignment {
    let n = cost.len();
    debug_assert!(cost.iter().all(|row| row.len() == n));
    if n == 0 {
        return Assignment {
            rows: Vec::new(),
            cost: 0.0,
        };
    }
    let rows = if n <= EXHAUSTIVE_MAX {
        subset_dp(cost)
    } else {
        hungarian(cost)
    };
    let total = ordered_sum(cost, &rows);
    Assignment { rows, cost: total }
}

fn subset_dp(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let full = 1usize << n;
    let mut best = vec![f64::INFINITY; full];
    let mut choice = vec![usize::MAX; full];
    best[0] = 0.0;
    for mask in 0..full {
        let j = mask.count_ones() as usize;
        if j >= n || !best[mask].is_finite() {
            continue;
        }
        for i in 0..n {
            if mask & (1 << i) != 0 {
                continue;
            }
            let next = mask | (1 << i);
            let v = best[mask] + cost[i][j];
            if v < best[next] {
                best[next] = v;
                choice[next] = i;
            }
        }
    }
    let mut rows = vec![0; n];
    let mut mask = full - 1;
    for j in (0..n).rev() {
        let i = choice[mask];
        rows[j] = i;
        mask &= !(1 << i);
    }
    rows
}

fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-indexed potentials; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
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
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| row_of[j] - 1).collect()
}

/// Enumerates every permutation. Test oracle only; factorial cost.
pub fn min_assignment_brute_force(cost: &[Vec<f64>]) -> Assignment {
    let n = cost.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = Assignment {
        rows: perm.clone(),
        cost: ordered_sum(cost, &perm),
    };
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut k = 0;
    while k < n {
        if c[k] < k {
            if k % 2 == 0 {
                perm.swap(0, k);
            } else {
                perm.swap(c[k], k);
            }
            let total = ordered_sum(cost, &perm);
            if total < best.cost {
                best = Assignment {
                    rows: perm.clone(),
                    cost: total,
                };
            }
            c[k] += 1;
            k = 0;
        } else {
            c[k] = 0;
            k += 1;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_cost(seed: u64, n: usize) -> Vec<Vec<f64>> {
        let mut g = rng::seeded(seed);
        (0..n)
            .map(|_| (0..n).map(|_| g.random_range(0.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn dp_matches_brute_force() {
        for seed in 0..40 {
            let n = 1 + (seed as usize % 7);
            let cost = random_cost(seed, n);
            let a = min_assignment(&cost);
            let b = min_assignment_brute_force(&cost);
            assert!((a.cost - b.cost).abs() < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn hungarian_matches_dp() {
        for seed in 0..20 {
            let n = 2 + (seed as usize % 7);
            let cost = random_cost(100 + seed, n);
            let rows = hungarian(&cost);
            let h = ordered_sum(&cost, &rows);
            let d = ordered_sum(&cost, &subset_dp(&cost));
            assert!((h - d).abs() < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn hungarian_returns_permutation() {
        let cost = random_cost(7, 12);
        let a = min_assignment(&cost);
        let mut seen = a.rows.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn transposed_problem_same_cost() {
        let cost = random_cost(3, 6);
        let t: Vec<Vec<f64>> = (0..6).map(|j| (0..6).map(|i| cost[i][j]).collect()).collect();
        assert_eq!(min_assignment(&cost).cost, min_assignment(&t).cost);
    }

    #[test]
    fn trivial_sizes() {
        assert_eq!(min_assignment(&[]).cost, 0.0);
        assert_eq!(min_assignment(&[vec![2.5]]).rows, vec![0]);
    }
}
