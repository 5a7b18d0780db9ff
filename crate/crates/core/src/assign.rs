//! Minimum-cost bipartite assignment.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Optimal one-to-one assignment of `min(n, m)` pairs for an `n × m` cost
/// matrix, as `(row, column)` pairs sorted by row. Shortest augmenting paths
/// with potentials; scans columns in index order and keeps the first minimum,
/// so ties resolve toward low indices.
pub fn hungarian(cost: &Tensor) -> Result<Vec<(usize, usize)>> {
    if cost.shape().len() != 2 {
        return Err(crate::error::dim_err("hungarian", &[0, 0], cost.shape()));
    }
    finite_costs(cost)?;
    let (n, m) = (cost.rows(), cost.cols());
    if n == 0 || m == 0 {
        return Ok(Vec::new());
    }
    if n <= m {
        Ok(solve(n, m, |i, j| cost.get(i, j)))
    } else {
        let mut pairs: Vec<(usize, usize)> = solve(m, n, |i, j| cost.get(j, i))
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect();
        pairs.sort_unstable();
        Ok(pairs)
    }
}

/// Sum of the costs of `pairs`.
pub fn assignment_cost(cost: &Tensor, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| cost.get(i, j)).sum()
}

// rows ≤ cols; 1-based arrays with a virtual column 0
fn solve(n: usize, m: usize, c: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
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
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| row_of[j] != 0)
        .map(|j| (row_of[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Checks that no row or column appears twice.
pub fn is_one_to_one(pairs: &[(usize, usize)]) -> bool {
    let mut rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let mut cols: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    rows.sort_unstable();
    cols.sort_unstable();
    rows.windows(2).all(|w| w[0] != w[1]) && cols.windows(2).all(|w| w[0] != w[1])
}

fn finite_costs(cost: &Tensor) -> Result<()> {
    match cost.data().iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(cost: &Tensor) -> f64 {
        let (n, m) = (cost.rows(), cost.cols());
        let k = n.min(m);
        // choose k columns for rows (if n ≤ m) by enumerating injections
        fn rec(
            cost: &Tensor,
            transposed: bool,
            i: usize,
            rows: usize,
            used: &mut Vec<bool>,
            acc: f64,
            best: &mut f64,
        ) {
            if i == rows {
                *best = best.min(acc);
                return;
            }
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    let c = if transposed { cost.get(j, i) } else { cost.get(i, j) };
                    rec(cost, transposed, i + 1, rows, used, acc + c, best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        if n <= m {
            rec(cost, false, 0, k, &mut vec![false; m], 0.0, &mut best);
        } else {
            rec(cost, true, 0, k, &mut vec![false; n], 0.0, &mut best);
        }
        best
    }

    fn random_cost(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Tensor {
        let data = (0..n * m).map(|_| rng.random::<f64>()).collect();
        Tensor::matrix(n, m, data).unwrap()
    }

    #[test]
    fn diagonal_zero_matrix_gives_identity() {
        let mut data = vec![1.0; 25];
        for i in 0..5 {
            data[i * 5 + i] = 0.0;
        }
        let cost = Tensor::matrix(5, 5, data).unwrap();
        let pairs = hungarian(&cost).unwrap();
        assert_eq!(pairs, (0..5).map(|i| (i, i)).collect::<Vec<_>>());
        assert_eq!(assignment_cost(&cost, &pairs), 0.0);
    }

    #[test]
    fn single_cell() {
        let cost = Tensor::matrix(1, 1, vec![3.5]).unwrap();
        assert_eq!(hungarian(&cost).unwrap(), vec![(0, 0)]);
    }

    #[test]
    fn empty_side_gives_no_pairs() {
        let cost = Tensor::zeros(&[0, 3]);
        assert!(hungarian(&cost).unwrap().is_empty());
    }

    #[test]
    fn ties_resolve_toward_low_indices() {
        let cost = Tensor::zeros(&[2, 3]);
        assert_eq!(hungarian(&cost).unwrap(), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn matches_exhaustive_search_up_to_six() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for seed in 0..50u64 {
            let n = 1 + (seed as usize % 6);
            let m = 1 + ((seed as usize / 6) % 6);
            let cost = random_cost(&mut rng, n, m);
            let pairs = hungarian(&cost).unwrap();
            assert_eq!(pairs.len(), n.min(m));
            assert!(is_one_to_one(&pairs));
            assert!((assignment_cost(&cost, &pairs) - brute(&cost)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn optimal_for_any_shape(n in 1usize..=6, m in 1usize..=6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cost = random_cost(&mut rng, n, m);
            let pairs = hungarian(&cost).unwrap();
            prop_assert!(is_one_to_one(&pairs));
            prop_assert_eq!(pairs.len(), n.min(m));
            prop_assert!((assignment_cost(&cost, &pairs) - brute(&cost)).abs() < 1e-12);
        }
    }
}
