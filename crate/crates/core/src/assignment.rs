//! Maximum-weight assignment of RF chains to distinct beams.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Minimum-cost assignment of every row of `cost` (`n ≤ m`) to a distinct
/// column. Entries equal to `f64::INFINITY` are forbidden. Returns the
/// column per row and the total cost, or `None` if every complete
/// assignment uses a forbidden entry.
fn min_cost_rows(cost: &DMatrix<f64>) -> Option<(Vec<usize>, f64)> {
    let (n, m) = cost.shape();
    debug_assert!(n <= m);
    let big = cost.iter().filter(|c| c.is_finite()).fold(0.0f64, |a, c| a.max(c.abs()));
    let forbid = 1e6 * (1.0 + big) * (n as f64 + 1.0);
    let c = |i: usize, j: usize| {
        let v = cost[(i, j)];
        if v.is_finite() {
            v
        } else {
            forbid
        }
    };
    // potentials / augmenting paths, 1-based with a virtual column 0
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
    let mut col = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            col[p[j] - 1] = j - 1;
        }
    }
    if col.iter().enumerate().any(|(i, &j)| !cost[(i, j)].is_finite()) {
        return None;
    }
    let total = col.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    Some((col, total))
}

/// Maximum-weight assignment of the `M` columns (RF chains) of the `S × M`
/// matrix `weights` to distinct rows (beams). Among optimal assignments the
/// lexicographically smallest beam vector wins. Returns the beam per chain
/// and the total weight.
pub fn max_weight_assignment(weights: &DMatrix<f64>) -> Result<(Vec<usize>, f64)> {
    let (s, m) = weights.shape();
    if s < m {
        return Err(Error::Structural { rf: m, beams: s });
    }
    if m == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let mut cost = DMatrix::from_fn(m, s, |i, j| -weights[(j, i)]);
    let (_, best) = min_cost_rows(&cost).expect("unconstrained assignment exists");
    let tie = 1e-12 * (1.0 + best.abs());
    let mut beams = Vec::with_capacity(m);
    for chain in 0..m {
        let mut chosen = None;
        for beam in 0..s {
            if !cost[(chain, beam)].is_finite() {
                continue;
            }
            let mut trial = cost.clone();
            for j in 0..s {
                if j != beam {
                    trial[(chain, j)] = f64::INFINITY;
                }
            }
            for other in chain + 1..m {
                trial[(other, beam)] = f64::INFINITY;
            }
            if let Some((_, v)) = min_cost_rows(&trial) {
                if v <= best + tie {
                    chosen = Some((beam, trial));
                    break;
                }
            }
        }
        let (beam, trial) = chosen.expect("an optimal completion always exists");
        beams.push(beam);
        cost = trial;
    }
    let total = beams.iter().enumerate().map(|(m, &b)| weights[(b, m)]).sum();
    Ok((beams, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(w: &DMatrix<f64>) -> f64 {
        fn rec(w: &DMatrix<f64>, m: usize, used: &mut Vec<bool>) -> f64 {
            if m == w.ncols() {
                return 0.0;
            }
            let mut best = f64::NEG_INFINITY;
            for s in 0..w.nrows() {
                if !used[s] {
                    used[s] = true;
                    best = best.max(w[(s, m)] + rec(w, m + 1, used));
                    used[s] = false;
                }
            }
            best
        }
        rec(w, 0, &mut vec![false; w.nrows()])
    }

    #[test]
    fn three_by_two_example() {
        let w = DMatrix::from_row_slice(3, 2, &[0.9, 0.1, 0.8, 0.7, 0.1, 0.9]);
        let (beams, total) = max_weight_assignment(&w).unwrap();
        assert_eq!(beams, vec![0, 2]);
        assert!((total - 1.8).abs() < 1e-12);
    }

    #[test]
    fn ties_prefer_low_beams() {
        let w = DMatrix::from_element(4, 2, 0.5);
        assert_eq!(max_weight_assignment(&w).unwrap().0, vec![0, 1]);
        let w = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        // (1, 0), (1, 2) and (2, 0) all reach 2
        assert_eq!(max_weight_assignment(&w).unwrap().0, vec![1, 0]);
    }

    #[test]
    fn too_few_beams() {
        let w = DMatrix::from_element(2, 3, 1.0);
        assert!(matches!(max_weight_assignment(&w), Err(Error::Structural { rf: 3, beams: 2 })));
    }

    proptest! {
        #[test]
        fn matches_brute_force(s in 1usize..6, extra in 0usize..3, seed in any::<u64>()) {
            let m = s.min(1 + extra % s.max(1));
            let mut state = seed;
            let w = DMatrix::from_fn(s, m, |_, _| {
                state = crate::scenario::splitmix64(state);
                (state >> 11) as f64 / (1u64 << 53) as f64
            });
            let (beams, total) = max_weight_assignment(&w).unwrap();
            let mut sorted = beams.clone();
            sorted.sort();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), m);
            prop_assert!((total - brute_force(&w)).abs() < 1e-12);
        }
    }
}
