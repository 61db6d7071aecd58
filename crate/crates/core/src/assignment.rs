//! Exact minimum-cost perfect matching on square cost matrices
//! (Hungarian method with row/column potentials, O(n³)).

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `row_to_col[i]` is the column assigned to row `i`.
    pub row_to_col: Vec<usize>,
    pub cost: f64,
}

pub fn hungarian(cost: &Array2<f64>) -> Result<Assignment> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(Error::NotSquare { rows: n, cols: m });
    }
    if let Some(bad) = cost.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite cost {bad}")));
    }
    if n == 0 {
        return Ok(Assignment {
            row_to_col: Vec::new(),
            cost: 0.0,
        });
    }

    // 1-based indexing; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < min_slack[j] {
                    min_slack[j] = cur;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        // Augment along the alternating path.
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[owner[j] - 1] = j - 1;
    }
    let total = row_to_col
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[[i, j]])
        .sum();
    Ok(Assignment {
        row_to_col,
        cost: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_by_two() {
        let a = hungarian(&array![[1.0, 2.0], [3.0, 1.0]]).unwrap();
        assert_eq!(a.row_to_col, vec![0, 1]);
        assert_eq!(a.cost, 2.0);
    }

    #[test]
    fn diagonal_preferred() {
        let n = 5;
        let c = Array2::from_shape_fn(
            (n, n),
            |(i, j)| if i == j { 0.0 } else { 1.0 + (i * j) as f64 },
        );
        assert_eq!(
            hungarian(&c).unwrap().row_to_col,
            (0..n).collect::<Vec<_>>()
        );
    }

    #[test]
    fn anti_diagonal() {
        let c = array![[9.0, 9.0, 1.0], [9.0, 1.0, 9.0], [1.0, 9.0, 9.0]];
        let a = hungarian(&c).unwrap();
        assert_eq!(a.row_to_col, vec![2, 1, 0]);
        assert_eq!(a.cost, 3.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            hungarian(&Array2::zeros((2, 3))),
            Err(Error::NotSquare { rows: 2, cols: 3 })
        ));
        assert!(hungarian(&array![[f64::NAN]]).is_err());
        assert_eq!(hungarian(&Array2::zeros((0, 0))).unwrap().cost, 0.0);
    }

    #[test]
    fn negative_costs() {
        let c = array![[-5.0, 0.0], [0.0, -5.0]];
        assert_eq!(hungarian(&c).unwrap().cost, -10.0);
    }
}
