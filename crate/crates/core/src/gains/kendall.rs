use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Kendall's τ-b by direct pair counting (O(n²)):
/// `(C − D) / sqrt((n₀ − n₁)(n₀ − n₂))` where `n₁`, `n₂` count pairs tied
/// in `x` and in `y` respectively.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} observations",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 observations, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN in rank correlation input".into()));
    }
    let n = x.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut tied_x, mut tied_y) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].total_cmp(&x[j]);
            let dy = y[i].total_cmp(&y[j]);
            // -0.0 and 0.0 compare unequal under total_cmp; treat as tied.
            let dx = if x[i] == x[j] { Ordering::Equal } else { dx };
            let dy = if y[i] == y[j] { Ordering::Equal } else { dy };
            match (dx, dy) {
                (Ordering::Equal, Ordering::Equal) => {
                    tied_x += 1;
                    tied_y += 1;
                }
                (Ordering::Equal, _) => tied_x += 1,
                (_, Ordering::Equal) => tied_y += 1,
                (a, b) if a == b => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    if tied_x == n0 || tied_y == n0 {
        return Err(Error::Degenerate("all values tied in one variable".into()));
    }
    let denom = (((n0 - tied_x) as f64) * ((n0 - tied_y) as f64)).sqrt();
    Ok((concordant - discordant) as f64 / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&x, &x).unwrap(), 1.0);
        assert_eq!(kendall_tau(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        let t = kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((t - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ties_use_b_correction() {
        // Pairs: (0,1) tied in x; (0,2) C; (1,2) C. C - D = 2, n0 = 3.
        let t = kendall_tau(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((t - 2.0 / (2.0f64 * 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            kendall_tau(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            kendall_tau(&[1.0], &[1.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(kendall_tau(&[1.0, 2.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_and_monotone_invariant(
            pairs in prop::collection::vec((0i32..6, 0i32..6), 3..30)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            if let Ok(t) = kendall_tau(&x, &y) {
                prop_assert_eq!(t, kendall_tau(&y, &x).unwrap());
                prop_assert!((-1.0..=1.0).contains(&t));
                let xt: Vec<f64> = x.iter().map(|v| (v * 0.7).exp() - 3.0).collect();
                prop_assert_eq!(t, kendall_tau(&xt, &y).unwrap());
            }
        }
    }
}
