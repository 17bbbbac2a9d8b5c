use crate::{Error, Result};

/// Classical CG error bound `2 ((√κ - 1) / (√κ + 1))^m e0`.
///
/// Holds for the A-norm of the error after `m` iterations when `kappa` is the
/// spectral condition number of `A`.
pub fn cg_error_bound(kappa: f64, m: usize, e0: f64) -> Result<f64> {
    if !(kappa >= 1.0) || kappa.is_infinite() {
        return Err(Error::InvalidKappa(kappa));
    }
    let s = kappa.sqrt();
    let rate = (s - 1.0) / (s + 1.0);
    Ok(2.0 * rate.powi(m.min(i32::MAX as usize) as i32) * e0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_values() {
        assert_eq!(cg_error_bound(1.0, 5, 3.0).unwrap(), 0.0);
        let v = cg_error_bound(100.0, 1, 1.0).unwrap();
        assert!((v - 2.0 * 9.0 / 11.0).abs() < 1e-15);
        let v = cg_error_bound(4.0, 2, 1.0).unwrap();
        assert!((v - 2.0 / 9.0).abs() < 1e-15);
        assert_eq!(cg_error_bound(7.0, 0, 1.5).unwrap(), 3.0);
    }

    #[test]
    fn rejects_small_kappa() {
        assert!(matches!(cg_error_bound(0.5, 1, 1.0), Err(Error::InvalidKappa(_))));
        assert!(cg_error_bound(f64::NAN, 1, 1.0).is_err());
    }

    #[test]
    fn non_increasing_in_m() {
        for kappa in [1.0, 1.5, 10.0, 1e4] {
            let mut prev = f64::INFINITY;
            for m in 0..50 {
                let v = cg_error_bound(kappa, m, 2.0).unwrap();
                assert!(v <= prev);
                prev = v;
            }
        }
    }
}
