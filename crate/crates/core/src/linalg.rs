//! Small dense helpers: projections and a symmetric solve.

use nalgebra::{DMatrix, DVector};

/// Euclidean projection of `v` onto `{x >= 0, sum(x) = radius}`.
pub fn project_simplex(v: &[f64], radius: f64) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    if radius <= 0.0 {
        return vec![0.0; v.len()];
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - radius) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    // Restore the sum exactly; rounding in theta leaves ~1 ulp per entry.
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        let err = radius - total;
        if let Some(k) = (0..out.len()).max_by(|&a, &b| out[a].total_cmp(&out[b])) {
            out[k] += err;
        }
    }
    out
}

/// Euclidean projection onto `{x >= 0, sum(x) <= cap}`.
pub fn project_capped(v: &[f64], cap: f64) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= cap {
        clipped
    } else {
        let mut out = project_simplex(v, cap);
        for x in &mut out {
            *x = x.max(0.0);
        }
        out
    }
}

/// Solves `K x = rhs` for symmetric `K` (row-major, `dim x dim`).
///
/// Cholesky first; on failure the diagonal is shifted by `regularization`
/// and an LU solve is attempted. `None` if both fail or the result is not
/// finite.
pub fn solve_symmetric(k: &[f64], rhs: &[f64], dim: usize, regularization: f64) -> Option<Vec<f64>> {
    let matrix = DMatrix::from_row_slice(dim, dim, k);
    let b = DVector::from_column_slice(rhs);
    let finite = |x: &DVector<f64>| x.iter().all(|v| v.is_finite());
    if let Some(chol) = matrix.clone().cholesky() {
        let x = chol.solve(&b);
        if finite(&x) {
            return Some(x.iter().copied().collect());
        }
    }
    let mut shifted = matrix;
    for i in 0..dim {
        shifted[(i, i)] += regularization;
    }
    if let Some(chol) = shifted.clone().cholesky() {
        let x = chol.solve(&b);
        if finite(&x) {
            return Some(x.iter().copied().collect());
        }
    }
    shifted.lu().solve(&b).filter(finite).map(|x| x.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn simplex_already_feasible() {
        assert_eq!(project_simplex(&[0.7, 0.3], 1.0), vec![0.7, 0.3]);
    }

    #[test]
    fn simplex_clips_negative_side() {
        let x = project_simplex(&[1.5, -0.5], 1.0);
        assert_eq!(x, vec![1.0, 0.0]);
    }

    #[test]
    fn capped_inside_is_identity() {
        assert_eq!(project_capped(&[0.2, 0.3], 1.0), vec![0.2, 0.3]);
        assert_eq!(project_capped(&[0.2, -0.3], 1.0), vec![0.2, 0.0]);
    }

    #[test]
    fn solves_spd() {
        let x = solve_symmetric(&[4.0, 1.0, 1.0, 3.0], &[1.0, 2.0], 2, 1e-8).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-14);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn singular_falls_back_to_regularized() {
        let x = solve_symmetric(&[1.0, 0.0, 0.0, 0.0], &[1.0, 0.0], 2, 1e-8).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-6);
        assert_eq!(x[1], 0.0);
    }

    proptest! {
        #[test]
        fn simplex_projection_is_on_simplex(v in prop::collection::vec(-5.0f64..5.0, 1..8), r in 0.01f64..4.0) {
            let x = project_simplex(&v, r);
            prop_assert!(x.iter().all(|&xi| xi >= 0.0));
            prop_assert!((x.iter().sum::<f64>() - r).abs() <= 1e-12 * r.max(1.0));
        }

        #[test]
        fn simplex_projection_is_nearest(v in prop::collection::vec(-2.0f64..2.0, 2..5), r in 0.1f64..2.0, seed in 0u64..1000) {
            // Any other simplex point is no closer than the projection.
            let x = project_simplex(&v, r);
            let k = v.len();
            let mut w: Vec<f64> = (0..k).map(|i| ((seed as usize * 31 + i * 17) % 13) as f64 + 0.1).collect();
            let s: f64 = w.iter().sum();
            for wi in &mut w { *wi *= r / s; }
            let d = |a: &[f64]| a.iter().zip(&v).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
            prop_assert!(d(&x) <= d(&w) + 1e-12);
        }
    }
}
