//! Fixed two-dimensional sin-cos positional tables for patch grids.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Builds the `(n*n, dim)` positional table for an `n x n` patch grid, rows in
/// row-major grid order. The first half of each row encodes the patch row
/// index and the second half the column index, each as interleaved sin/cos
/// bands with geometrically spaced frequencies; the table is a deterministic
/// function of `(n, dim)` and is never trained.
///
/// # Errors
/// Fails when `dim` is not divisible by 4 (each axis needs sin+cos pairs).
pub fn sincos_2d(n: usize, dim: usize) -> Result<Array2<f64>> {
    if n == 0 || dim == 0 || !dim.is_multiple_of(4) {
        return Err(Error::config(format!(
            "positional table needs a positive grid and dim divisible by 4, got n={n} dim={dim}"
        )));
    }
    let quarter = dim / 4;
    let omega: Vec<f64> = (0..quarter)
        .map(|k| 1.0 / 10000f64.powf(k as f64 / quarter as f64))
        .collect();
    let mut table = Array2::zeros((n * n, dim));
    for r in 0..n {
        for c in 0..n {
            let idx = r * n + c;
            for (k, &w) in omega.iter().enumerate() {
                let (ar, ac) = (r as f64 * w, c as f64 * w);
                table[[idx, k]] = ar.sin();
                table[[idx, quarter + k]] = ar.cos();
                table[[idx, 2 * quarter + k]] = ac.sin();
                table[[idx, 3 * quarter + k]] = ac.cos();
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn table_has_grid_shape_and_bounded_values() {
        let t = sincos_2d(4, 64).unwrap();
        assert_eq!(t.dim(), (16, 64));
        assert!(t.iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn origin_row_is_the_sin_cos_of_zero() {
        let t = sincos_2d(3, 8).unwrap();
        // Position (0,0): every sin band is 0, every cos band is 1.
        assert_eq!(t.row(0).to_vec(), vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn first_half_tracks_rows_and_second_half_tracks_columns() {
        let n = 5;
        let dim = 16;
        let t = sincos_2d(n, dim).unwrap();
        // Same row, different columns: first half identical.
        let a = t.row(2 * n + 1);
        let b = t.row(2 * n + 3);
        assert_eq!(a.slice(ndarray::s![..dim / 2]), b.slice(ndarray::s![..dim / 2]));
        assert_ne!(a.slice(ndarray::s![dim / 2..]), b.slice(ndarray::s![dim / 2..]));
        // Same column, different rows: second half identical.
        let c = t.row(n + 4);
        let d = t.row(3 * n + 4);
        assert_eq!(c.slice(ndarray::s![dim / 2..]), d.slice(ndarray::s![dim / 2..]));
        assert_ne!(c.slice(ndarray::s![..dim / 2]), d.slice(ndarray::s![..dim / 2]));
    }

    #[test]
    fn bands_follow_the_inverse_power_frequencies() {
        let t = sincos_2d(4, 16).unwrap();
        // Row index 1 (grid row 0, col 1): col-sin band k has sin(1/10000^(k/4)).
        for k in 0..4 {
            let w = 1.0 / 10000f64.powf(k as f64 / 4.0);
            assert_relative_eq!(t[[1, 8 + k]], w.sin(), epsilon = 1e-15);
            assert_relative_eq!(t[[1, 12 + k]], w.cos(), epsilon = 1e-15);
        }
    }

    #[test]
    fn all_grid_positions_are_distinct() {
        let t = sincos_2d(6, 32).unwrap();
        for i in 0..36 {
            for j in (i + 1)..36 {
                assert_ne!(t.row(i), t.row(j), "positions {i} and {j} collide");
            }
        }
    }

    #[test]
    fn indivisible_dims_are_rejected() {
        assert!(sincos_2d(4, 30).is_err());
        assert!(sincos_2d(4, 0).is_err());
        assert!(sincos_2d(0, 16).is_err());
    }

    #[test]
    fn table_is_deterministic() {
        assert_eq!(sincos_2d(7, 20).unwrap(), sincos_2d(7, 20).unwrap());
    }
}
