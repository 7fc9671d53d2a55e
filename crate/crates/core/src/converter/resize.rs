//! Bilinear resampling expressed as explicit weight matrices, so the forward
//! resize and its adjoint (used for backpropagation) share one definition.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Interpolation weights mapping an axis of `in_len` samples onto `out_len`
/// samples, half-pixel-center convention with edge clamping. Row `d` holds the
/// source weights for output index `d`; at most two entries are non-zero and
/// every row sums to 1.
///
/// # Errors
/// Fails when either length is zero.
pub fn resize_weights(in_len: usize, out_len: usize) -> Result<Array2<f64>> {
    if in_len == 0 || out_len == 0 {
        return Err(Error::data(format!(
            "resize needs positive sizes (got {in_len} -> {out_len})"
        )));
    }
    let mut w = Array2::zeros((out_len, in_len));
    let scale = in_len as f64 / out_len as f64;
    for d in 0..out_len {
        let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(in_len - 1);
        let frac = src - i0 as f64;
        w[[d, i0]] += 1.0 - frac;
        w[[d, i1]] += frac;
    }
    Ok(w)
}

/// Resizes a matrix to `(out_h, out_w)` by separable bilinear interpolation.
///
/// # Errors
/// Fails when any input or output dimension is zero.
pub fn bilinear_resize(input: &Array2<f64>, out_h: usize, out_w: usize) -> Result<Array2<f64>> {
    let (h, w) = input.dim();
    let rows = resize_weights(h, out_h)?;
    let cols = resize_weights(w, out_w)?;
    Ok(rows.dot(input).dot(&cols.t()))
}

/// Adjoint of [`bilinear_resize`]: scatters an `(out_h, out_w)` gradient back
/// onto an `(in_h, in_w)` grid using the same interpolation weights, so that
/// `<resize(x), g> = <x, adjoint(g)>` holds exactly.
///
/// # Errors
/// Fails when any dimension is zero.
pub fn bilinear_resize_adjoint(
    grad_out: &Array2<f64>,
    in_h: usize,
    in_w: usize,
) -> Result<Array2<f64>> {
    let (oh, ow) = grad_out.dim();
    let rows = resize_weights(in_h, oh)?;
    let cols = resize_weights(in_w, ow)?;
    Ok(rows.t().dot(grad_out).dot(&cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent reference: per-output-pixel 4-neighbor blend with clamped
    /// indices, written without the weight-matrix factorization.
    fn reference_resize(input: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
        let (h, w) = input.dim();
        let mut out = Array2::zeros((out_h, out_w));
        for r in 0..out_h {
            for c in 0..out_w {
                let sr = ((r as f64 + 0.5) * h as f64 / out_h as f64 - 0.5)
                    .clamp(0.0, (h - 1) as f64);
                let sc = ((c as f64 + 0.5) * w as f64 / out_w as f64 - 0.5)
                    .clamp(0.0, (w - 1) as f64);
                let (r0, c0) = (sr.floor() as usize, sc.floor() as usize);
                let r1 = (r0 + 1).min(h - 1);
                let c1 = (c0 + 1).min(w - 1);
                let (fr, fc) = (sr - r0 as f64, sc - c0 as f64);
                out[[r, c]] = (1.0 - fr) * (1.0 - fc) * input[[r0, c0]]
                    + (1.0 - fr) * fc * input[[r0, c1]]
                    + fr * (1.0 - fc) * input[[r1, c0]]
                    + fr * fc * input[[r1, c1]];
            }
        }
        out
    }

    #[test]
    fn upsampling_a_two_pixel_row_hits_the_half_pixel_centers() {
        let input = arr2(&[[0.0, 1.0]]);
        let out = bilinear_resize(&input, 1, 4).unwrap();
        let want = [0.0, 0.25, 0.75, 1.0];
        for (c, w) in want.iter().enumerate() {
            assert_relative_eq!(out[[0, c]], w, epsilon = 1e-15);
        }
        // Must agree with the independent reference as well.
        let reference = reference_resize(&input, 1, 4);
        assert_eq!(out, reference);
    }

    #[test]
    fn identity_sizes_copy_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = Array2::from_shape_fn((7, 11), |_| rng.random::<f64>() * 100.0 - 50.0);
        let out = bilinear_resize(&input, 7, 11).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn constants_stay_constant_at_any_size() {
        let input = Array2::from_elem((5, 3), 4.25);
        for &(oh, ow) in &[(1usize, 1usize), (2, 9), (17, 4), (64, 64)] {
            let out = bilinear_resize(&input, oh, ow).unwrap();
            for v in out.iter() {
                assert_relative_eq!(*v, 4.25, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rejects_zero_sizes() {
        let input = Array2::<f64>::zeros((3, 3));
        assert!(bilinear_resize(&input, 0, 3).is_err());
        assert!(bilinear_resize(&input, 3, 0).is_err());
        assert!(bilinear_resize(&Array2::<f64>::zeros((0, 3)), 2, 2).is_err());
    }

    #[test]
    fn weight_rows_sum_to_one() {
        for &(i, o) in &[(1usize, 7usize), (5, 3), (12, 112), (64, 2), (24, 24)] {
            let w = resize_weights(i, o).unwrap();
            for row in w.rows() {
                assert_relative_eq!(row.sum(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn agrees_with_brute_force_reference_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for case in 0..200 {
            let h = rng.random_range(1..=64);
            let w = rng.random_range(1..=64);
            let oh = rng.random_range(1..=64);
            let ow = rng.random_range(1..=64);
            let input = Array2::from_shape_fn((h, w), |_| rng.random::<f64>() * 10.0 - 5.0);
            let got = bilinear_resize(&input, oh, ow).unwrap();
            let want = reference_resize(&input, oh, ow);
            for (g, r) in got.iter().zip(want.iter()) {
                assert!(
                    (g - r).abs() <= 1e-9,
                    "case {case} ({h}x{w} -> {oh}x{ow}): {g} vs {r}"
                );
            }
        }
    }

    #[test]
    fn adjoint_satisfies_the_inner_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..100 {
            let h = rng.random_range(1..=32);
            let w = rng.random_range(1..=32);
            let oh = rng.random_range(1..=32);
            let ow = rng.random_range(1..=32);
            let x = Array2::from_shape_fn((h, w), |_| rng.random::<f64>() - 0.5);
            let g = Array2::from_shape_fn((oh, ow), |_| rng.random::<f64>() - 0.5);
            let fwd = bilinear_resize(&x, oh, ow).unwrap();
            let adj = bilinear_resize_adjoint(&g, h, w).unwrap();
            let lhs: f64 = fwd.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(adj.iter()).map(|(a, b)| a * b).sum();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-9, max_relative = 1e-9);
        }
    }
}
