//! Depth-to-space (pixel shuffle) and its inverse.

use super::{Shape, Tensor4};
use crate::error::{shape_err, Result};

/// `b×(c·r²)×h×w → b×c×(h·r)×(w·r)` with
/// `out[n, c, i·r + a, j·r + b] = in[n, c·r² + a·r + b, i, j]`.
pub fn pixel_shuffle(x: &Tensor4, r: usize) -> Result<Tensor4> {
    let s = x.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(shape_err!(
            "pixel_shuffle: {} channels not divisible by r^2 = {}",
            s.c,
            r * r
        ));
    }
    let c = s.c / (r * r);
    Ok(Tensor4::from_fn(
        Shape::new(s.b, c, s.h * r, s.w * r),
        |n, ch, i, j| {
            let (a, b) = (i % r, j % r);
            x.at(n, ch * r * r + a * r + b, i / r, j / r)
        },
    ))
}

/// Inverse of [`pixel_shuffle`].
pub fn space_to_depth(x: &Tensor4, r: usize) -> Result<Tensor4> {
    let s = x.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(shape_err!(
            "space_to_depth: {}x{} not divisible by {r}",
            s.h,
            s.w
        ));
    }
    Ok(Tensor4::from_fn(
        Shape::new(s.b, s.c * r * r, s.h / r, s.w / r),
        |n, ch, i, j| {
            let (c, a, b) = (ch / (r * r), (ch / r) % r, ch % r);
            x.at(n, c, i * r + a, j * r + b)
        },
    ))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn four_channels_to_two_by_two() {
        let x = Tensor4::from_vec(Shape::new(1, 4, 1, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn unit_factor_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor4::random_normal(Shape::new(2, 3, 4, 5), 1.0, &mut rng);
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
    }

    #[test]
    fn round_trip_and_value_multiset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for r in [2, 3] {
            let x = Tensor4::random_normal(Shape::new(2, 2 * r * r, 3, 4), 1.0, &mut rng);
            let y = pixel_shuffle(&x, r).unwrap();
            assert_eq!(space_to_depth(&y, r).unwrap(), x);
            let mut a = x.data().to_vec();
            let mut b = y.data().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn indivisible_channels() {
        let x = Tensor4::zeros(Shape::new(1, 3, 2, 2));
        assert!(matches!(pixel_shuffle(&x, 2), Err(crate::Error::Shape(_))));
    }
}
