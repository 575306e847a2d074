use super::{GridShape, Tensor};
use crate::error::{Error, Result};

/// Align-corners source position for output index `i` along an axis.
///
/// Returns `(lower, upper, frac)` with `upper = min(lower + 1, src - 1)`.
pub(crate) fn align_corners_taps(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    if src == 1 || dst == 1 {
        return (0, 0, 0.0);
    }
    let pos = (i * (src - 1)) as f64 / (dst - 1) as f64;
    let lo = (pos.floor() as usize).min(src - 1);
    let hi = (lo + 1).min(src - 1);
    (lo, hi, pos - lo as f64)
}

/// Resamples one axis of a `[outer, len, inner]` view to `new_len`.
fn resample_axis(data: &[f32], outer: usize, len: usize, inner: usize, new_len: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; outer * new_len * inner];
    let taps: Vec<_> = (0..new_len)
        .map(|i| align_corners_taps(i, len, new_len))
        .collect();
    for o in 0..outer {
        let src = &data[o * len * inner..(o + 1) * len * inner];
        let dst = &mut out[o * new_len * inner..(o + 1) * new_len * inner];
        for (i, &(lo, hi, frac)) in taps.iter().enumerate() {
            let a = &src[lo * inner..(lo + 1) * inner];
            let b = &src[hi * inner..(hi + 1) * inner];
            let row = &mut dst[i * inner..(i + 1) * inner];
            let frac = frac as f32;
            for ((r, &a), &b) in row.iter_mut().zip(a).zip(b) {
                // a + (b - a) * f keeps constants exact.
                *r = a + (b - a) * frac;
            }
        }
    }
    out
}

/// Per-channel trilinear resampling of a `[C,T,H,W]` tensor onto `target`.
///
/// Uses the align-corners convention: the first and last sample of every
/// axis map onto the first and last sample of the output. Axes of source
/// size 1 broadcast.
pub fn trilinear_resample(src: &Tensor, target: GridShape) -> Result<Tensor> {
    let (c, grid) = src.as_cthw()?;
    if !target.is_valid() {
        return Err(Error::invalid(format!("zero-size target grid {target}")));
    }
    let mut cur = [grid.t, grid.h, grid.w];
    let mut data = src.data().to_vec();
    let new = target.extents();
    for axis in 0..3 {
        if cur[axis] == new[axis] {
            continue;
        }
        let outer = c * cur[..axis].iter().product::<usize>();
        let inner = cur[axis + 1..].iter().product::<usize>();
        data = resample_axis(&data, outer, cur[axis], inner, new[axis]);
        cur[axis] = new[axis];
    }
    Tensor::new(vec![c, target.t, target.h, target.w], data)
}

/// Divides the channel vector at every `(t,h,w)` by `max(norm, epsilon)`.
pub fn l2_normalize_positions(t: &Tensor, epsilon: f32) -> Result<Tensor> {
    let (c, grid) = t.as_cthw()?;
    let n = grid.cells();
    let mut out = t.clone();
    let data = out.data_mut();
    for cell in 0..n {
        let norm = (0..c)
            .map(|ch| {
                let v = data[ch * n + cell] as f64;
                v * v
            })
            .sum::<f64>()
            .sqrt();
        let denom = norm.max(epsilon as f64);
        if denom == 0.0 {
            continue;
        }
        for ch in 0..c {
            data[ch * n + cell] = (data[ch * n + cell] as f64 / denom) as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(t: usize, h: usize, w: usize) -> GridShape {
        GridShape::new(t, h, w).unwrap()
    }

    #[test]
    fn identity_resample_is_bitwise() {
        let x = Tensor::from_fn(vec![2, 3, 4, 5], |i| (i as f32 * 0.37).sin()).unwrap();
        let y = trilinear_resample(&x, grid(3, 4, 5)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn constant_preserved() {
        let x = Tensor::from_fn(vec![2, 3, 2, 5], |_| 3.0).unwrap();
        for g in [grid(1, 1, 1), grid(7, 5, 3), grid(2, 9, 4)] {
            let y = trilinear_resample(&x, g).unwrap();
            assert!(y.data().iter().all(|&v| v == 3.0));
        }
    }

    #[test]
    fn two_to_three_linear() {
        let x = Tensor::new(vec![1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let y = trilinear_resample(&x, grid(1, 1, 3)).unwrap();
        assert_eq!(y.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn trilinear_matches_hand_oracle_at_center() {
        // 2x2x2 cube, values = corner index; the centre of a 3x3x3 upsample is
        // the mean of the eight corners.
        let x = Tensor::new(vec![1, 2, 2, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        let y = trilinear_resample(&x, grid(3, 3, 3)).unwrap();
        assert_eq!(y.data()[13], 3.5);
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[26], 7.0);
    }

    #[test]
    fn size_one_axes_broadcast() {
        let x = Tensor::new(vec![1, 1, 1, 1], vec![2.5]).unwrap();
        let y = trilinear_resample(&x, grid(2, 3, 4)).unwrap();
        assert_eq!(y.dims(), &[1, 2, 3, 4]);
        assert!(y.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn resample_errors() {
        let x = Tensor::zeros(vec![2, 2, 2]).unwrap();
        assert!(trilinear_resample(&x, grid(1, 1, 1)).is_err());
        let x = Tensor::zeros(vec![1, 2, 2, 2]).unwrap();
        assert!(trilinear_resample(&x, GridShape { t: 0, h: 1, w: 1 }).is_err());
    }

    #[test]
    fn normalize_examples() {
        let x = Tensor::new(vec![2, 1, 1, 1], vec![3.0, 4.0]).unwrap();
        let y = l2_normalize_positions(&x, 1e-8).unwrap();
        assert!((y.data()[0] - 0.6).abs() < 1e-7);
        assert!((y.data()[1] - 0.8).abs() < 1e-7);

        let z = Tensor::zeros(vec![3, 1, 2, 1]).unwrap();
        assert_eq!(l2_normalize_positions(&z, 1e-8).unwrap(), z);

        let again = l2_normalize_positions(&y, 1e-8).unwrap();
        for (a, b) in again.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(l2_normalize_positions(&Tensor::zeros(vec![4]).unwrap(), 1e-8).is_err());
    }

    fn small_tensor() -> impl Strategy<Value = Tensor> {
        (1usize..3, 1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(c, t, h, w)| {
            proptest::collection::vec(-1.0f32..1.0, c * t * h * w)
                .prop_map(move |d| Tensor::new(vec![c, t, h, w], d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn resample_idempotent(x in small_tensor(), t in 1usize..6, h in 1usize..6, w in 1usize..6) {
            let g = grid(t, h, w);
            let once = trilinear_resample(&x, g).unwrap();
            let twice = trilinear_resample(&once, g).unwrap();
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn resample_linear(
            (x, y) in small_tensor().prop_flat_map(|x| {
                let dims = x.dims().to_vec();
                let n = x.len();
                (Just(x), proptest::collection::vec(-1.0f32..1.0, n)
                    .prop_map(move |d| Tensor::new(dims.clone(), d).unwrap()))
            }),
            a in -1.0f32..1.0, b in -1.0f32..1.0,
            t in 1usize..6, h in 1usize..6, w in 1usize..6,
        ) {
            let g = grid(t, h, w);
            let combo = Tensor::new(
                x.dims().to_vec(),
                x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect(),
            ).unwrap();
            let lhs = trilinear_resample(&combo, g).unwrap();
            let rx = trilinear_resample(&x, g).unwrap();
            let ry = trilinear_resample(&y, g).unwrap();
            for ((l, p), q) in lhs.data().iter().zip(rx.data()).zip(ry.data()) {
                let r = a * p + b * q;
                prop_assert!((l - r).abs() <= 1e-5, "lhs {l} rhs {r}");
            }
        }
    }
}
