use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Time indices kept by a stride-`s` downsample of a length-`len` sequence.
pub fn downsample_indices(len: usize, stride: usize) -> Vec<usize> {
    (0..len).step_by(stride.max(1)).collect()
}

/// Keeps steps `0, s, 2s, ..` of a `[T, B, D]` sequence.
pub fn downsample<'t, T: Scalar>(seq: Var<'t, T>, stride: usize) -> Result<Var<'t, T>> {
    if stride == 0 {
        return Err(Error::invalid("downsample stride must be at least 1"));
    }
    if stride == 1 {
        return Ok(seq);
    }
    let len = seq.shape().first().copied().unwrap_or(0);
    seq.slice_time(&downsample_indices(len, stride))
}

/// `[target, source]` matrix of linear interpolation weights on a uniform index
/// grid: target `j` sits at source position `j (source - 1) / (target - 1)`.
pub fn interpolation_matrix<T: Scalar>(source: usize, target: usize) -> Result<Tensor<T>> {
    if source == 0 || target == 0 {
        return Err(Error::invalid(format!(
            "cannot interpolate {source} steps onto {target}"
        )));
    }
    let mut m = Tensor::zeros([target, source]);
    for j in 0..target {
        let pos = if target == 1 {
            0.0
        } else {
            (j * (source - 1)) as f64 / (target - 1) as f64
        };
        let lo = (pos.floor() as usize).min(source - 1);
        let frac = pos - lo as f64;
        m.set(&[j, lo], T::lit(1.0 - frac))?;
        if frac > 0.0 {
            m.set(&[j, lo + 1], T::lit(frac))?;
        }
    }
    Ok(m)
}

/// Linearly interpolates a `[T', B, D]` sequence to `[target, B, D]` along time.
pub fn upsample_linear<'t, T: Scalar>(seq: Var<'t, T>, target: usize) -> Result<Var<'t, T>> {
    let shape = seq.shape();
    if shape.len() != 3 || shape[0] == 0 {
        return Err(Error::InvalidShape {
            op: "upsample_linear",
            msg: format!("expected non-empty [T, B, D], got {shape:?}"),
        });
    }
    if target == shape[0] {
        return Ok(seq);
    }
    let m = seq.tape().constant(interpolation_matrix(shape[0], target)?);
    m.matmul(seq.reshape(&[shape[0], shape[1] * shape[2]])?)?
        .reshape(&[target, shape[1], shape[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn downsample_examples() {
        assert_eq!(downsample_indices(5, 2), vec![0, 2, 4]);
        assert_eq!(downsample_indices(5, 4), vec![0, 4]);
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn([5, 1, 2], |i| i as f64));
        assert_eq!(downsample(x, 1).unwrap().value(), x.value());
        let d = downsample(x, 2).unwrap().value();
        assert_eq!(d.shape(), &[3, 1, 2]);
        assert_eq!(d.data(), &[0.0, 1.0, 4.0, 5.0, 8.0, 9.0]);
        assert!(downsample(x, 0).is_err());
    }

    #[test]
    fn upsample_ramp_and_constant() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new([2, 1, 1], vec![0.0, 1.0]).unwrap());
        let y = upsample_linear(x, 5).unwrap().value();
        assert_eq!(y.data(), &[0.0, 0.25, 0.5, 0.75, 1.0]);

        let c = tape.leaf(Tensor::full([3, 2, 2], 1.5));
        let y = upsample_linear(c, 7).unwrap().value();
        assert_eq!(y.shape(), &[7, 2, 2]);
        assert!(y.data().iter().all(|&v| (v - 1.5).abs() < 1e-15));

        let z = tape.leaf(Tensor::from_fn([4, 1, 3], |i| i as f64));
        assert_eq!(upsample_linear(z, 4).unwrap().value(), z.value());
        assert!(upsample_linear(z, 0).is_err());
    }

    #[test]
    fn interpolation_rows_are_convex() {
        for (s, t) in [(1, 4), (3, 8), (5, 2), (7, 7)] {
            let m = interpolation_matrix::<f64>(s, t).unwrap();
            for row in m.data().chunks(s) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
                assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
            }
            assert_eq!(m.get(&[0, 0]).unwrap(), 1.0);
            assert_eq!(m.get(&[t - 1, s - 1]).unwrap(), 1.0);
        }
    }
}
