use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Source channel of every output channel: reshape `(g, C/g)`, transpose, flatten.
pub fn shuffle_permutation(channels: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || channels % groups != 0 {
        return Err(Error::shape(
            "channel_shuffle",
            format!("{channels} channels not divisible into {groups} groups"),
        ));
    }
    let per = channels / groups;
    Ok((0..channels).map(|o| (o % groups) * per + o / groups).collect())
}

pub fn channel_shuffle(x: &Tensor, groups: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    let perm = shuffle_permutation(c, groups)?;
    let hw = h * w;
    crate::dispatch!(x.precision(), T => {
        let xs = x.as_slice::<T>()?;
        let mut out: Vec<T> = Vec::with_capacity(xs.len());
        for s in 0..n {
            for &src in &perm {
                out.extend_from_slice(&xs[(s * c + src) * hw..][..hw]);
            }
        }
        Tensor::from_vec(x.shape(), out)
    })
}

/// Inverse permutation, i.e. a shuffle with `C / groups` groups, applied to the gradient.
pub fn channel_shuffle_vjp(grad: &Tensor, groups: usize) -> Result<Tensor> {
    let c = grad.dims4()?[1];
    if groups == 0 || c % groups != 0 {
        return Err(Error::shape("channel_shuffle_vjp", format!("{c} channels, {groups} groups")));
    }
    channel_shuffle(&grad.to_grad_precision(), c / groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Precision;
    use crate::testutil::uniform;

    fn channel_ids(c: usize) -> Tensor {
        let v: Vec<f64> = (0..c).map(|i| i as f64).collect();
        Tensor::from_f64(&[1, c, 1, 1], &v, Precision::F32).unwrap()
    }

    #[test]
    fn four_channels_two_groups() {
        let y = channel_shuffle(&channel_ids(4), 2).unwrap();
        assert_eq!(y.to_f64_vec(), vec![0.0, 2.0, 1.0, 3.0]);
    }

    #[test]
    fn one_group_is_identity() {
        let x = uniform(&[2, 6, 3, 3], -1.0, 1.0, 1, Precision::F32);
        assert!(channel_shuffle(&x, 1).unwrap().bit_eq(&x));
    }

    #[test]
    fn inverse_by_complementary_groups() {
        let x = channel_ids(12);
        let y = channel_shuffle(&channel_shuffle(&x, 3).unwrap(), 4).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn output_is_a_permutation_of_planes() {
        let x = uniform(&[2, 8, 3, 3], -1.0, 1.0, 4, Precision::F64);
        let y = channel_shuffle(&x, 4).unwrap();
        let planes = |t: &Tensor| {
            let mut p: Vec<Vec<u64>> = t.to_f64_vec().chunks(9).map(|c| c.iter().map(|v| v.to_bits()).collect()).collect();
            p.sort();
            p
        };
        assert_eq!(planes(&x), planes(&y));
    }

    #[test]
    fn indivisible_is_error() {
        assert!(channel_shuffle(&channel_ids(5), 2).is_err());
    }
}
