//! Central-difference verification of reverse-mode gradients (64-bit).

use rand::seq::index::sample;
use rand::Rng;

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

const DENOM_FLOOR: f64 = 1e-12;

/// Denominator floor for whole-model checks (see [`grad_check_params`]).
pub const MODEL_FLOOR: f64 = 1e-6;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + DENOM_FLOOR)
}

fn eval_scalar<F>(f: &F, x: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::inference();
    let xv = g.constant(x.clone())?;
    let y = f(&mut g, xv)?;
    let v = g.value(y).item();
    if !v.is_finite() {
        return Err(Error::Numeric("grad_check: non-finite function value".into()));
    }
    Ok(v)
}

/// Max over coordinates of `|analytic − central difference| / (|analytic| + 1e-12)`
/// for a scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.input(x.clone())?;
    let y = f(&mut g, xv)?;
    if !g.value(y).item().is_finite() {
        return Err(Error::Numeric("grad_check: non-finite function value".into()));
    }
    let grads = g.backward(y)?;
    let zeros = vec![0.0; x.len()];
    let analytic = grads.of(xv).unwrap_or(&zeros);
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig;
        worst = worst.max(rel_err(analytic[i], (fp - fm) / (2.0 * h)));
    }
    Ok(worst)
}

/// Per-parameter outcome of [`grad_check_params`].
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

/// Checks gradients of a scalar function of a whole parameter store.
///
/// With `coords_per_tensor = Some(n)` at most `n` coordinates of each tensor
/// are probed (chosen with `rng`), otherwise all of them.
///
/// `floor` replaces the 1e-12 denominator floor of [`grad_check`]. Central
/// differences of an O(1) loss carry ~1e-10 absolute rounding noise, so
/// coordinates whose true gradient is below ~1e-7 cannot meet a relative
/// bound against a 1e-12 floor; [`MODEL_FLOOR`] sits well above that noise.
pub fn grad_check_params<F>(
    f: F,
    store: &ParamStore<f64>,
    h: f64,
    floor: f64,
    coords_per_tensor: Option<usize>,
    rng: &mut impl Rng,
) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let y = f(&mut g, store)?;
    let grads = g.backward(y)?;
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::inference();
        let y = f(&mut g, s)?;
        let v = g.value(y).item();
        if !v.is_finite() {
            return Err(Error::Numeric("grad_check: non-finite function value".into()));
        }
        Ok(v)
    };
    let mut probe = store.clone();
    let mut out = Vec::new();
    for name in store.names() {
        let n = store.get(&name)?.len();
        let coords: Vec<usize> = match coords_per_tensor {
            Some(k) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let zeros = vec![0.0; n];
        let analytic = grads.param(&name).unwrap_or(&zeros).to_vec();
        let mut worst = 0.0f64;
        for &i in &coords {
            let orig = probe.get(&name)?.data()[i];
            probe.get_mut(&name)?.data_mut()[i] = orig + h;
            let fp = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig - h;
            let fm = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max((analytic[i] - numeric).abs() / (analytic[i].abs() + floor));
        }
        out.push(ParamCheck {
            name,
            max_rel_err: worst,
            coords_checked: coords.len(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_of_squares_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(&[5], 1.0, &mut rng);
        let err = grad_check(
            |g, x| {
                let s = g.square(x)?;
                g.sum(s)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        let err = grad_check(|g, _x| g.constant(Tensor::scalar(3.0)), &x, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_value_is_numeric_error() {
        let x = Tensor::from_vec(vec![1000.0]);
        let r = grad_check(
            |g, x| {
                let e = g.exp(x)?;
                g.sum(e)
            },
            &x,
            1e-5,
        );
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
