//! Dense tensors, a reverse-mode tape, and the layer primitives the
//! architecture is built from.

mod gradcheck;
mod graph;
mod layers;
mod params;
mod scalar;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, ParamCheck, MODEL_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use layers::{gated_mlp, init_gated_mlp, init_linear, linear, linear_named, rmsnorm};
pub use params::{LayerParams, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_sum_and_square() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.of(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_vec(vec![3.0])).unwrap();
        let sq = g.square(x).unwrap();
        let s = g.sum(sq).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.of(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        let y = g.square(x).unwrap();
        assert!(matches!(g.backward(y), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::from_vec(vec![100.0])).unwrap();
        assert!(matches!(g.exp(x), Err(crate::Error::Numeric(_))));
        assert!(g.constant(Tensor::from_vec(vec![f32::NAN])).is_err());
    }

    #[test]
    fn param_grads_land_in_store() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::from_vec(vec![2.0])).unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let w2 = g.param(&store, "w").unwrap();
        assert_eq!(w, w2);
        let y = g.mul(w, w2).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        store.accumulate(grads.by_name()).unwrap();
        assert_eq!(store.get("w").unwrap().grad.as_deref(), Some(&[4.0][..]));
    }
}
