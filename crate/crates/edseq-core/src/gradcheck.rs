//! Central finite-difference oracle for verifying tape gradients. Only the
//! forward pass is exercised here, so the numbers are independent of the
//! backward implementation under test.

use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Numeric gradient of `f` with respect to one parameter, by central
/// differences with the given step. The store is restored on return.
pub fn numeric_grad(
    store: &mut ParamStore,
    id: ParamId,
    mut f: impl FnMut(&ParamStore) -> f64,
    step: f64,
) -> Tensor {
    let n = store.value(id).numel();
    let shape = store.value(id).shape().to_vec();
    let mut grad = vec![0.0; n];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = store.value(id).data()[i];
        store.get_mut(id).value.data_mut()[i] = orig + step;
        let up = f(store);
        store.get_mut(id).value.data_mut()[i] = orig - step;
        let down = f(store);
        store.get_mut(id).value.data_mut()[i] = orig;
        *g = (up - down) / (2.0 * step);
    }
    Tensor::new(shape, grad).expect("shape preserved")
}

/// Relative error with an absolute floor: |a-b| / max(1, |a|, |b|).
/// The floor keeps near-zero gradients from inflating the ratio.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

/// Largest elementwise relative error between two same-shape tensors.
pub fn max_rel_err(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradcheck shape mismatch");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &b)| rel_err(a, b))
        .fold(0.0, f64::max)
}
