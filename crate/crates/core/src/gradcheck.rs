//! Central finite-difference gradient checks.

use crate::autodiff::{Graph, NodeId};
use crate::error::{NocError, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Max over coordinates of `|analytic - numeric| / max(1, |analytic|)`, where
/// `numeric` is the central difference of `f` around `p` with step `h`.
pub fn max_relative_error<T: Real>(
    analytic: &Tensor<T>,
    p: &Tensor<T>,
    h: T,
    mut f: impl FnMut(&Tensor<T>) -> T,
) -> T {
    assert_eq!(analytic.shape(), p.shape(), "gradient shape must match parameter shape");
    let two = T::lit(2.0);
    let mut probe = p.clone();
    let mut worst = T::zero();
    for i in 0..p.len() {
        let orig = p.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (two * h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(T::one());
        worst = worst.max(err);
    }
    worst
}

/// Checks the reverse-mode gradient of the scalar built by `build` with
/// respect to the parameter leaf it receives, at the point `p`.
pub fn finite_diff_check<T: Real>(
    build: impl Fn(&mut Graph<T>, NodeId) -> Result<NodeId>,
    p: &Tensor<T>,
) -> Result<T> {
    let mut g = Graph::new();
    let leaf = g.param(p.clone());
    let loss = build(&mut g, leaf)?;
    let grads = g.backward(loss)?;
    let analytic = grads
        .get(leaf)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(p.shape()));
    let mut failure = None;
    let err = max_relative_error(&analytic, p, T::lit(FD_STEP), |probe| {
        let mut g = Graph::new();
        let leaf = g.input(probe.clone());
        match build(&mut g, leaf) {
            Ok(out) => g.value(out).item(),
            Err(e) => {
                failure.get_or_insert(e);
                T::nan()
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None if err.is_nan() => Err(NocError::Argument("non-finite loss during gradient check".into())),
        None => Ok(err),
    }
}
