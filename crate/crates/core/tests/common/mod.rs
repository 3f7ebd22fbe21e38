//! Shared helpers for integration tests: flat parameter packing and a
//! central-difference gradient checker.

#![allow(dead_code)]

use facd_core::nn::Parameterized;
use facd_core::Tensor4;
use rand::Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn random_tensor(shape: [usize; 4], rng: &mut impl Rng) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub fn pack_params<P: Parameterized<f64> + ?Sized>(m: &P) -> Vec<f64> {
    let mut out = Vec::new();
    m.visit_params("", &mut |_, p| out.extend_from_slice(&p.value));
    out
}

pub fn pack_grads<P: Parameterized<f64> + ?Sized>(m: &P) -> Vec<f64> {
    let mut out = Vec::new();
    m.visit_params("", &mut |_, p| out.extend_from_slice(&p.grad));
    out
}

pub fn unpack_params<P: Parameterized<f64> + ?Sized>(m: &mut P, flat: &[f64]) {
    let mut at = 0;
    m.visit_params_mut("", &mut |_, p| {
        let n = p.value.len();
        p.value.copy_from_slice(&flat[at..at + n]);
        at += n;
    });
    assert_eq!(at, flat.len());
}

/// Norm-wise relative error `|a - n| / max(|a|, |n|)` between an analytic
/// gradient and central differences of `f` at `x`.
///
/// The caller is responsible for rejecting points that sit within a step of
/// a non-differentiable kink.
pub fn gradient_error(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut diff2 = 0.0;
    let mut norm_a = 0.0;
    let mut norm_n = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let fp = f(&probe);
        probe[i] = x[i] - FD_STEP;
        let fm = f(&probe);
        probe[i] = x[i];
        let num = (fp - fm) / (2.0 * FD_STEP);
        diff2 += (num - analytic[i]).powi(2);
        norm_a += analytic[i].powi(2);
        norm_n += num.powi(2);
    }
    let scale = norm_a.sqrt().max(norm_n.sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff2.sqrt() / scale
    }
}

/// Smallest absolute elementwise difference between two equal-length slices.
pub fn min_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(f64::INFINITY, f64::min)
}

/// Concatenates tensors into one flat vector.
pub fn pack_tensors(ts: &[&Tensor4<f64>]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// Splits a flat vector back into tensors with the given shapes.
pub fn unpack_tensors(flat: &[f64], shapes: &[[usize; 4]]) -> Vec<Tensor4<f64>> {
    let mut at = 0;
    let out = shapes
        .iter()
        .map(|&s| {
            let n: usize = s.iter().product();
            let t = Tensor4::from_vec(s, flat[at..at + n].to_vec()).unwrap();
            at += n;
            t
        })
        .collect();
    assert_eq!(at, flat.len());
    out
}
