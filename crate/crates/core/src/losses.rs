//! Distillation objectives with analytic gradients.
//!
//! Every loss returns its value together with the gradient of that value
//! with respect to its tensor inputs. Per-sample L1 norms sum over all
//! elements of the sample.
//!
//! In the contrastive losses the negatives drawn from the student side are
//! stop-gradient copies of the other samples' anchors: gradient reaches a
//! student sample only through its own (gated) anchor term.

use crate::error::{shape_err, Error, Result};
use crate::models::{Regressor, TapSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use serde::{Deserialize, Serialize};

/// Default weight of the feature loss.
pub const DEFAULT_LAMBDA: f64 = 4.0;
/// Top-heavy tap weighting, shallowest tap first.
pub const DEFAULT_TAP_WEIGHTS: [f64; 3] = [0.5, 0.3, 0.2];
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    /// L1 distance ratio of positive to summed negatives.
    Euclidean,
    /// Temperature-scaled inner products through a softmax cross-entropy.
    DotProduct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_facd: f64,
    pub weights: [f64; 3],
    pub eps_norm: f64,
    pub eps_denom: f64,
    pub similarity: Similarity,
    pub adaptive: bool,
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_facd: DEFAULT_LAMBDA,
            weights: DEFAULT_TAP_WEIGHTS,
            eps_norm: 1e-8,
            eps_denom: 1e-8,
            similarity: Similarity::Euclidean,
            adaptive: true,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Config(format!(
                "attention weights must be >= 0, got {:?}",
                self.weights
            )));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "attention weights must sum to 1, got {sum}"
            )));
        }
        if !(self.lambda_facd >= 0.0) {
            return Err(Error::Config(format!(
                "lambda_facd must be >= 0, got {}",
                self.lambda_facd
            )));
        }
        if !(self.temperature > 0.0) || !(self.eps_norm >= 0.0) || !(self.eps_denom >= 0.0) {
            return Err(Error::Config(
                "temperature must be > 0 and epsilons >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Per-sample binary distillation gate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndicatorVec {
    alpha: Vec<bool>,
}

impl IndicatorVec {
    pub fn ones(n: usize) -> Self {
        Self {
            alpha: vec![true; n],
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            alpha: vec![false; n],
        }
    }

    pub fn from_bools(alpha: Vec<bool>) -> Self {
        Self { alpha }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.alpha[i]
    }

    /// Entries as 0/1 numbers.
    pub fn values<T: Scalar>(&self) -> Vec<T> {
        self.alpha
            .iter()
            .map(|&a| if a { T::one() } else { T::zero() })
            .collect()
    }

    pub fn mean(&self) -> f64 {
        if self.alpha.is_empty() {
            return 0.0;
        }
        self.alpha.iter().filter(|&&a| a).count() as f64 / self.alpha.len() as f64
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if self.alpha.len() != n {
            return shape_err(format!(
                "indicator has {} entries for batch {n}",
                self.alpha.len()
            ));
        }
        Ok(())
    }
}

/// Named loss components of one training step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_gt: f64,
    pub l_teacher: f64,
    pub l_facd: f64,
    pub total: f64,
    pub alpha_mean: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.l_gt.is_finite() && self.l_teacher.is_finite() && self.l_facd.is_finite() && self.total.is_finite()
    }
}

/// Combines the image-domain terms and the weighted feature term.
pub fn total_loss(l_gt: f64, l_teacher: f64, l_facd: f64, lambda: f64, alpha: &IndicatorVec) -> LossBreakdown {
    LossBreakdown {
        l_gt,
        l_teacher,
        l_facd,
        total: l_gt + l_teacher + lambda * l_facd,
        alpha_mean: alpha.mean(),
    }
}

#[inline]
fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn l1<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y).abs())
}

fn check_same(a: &Tensor4<impl Scalar>, b_shape: [usize; 4], what: &str) -> Result<()> {
    if a.shape() != b_shape {
        return shape_err(format!("{what}: {:?} vs {:?}", a.shape(), b_shape));
    }
    Ok(())
}

/// `alpha_i = 0` iff the student is strictly closer (per-sample L1) to the
/// ground truth than the teacher.
pub fn adaptive_indicator<T: Scalar>(sr_s: &Tensor4<T>, sr_t: &Tensor4<T>, gt: &Tensor4<T>) -> Result<IndicatorVec> {
    check_same(sr_t, sr_s.shape(), "adaptive_indicator teacher")?;
    check_same(gt, sr_s.shape(), "adaptive_indicator ground truth")?;
    Ok(IndicatorVec {
        alpha: (0..sr_s.batch())
            .map(|i| {
                let ds = l1(sr_s.sample(i), gt.sample(i));
                let dt = l1(sr_t.sample(i), gt.sample(i));
                ds >= dt
            })
            .collect(),
    })
}

/// The gate used for training: the adaptive indicator, or all ones when
/// `cfg.adaptive` is off.
pub fn training_gate<T: Scalar>(
    sr_s: &Tensor4<T>,
    sr_t: &Tensor4<T>,
    gt: &Tensor4<T>,
    cfg: &LossConfig,
) -> Result<IndicatorVec> {
    if cfg.adaptive {
        adaptive_indicator(sr_s, sr_t, gt)
    } else {
        check_same(sr_t, sr_s.shape(), "gate teacher")?;
        Ok(IndicatorVec::ones(sr_s.batch()))
    }
}

/// A scalar term and its gradient with respect to one or two inputs.
#[derive(Clone, Debug)]
pub struct Term<T> {
    pub value: T,
    pub grad_a: Tensor4<T>,
    pub grad_b: Tensor4<T>,
}

/// `(1/2N) * sum_i coef_i * ||a_i - b_i||_1`, with `grad_a` w.r.t. `a` and `grad_b` w.r.t. `b`.
pub fn weighted_l1<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>, coef: &[T]) -> Result<Term<T>> {
    check_same(b, a.shape(), "l1 term")?;
    let n = a.batch();
    if coef.len() != n {
        return shape_err(format!("{} coefficients for batch {n}", coef.len()));
    }
    let scale = T::one() / T::from_usize_lossy(2 * n);
    let mut value = T::zero();
    let mut grad_a = Tensor4::zeros(a.shape());
    for i in 0..n {
        let c = coef[i] * scale;
        if c == T::zero() {
            continue;
        }
        value += c * l1(a.sample(i), b.sample(i));
        for ((g, &x), &y) in grad_a.sample_mut(i).iter_mut().zip(a.sample(i)).zip(b.sample(i)) {
            *g = c * sign(x - y);
        }
    }
    let grad_b = grad_a.map(|v| -v);
    Ok(Term {
        value,
        grad_a,
        grad_b,
    })
}

/// Ground-truth half of the image loss: `(1/2N) sum (2 - alpha_i) ||S_i - GT_i||_1`.
/// `grad_a` is w.r.t. the student output.
pub fn gt_term<T: Scalar>(sr_s: &Tensor4<T>, gt: &Tensor4<T>, alpha: &IndicatorVec) -> Result<Term<T>> {
    alpha.check_len(sr_s.batch())?;
    let two = T::lit(2.0);
    let coef: Vec<T> = alpha.values::<T>().into_iter().map(|a| two - a).collect();
    weighted_l1(sr_s, gt, &coef)
}

/// Teacher half of the image loss: `(1/2N) sum alpha_i ||S_i - T_i||_1`.
/// `grad_a` is w.r.t. the student output, `grad_b` w.r.t. the teacher output.
pub fn teacher_term<T: Scalar>(sr_s: &Tensor4<T>, sr_t: &Tensor4<T>, alpha: &IndicatorVec) -> Result<Term<T>> {
    alpha.check_len(sr_s.batch())?;
    weighted_l1(sr_s, sr_t, &alpha.values::<T>())
}

#[derive(Clone, Debug)]
pub struct ImageLoss<T> {
    pub gt: Term<T>,
    pub teacher: Term<T>,
}

impl<T: Scalar> ImageLoss<T> {
    pub fn value(&self) -> T {
        self.gt.value + self.teacher.value
    }

    pub fn grad_student(&self) -> Tensor4<T> {
        let mut g = self.gt.grad_a.clone();
        g.add_assign(&self.teacher.grad_a).expect("same shape");
        g
    }

    pub fn grad_teacher(&self) -> &Tensor4<T> {
        &self.teacher.grad_b
    }
}

/// `(1/2N) sum_i (2 - alpha_i) ||S_i - GT_i||_1 + alpha_i ||S_i - T_i||_1`
pub fn image_loss<T: Scalar>(
    sr_s: &Tensor4<T>,
    sr_t: &Tensor4<T>,
    gt: &Tensor4<T>,
    alpha: &IndicatorVec,
) -> Result<ImageLoss<T>> {
    check_same(sr_t, sr_s.shape(), "image_loss teacher")?;
    check_same(gt, sr_s.shape(), "image_loss ground truth")?;
    Ok(ImageLoss {
        gt: gt_term(sr_s, gt, alpha)?,
        teacher: teacher_term(sr_s, sr_t, alpha)?,
    })
}

/// Divides each sample by its global L2 norm plus `eps`.
pub fn normalize_features<T: Scalar>(f: &Tensor4<T>, eps: f64) -> Tensor4<T> {
    let eps = T::lit(eps);
    let mut out = f.clone();
    for i in 0..f.batch() {
        let s = out.sample_mut(i);
        let norm = s.iter().fold(T::zero(), |a, &v| a + v * v).sqrt();
        let inv = T::one() / (norm + eps);
        for v in s {
            *v *= inv;
        }
    }
    out
}

/// Gradient of [`normalize_features`] w.r.t. its input.
pub fn normalize_backward<T: Scalar>(f: &Tensor4<T>, dy: &Tensor4<T>, eps: f64) -> Tensor4<T> {
    let eps = T::lit(eps);
    let mut dx = Tensor4::zeros(f.shape());
    for i in 0..f.batch() {
        let x = f.sample(i);
        let g = dy.sample(i);
        let norm = x.iter().fold(T::zero(), |a, &v| a + v * v).sqrt();
        let d = norm + eps;
        let out = dx.sample_mut(i);
        if norm == T::zero() {
            for (o, &gv) in out.iter_mut().zip(g) {
                *o = gv / d;
            }
            continue;
        }
        let dot = x.iter().zip(g).fold(T::zero(), |a, (&xv, &gv)| a + xv * gv);
        let k = dot / (d * d * norm);
        for ((o, &xv), &gv) in out.iter_mut().zip(x).zip(g) {
            *o = gv / d - xv * k;
        }
    }
    dx
}

/// Gradients of one contrastive term.
#[derive(Clone, Debug)]
pub struct ContrastGrads<T> {
    pub anchors: Tensor4<T>,
    pub positives: Tensor4<T>,
    pub negatives: Tensor4<T>,
}

/// One tap's contrastive term summed over the batch.
///
/// Sample `i` contrasts its anchor against `positives[i]`; the negatives are
/// `positives[k]` and `neg_anchors[k]` for every `k != i`, so `K = 2(N - 1)`.
/// Gated samples (`alpha_i = 0`) contribute exactly nothing.
pub fn contrastive_term<T: Scalar>(
    anchors: &Tensor4<T>,
    positives: &Tensor4<T>,
    neg_anchors: &Tensor4<T>,
    alpha: &IndicatorVec,
    weight: f64,
    cfg: &LossConfig,
) -> Result<(T, ContrastGrads<T>)> {
    check_same(positives, anchors.shape(), "contrastive positives")?;
    check_same(neg_anchors, anchors.shape(), "contrastive negatives")?;
    let n = anchors.batch();
    alpha.check_len(n)?;
    if n < 2 {
        return Err(Error::Config(format!(
            "contrastive losses need a batch of at least 2, got {n}"
        )));
    }
    let mut grads = ContrastGrads {
        anchors: Tensor4::zeros(anchors.shape()),
        positives: Tensor4::zeros(anchors.shape()),
        negatives: Tensor4::zeros(anchors.shape()),
    };
    let w = T::lit(weight);
    let mut total = T::zero();
    if weight == 0.0 {
        return Ok((total, grads));
    }
    for i in 0..n {
        if !alpha.get(i) {
            continue;
        }
        total += match cfg.similarity {
            Similarity::Euclidean => {
                euclidean_sample(i, anchors, positives, neg_anchors, w, T::lit(cfg.eps_denom), &mut grads)
            }
            Similarity::DotProduct => {
                infonce_sample(i, anchors, positives, neg_anchors, w, T::lit(cfg.temperature), &mut grads)
            }
        };
    }
    Ok((total, grads))
}

fn euclidean_sample<T: Scalar>(
    i: usize,
    anchors: &Tensor4<T>,
    positives: &Tensor4<T>,
    negs: &Tensor4<T>,
    w: T,
    eps: T,
    g: &mut ContrastGrads<T>,
) -> T {
    let n = anchors.batch();
    let a = anchors.sample(i);
    let num = l1(a, positives.sample(i));
    let mut den = eps;
    for k in (0..n).filter(|&k| k != i) {
        den += l1(a, positives.sample(k)) + l1(a, negs.sample(k));
    }
    let value = w * num / den;
    let c_num = w / den;
    let c_den = w * num / (den * den);

    let ga = g.anchors.sample_mut(i);
    for ((gv, &av), &pv) in ga.iter_mut().zip(a).zip(positives.sample(i)) {
        *gv += c_num * sign(av - pv);
    }
    for (gv, (&av, &pv)) in g.positives.sample_mut(i).iter_mut().zip(a.iter().zip(positives.sample(i))) {
        *gv -= c_num * sign(av - pv);
    }
    for k in (0..n).filter(|&k| k != i) {
        for (d, &av) in a.iter().enumerate() {
            let sp = sign(av - positives.sample(k)[d]);
            let sn = sign(av - negs.sample(k)[d]);
            g.anchors.sample_mut(i)[d] -= c_den * (sp + sn);
            g.positives.sample_mut(k)[d] += c_den * sp;
            g.negatives.sample_mut(k)[d] += c_den * sn;
        }
    }
    value
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn infonce_sample<T: Scalar>(
    i: usize,
    anchors: &Tensor4<T>,
    positives: &Tensor4<T>,
    negs: &Tensor4<T>,
    w: T,
    tau: T,
    g: &mut ContrastGrads<T>,
) -> T {
    let n = anchors.batch();
    let a = anchors.sample(i);
    // logits[0] is the positive; then (k, from_positive_set) pairs
    let mut keys: Vec<(usize, bool)> = vec![(i, true)];
    for k in (0..n).filter(|&k| k != i) {
        keys.push((k, true));
        keys.push((k, false));
    }
    let logits: Vec<T> = keys
        .iter()
        .map(|&(k, pos)| {
            let b = if pos { positives.sample(k) } else { negs.sample(k) };
            dot(a, b) / tau
        })
        .collect();
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let z = logits.iter().fold(T::zero(), |s, &v| s + (v - max).exp());
    let lse = max + z.ln();
    let value = w * (lse - logits[0]);

    for (idx, (&(k, pos), &l)) in keys.iter().zip(&logits).enumerate() {
        let p = (l - lse).exp();
        let coef = w * (if idx == 0 { p - T::one() } else { p }) / tau;
        let b = if pos { positives.sample(k) } else { negs.sample(k) };
        for (gv, &bv) in g.anchors.sample_mut(i).iter_mut().zip(b) {
            *gv += coef * bv;
        }
        let target = if pos { &mut g.positives } else { &mut g.negatives };
        for (gv, &av) in target.sample_mut(k).iter_mut().zip(a) {
            *gv += coef * av;
        }
    }
    value
}

/// Feature-domain loss value and gradients with respect to the raw taps.
/// Regressor parameter gradients are accumulated in place.
#[derive(Clone, Debug)]
pub struct FeatureLoss<T> {
    pub value: T,
    pub grad_student: [Tensor4<T>; 3],
    pub grad_teacher: [Tensor4<T>; 3],
}

fn check_taps<T: Scalar>(taps_s: &TapSet<T>, taps_t: &TapSet<T>, regs: &[Regressor<T>]) -> Result<()> {
    let [ns, cs, hs, ws] = taps_s.shape();
    let [nt, ct, ht, wt] = taps_t.shape();
    if ns != nt || hs != ht || ws != wt {
        return shape_err(format!(
            "student taps {:?} and teacher taps {:?} disagree",
            taps_s.shape(),
            taps_t.shape()
        ));
    }
    if regs.len() != 3 {
        return shape_err(format!("need 3 regressors, got {}", regs.len()));
    }
    for r in regs {
        if r.c_in != cs || r.c_out != ct {
            return shape_err(format!(
                "regressor maps {} -> {} but taps are {cs} -> {ct}",
                r.c_in, r.c_out
            ));
        }
    }
    Ok(())
}

/// Normalized student taps pushed through their regressors: the anchors.
pub fn regressed_anchors<T: Scalar>(taps_s: &TapSet<T>, regs: &[Regressor<T>], cfg: &LossConfig) -> Result<[Tensor4<T>; 3]> {
    let v: Vec<Tensor4<T>> = (0..3)
        .map(|j| regs[j].forward(&normalize_features(taps_s.get(j), cfg.eps_norm)))
        .collect::<Result<_>>()?;
    Ok(v.try_into().expect("three taps"))
}

/// Weighted contrastive distillation over the three taps.
///
/// `neg_anchors` supplies the student-side negatives; `None` uses the current
/// anchors themselves (as stop-gradient copies).
pub fn facd_loss_with_negatives<T: Scalar>(
    taps_s: &TapSet<T>,
    taps_t: &TapSet<T>,
    regs: &mut [Regressor<T>],
    neg_anchors: Option<&[Tensor4<T>; 3]>,
    alpha: &IndicatorVec,
    cfg: &LossConfig,
) -> Result<FeatureLoss<T>> {
    check_taps(taps_s, taps_t, regs)?;
    let n = taps_s.shape()[0];
    alpha.check_len(n)?;
    if n < 2 {
        return Err(Error::Config(format!(
            "contrastive distillation needs a batch of at least 2, got {n}"
        )));
    }
    let mut value = T::zero();
    let mut gs = Vec::with_capacity(3);
    let mut gt = Vec::with_capacity(3);
    for j in 0..3 {
        let raw_s = taps_s.get(j);
        let raw_t = taps_t.get(j);
        let fs = normalize_features(raw_s, cfg.eps_norm);
        let ft = normalize_features(raw_t, cfg.eps_norm);
        let (anchor, trace) = regs[j].forward_traced(&fs, true)?;
        let negs = neg_anchors.map(|n| &n[j]).unwrap_or(&anchor);
        let (v, grads) = contrastive_term(&anchor, &ft, negs, alpha, cfg.weights[j], cfg)?;
        value += v;
        let dfs = regs[j].backward(trace.expect("trace kept"), &grads.anchors)?;
        gs.push(normalize_backward(raw_s, &dfs, cfg.eps_norm));
        gt.push(normalize_backward(raw_t, &grads.positives, cfg.eps_norm));
    }
    Ok(FeatureLoss {
        value,
        grad_student: gs.try_into().expect("three taps"),
        grad_teacher: gt.try_into().expect("three taps"),
    })
}

/// Feature-domain adaptive contrastive distillation loss.
pub fn facd_loss<T: Scalar>(
    taps_s: &TapSet<T>,
    taps_t: &TapSet<T>,
    regs: &mut [Regressor<T>],
    alpha: &IndicatorVec,
    cfg: &LossConfig,
) -> Result<FeatureLoss<T>> {
    facd_loss_with_negatives(taps_s, taps_t, regs, None, alpha, cfg)
}

/// Image-domain contrastive loss value and gradients w.r.t. both outputs.
#[derive(Clone, Debug)]
pub struct ImageContrastLoss<T> {
    pub value: T,
    pub grad_student: Tensor4<T>,
    pub grad_teacher: Tensor4<T>,
}

/// The contrastive form applied to normalized output images, without a
/// regressor and with a single unit-weight "tap".
pub fn icd_loss_with_negatives<T: Scalar>(
    sr_s: &Tensor4<T>,
    sr_t: &Tensor4<T>,
    neg_images: Option<&Tensor4<T>>,
    alpha: &IndicatorVec,
    cfg: &LossConfig,
) -> Result<ImageContrastLoss<T>> {
    check_same(sr_t, sr_s.shape(), "icd teacher")?;
    let a = normalize_features(sr_s, cfg.eps_norm);
    let p = normalize_features(sr_t, cfg.eps_norm);
    let negs = match neg_images {
        Some(n) => {
            check_same(n, sr_s.shape(), "icd negatives")?;
            normalize_features(n, cfg.eps_norm)
        }
        None => a.clone(),
    };
    let (value, g) = contrastive_term(&a, &p, &negs, alpha, 1.0, cfg)?;
    Ok(ImageContrastLoss {
        value,
        grad_student: normalize_backward(sr_s, &g.anchors, cfg.eps_norm),
        grad_teacher: normalize_backward(sr_t, &g.positives, cfg.eps_norm),
    })
}

pub fn icd_loss<T: Scalar>(
    sr_s: &Tensor4<T>,
    sr_t: &Tensor4<T>,
    alpha: &IndicatorVec,
    cfg: &LossConfig,
) -> Result<ImageContrastLoss<T>> {
    icd_loss_with_negatives(sr_s, sr_t, None, alpha, cfg)
}

/// Non-contrastive baseline: `sum_i sum_j w_j ||DR_j(F_s) - F_t||_1 / N` on
/// normalized taps.
pub fn plain_fd_loss<T: Scalar>(
    taps_s: &TapSet<T>,
    taps_t: &TapSet<T>,
    regs: &mut [Regressor<T>],
    cfg: &LossConfig,
) -> Result<FeatureLoss<T>> {
    check_taps(taps_s, taps_t, regs)?;
    let n = taps_s.shape()[0];
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut value = T::zero();
    let mut gs = Vec::with_capacity(3);
    let mut gt = Vec::with_capacity(3);
    for j in 0..3 {
        let raw_s = taps_s.get(j);
        let raw_t = taps_t.get(j);
        let fs = normalize_features(raw_s, cfg.eps_norm);
        let ft = normalize_features(raw_t, cfg.eps_norm);
        let (anchor, trace) = regs[j].forward_traced(&fs, true)?;
        let c = T::lit(cfg.weights[j]) * inv_n;
        let mut da = Tensor4::zeros(anchor.shape());
        for ((g, &a), &t) in da.data_mut().iter_mut().zip(anchor.data()).zip(ft.data()) {
            value += c * (a - t).abs();
            *g = c * sign(a - t);
        }
        let dt = da.map(|v| -v);
        let dfs = regs[j].backward(trace.expect("trace kept"), &da)?;
        gs.push(normalize_backward(raw_s, &dfs, cfg.eps_norm));
        gt.push(normalize_backward(raw_t, &dt, cfg.eps_norm));
    }
    Ok(FeatureLoss {
        value,
        grad_student: gs.try_into().expect("three taps"),
        grad_teacher: gt.try_into().expect("three taps"),
    })
}
