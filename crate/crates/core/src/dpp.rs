//! Determinantal point process over the sentences of a document.
//!
//! The kernel uses the quality-diversity decomposition
//! `L = diag(q) · S · diag(q)` where `q` holds the summary-head
//! probabilities and `S` the cosine similarities of sentence
//! representations. The regularizer is the negative log-probability of the
//! ground-truth summary set, `-log det(L_Y) + log det(L + I)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{det_lu, Cholesky};

/// Ridge added to `diag(L_Y)` and how far it may escalate (×10 per retry)
/// when the minor fails to factor. An initial ridge of zero never escalates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ridge {
    pub initial: f64,
    pub max: f64,
}

impl Ridge {
    pub const TRAINING: Ridge = Ridge {
        initial: 1e-8,
        max: 1e-4,
    };
    pub const EXACT: Ridge = Ridge {
        initial: 0.0,
        max: 0.0,
    };
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::TRAINING
    }
}

#[derive(Debug, Clone)]
pub struct DppKernel {
    pub q: Array1<f64>,
    pub s: Array2<f64>,
    pub l: Array2<f64>,
    pub ridge: Ridge,
}

/// Rows of `h` scaled to unit length, plus the original norms.
fn normalize_rows(h: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms: Array1<f64> = h.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some(i) = norms.iter().position(|&n| !(n > 0.0) || !n.is_finite()) {
        return Err(Error::ZeroNormRow(i));
    }
    let u = &h / &norms.view().insert_axis(Axis(1));
    Ok((u, norms))
}

fn assemble(q: ArrayView1<'_, f64>, s: &Array2<f64>) -> Array2<f64> {
    let qc = q.view().insert_axis(Axis(1));
    let qr = q.view().insert_axis(Axis(0));
    s * &qc * qr
}

impl DppKernel {
    /// Builds the kernel from sentence representations and quality scores.
    pub fn build(h: ArrayView2<'_, f64>, q: ArrayView1<'_, f64>, ridge: Ridge) -> Result<Self> {
        if h.nrows() != q.len() {
            return Err(Error::LengthMismatch {
                expected: h.nrows(),
                actual: q.len(),
            });
        }
        let (u, _) = normalize_rows(h)?;
        let mut s = u.dot(&u.t());
        for i in 0..s.nrows() {
            s[[i, i]] = 1.0;
        }
        s.mapv_inplace(|v| v.clamp(-1.0, 1.0));
        let l = assemble(q, &s);
        Ok(DppKernel {
            q: q.to_owned(),
            s,
            l,
            ridge,
        })
    }

    /// Kernel from an explicit PSD matrix; `q` and `S` are left empty.
    pub fn from_matrix(l: Array2<f64>, ridge: Ridge) -> Self {
        DppKernel {
            q: Array1::zeros(0),
            s: Array2::zeros((0, 0)),
            l,
            ridge,
        }
    }

    pub fn len(&self) -> usize {
        self.l.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn log_normalizer(&self) -> Result<f64> {
        Ok(self.normalizer_factor()?.log_det())
    }

    fn normalizer_factor(&self) -> Result<Cholesky> {
        let mut b = self.l.clone();
        for i in 0..b.nrows() {
            b[[i, i]] += 1.0;
        }
        Cholesky::new(b.view())
            .ok_or_else(|| Error::Numeric("L + I is not positive definite".into()))
    }

    fn minor(&self, y: &[usize]) -> Result<Array2<f64>> {
        let n = self.len();
        if let Some(&bad) = y.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!(
                "subset index {bad} outside ground set of size {n}"
            )));
        }
        let mut sorted = y.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("subset has repeated indices".into()));
        }
        Ok(Array2::from_shape_fn((y.len(), y.len()), |(a, b)| {
            self.l[[y[a], y[b]]]
        }))
    }

    /// Factors `L_Y + εI`, escalating ε on failure. Returns the factor and the
    /// ridge that succeeded.
    fn minor_factor(&self, y: &[usize]) -> Result<(Cholesky, f64)> {
        let base = self.minor(y)?;
        let mut eps = self.ridge.initial;
        loop {
            let mut a = base.clone();
            for i in 0..a.nrows() {
                a[[i, i]] += eps;
            }
            if let Some(c) = Cholesky::new(a.view()) {
                return Ok((c, eps));
            }
            if eps <= 0.0 || eps * 10.0 > self.ridge.max * (1.0 + 1e-12) {
                return Err(Error::SingularMinor { ridge: eps });
            }
            eps *= 10.0;
        }
    }

    /// `log det(L_Y + εI) − log det(L + I)`; the empty set has log det 0.
    pub fn log_prob(&self, y: &[usize]) -> Result<f64> {
        let log_num = if y.is_empty() {
            0.0
        } else {
            self.minor_factor(y)?.0.log_det()
        };
        Ok(log_num - self.log_normalizer()?)
    }
}

/// `P(Y) = det(L_Y) / det(L + I)` in log space.
pub fn dpp_log_prob(kernel: &DppKernel, y: &[usize]) -> Result<f64> {
    kernel.log_prob(y)
}

#[derive(Debug, Clone)]
pub struct DppLossGrad {
    pub loss: f64,
    /// Gradient with respect to the sentence representations.
    pub grad_h: Array2<f64>,
    /// Gradient with respect to the quality scores.
    pub grad_q: Array1<f64>,
    /// Ridge actually applied to `diag(L_Y)`.
    pub ridge_used: f64,
}

/// Negative log-probability of the ground-truth set and its analytic
/// gradients through `q`, the cosine similarities and the decomposition.
///
/// With `G = (L + I)⁻¹ − E_Y[(L_Y + εI)⁻¹]` (the inverse of the minor
/// scattered back to the `Y` rows and columns), `∂loss/∂L = G`,
/// `∂loss/∂q_k = 2 Σ_j G_kj S_kj q_j` and `∂loss/∂S = G ∘ q qᵀ`.
pub fn dpp_loss_and_grad(
    h: ArrayView2<'_, f64>,
    q: ArrayView1<'_, f64>,
    summary: &[usize],
    ridge: Ridge,
) -> Result<DppLossGrad> {
    if summary.is_empty() {
        return Err(Error::InvalidArgument(
            "DPP regularizer needs a non-empty ground-truth summary".into(),
        ));
    }
    let kernel = DppKernel::build(h, q, ridge)?;
    let (minor, ridge_used) = kernel.minor_factor(summary)?;
    let norm = kernel.normalizer_factor()?;
    let loss = norm.log_det() - minor.log_det();

    let mut g = norm.inverse();
    let minor_inv = minor.inverse();
    for (a, &i) in summary.iter().enumerate() {
        for (b, &j) in summary.iter().enumerate() {
            g[[i, j]] -= minor_inv[[a, b]];
        }
    }

    let gs = &g * &kernel.s;
    let grad_q = 2.0 * gs.dot(&q);

    // ∂loss/∂S; S = U Uᵀ with U the unit-normalized rows of H.
    let m = assemble(q, &g);
    let (u, norms) = normalize_rows(h)?;
    let grad_u = 2.0 * m.dot(&u);
    let mut grad_h = Array2::<f64>::zeros(h.raw_dim());
    for i in 0..h.nrows() {
        let ui = u.row(i);
        let gu = grad_u.row(i);
        let radial = gu.dot(&ui);
        let mut row = grad_h.row_mut(i);
        row.assign(&((&gu - &(&ui * radial)) / norms[i]));
    }

    if !loss.is_finite() || grad_h.iter().chain(grad_q.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite DPP loss or gradient".into()));
    }
    Ok(DppLossGrad {
        loss,
        grad_h,
        grad_q,
        ridge_used,
    })
}

/// Largest ground set accepted by [`brute_force_subset_sum`].
pub const BRUTE_FORCE_MAX: usize = 16;

/// `Σ_{Y ⊆ ground set} det(L_Y)` by enumerating all `2^N` subsets.
pub fn brute_force_subset_sum(l: ArrayView2<'_, f64>) -> Result<f64> {
    let n = l.nrows();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::InvalidArgument(format!(
            "brute-force enumeration limited to N <= {BRUTE_FORCE_MAX}, got {n}"
        )));
    }
    let mut total = 0.0;
    for mask in 0u32..(1u32 << n) {
        let idx: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        total += if idx.is_empty() {
            1.0
        } else {
            let minor = Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| l[[idx[a], idx[b]]]);
            det_lu(minor.view())
        };
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_h(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))
    }

    fn random_q(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
        Array::from_shape_fn(n, |_| rng.gen_range(0.05..0.95))
    }

    #[test]
    fn log_prob_matches_nalgebra_determinants() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for n in 2..9 {
            let h = random_h(&mut rng, n, 4);
            let q = random_q(&mut rng, n);
            let k = DppKernel::build(h.view(), q.view(), Ridge::EXACT).unwrap();
            let l = nalgebra::DMatrix::from_fn(n, n, |i, j| k.l[[i, j]]);
            let y: Vec<usize> = (0..n).step_by(2).collect();
            let ly = nalgebra::DMatrix::from_fn(y.len(), y.len(), |a, b| l[(y[a], y[b])]);
            let expected = ly.determinant().ln()
                - (l + nalgebra::DMatrix::<f64>::identity(n, n))
                    .determinant()
                    .ln();
            let got = k.log_prob(&y).unwrap();
            assert!((got - expected).abs() < 1e-10, "n={n}: {got} vs {expected}");
        }
    }

    #[test]
    fn orthogonal_rows_give_identity() {
        let h = Array2::<f64>::eye(3) * 2.5;
        let k = DppKernel::build(h.view(), Array1::ones(3).view(), Ridge::EXACT).unwrap();
        assert!((&k.l - &Array2::<f64>::eye(3))
            .iter()
            .all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn duplicate_rows_are_proportional() {
        let h = array![[1.0, 2.0, 0.5], [1.0, 2.0, 0.5], [0.0, -1.0, 3.0]];
        let q = array![0.3, 0.8, 0.5];
        let k = DppKernel::build(h.view(), q.view(), Ridge::EXACT).unwrap();
        assert!((k.s[[0, 1]] - 1.0).abs() < 1e-15);
        let ratio = q[0] / q[1];
        for j in 0..3 {
            assert!((k.l[[0, j]] - ratio * k.l[[1, j]]).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_row_is_rejected() {
        let h = array![[1.0, 0.0], [0.0, 0.0]];
        let err = DppKernel::build(h.view(), array![0.5, 0.5].view(), Ridge::EXACT).unwrap_err();
        assert!(matches!(err, Error::ZeroNormRow(1)));
    }

    #[test]
    fn identity_kernel_log_prob() {
        let k = DppKernel::from_matrix(Array2::eye(3), Ridge::EXACT);
        let lp = k.log_prob(&[1]).unwrap();
        assert!((lp + 3.0 * 2f64.ln()).abs() < 1e-14);
        assert!((k.log_prob(&[]).unwrap() + 3.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn duplicates_make_minor_singular() {
        let h = array![[1.0, 2.0], [1.0, 2.0], [2.0, -1.0]];
        let q = array![0.5, 0.5, 0.5];
        let k = DppKernel::build(h.view(), q.view(), Ridge::EXACT).unwrap();
        assert!(matches!(
            k.log_prob(&[0, 1]),
            Err(Error::SingularMinor { .. })
        ));
        // The training ridge escalates and succeeds.
        let k = DppKernel::build(h.view(), q.view(), Ridge::TRAINING).unwrap();
        assert!(k.log_prob(&[0, 1]).is_ok());
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=8 {
            let h = random_h(&mut rng, n, 12);
            let q = random_q(&mut rng, n);
            let k = DppKernel::build(h.view(), q.view(), Ridge::EXACT).unwrap();
            let total: f64 = (0u32..1 << n)
                .map(|mask| {
                    let y: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
                    k.log_prob(&y).unwrap().exp()
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-10, "n={n} total={total}");
        }
    }

    #[test]
    fn subset_sum_fixtures() {
        assert_eq!(brute_force_subset_sum(Array2::eye(2).view()).unwrap(), 4.0);
        assert_eq!(
            brute_force_subset_sum(Array2::zeros((3, 3)).view()).unwrap(),
            1.0
        );
        assert!(brute_force_subset_sum(Array2::eye(17).view()).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_h(&mut rng, 8, 8);
        let l = a.dot(&a.t());
        let k = DppKernel::from_matrix(l.clone(), Ridge::EXACT);
        let expected = k.log_normalizer().unwrap().exp();
        let got = brute_force_subset_sum(l.view()).unwrap();
        assert!(((got - expected) / expected).abs() < 1e-8);
    }

    #[test]
    fn single_sentence_closed_form() {
        for &z in &[-2.0f64, -0.3, 0.0, 0.7, 1.9] {
            let q = 1.0 / (1.0 + (-z).exp());
            let h = array![[0.4, -1.2, 2.0]];
            let r = dpp_loss_and_grad(h.view(), array![q].view(), &[0], Ridge::EXACT).unwrap();
            let loss = -(q * q).ln() + (1.0 + q * q).ln();
            let grad = -2.0 / q + 2.0 * q / (1.0 + q * q);
            assert!((r.loss - loss).abs() < 1e-12);
            assert!((r.grad_q[0] - grad).abs() < 1e-10);
            assert!(r.grad_h.iter().all(|v| v.abs() < 1e-12));
        }
    }

    fn loss_only(h: &Array2<f64>, q: &Array1<f64>, y: &[usize]) -> f64 {
        -DppKernel::build(h.view(), q.view(), Ridge::EXACT)
            .unwrap()
            .log_prob(y)
            .unwrap()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let step = 1e-5;
        for _ in 0..30 {
            let n = rng.gen_range(1..=5);
            let d = rng.gen_range(n.max(2)..=8);
            let h = random_h(&mut rng, n, d);
            let q = random_q(&mut rng, n);
            let mut y: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
            if y.is_empty() {
                y.push(0);
            }
            let r = dpp_loss_and_grad(h.view(), q.view(), &y, Ridge::EXACT).unwrap();
            for i in 0..n {
                let (mut qp, mut qm) = (q.clone(), q.clone());
                qp[i] += step;
                qm[i] -= step;
                let fd = (loss_only(&h, &qp, &y) - loss_only(&h, &qm, &y)) / (2.0 * step);
                assert!(
                    rel_err(fd, r.grad_q[i]) < 1e-4,
                    "q[{i}]: fd {fd} vs {}",
                    r.grad_q[i]
                );
                for j in 0..d {
                    let (mut hp, mut hm) = (h.clone(), h.clone());
                    hp[[i, j]] += step;
                    hm[[i, j]] -= step;
                    let fd = (loss_only(&hp, &q, &y) - loss_only(&hm, &q, &y)) / (2.0 * step);
                    assert!(
                        rel_err(fd, r.grad_h[[i, j]]) < 1e-4,
                        "h[{i},{j}]: fd {fd} vs {}",
                        r.grad_h[[i, j]]
                    );
                }
            }
        }
    }

    #[test]
    fn quality_gradient_negative_on_summary_with_identity_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 5;
        let h = Array2::<f64>::eye(n);
        for _ in 0..20 {
            let q = random_q(&mut rng, n);
            let y = [0usize, 2, 3];
            let r = dpp_loss_and_grad(h.view(), q.view(), &y, Ridge::EXACT).unwrap();
            for &i in &y {
                assert!(r.grad_q[i] < 0.0);
            }
            for i in [1usize, 4] {
                assert!(r.grad_q[i] > 0.0);
            }
        }
    }

    #[test]
    fn empty_summary_is_an_error() {
        let h = Array2::<f64>::eye(2);
        assert!(
            dpp_loss_and_grad(h.view(), array![0.5, 0.5].view(), &[], Ridge::TRAINING).is_err()
        );
    }

    proptest! {
        #[test]
        fn loss_is_scale_invariant(seed in any::<u64>(), scale in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_h(&mut rng, 4, 6);
            let q = random_q(&mut rng, 4);
            let a = dpp_loss_and_grad(h.view(), q.view(), &[0, 2], Ridge::TRAINING).unwrap();
            let hs = &h * scale;
            let b = dpp_loss_and_grad(hs.view(), q.view(), &[0, 2], Ridge::TRAINING).unwrap();
            prop_assert!((a.loss - b.loss).abs() < 1e-9 * a.loss.abs().max(1.0));
        }

        #[test]
        fn normalizer_identity(seed in any::<u64>(), n in 1usize..=10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = rng.gen_range(1..=n + 2);
            let a = random_h(&mut rng, n, d);
            let l = a.dot(&a.t());
            let expected = DppKernel::from_matrix(l.clone(), Ridge::EXACT).log_normalizer().unwrap().exp();
            let got = brute_force_subset_sum(l.view()).unwrap();
            prop_assert!(((got - expected) / expected).abs() < 1e-8);
        }

        #[test]
        fn duplicate_member_never_increases_log_prob(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 5;
            let mut h = random_h(&mut rng, n, 6);
            let q = random_q(&mut rng, n);
            let y = [0usize, 1, 2];
            let before = DppKernel::build(h.view(), q.view(), Ridge::TRAINING).unwrap().log_prob(&y).unwrap();
            let row = h.row(0).to_owned();
            h.row_mut(2).assign(&row);
            // Exactly singular: log-probability is -inf.
            let exact = DppKernel::build(h.view(), q.view(), Ridge::EXACT).unwrap();
            let is_singular = matches!(exact.log_prob(&y), Err(Error::SingularMinor { .. }));
            prop_assert!(is_singular);
            let after = DppKernel::build(h.view(), q.view(), Ridge::TRAINING).unwrap().log_prob(&y).unwrap();
            prop_assert!(after <= before);
        }

        #[test]
        fn gradients_finite_with_ridge(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut h = random_h(&mut rng, 4, 3);
            let row = h.row(0).to_owned();
            h.row_mut(1).assign(&row);
            let q = random_q(&mut rng, 4);
            let r = dpp_loss_and_grad(h.view(), q.view(), &[0, 1], Ridge::TRAINING).unwrap();
            prop_assert!(r.loss.is_finite());
            prop_assert!(r.grad_h.iter().chain(r.grad_q.iter()).all(|v| v.is_finite()));
        }
    }
}
