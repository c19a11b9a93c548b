//! The Grassmann distribution over binary dummy vectors.
//!
//! A parameter `Λ` (with `Σ = Λ⁻¹`) assigns the state with set bits `R₁`
//! the probability `det(Λ_{R₁R₁} − I) / det Λ`. Marginals keep the
//! corresponding block of `Σ`; conditionals are Schur complements.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Default cap on `q` for exhaustive `2^q` enumeration.
pub const DEFAULT_DIM_CAP: usize = 20;

/// Matrix parameter `Λ` with its cached inverse `Σ`.
#[derive(Clone, Debug)]
pub struct GrassmannParams<T> {
    lambda: Matrix<T>,
    sigma: Matrix<T>,
    det_lambda: T,
}

impl<T: Real> GrassmannParams<T> {
    /// Build from `Λ`. Fails when `Λ` is singular, non-finite, or `ΛΣ ≠ I`.
    pub fn from_lambda(lambda: Matrix<T>) -> Result<Self> {
        if !lambda.is_square() {
            return Err(Error::dim("Λ must be square"));
        }
        if !lambda.is_finite() {
            return Err(Error::Parameter("Λ has non-finite entries".into()));
        }
        let lu = lambda.lu();
        if lu.is_singular() {
            return Err(Error::Singular("Λ".into()));
        }
        let sigma = lu.inverse()?;
        let det_lambda = lu.det();
        Self::checked(lambda, sigma, det_lambda)
    }

    /// Build from `Σ = Λ⁻¹`.
    pub fn from_sigma(sigma: Matrix<T>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::dim("Σ must be square"));
        }
        if !sigma.is_finite() {
            return Err(Error::Parameter("Σ has non-finite entries".into()));
        }
        let lu = sigma.lu();
        if lu.is_singular() {
            return Err(Error::Singular("Σ".into()));
        }
        let lambda = lu.inverse()?;
        let det_lambda = lambda.det();
        Self::checked(lambda, sigma, det_lambda)
    }

    fn checked(lambda: Matrix<T>, sigma: Matrix<T>, det_lambda: T) -> Result<Self> {
        let n = lambda.rows();
        let resid = lambda.matmul(&sigma).max_abs_diff(&Matrix::identity(n));
        let tol = T::tolerance(1e-10) * (T::one() + lambda.max_abs() * sigma.max_abs());
        if resid > tol {
            return Err(Error::Numerical(format!(
                "ΛΣ deviates from I by {resid:e} (ill-conditioned Λ)"
            )));
        }
        Ok(GrassmannParams {
            lambda,
            sigma,
            det_lambda,
        })
    }

    pub fn q(&self) -> usize {
        self.lambda.rows()
    }

    pub fn lambda(&self) -> &Matrix<T> {
        &self.lambda
    }

    pub fn sigma(&self) -> &Matrix<T> {
        &self.sigma
    }

    pub fn det_lambda(&self) -> T {
        self.det_lambda
    }

    /// `Λ − I`.
    pub fn lambda_minus_identity(&self) -> Matrix<T> {
        &self.lambda - &Matrix::identity(self.q())
    }

    /// Unnormalized weight `det(Λ_{R₁R₁} − I)` of the state with set bits `ones`.
    pub fn minor(&self, ones: &[usize]) -> T {
        let mut sub = self.lambda.principal(ones);
        for i in 0..ones.len() {
            sub[(i, i)] -= T::one();
        }
        sub.det()
    }

    /// Joint probability of the bit vector `y`.
    pub fn joint_probability(&self, y: &[bool]) -> Result<T> {
        if y.len() != self.q() {
            return Err(Error::dim(format!("state of length {} for q = {}", y.len(), self.q())));
        }
        let ones: Vec<usize> = (0..y.len()).filter(|&r| y[r]).collect();
        Ok(clamp_round_off(self.minor(&ones) / self.det_lambda))
    }

    /// Joint probability via the `Σ`-form determinant
    /// `det[[I − Σ₁₁, Σ₁₀], [−Σ₀₁, Σ₀₀]]`.
    pub fn joint_probability_sigma_form(&self, y: &[bool]) -> Result<T> {
        if y.len() != self.q() {
            return Err(Error::dim(format!("state of length {} for q = {}", y.len(), self.q())));
        }
        Ok(sigma_form_probability(&self.sigma, y))
    }

    /// Parameter of the marginal over the index list `t` (`Σ' = Σ_TT`).
    pub fn marginal_params(&self, t: &[usize]) -> Result<GrassmannParams<T>> {
        check_indices(t, self.q())?;
        let sub = self.sigma.principal(t);
        if t.is_empty() {
            return Self::from_lambda(Matrix::zeros(0, 0));
        }
        if sub.lu().is_singular() {
            return Err(Error::Singular("Σ_TT in marginal".into()));
        }
        Self::from_sigma(sub)
    }

    /// Probability that `y_t = values` with every other index marginalized.
    /// Uses the `Σ`-form on `Σ_TT`, so no inversion is needed.
    pub fn marginal_probability(&self, t: &[usize], values: &[bool]) -> Result<T> {
        if t.len() != values.len() {
            return Err(Error::dim("marginal pattern length"));
        }
        check_indices(t, self.q())?;
        Ok(sigma_form_probability(&self.sigma.principal(t), values))
    }

    /// `p(y_S = values | y_T₁ = 1, y_T₀ = 0)` from the `Σ`-form of the
    /// conditional. Defined even when some free index is determined by
    /// the conditioning event, where [`Self::conditional_params`] fails.
    pub fn conditional_probability(&self, part: &IndexPartition, values: &[bool]) -> Result<T> {
        if values.len() != part.s.len() {
            return Err(Error::dim("conditional pattern length"));
        }
        Ok(sigma_form_probability(&self.conditional_sigma_form(part)?, values))
    }

    /// Parameter of `p(y_S | y_T)`, computed from the sign-flipped `Σ̃` and
    /// cross-checked against the `Λ`-form
    /// `[Λ_SS − Λ_ST₁ (Λ_T₁T₁ − I)⁻¹ Λ_T₁S]⁻¹` whenever its pivot is
    /// invertible. The comparison tolerance grows with the pivot's
    /// condition number.
    pub fn conditional_params(&self, part: &IndexPartition) -> Result<GrassmannParams<T>> {
        part.validate(self.q())?;
        let sigma_form = self.conditional_sigma_form(part)?;
        let cond = match GrassmannParams::from_sigma(sigma_form) {
            Err(Error::Singular(_)) => {
                return Err(Error::Singular(
                    "conditional Σ (a free index is determined by the conditioning event)".into(),
                ))
            }
            other => other?,
        };
        match self.lambda_form_with_condition(part) {
            Ok((lambda_form, kappa)) => {
                let diff = cond.lambda.max_abs_diff(&lambda_form);
                let tol = T::tolerance(1e-9) * (T::one() + lambda_form.max_abs()) * kappa.max(T::one());
                if diff > tol {
                    return Err(Error::Numerical(format!(
                        "conditional parameter forms disagree by {diff:e}"
                    )));
                }
            }
            Err(Error::ZeroProbability(_)) => {}
            Err(e) => return Err(e),
        }
        Ok(cond)
    }

    /// `Σ̃_{S|T}` by the Schur complement of the sign-flipped matrix.
    pub fn conditional_sigma_form(&self, part: &IndexPartition) -> Result<Matrix<T>> {
        part.validate(self.q())?;
        let q = self.q();
        let mut in_t1 = vec![false; q];
        for &i in &part.t1 {
            in_t1[i] = true;
        }
        let tilde = Matrix::from_fn(q, q, |i, j| {
            let s = self.sigma[(i, j)];
            if in_t1[j] {
                if i == j {
                    T::one() - s
                } else {
                    -s
                }
            } else {
                s
            }
        });
        let s = &part.s;
        let t = part.t();
        let tss = tilde.principal(s);
        if t.is_empty() {
            return Ok(tss);
        }
        let tst = tilde.select(s, &t);
        let tts = tilde.select(&t, s);
        let ttt = tilde.principal(&t);
        let lu = ttt.lu();
        if lu.is_singular() {
            return Err(Error::ZeroProbability("Σ̃_TT is singular".into()));
        }
        let x = lu.solve(&tts)?;
        Ok(&tss - &tst.matmul(&x))
    }

    /// `Λ`-form of the conditional parameter (returned as `Λ'`, not `Σ'`).
    pub fn conditional_lambda_form(&self, part: &IndexPartition) -> Result<Matrix<T>> {
        self.lambda_form_with_condition(part).map(|(m, _)| m)
    }

    /// The `Λ`-form and the ∞-norm condition number of `Λ_T₁T₁ − I`.
    fn lambda_form_with_condition(&self, part: &IndexPartition) -> Result<(Matrix<T>, T)> {
        part.validate(self.q())?;
        let s = &part.s;
        let t1 = &part.t1;
        let lss = self.lambda.principal(s);
        if t1.is_empty() {
            return Ok((lss, T::one()));
        }
        let mut lt1 = self.lambda.principal(t1);
        for i in 0..t1.len() {
            lt1[(i, i)] -= T::one();
        }
        let lu = lt1.lu();
        if lu.is_singular() {
            return Err(Error::ZeroProbability("Λ_T₁T₁ − I is singular".into()));
        }
        let kappa = inf_norm(&lt1) * inf_norm(&lu.inverse()?);
        let x = lu.solve(&self.lambda.select(t1, s))?;
        Ok((&lss - &self.lambda.select(s, t1).matmul(&x), kappa))
    }

    /// Mean `1 − Σ_rr` and covariance (`−Σ_rs Σ_sr` off the diagonal,
    /// `Σ_rr (1 − Σ_rr)` on it).
    pub fn moments(&self) -> (Vec<T>, Matrix<T>) {
        let q = self.q();
        let mean = (0..q).map(|r| T::one() - self.sigma[(r, r)]).collect();
        let cov = Matrix::from_fn(q, q, |r, s| {
            if r == s {
                let d = self.sigma[(r, r)];
                d * (T::one() - d)
            } else {
                -self.sigma[(r, s)] * self.sigma[(s, r)]
            }
        });
        (mean, cov)
    }

    /// Conditional mean of `y_r` and covariance of `(y_r, y_s)` given every
    /// other dummy observed as zero.
    pub fn conditional_zero_moments(&self, r: usize, s: usize) -> Result<(T, T)> {
        let q = self.q();
        if r >= q || s >= q {
            return Err(Error::dim(format!("index out of range for q = {q}")));
        }
        if r == s {
            return Err(Error::dim("conditional covariance needs two distinct indices"));
        }
        let l = &self.lambda;
        if l[(r, r)] == T::zero() {
            return Err(Error::Degenerate("Λ_rr = 0".into()));
        }
        let d = l[(r, r)] * l[(s, s)] - l[(r, s)] * l[(s, r)];
        if d == T::zero() {
            return Err(Error::Degenerate("Λ_rrΛ_ss − Λ_rsΛ_sr = 0".into()));
        }
        let mean = T::one() - T::one() / l[(r, r)];
        let cov = -l[(r, s)] * l[(s, r)] / (d * d);
        Ok((mean, cov))
    }

    /// Exhaustive check of all `2^q` joint probabilities.
    pub fn check_p0(&self, dim_cap: usize) -> Result<P0Report> {
        let q = self.q();
        if q > dim_cap || q >= 64 {
            return Err(Error::EnumerationTooLarge {
                count: 1u128 << q.min(127),
                cap: 1u128 << dim_cap.min(127),
            });
        }
        let mut min_p = f64::INFINITY;
        let mut worst = 0u64;
        let mut sum = T::zero();
        let mut ones = Vec::with_capacity(q);
        for mask in 0..(1u64 << q) {
            ones.clear();
            ones.extend((0..q).filter(|&r| mask >> r & 1 == 1));
            let p = self.minor(&ones) / self.det_lambda;
            sum += p;
            let pf = p.to_f64().unwrap_or(f64::NAN);
            if pf < min_p || pf.is_nan() {
                min_p = pf;
                worst = mask;
            }
        }
        let sum = sum.to_f64().unwrap_or(f64::NAN);
        let passed = min_p >= -1e-12 && (sum - 1.0).abs() <= 1e-10;
        Ok(P0Report {
            q,
            min_probability: min_p,
            argmin_mask: worst,
            sum,
            passed,
        })
    }
}

/// `det[[I − Σ₁₁, Σ₁₀], [−Σ₀₁, Σ₀₀]]` for the bit pattern `y`.
pub fn sigma_form_probability<T: Real>(sigma: &Matrix<T>, y: &[bool]) -> T {
    let q = sigma.rows();
    let m = Matrix::from_fn(q, q, |i, j| {
        let s = sigma[(i, j)];
        if y[j] {
            if i == j {
                T::one() - s
            } else {
                -s
            }
        } else {
            s
        }
    });
    clamp_round_off(m.det())
}

fn inf_norm<T: Real>(m: &Matrix<T>) -> T {
    (0..m.rows())
        .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<T>())
        .fold(T::zero(), |a, b| a.max(b))
}

/// Outcome of [`GrassmannParams::check_p0`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct P0Report {
    pub q: usize,
    pub min_probability: f64,
    /// State attaining the minimum, as a bit mask.
    pub argmin_mask: u64,
    pub sum: f64,
    pub passed: bool,
}

/// Split of `{0..q}` into free indices `S` and observed indices `T = T₁ ∪ T₀`.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IndexPartition {
    pub s: Vec<usize>,
    /// Observed as one.
    pub t1: Vec<usize>,
    /// Observed as zero.
    pub t0: Vec<usize>,
}

impl IndexPartition {
    pub fn new(s: Vec<usize>, t1: Vec<usize>, t0: Vec<usize>) -> Self {
        IndexPartition { s, t1, t0 }
    }

    /// Partition from per-index observations: `None` is free.
    pub fn from_observations(obs: &[Option<bool>]) -> Self {
        let mut part = IndexPartition::default();
        for (i, o) in obs.iter().enumerate() {
            match o {
                None => part.s.push(i),
                Some(true) => part.t1.push(i),
                Some(false) => part.t0.push(i),
            }
        }
        part
    }

    /// `T` in the order `T₁` then `T₀`.
    pub fn t(&self) -> Vec<usize> {
        self.t1.iter().chain(&self.t0).copied().collect()
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        let mut seen = vec![false; q];
        for &i in self.s.iter().chain(&self.t1).chain(&self.t0) {
            if i >= q {
                return Err(Error::dim(format!("index {i} out of range for q = {q}")));
            }
            if seen[i] {
                return Err(Error::dim(format!("index {i} appears twice in partition")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|&b| !b) {
            return Err(Error::dim("partition does not cover every index"));
        }
        Ok(())
    }
}

fn check_indices(t: &[usize], q: usize) -> Result<()> {
    let mut seen = vec![false; q];
    for &i in t {
        if i >= q || seen[i] {
            return Err(Error::dim(format!("invalid index list {t:?} for q = {q}")));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Zero out round-off just below zero.
pub(crate) fn clamp_round_off<T: Real>(p: T) -> T {
    if p < T::zero() && p > -T::tolerance(1e-12) {
        T::zero()
    } else {
        p
    }
}

/// Pearson correlation implied by the moment formulas. Entries for
/// zero-variance dummies are NaN and listed in `undefined`.
#[derive(Clone, Debug)]
pub struct Correlation<T> {
    pub matrix: Matrix<T>,
    pub undefined: Vec<usize>,
}

pub fn correlation_from_cov<T: Real>(cov: &Matrix<T>) -> Correlation<T> {
    let q = cov.rows();
    let var = cov.diagonal();
    let undefined: Vec<usize> = (0..q).filter(|&r| !(var[r] > T::zero())).collect();
    let matrix = Matrix::from_fn(q, q, |r, s| {
        if !(var[r] > T::zero() && var[s] > T::zero()) {
            T::nan()
        } else if r == s {
            T::one()
        } else {
            cov[(r, s)] / (var[r] * var[s]).sqrt()
        }
    });
    Correlation { matrix, undefined }
}

/// Model Pearson correlation matrix from the moment formulas.
pub fn model_correlation<T: Real>(p: &GrassmannParams<T>) -> Correlation<T> {
    correlation_from_cov(&p.moments().1)
}

/// `Λ − I` of a published reader-survey fit, to two decimals.
pub fn reader_lambda_minus_identity() -> Matrix<f64> {
    Matrix::from_rows(vec![
        vec![0.62, 0.12, -0.14, -2.12, -0.63, -0.14],
        vec![-1.76, 1.73, 2.57, -3.29, -4.49, -1.84],
        vec![-1.76, 1.73, 2.57, -3.29, -4.49, -1.84],
        vec![0.83, -0.36, -0.98, 2.36, 2.05, 0.78],
        vec![0.00, 0.00, 0.00, -1.00, 0.00, 0.00],
        vec![0.00, 0.00, 0.00, 0.00, -1.00, 0.00],
    ])
    .expect("static matrix")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(rows: Vec<Vec<f64>>) -> GrassmannParams<f64> {
        GrassmannParams::from_lambda(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn reader() -> GrassmannParams<f64> {
        let l = &reader_lambda_minus_identity() + &Matrix::identity(6);
        GrassmannParams::from_lambda(l).unwrap()
    }

    #[test]
    fn scalar_case() {
        let p = params(vec![vec![2.0]]);
        assert!((p.joint_probability(&[true]).unwrap() - 0.5).abs() < 1e-15);
        assert!((p.joint_probability(&[false]).unwrap() - 0.5).abs() < 1e-15);
        let (m, c) = p.moments();
        assert!((m[0] - 0.5).abs() < 1e-15);
        assert!((c[(0, 0)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn independent_pair() {
        let p = params(vec![vec![2.0, 0.0], vec![0.0, 2.0]]);
        assert!((p.joint_probability(&[true, true]).unwrap() - 0.25).abs() < 1e-15);
        let rep = p.check_p0(DEFAULT_DIM_CAP).unwrap();
        assert!(rep.passed);
        assert!((rep.sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn p0_failure_detected() {
        let p = params(vec![vec![1.5, 2.0], vec![2.0, 1.5]]);
        let rep = p.check_p0(DEFAULT_DIM_CAP).unwrap();
        assert!(!rep.passed);
        // det Λ = -1.75, so p(∅) = 1 / det Λ is the most negative entry.
        assert_eq!(rep.argmin_mask, 0);
        assert!((rep.min_probability + 1.0 / 1.75).abs() < 1e-12);
    }

    #[test]
    fn p0_cap() {
        let p = GrassmannParams::from_lambda(Matrix::<f64>::identity(3).scale(2.0)).unwrap();
        assert!(matches!(p.check_p0(2), Err(Error::EnumerationTooLarge { .. })));
    }

    #[test]
    fn reader_matrix_zero_co_occurrence() {
        let p = reader();
        // Two age bits at once and non-prefix education patterns are disallowed.
        for mask in 0u64..64 {
            let y: Vec<bool> = (0..6).map(|r| mask >> r & 1 == 1).collect();
            let age_both = y[1] && y[2];
            let edu_gap = (!y[3] && (y[4] || y[5])) || (!y[4] && y[5]);
            if age_both || edu_gap {
                assert!(p.joint_probability(&y).unwrap().abs() <= 1e-12, "mask {mask:b}");
            }
        }
        let rep = p.check_p0(DEFAULT_DIM_CAP).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn reader_sigma_mean() {
        let p = reader();
        let (mean, _) = p.moments();
        // Printed Σ₁₁ is 0.52 after rounding.
        assert!((p.sigma()[(0, 0)] - 0.52).abs() < 0.01);
        assert!((mean[0] - 0.48).abs() < 0.01);
    }

    #[test]
    fn sigma_and_lambda_forms_agree() {
        let p = params(vec![
            vec![1.8, 0.3, -0.2],
            vec![0.1, 2.2, 0.4],
            vec![-0.3, 0.2, 1.6],
        ]);
        for mask in 0u64..8 {
            let y: Vec<bool> = (0..3).map(|r| mask >> r & 1 == 1).collect();
            let a = p.joint_probability(&y).unwrap();
            let b = p.joint_probability_sigma_form(&y).unwrap();
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn marginal_identity_and_independence() {
        let p = params(vec![vec![2.0, 0.0], vec![0.0, 4.0]]);
        let full = p.marginal_params(&[0, 1]).unwrap();
        assert!(full.lambda().max_abs_diff(p.lambda()) < 1e-14);
        let m = p.marginal_params(&[0]).unwrap();
        assert!((m.sigma()[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn conditional_independent_blocks() {
        let p = params(vec![vec![2.0, 0.0], vec![0.0, 4.0]]);
        let part = IndexPartition::new(vec![0], vec![], vec![1]);
        let c = p.conditional_params(&part).unwrap();
        assert!((c.sigma()[(0, 0)] - 0.5).abs() < 1e-15);
        let part = IndexPartition::new(vec![0], vec![1], vec![]);
        let c = p.conditional_params(&part).unwrap();
        assert!((c.sigma()[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn conditioning_on_impossible_event() {
        // y₂ = 1 has probability zero when Λ₂₂ = 1 and the row is otherwise empty.
        let p = params(vec![vec![2.0, 0.5], vec![0.0, 1.0]]);
        let part = IndexPartition::new(vec![0], vec![1], vec![]);
        assert!(matches!(p.conditional_params(&part), Err(Error::ZeroProbability(_))));
    }

    #[test]
    fn conditional_zero_moments_trivial() {
        let p = params(vec![vec![2.0, 0.0], vec![0.3, 3.0]]);
        let (m, c) = p.conditional_zero_moments(0, 1).unwrap();
        assert!((m - 0.5).abs() < 1e-15);
        assert_eq!(c, 0.0);
        assert!(p.conditional_zero_moments(0, 0).is_err());
    }

    #[test]
    fn partition_validation() {
        assert!(IndexPartition::new(vec![0], vec![0], vec![]).validate(2).is_err());
        assert!(IndexPartition::new(vec![0], vec![], vec![]).validate(2).is_err());
        assert!(IndexPartition::new(vec![1], vec![0], vec![]).validate(2).is_ok());
    }

    #[test]
    fn correlation_of_independent_is_identity() {
        let p = params(vec![vec![2.0, 0.0], vec![0.0, 3.0]]);
        let c = model_correlation(&p);
        assert!(c.matrix.max_abs_diff(&Matrix::identity(2)) < 1e-15);
        assert!(c.undefined.is_empty());
    }

    #[test]
    fn works_in_f32() {
        let l = Matrix::<f32>::from_rows(vec![vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let p = GrassmannParams::from_lambda(l).unwrap();
        assert!((p.joint_probability(&[true, false]).unwrap() - 0.25).abs() < 1e-6);
    }

    #[test]
    fn conditional_fixing_a_free_ordinal_dummy() {
        // Given `≥2`, the `≥1` dummy is certain: no finite conditional Λ.
        let p = reader();
        let part = IndexPartition::new(vec![3, 5], vec![4], vec![0, 1, 2]);
        assert!(matches!(p.conditional_params(&part), Err(Error::Singular(_))));
        let joint = |y3: bool, y5: bool| p.joint_probability(&[false, false, false, y3, true, y5]).unwrap();
        let event = joint(false, false) + joint(false, true) + joint(true, false) + joint(true, true);
        for (y3, y5) in [(false, false), (false, true), (true, false), (true, true)] {
            let c = p.conditional_probability(&part, &[y3, y5]).unwrap();
            assert!((c - joint(y3, y5) / event).abs() < 1e-12, "{y3} {y5}");
        }
        assert!(p.conditional_probability(&part, &[false, true]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn marginal_probability_without_inversion() {
        let p = reader();
        let t = [1, 2];
        let both = p.marginal_probability(&t, &[true, true]).unwrap();
        assert!(both.abs() < 1e-12);
        let total: f64 = [[false, false], [false, true], [true, false]]
            .iter()
            .map(|v| p.marginal_probability(&t, v).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
