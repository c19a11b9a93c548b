//! Joint distribution of continuous variables `x ∈ ℝ^p` and binary dummies
//! `y ∈ {0,1}^q`:
//!
//! `p(x, y = 1_{R₁}) = π_{R₁}(Σ) N(x | μ + Σ Gᵀ 1_{R₁}, Σ)` with
//! `π_{R₁}(Σ) ∝ det(Λ_{R₁R₁} − I) exp(½ 1ᵀ G Σ Gᵀ 1)`, normalized over all
//! `2^q` subsets. Equivalently `p(x, y) ∝ det(Λ_{R₁R₁} − I) N(x | μ, Σ)
//! exp{1ᵀ G (x − μ)}`, which is the form the conditionals are derived from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::{GrassmannParams, P0Report, DEFAULT_DIM_CAP};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::scalar::{cast, Real};

/// `(μ, Σ, Λ, G)` with `G` of shape `q × p` (rows `g_s`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixedParams<T> {
    pub mu: Vec<T>,
    pub sigma: Matrix<T>,
    pub lambda: Matrix<T>,
    pub g: Matrix<T>,
}

/// Continuous split `I = (J, L, K)` and binary split `R = (S, U, T)`.
/// `L` and `U` are marginalized; `K` and `T` are conditioned on.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixedPartition {
    pub j: Vec<usize>,
    pub l: Vec<usize>,
    pub k: Vec<usize>,
    pub s: Vec<usize>,
    pub u: Vec<usize>,
    pub t: Vec<usize>,
}

impl MixedPartition {
    pub fn validate(&self, p: usize, q: usize) -> Result<()> {
        check_split(&[&self.j, &self.l, &self.k], p, "continuous")?;
        check_split(&[&self.s, &self.u, &self.t], q, "binary")
    }
}

fn check_split(parts: &[&Vec<usize>], n: usize, what: &str) -> Result<()> {
    let mut seen = vec![false; n];
    for part in parts {
        for &i in part.iter() {
            if i >= n || seen[i] {
                return Err(Error::dim(format!("{what} index {i} repeated or ≥ {n}")));
            }
            seen[i] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::dim(format!("{what} split does not cover all indices")));
    }
    Ok(())
}

/// Conditional Grassmann parameter of `y_S` given all of `x` and `y_T`,
/// with the per-instance positivity verdict.
#[derive(Clone, Debug)]
pub struct BinaryConditional<T> {
    pub params: GrassmannParams<T>,
    /// `None` when `|S|` exceeds the enumeration cap.
    pub p0: Option<P0Report>,
}

/// Validated mixed model with per-state quantities cached.
#[derive(Clone, Debug)]
pub struct MixedModel<T> {
    params: MixedParams<T>,
    chol: Cholesky<T>,
    grassmann: GrassmannParams<T>,
    /// `det(Λ_{R₁R₁} − I)` per state mask.
    minors: Vec<T>,
    /// `u = Gᵀ 1_{R₁}` per state mask.
    shifts: Vec<Vec<T>>,
    /// `ln Σ_{R₁} det(Λ_{R₁R₁} − I) exp(½ uᵀ Σ u)`.
    log_z: T,
}

impl<T: Real> MixedModel<T> {
    pub fn new(params: MixedParams<T>) -> Result<Self> {
        Self::with_cap(params, DEFAULT_DIM_CAP)
    }

    pub fn with_cap(params: MixedParams<T>, dim_cap: usize) -> Result<Self> {
        let p = params.mu.len();
        let q = params.lambda.rows();
        if params.sigma.rows() != p || params.sigma.cols() != p {
            return Err(Error::dim(format!("Σ must be {p}x{p}")));
        }
        if params.g.rows() != q || params.g.cols() != p {
            return Err(Error::dim(format!(
                "G is {}x{}, expected {q}x{p}",
                params.g.rows(),
                params.g.cols()
            )));
        }
        if !(params.sigma.is_finite()
            && params.lambda.is_finite()
            && params.g.is_finite()
            && params.mu.iter().all(|x| x.is_finite()))
        {
            return Err(Error::Parameter("non-finite mixed parameter".into()));
        }
        let chol = Cholesky::new(&params.sigma)
            .map_err(|_| Error::Parameter("Σ is not symmetric positive definite".into()))?;
        let grassmann = GrassmannParams::from_lambda(params.lambda.clone())?;
        let rep = grassmann.check_p0(dim_cap)?;
        if !rep.passed {
            return Err(Error::Parameter(format!(
                "Λ − I is not P0: state mask {:#b} has probability {:e}",
                rep.argmin_mask, rep.min_probability
            )));
        }
        let n = 1usize << q;
        let mut minors = Vec::with_capacity(n);
        let mut shifts = Vec::with_capacity(n);
        let mut expo = Vec::with_capacity(n);
        for mask in 0..n {
            let ones: Vec<usize> = (0..q).filter(|&r| mask >> r & 1 == 1).collect();
            let d = grassmann.minor(&ones).max(T::zero());
            let u: Vec<T> = (0..p)
                .map(|i| ones.iter().map(|&r| params.g[(r, i)]).sum())
                .collect();
            let su = params.sigma.mat_vec(&u);
            expo.push(cast::<T>(0.5) * dot(&u, &su));
            minors.push(d);
            shifts.push(u);
        }
        let log_z = log_weighted_sum(&minors, &expo)
            .ok_or_else(|| Error::Degenerate("all state weights vanish".into()))?;
        Ok(MixedModel {
            params,
            chol,
            grassmann,
            minors,
            shifts,
            log_z,
        })
    }

    pub fn params(&self) -> &MixedParams<T> {
        &self.params
    }

    pub fn p(&self) -> usize {
        self.params.mu.len()
    }

    pub fn q(&self) -> usize {
        self.params.lambda.rows()
    }

    /// Mixing weight `π_{R₁}(Σ)` of a state mask.
    pub fn mixing_weight(&self, mask: usize) -> T {
        let u = &self.shifts[mask];
        let e = cast::<T>(0.5) * dot(u, &self.params.sigma.mat_vec(u));
        self.minors[mask] * (e - self.log_z).exp()
    }

    /// `p(x, y)`.
    pub fn joint_density(&self, x: &[T], y: &[bool]) -> Result<T> {
        self.check_x(x)?;
        let mask = self.mask(y)?;
        let pi = self.mixing_weight(mask);
        if pi == T::zero() {
            return Ok(T::zero());
        }
        let su = self.params.sigma.mat_vec(&self.shifts[mask]);
        let mean: Vec<T> = self.params.mu.iter().zip(&su).map(|(&m, &s)| m + s).collect();
        Ok(pi * self.chol.log_normal_pdf(x, &mean).exp())
    }

    /// `p(x_K, y_T)` with `x_J, x_L, y_S, y_U` marginalized. `x_k` follows
    /// the order of `part.k`, `y_t` that of `part.t`.
    pub fn marginal_density(&self, part: &MixedPartition, x_k: &[T], y_t: &[bool]) -> Result<T> {
        part.validate(self.p(), self.q())?;
        if x_k.len() != part.k.len() || y_t.len() != part.t.len() {
            return Err(Error::dim("marginal observation lengths"));
        }
        let (t1, t0) = pattern_masks(&part.t, y_t);
        let k = &part.k;
        let skk = self.params.sigma.principal(k);
        let chol = if k.is_empty() {
            None
        } else {
            Some(Cholesky::new(&skk)?)
        };
        let mut total = T::zero();
        for mask in 0..self.minors.len() {
            if mask & t1 != t1 || mask & t0 != 0 {
                continue;
            }
            let pi = self.mixing_weight(mask);
            if pi == T::zero() {
                continue;
            }
            let dens = match &chol {
                None => T::one(),
                Some(c) => {
                    let su = self.params.sigma.mat_vec(&self.shifts[mask]);
                    let mean: Vec<T> = k.iter().map(|&i| self.params.mu[i] + su[i]).collect();
                    c.log_normal_pdf(x_k, &mean).exp()
                }
            };
            total += pi * dens;
        }
        Ok(total)
    }

    /// `p(x_J, y_S | x_K, y_T)` with `x_L`, `y_U` marginalized.
    pub fn conditional_density(
        &self,
        part: &MixedPartition,
        x_j: &[T],
        y_s: &[bool],
        x_k: &[T],
        y_t: &[bool],
    ) -> Result<T> {
        part.validate(self.p(), self.q())?;
        if x_j.len() != part.j.len()
            || y_s.len() != part.s.len()
            || x_k.len() != part.k.len()
            || y_t.len() != part.t.len()
        {
            return Err(Error::dim("conditional observation lengths"));
        }
        let a: Vec<usize> = part.j.iter().chain(&part.l).copied().collect();
        let sc = SchurParts::new(&self.params, &a, &part.j, &part.k, x_k)?;
        let (t1, t0) = pattern_masks(&part.t, y_t);
        let (s1, s0) = pattern_masks(&part.s, y_s);
        let half = cast::<T>(0.5);

        let mut entries = Vec::new();
        for mask in 0..self.minors.len() {
            if mask & t1 != t1 || mask & t0 != 0 || self.minors[mask] == T::zero() {
                continue;
            }
            let u = &self.shifts[mask];
            let ua: Vec<T> = a.iter().map(|&i| u[i]).collect();
            let e = half * dot(&ua, &sc.s_a_given_k.mat_vec(&ua)) + dot(u, &sc.lin);
            let hit = mask & s1 == s1 && mask & s0 == 0;
            entries.push((mask, ua, e, hit));
        }
        let dets: Vec<T> = entries.iter().map(|e| self.minors[e.0]).collect();
        let expo: Vec<T> = entries.iter().map(|e| e.2).collect();
        let den = log_weighted_sum(&dets, &expo)
            .ok_or_else(|| Error::ZeroProbability("conditioning event has probability zero".into()))?;
        let mut total = T::zero();
        for (mask, ua, e, hit) in &entries {
            if !hit {
                continue;
            }
            let w = self.minors[*mask] * (*e - den).exp();
            let dens = match &sc.chol_j {
                None => T::one(),
                Some(c) => {
                    let shift = sc.s_ja_given_k.mat_vec(ua);
                    let mean: Vec<T> = (0..part.j.len()).map(|i| sc.mean_j[i] + shift[i]).collect();
                    c.log_normal_pdf(x_j, &mean).exp()
                }
            };
            total += w * dens;
        }
        Ok(total)
    }

    /// The no-missing-values form: weights `π_{R₁}(Σ_{J|K})` tilted by
    /// `exp{1_{S₁}ᵀ G Σ_IK Σ_KK⁻¹ (x_K − μ_K)}`. Requires `L = U = ∅`.
    pub fn conditional_density_concise(
        &self,
        part: &MixedPartition,
        x_j: &[T],
        y_s: &[bool],
        x_k: &[T],
        y_t: &[bool],
    ) -> Result<T> {
        part.validate(self.p(), self.q())?;
        if !part.l.is_empty() || !part.u.is_empty() {
            return Err(Error::dim("concise conditional needs L = U = ∅"));
        }
        if x_j.len() != part.j.len()
            || y_s.len() != part.s.len()
            || x_k.len() != part.k.len()
            || y_t.len() != part.t.len()
        {
            return Err(Error::dim("conditional observation lengths"));
        }
        let sc = SchurParts::new(&self.params, &part.j, &part.j, &part.k, x_k)?;
        let (t1, t0) = pattern_masks(&part.t, y_t);
        let s_mask: usize = part.s.iter().fold(0, |m, &r| m | 1 << r);
        let half = cast::<T>(0.5);
        let mut expo = Vec::new();
        let mut dets = Vec::new();
        let mut target = None;
        let (s1, s0) = pattern_masks(&part.s, y_s);
        for mask in 0..self.minors.len() {
            if mask & t1 != t1 || mask & t0 != 0 {
                continue;
            }
            let u = &self.shifts[mask];
            let uj: Vec<T> = part.j.iter().map(|&i| u[i]).collect();
            let us: Vec<T> = (0..self.p())
                .map(|i| {
                    (0..self.q())
                        .filter(|&r| (mask & s_mask) >> r & 1 == 1)
                        .map(|r| self.params.g[(r, i)])
                        .sum()
                })
                .collect();
            let e = half * dot(&uj, &sc.s_a_given_k.mat_vec(&uj)) + dot(&us, &sc.lin);
            if mask & s1 == s1 && mask & s0 == 0 {
                target = Some((expo.len(), mask));
            }
            expo.push(e);
            dets.push(self.minors[mask]);
        }
        let den = log_weighted_sum(&dets, &expo)
            .ok_or_else(|| Error::ZeroProbability("conditioning event has probability zero".into()))?;
        let (idx, mask) = target.ok_or_else(|| Error::dim("empty conditional support"))?;
        if dets[idx] == T::zero() {
            return Ok(T::zero());
        }
        let w = dets[idx] * (expo[idx] - den).exp();
        let dens = match &sc.chol_j {
            None => T::one(),
            Some(c) => {
                let u = &self.shifts[mask];
                let uj: Vec<T> = part.j.iter().map(|&i| u[i]).collect();
                let shift = sc.s_a_given_k.mat_vec(&uj);
                let mean: Vec<T> = (0..part.j.len()).map(|i| sc.mean_j[i] + shift[i]).collect();
                c.log_normal_pdf(x_j, &mean).exp()
            }
        };
        Ok(w * dens)
    }

    /// Parameter `I + (Λ − I)_{S|T₁} Exp{G_{SI}(x − μ)}` of `y_S` given the
    /// full continuous vector and `y_T₁ = 1`, `y_T₀ = 0`.
    pub fn conditional_binary_given_continuous(
        &self,
        x: &[T],
        s: &[usize],
        t1: &[usize],
        t0: &[usize],
    ) -> Result<BinaryConditional<T>> {
        self.check_x(x)?;
        let q = self.q();
        check_split(&[&s.to_vec(), &t1.to_vec(), &t0.to_vec()], q, "binary")?;
        let lam = &self.params.lambda;
        let mut cond = lam.principal(s);
        for i in 0..s.len() {
            cond[(i, i)] -= T::one();
        }
        if !t1.is_empty() {
            let mut pivot = lam.principal(t1);
            for i in 0..t1.len() {
                pivot[(i, i)] -= T::one();
            }
            let lu = pivot.lu();
            if lu.is_singular() {
                return Err(Error::Singular("Λ_T₁T₁ − I".into()));
            }
            let x_ = lu.solve(&lam.select(t1, s))?;
            cond = &cond - &lam.select(s, t1).matmul(&x_);
        }
        let dx: Vec<T> = x.iter().zip(&self.params.mu).map(|(&a, &b)| a - b).collect();
        let tilt: Vec<T> = s.iter().map(|&r| dot(self.params.g.row(r), &dx).exp()).collect();
        let n = s.len();
        let lam_s = Matrix::from_fn(n, n, |i, j| {
            let id = if i == j { T::one() } else { T::zero() };
            id + cond[(i, j)] * tilt[j]
        });
        let params = GrassmannParams::from_lambda(lam_s)?;
        let p0 = if n <= DEFAULT_DIM_CAP {
            Some(params.check_p0(DEFAULT_DIM_CAP)?)
        } else {
            None
        };
        Ok(BinaryConditional { params, p0 })
    }

    /// Marginal Grassmann parameter of `y` alone is not of Grassmann form;
    /// the probability table is returned instead (mask-indexed).
    pub fn binary_marginal_table(&self) -> Vec<T> {
        (0..self.minors.len()).map(|m| self.mixing_weight(m)).collect()
    }

    pub fn grassmann(&self) -> &GrassmannParams<T> {
        &self.grassmann
    }

    fn check_x(&self, x: &[T]) -> Result<()> {
        if x.len() != self.p() {
            return Err(Error::dim(format!("x has length {}, expected {}", x.len(), self.p())));
        }
        Ok(())
    }

    fn mask(&self, y: &[bool]) -> Result<usize> {
        if y.len() != self.q() {
            return Err(Error::dim(format!("y has length {}, expected {}", y.len(), self.q())));
        }
        Ok(y.iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .fold(0, |m, (r, _)| m | 1 << r))
    }
}

/// Schur-complement pieces shared by the conditional forms.
struct SchurParts<T> {
    /// `Σ_IK Σ_KK⁻¹ (x_K − μ_K)`, length `p`.
    lin: Vec<T>,
    /// `Σ_{A|K}` for the weight quadratic form.
    s_a_given_k: Matrix<T>,
    /// `Σ_JA − Σ_JK Σ_KK⁻¹ Σ_KA`.
    s_ja_given_k: Matrix<T>,
    /// `μ_J + Σ_JK Σ_KK⁻¹ (x_K − μ_K)`.
    mean_j: Vec<T>,
    /// Factor of `Σ_{J|K}`; `None` when `J = ∅`.
    chol_j: Option<Cholesky<T>>,
}

impl<T: Real> SchurParts<T> {
    fn new(mp: &MixedParams<T>, a: &[usize], j: &[usize], k: &[usize], x_k: &[T]) -> Result<Self> {
        let p = mp.mu.len();
        let all: Vec<usize> = (0..p).collect();
        let sig = &mp.sigma;
        let (lin, reduce_a, reduce_j, mean_shift_j) = if k.is_empty() {
            (
                vec![T::zero(); p],
                Matrix::zeros(a.len(), a.len()),
                Matrix::zeros(j.len(), a.len()),
                vec![T::zero(); j.len()],
            )
        } else {
            let skk = sig.principal(k);
            let chol = Cholesky::new(&skk)
                .map_err(|_| Error::Parameter("Σ_KK is not positive definite".into()))?;
            let dk: Vec<T> = k.iter().zip(x_k).map(|(&i, &x)| x - mp.mu[i]).collect();
            let alpha = chol.solve_vec(&dk);
            let lin = sig.select(&all, k).mat_vec(&alpha);
            let skk_inv = chol.inverse();
            let ska = sig.select(k, a);
            let reduce_a = sig.select(a, k).matmul(&skk_inv).matmul(&ska);
            let reduce_j = sig.select(j, k).matmul(&skk_inv).matmul(&ska);
            let mean_shift_j = sig.select(j, k).mat_vec(&alpha);
            (lin, reduce_a, reduce_j, mean_shift_j)
        };
        let s_a_given_k = &sig.principal(a) - &reduce_a;
        let s_ja_given_k = &sig.select(j, a) - &reduce_j;
        let mean_j: Vec<T> = j.iter().zip(&mean_shift_j).map(|(&i, &m)| mp.mu[i] + m).collect();
        let chol_j = if j.is_empty() {
            None
        } else {
            let jpos: Vec<usize> = j
                .iter()
                .map(|r| a.iter().position(|x| x == r).expect("J ⊆ A"))
                .collect();
            let sjj = s_a_given_k.principal(&jpos);
            Some(
                Cholesky::new(&sjj)
                    .map_err(|_| Error::Parameter("Σ_{J|K} is not positive definite".into()))?,
            )
        };
        Ok(SchurParts {
            lin,
            s_a_given_k,
            s_ja_given_k,
            mean_j,
            chol_j,
        })
    }
}

/// Masks of the indices observed as one and as zero.
fn pattern_masks(idx: &[usize], vals: &[bool]) -> (usize, usize) {
    idx.iter().zip(vals).fold((0, 0), |(one, zero), (&r, &v)| {
        if v {
            (one | 1 << r, zero)
        } else {
            (one, zero | 1 << r)
        }
    })
}

/// `ln Σ_i d_i exp(e_i)` over entries with `d_i > 0`.
fn log_weighted_sum<T: Real>(d: &[T], e: &[T]) -> Option<T> {
    let m = d
        .iter()
        .zip(e)
        .filter(|(&d, _)| d > T::zero())
        .map(|(_, &e)| e)
        .fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return None;
    }
    let s: T = d
        .iter()
        .zip(e)
        .filter(|(&d, _)| d > T::zero())
        .map(|(&d, &e)| d * (e - m).exp())
        .sum();
    Some(m + s.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::log_normal_pdf;

    fn model(g: Vec<Vec<f64>>) -> MixedModel<f64> {
        MixedModel::new(MixedParams {
            mu: vec![0.5],
            sigma: Matrix::from_rows(vec![vec![1.3]]).unwrap(),
            lambda: Matrix::from_rows(vec![vec![2.0, 0.4], vec![-0.3, 1.8]]).unwrap(),
            g: Matrix::from_rows(g).unwrap(),
        })
        .unwrap()
    }

    #[test]
    fn no_binary_is_plain_normal() {
        let m = MixedModel::new(MixedParams {
            mu: vec![1.0],
            sigma: Matrix::from_rows(vec![vec![2.0]]).unwrap(),
            lambda: Matrix::zeros(0, 0),
            g: Matrix::zeros(0, 1),
        })
        .unwrap();
        let d = m.joint_density(&[0.3], &[]).unwrap();
        let expect = log_normal_pdf::<f64>(&[0.3], &[1.0], &Matrix::from_rows(vec![vec![2.0]]).unwrap())
            .unwrap()
            .exp();
        assert!((d - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_coupling_factorizes() {
        let m = model(vec![vec![0.0], vec![0.0]]);
        let g = m.grassmann().clone();
        for mask in 0..4 {
            let y = [mask & 1 == 1, mask & 2 == 2];
            let d = m.joint_density(&[0.1], &y).unwrap();
            let n = log_normal_pdf::<f64>(&[0.1], &[0.5], &Matrix::from_rows(vec![vec![1.3]]).unwrap())
                .unwrap()
                .exp();
            assert!((d - g.joint_probability(&y).unwrap() * n).abs() < 1e-14);
        }
    }

    #[test]
    fn tilt_vanishes_at_mean() {
        let m = model(vec![vec![0.7], vec![-0.4]]);
        let c = m.conditional_binary_given_continuous(&[0.5], &[0, 1], &[], &[]).unwrap();
        assert!(c.params.lambda().max_abs_diff(&m.params().lambda) < 1e-14);
        assert!(c.p0.unwrap().passed);
    }

    #[test]
    fn partition_must_cover() {
        let m = model(vec![vec![0.7], vec![-0.4]]);
        let part = MixedPartition {
            k: vec![0],
            s: vec![0],
            ..Default::default()
        };
        assert!(m.marginal_density(&part, &[0.0], &[]).is_err());
    }

    #[test]
    fn rejects_non_p0() {
        let r = MixedModel::new(MixedParams {
            mu: vec![0.0],
            sigma: Matrix::identity(1),
            lambda: Matrix::from_rows(vec![vec![1.5, 2.0], vec![2.0, 1.5]]).unwrap(),
            g: Matrix::zeros(2, 1),
        });
        assert!(matches!(r, Err(Error::Parameter(_))));
    }
}
