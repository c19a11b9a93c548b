//! Latent factor model for categorical and ordinal observations, optionally
//! with a block of continuous observations.
//!
//! Given `z`, the continuous block is `N(μ_x + W(z − μ_z), Ψ)` with diagonal
//! `Ψ`, and each discrete variable follows its Cat/Ord distribution with
//! natural parameter `β = b + G(z − μ_z)`. The prior on `z` is the normal
//! mixture that makes the joint `p(y, z) ∝ N(z | μ_z, Σ_z) exp(yᵀβ)`, so
//! every quantity below has a closed form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{independent_b, PenaltySchedule, StateCounts};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::optim::{minimize, LbfgsConfig};
use crate::sampling::StateSampler;
use crate::scalar::{cast, from_usize, log_sum_exp, to_f64, Real};
use crate::schema::{enumerate_allowed_states, DummyState, Record, VariableKind, VariableSchema, DEFAULT_STATE_CAP};
use crate::structured::{categorical_pmf, ordinal_pmf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorModel<T> {
    pub mu_x: Vec<T>,
    /// Diagonal of the noise covariance `Ψ`.
    pub psi: Vec<T>,
    /// Continuous loadings, `p_x × p_z`.
    pub w: Matrix<T>,
    pub b: Vec<T>,
    /// Discrete loadings, `q × p_z`.
    pub g: Matrix<T>,
    pub mu_z: Vec<T>,
    pub sigma_z: Matrix<T>,
}

impl<T: Real> FactorModel<T> {
    /// Discrete-only model with `μ_z = 0`, `Σ_z = I`.
    pub fn discrete(b: Vec<T>, g: Matrix<T>) -> Self {
        let pz = g.cols();
        FactorModel {
            mu_x: Vec::new(),
            psi: Vec::new(),
            w: Matrix::zeros(0, pz),
            b,
            g,
            mu_z: vec![T::zero(); pz],
            sigma_z: Matrix::identity(pz),
        }
    }

    pub fn q(&self) -> usize {
        self.b.len()
    }

    pub fn p_x(&self) -> usize {
        self.mu_x.len()
    }

    pub fn p_z(&self) -> usize {
        self.g.cols()
    }

    /// `μ_z = 0` and `Σ_z = I` exactly.
    pub fn is_canonical(&self) -> bool {
        self.mu_z.iter().all(|m| m.is_zero()) && self.sigma_z == Matrix::identity(self.p_z())
    }

    pub fn validate(&self, schema: &VariableSchema) -> Result<()> {
        let (q, px, pz) = (self.q(), self.p_x(), self.p_z());
        if q != schema.q() {
            return Err(Error::dim(format!("b has length {q}, schema has q = {}", schema.q())));
        }
        if self.g.rows() != q {
            return Err(Error::dim("G must have q rows"));
        }
        if self.psi.len() != px || self.w.rows() != px || self.w.cols() != pz {
            return Err(Error::dim("continuous block shapes disagree"));
        }
        if self.mu_z.len() != pz || self.sigma_z.rows() != pz || self.sigma_z.cols() != pz {
            return Err(Error::dim("latent mean/covariance shapes disagree with G"));
        }
        let finite = |v: &[T]| v.iter().all(|x| x.is_finite());
        if !(finite(&self.mu_x) && finite(&self.psi) && finite(&self.b) && finite(&self.mu_z))
            || !(self.w.is_finite() && self.g.is_finite() && self.sigma_z.is_finite())
        {
            return Err(Error::Parameter("non-finite factor model entry".into()));
        }
        if self.psi.iter().any(|&p| !(p > T::zero())) {
            return Err(Error::Parameter("noise variances must be positive".into()));
        }
        if self.sigma_z.max_abs_diff(&self.sigma_z.transpose()) > T::tolerance(1e-12) {
            return Err(Error::Parameter("Σ_z must be symmetric".into()));
        }
        self.sigma_z
            .cholesky()
            .map_err(|_| Error::Parameter("Σ_z must be positive definite".into()))?;
        Ok(())
    }
}

/// `yᵀb + ½ uᵀ Σ_z u` with `u = Gᵀy`.
fn log_score<T: Real>(b: &[T], g: &Matrix<T>, sigma_z: &Matrix<T>, ones: &[usize]) -> T {
    let u = loading_sum(g, ones);
    let quad = dot(&u, &sigma_z.mat_vec(&u));
    ones.iter().map(|&i| b[i]).sum::<T>() + cast::<T>(0.5) * quad
}

/// `Gᵀ y` for the dummy state with set bits `ones`.
fn loading_sum<T: Real>(g: &Matrix<T>, ones: &[usize]) -> Vec<T> {
    let mut u = vec![T::zero(); g.cols()];
    for &i in ones {
        for (uk, &gk) in u.iter_mut().zip(g.row(i)) {
            *uk += gk;
        }
    }
    u
}

/// Prior mixture weights over the allowed states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights<T> {
    pub states: Vec<DummyState>,
    pub weights: Vec<T>,
    pub log_normalizer: T,
}

impl<T: Real> MixtureWeights<T> {
    pub fn sum(&self) -> T {
        self.weights.iter().copied().sum()
    }
}

pub fn mixture_weights<T: Real>(
    schema: &VariableSchema,
    b: &[T],
    g: &Matrix<T>,
    sigma_z: &Matrix<T>,
    cap: usize,
) -> Result<MixtureWeights<T>> {
    if b.len() != schema.q() || g.rows() != schema.q() || sigma_z.rows() != g.cols() {
        return Err(Error::dim("mixture weight inputs disagree with the schema"));
    }
    let states = enumerate_allowed_states(schema, cap)?;
    let scores: Vec<T> = states.iter().map(|s| log_score(b, g, sigma_z, &s.ones())).collect();
    let log_z = log_sum_exp(&scores);
    let weights = scores.iter().map(|&s| (s - log_z).exp()).collect();
    Ok(MixtureWeights {
        states,
        weights,
        log_normalizer: log_z,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedDensity<T> {
    pub value: T,
    pub log_value: T,
    /// `y` is not an allowed state.
    pub structural_zero: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Posterior<T> {
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
}

/// A validated model with its normalizer and covariance factors cached.
#[derive(Clone, Debug)]
pub struct FactorEvaluator<'a, T: Real> {
    model: &'a FactorModel<T>,
    schema: &'a VariableSchema,
    mixture: MixtureWeights<T>,
    sigma_z_chol: Cholesky<T>,
    sigma_x_chol: Option<Cholesky<T>>,
    post_cov: Matrix<T>,
    /// `Wᵀ Ψ⁻¹`, `p_z × p_x`.
    wt_psi_inv: Matrix<T>,
}

impl<'a, T: Real> FactorEvaluator<'a, T> {
    pub fn new(model: &'a FactorModel<T>, schema: &'a VariableSchema, cap: usize) -> Result<Self> {
        model.validate(schema)?;
        let mixture = mixture_weights(schema, &model.b, &model.g, &model.sigma_z, cap)?;
        let sigma_z_chol = model.sigma_z.cholesky()?;
        let px = model.p_x();
        let wt_psi_inv = Matrix::from_fn(model.p_z(), px, |k, i| model.w[(i, k)] / model.psi[i]);
        let (sigma_x_chol, post_cov) = if px > 0 {
            let ws = model.w.matmul(&model.sigma_z);
            let sigma_x = &Matrix::from_diag(&model.psi) + &ws.matmul(&model.w.transpose());
            let prec = &sigma_z_chol.inverse() + &wt_psi_inv.matmul(&model.w);
            (Some(sigma_x.cholesky()?), prec.cholesky()?.inverse())
        } else {
            (None, model.sigma_z.clone())
        };
        Ok(FactorEvaluator {
            model,
            schema,
            mixture,
            sigma_z_chol,
            sigma_x_chol,
            post_cov,
            wt_psi_inv,
        })
    }

    pub fn model(&self) -> &FactorModel<T> {
        self.model
    }

    pub fn mixture(&self) -> &MixtureWeights<T> {
        &self.mixture
    }

    fn check_x(&self, x: Option<&[T]>) -> Result<()> {
        let got = x.map_or(0, <[T]>::len);
        if got != self.model.p_x() {
            return Err(Error::dim(format!("x has length {got}, model has p_x = {}", self.model.p_x())));
        }
        Ok(())
    }

    fn check_y(&self, y: &DummyState) -> Result<bool> {
        if y.len() != self.model.q() {
            return Err(Error::dim("dummy state length differs from q"));
        }
        Ok(self.schema.is_allowed(y))
    }

    /// `log π_y`; `−∞` for a disallowed state.
    pub fn log_prior_weight(&self, y: &DummyState) -> Result<T> {
        if !self.check_y(y)? {
            return Ok(T::neg_infinity());
        }
        let m = self.model;
        Ok(log_score(&m.b, &m.g, &m.sigma_z, &y.ones()) - self.mixture.log_normalizer)
    }

    /// Mean of the continuous block in component `y`: `μ_x + W Σ_z Gᵀ y`.
    fn component_mean(&self, ones: &[usize]) -> Vec<T> {
        let m = self.model;
        let u = m.sigma_z.mat_vec(&loading_sum(&m.g, ones));
        m.w.mat_vec(&u).iter().zip(&m.mu_x).map(|(&a, &b)| a + b).collect()
    }

    /// `p(x, y) = π_y N(x | μ_x + W Σ_z Gᵀ y, Ψ + W Σ_z Wᵀ)`.
    pub fn observed_density(&self, x: Option<&[T]>, y: &DummyState) -> Result<ObservedDensity<T>> {
        self.check_x(x)?;
        let lw = self.log_prior_weight(y)?;
        if lw == T::neg_infinity() {
            return Ok(ObservedDensity {
                value: T::zero(),
                log_value: lw,
                structural_zero: true,
            });
        }
        let lx = match (&self.sigma_x_chol, x) {
            (Some(c), Some(x)) => c.log_normal_pdf(x, &self.component_mean(&y.ones())),
            _ => T::zero(),
        };
        let log_value = lw + lx;
        Ok(ObservedDensity {
            value: log_value.exp(),
            log_value,
            structural_zero: false,
        })
    }

    /// Continuous marginal `Σ_y p(x, y)`.
    pub fn marginal_x_density(&self, x: &[T]) -> Result<T> {
        self.check_x(Some(x))?;
        let c = self
            .sigma_x_chol
            .as_ref()
            .ok_or_else(|| Error::dim("model has no continuous block"))?;
        let logs: Vec<T> = self
            .mixture
            .states
            .iter()
            .zip(&self.mixture.weights)
            .map(|(s, &w)| w.ln() + c.log_normal_pdf(x, &self.component_mean(&s.ones())))
            .collect();
        Ok(log_sum_exp(&logs).exp())
    }

    /// Prior mixture density of `z`.
    pub fn prior_density(&self, z: &[T]) -> Result<T> {
        let m = self.model;
        if z.len() != m.p_z() {
            return Err(Error::dim("z has the wrong length"));
        }
        let logs: Vec<T> = self
            .mixture
            .states
            .iter()
            .zip(&self.mixture.weights)
            .map(|(s, &w)| {
                let shift = m.sigma_z.mat_vec(&loading_sum(&m.g, &s.ones()));
                let mean: Vec<T> = m.mu_z.iter().zip(&shift).map(|(&a, &b)| a + b).collect();
                w.ln() + self.sigma_z_chol.log_normal_pdf(z, &mean)
            })
            .collect();
        Ok(log_sum_exp(&logs).exp())
    }

    /// `p(x, y | z)`: independent normal noise times per-variable Cat/Ord.
    pub fn conditional_density(&self, x: Option<&[T]>, y: &DummyState, z: &[T]) -> Result<T> {
        self.check_x(x)?;
        let m = self.model;
        if z.len() != m.p_z() {
            return Err(Error::dim("z has the wrong length"));
        }
        if !self.check_y(y)? {
            return Ok(T::zero());
        }
        let dz: Vec<T> = z.iter().zip(&m.mu_z).map(|(&a, &b)| a - b).collect();
        let beta: Vec<T> = m.g.mat_vec(&dz).iter().zip(&m.b).map(|(&a, &b)| a + b).collect();
        let bits = y.bits();
        let mut p = T::one();
        for (j, var) in self.schema.variables().iter().enumerate() {
            let r = self.schema.block(j);
            p *= match var.kind {
                VariableKind::Categorical => categorical_pmf(&beta[r.clone()], &bits[r]),
                VariableKind::Ordinal => ordinal_pmf(&beta[r.clone()], &bits[r]),
            };
        }
        if let Some(x) = x {
            let mean = m.w.mat_vec(&dz);
            let two_pi = cast::<T>(2.0 * std::f64::consts::PI);
            let mut lx = T::zero();
            for i in 0..x.len() {
                let r = x[i] - m.mu_x[i] - mean[i];
                lx -= cast::<T>(0.5) * ((two_pi * m.psi[i]).ln() + r * r / m.psi[i]);
            }
            p *= lx.exp();
        }
        Ok(p)
    }

    /// Normal posterior of `z`; its mean is the factor score.
    pub fn posterior(&self, x: Option<&[T]>, y: &DummyState) -> Result<Posterior<T>> {
        self.check_x(x)?;
        if !self.check_y(y)? {
            return Err(Error::InvalidState {
                variable: String::new(),
                reason: "posterior requires an allowed dummy state".into(),
            });
        }
        let m = self.model;
        let mut v = loading_sum(&m.g, &y.ones());
        if let Some(x) = x {
            let dx: Vec<T> = x.iter().zip(&m.mu_x).map(|(&a, &b)| a - b).collect();
            for (vk, a) in v.iter_mut().zip(self.wt_psi_inv.mat_vec(&dx)) {
                *vk += a;
            }
        }
        let shift = self.post_cov.mat_vec(&v);
        Ok(Posterior {
            mean: m.mu_z.iter().zip(&shift).map(|(&a, &b)| a + b).collect(),
            cov: self.post_cov.clone(),
        })
    }

    /// `log N(z | m, Σ_{z|x})` for the posterior at `(x, y)`.
    pub fn posterior_density(&self, z: &[T], x: Option<&[T]>, y: &DummyState) -> Result<T> {
        let post = self.posterior(x, y)?;
        Ok(post.cov.cholesky()?.log_normal_pdf(z, &post.mean).exp())
    }

    /// Model mean of the dummy vector.
    pub fn mean_y(&self) -> Vec<T> {
        let mut mean = vec![T::zero(); self.model.q()];
        for (s, &w) in self.mixture.states.iter().zip(&self.mixture.weights) {
            for i in s.ones() {
                mean[i] += w;
            }
        }
        mean
    }

    /// `n` exact draws of `(y, x)`; `x` is empty when `p_x = 0`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<(DummyState, Vec<T>)>> {
        let weights = self.mixture.weights.iter().map(|&w| to_f64(w)).collect();
        let sampler = StateSampler::new(self.mixture.states.clone(), weights)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let y = sampler.sample(rng).clone();
            let x = match &self.sigma_x_chol {
                Some(c) => {
                    let xi: Vec<T> = (0..self.model.p_x())
                        .map(|_| cast::<T>(StandardNormal.sample(rng)))
                        .collect();
                    let mean = self.component_mean(&y.ones());
                    c.factor().mat_vec(&xi).iter().zip(&mean).map(|(&a, &b)| a + b).collect()
                }
                None => Vec::new(),
            };
            out.push((y, x));
        }
        Ok(out)
    }
}

/// Combined loading vectors of one variable, indexed by level `0..levels`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableLoadings<T> {
    pub variable: String,
    pub kind: VariableKind,
    pub vectors: Vec<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedLoadings<T> {
    pub variables: Vec<VariableLoadings<T>>,
}

impl<T: Real> CombinedLoadings<T> {
    pub fn iter(&self) -> impl Iterator<Item = (&str, usize, &[T])> {
        self.variables.iter().flat_map(|v| {
            v.vectors
                .iter()
                .enumerate()
                .map(move |(l, g)| (v.variable.as_str(), l, g.as_slice()))
        })
    }

    pub fn norms(&self) -> Vec<T> {
        self.iter().map(|(_, _, g)| dot(g, g).sqrt()).collect()
    }

    /// Largest violation of the base-vector identities: `g_0 = −Σ_{l≥1} g_l`
    /// for categorical and `g_0 = −g_last` for ordinal variables.
    pub fn identity_error(&self) -> T {
        let mut worst = T::zero();
        for v in &self.variables {
            let pz = v.vectors[0].len();
            for k in 0..pz {
                let rhs = match v.kind {
                    VariableKind::Categorical => -v.vectors[1..].iter().map(|g| g[k]).sum::<T>(),
                    VariableKind::Ordinal => -v.vectors[v.vectors.len() - 1][k],
                };
                worst = worst.max((v.vectors[0][k] - rhs).abs());
            }
        }
        worst
    }
}

pub fn combined_loadings<T: Real>(schema: &VariableSchema, g: &Matrix<T>) -> Result<CombinedLoadings<T>> {
    if g.rows() != schema.q() {
        return Err(Error::dim(format!("G has {} rows, schema has q = {}", g.rows(), schema.q())));
    }
    let pz = g.cols();
    let mut variables = Vec::with_capacity(schema.len());
    for (j, var) in schema.variables().iter().enumerate() {
        let block = schema.block(j);
        let rows: Vec<&[T]> = block.clone().map(|r| g.row(r)).collect();
        let total: Vec<T> = (0..pz).map(|k| rows.iter().map(|r| r[k]).sum()).collect();
        let base_coef = match var.kind {
            VariableKind::Categorical => -T::one() / from_usize::<T>(rows.len() + 1),
            VariableKind::Ordinal => cast(-0.5),
        };
        let base: Vec<T> = total.iter().map(|&t| base_coef * t).collect();
        let mut vectors = vec![base.clone()];
        let mut running = base.clone();
        for row in &rows {
            match var.kind {
                VariableKind::Categorical => {
                    vectors.push(base.iter().zip(*row).map(|(&a, &b)| a + b).collect());
                }
                VariableKind::Ordinal => {
                    for (r, &b) in running.iter_mut().zip(*row) {
                        *r += b;
                    }
                    vectors.push(running.clone());
                }
            }
        }
        variables.push(VariableLoadings {
            variable: var.name.clone(),
            kind: var.kind,
            vectors,
        });
    }
    Ok(CombinedLoadings { variables })
}

/// Pull a gradient on every combined vector back to a gradient on `G`.
fn combined_loadings_adjoint<T: Real>(schema: &VariableSchema, d: &[Vec<Vec<T>>], pz: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(schema.q(), pz);
    for (j, var) in schema.variables().iter().enumerate() {
        let block = schema.block(j);
        let dj = &d[j];
        let total: Vec<T> = (0..pz).map(|k| dj.iter().map(|v| v[k]).sum()).collect();
        let coef = match var.kind {
            VariableKind::Categorical => -T::one() / from_usize::<T>(block.len() + 1),
            VariableKind::Ordinal => cast(-0.5),
        };
        let mut suffix = vec![T::zero(); pz];
        for (m, r) in block.clone().enumerate().rev() {
            let own = &dj[m + 1];
            for k in 0..pz {
                suffix[k] += own[k];
                let direct = match var.kind {
                    VariableKind::Categorical => own[k],
                    VariableKind::Ordinal => suffix[k],
                };
                out[(r, k)] = direct + coef * total[k];
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation<T> {
    pub model: FactorModel<T>,
    /// Orthogonal `Q` with `G ← G Q`.
    pub q: Matrix<T>,
    /// Eigenvalues of `GᵀG`, descending.
    pub eigenvalues: Vec<T>,
    /// `λ_k / Σ λ`; all zero when `G = 0`.
    pub ratios: Vec<T>,
}

/// Rotate the latent space so that `GᵀG` is diagonal with descending
/// entries. Each eigenvector's first clearly nonzero component is made
/// positive; equal eigenvalues keep their original axis order.
pub fn fix_rotation<T: Real>(model: &FactorModel<T>) -> Result<Rotation<T>> {
    let pz = model.p_z();
    if pz == 0 {
        return Err(Error::Parameter("rotation needs at least one latent dimension".into()));
    }
    let gtg = model.g.transpose().matmul(&model.g);
    let (vals, vecs) = gtg.sym_eigen();
    let mut order: Vec<usize> = (0..pz).collect();
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap_or(std::cmp::Ordering::Equal));
    let tiny = T::epsilon().sqrt();
    let mut q = Matrix::zeros(pz, pz);
    for (k, &src) in order.iter().enumerate() {
        let col = vecs.col(src);
        let sign = col
            .iter()
            .find(|c| c.abs() > tiny)
            .map_or(T::one(), |&c| if c < T::zero() { -T::one() } else { T::one() });
        for i in 0..pz {
            q[(i, k)] = sign * col[i];
        }
    }
    let eigenvalues: Vec<T> = order.iter().map(|&i| vals[i].max(T::zero())).collect();
    let trace: T = eigenvalues.iter().copied().sum();
    let ratios = eigenvalues
        .iter()
        .map(|&l| if trace > T::zero() { l / trace } else { T::zero() })
        .collect();
    let qt = q.transpose();
    let rotated = FactorModel {
        mu_x: model.mu_x.clone(),
        psi: model.psi.clone(),
        w: model.w.matmul(&q),
        b: model.b.clone(),
        g: model.g.matmul(&q),
        mu_z: qt.mat_vec(&model.mu_z),
        sigma_z: qt.matmul(&model.sigma_z).matmul(&q),
    };
    Ok(Rotation {
        model: rotated,
        q,
        eigenvalues,
        ratios,
    })
}

/// Free parameter count after fixing the rotation:
/// `q + q p_z − p_z(p_z − 1)/2`, plus `2 p_x + p_x p_z` for a continuous
/// block.
pub fn bic_parameter_count(q: usize, p_z: usize, p_x: usize) -> usize {
    let cont = if p_x > 0 { 2 * p_x + p_x * p_z } else { 0 };
    q + q * p_z + cont - p_z * p_z.saturating_sub(1) / 2
}

/// Observations: discrete states and, optionally, one continuous row each.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorData<T> {
    pub y: Vec<DummyState>,
    pub x: Option<Matrix<T>>,
}

impl<T: Real> FactorData<T> {
    pub fn from_records(schema: &VariableSchema, rows: &[Record], x: Option<Matrix<T>>) -> Result<Self> {
        let y = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                schema.encode(r).map_err(|e| Error::Ingest {
                    row: i + 1,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(y, x)
    }

    pub fn new(y: Vec<DummyState>, x: Option<Matrix<T>>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::NoData);
        }
        if let Some(x) = &x {
            if x.rows() != y.len() {
                return Err(Error::dim("continuous rows differ from discrete rows"));
            }
        }
        Ok(FactorData { y, x })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p_x(&self) -> usize {
        self.x.as_ref().map_or(0, Matrix::cols)
    }

    fn x_row(&self, i: usize) -> Option<&[T]> {
        self.x.as_ref().map(|x| x.row(i))
    }
}

/// `−Σ_n log p(x_n, y_n)`.
pub fn factor_negative_log_likelihood<T: Real>(
    schema: &VariableSchema,
    model: &FactorModel<T>,
    data: &FactorData<T>,
    cap: usize,
) -> Result<T> {
    let ev = FactorEvaluator::new(model, schema, cap)?;
    let mut nll = T::zero();
    for i in 0..data.n() {
        let d = ev.observed_density(data.x_row(i), &data.y[i])?;
        if d.structural_zero {
            return Err(Error::Ingest {
                row: i + 1,
                source: Box::new(Error::InvalidState {
                    variable: String::new(),
                    reason: "state not allowed by the schema".into(),
                }),
            });
        }
        nll -= d.log_value;
    }
    Ok(nll)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorFitConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub penalty: PenaltySchedule,
    pub seed: u64,
    pub restarts: usize,
    /// Standard deviation of the random initial loadings.
    pub init_scale: f64,
    pub state_cap: usize,
    /// Enforce equal norms of all combined loading vectors.
    pub equal_norm: bool,
    /// Largest accepted `|‖g_l‖ − s|`.
    pub norm_tol: f64,
}

impl Default for FactorFitConfig {
    fn default() -> Self {
        FactorFitConfig {
            max_iter: 1000,
            grad_tol: 1e-6,
            penalty: PenaltySchedule::default(),
            seed: 0,
            restarts: 1,
            init_scale: 0.1,
            state_cap: DEFAULT_STATE_CAP,
            equal_norm: true,
            norm_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorRestart {
    pub seed: u64,
    pub nll: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorFitReport<T> {
    pub nll: T,
    pub n: usize,
    pub p_z: usize,
    pub p_x: usize,
    pub parameter_count: usize,
    pub bic: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `max_l |‖g_l‖ − s|` at exit.
    pub norm_spread: f64,
    pub norm_scale: f64,
    pub contribution_ratios: Vec<T>,
    pub mean: Vec<T>,
    pub empirical_mean: Vec<T>,
    pub max_mean_error: f64,
    pub restarts: Vec<FactorRestart>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorFit<T> {
    pub model: FactorModel<T>,
    pub report: FactorFitReport<T>,
}

/// Flat layout `[b | G | s? | μ_x | ln ψ | W]` with `μ_z = 0`, `Σ_z = I`.
struct FactorLayout {
    q: usize,
    pz: usize,
    px: usize,
    with_s: bool,
}

impl FactorLayout {
    fn s_at(&self) -> usize {
        self.q + self.q * self.pz
    }

    fn mu_at(&self) -> usize {
        self.s_at() + usize::from(self.with_s)
    }

    fn unpack<T: Real>(&self, x: &[T]) -> (FactorModel<T>, T) {
        let (q, pz, px) = (self.q, self.pz, self.px);
        let b = x[..q].to_vec();
        let g = Matrix::from_row_major(q, pz, x[q..q + q * pz].to_vec()).expect("layout");
        let s = if self.with_s { x[self.s_at()] } else { T::zero() };
        let m = self.mu_at();
        let mu_x = x[m..m + px].to_vec();
        let psi = x[m + px..m + 2 * px].iter().map(|t| t.exp()).collect();
        let w = Matrix::from_row_major(px, pz, x[m + 2 * px..m + 2 * px + px * pz].to_vec()).expect("layout");
        let model = FactorModel {
            mu_x,
            psi,
            w,
            b,
            g,
            mu_z: vec![T::zero(); pz],
            sigma_z: Matrix::identity(pz),
        };
        (model, s)
    }

    fn pack<T: Real>(&self, m: &FactorModel<T>, s: T) -> Vec<T> {
        let mut x = m.b.clone();
        x.extend_from_slice(m.g.as_slice());
        if self.with_s {
            x.push(s);
        }
        x.extend_from_slice(&m.mu_x);
        x.extend(m.psi.iter().map(|p| p.ln()));
        x.extend_from_slice(m.w.as_slice());
        x
    }
}

struct FactorObjective<'a, T> {
    schema: &'a VariableSchema,
    layout: FactorLayout,
    allowed: Vec<Vec<usize>>,
    /// Distinct observed states with counts.
    discrete: Vec<(Vec<usize>, T)>,
    /// Per-row `(state, x)` when a continuous block is present.
    continuous: Vec<(Vec<usize>, Vec<T>)>,
    n: T,
    mu: T,
}

impl<T: Real> FactorObjective<'_, T> {
    fn eval(&self, x: &[T]) -> Option<(T, Vec<T>)> {
        let lay = &self.layout;
        let (q, pz, px) = (lay.q, lay.pz, lay.px);
        let (m, s) = lay.unpack(x);
        let half = cast::<T>(0.5);
        let mut gb = vec![T::zero(); q];
        let mut gg = Matrix::zeros(q, pz);

        let scores: Vec<(T, Vec<T>)> = self
            .allowed
            .iter()
            .map(|ones| {
                let u = loading_sum(&m.g, ones);
                (ones.iter().map(|&i| m.b[i]).sum::<T>() + half * dot(&u, &u), u)
            })
            .collect();
        let sv: Vec<T> = scores.iter().map(|s| s.0).collect();
        let log_z = log_sum_exp(&sv);
        let mut value = self.n * log_z;
        for (ones, (sc, u)) in self.allowed.iter().zip(&scores) {
            let p = self.n * (*sc - log_z).exp();
            for &i in ones {
                gb[i] += p;
                for k in 0..pz {
                    gg[(i, k)] += p * u[k];
                }
            }
        }
        for (ones, w) in &self.discrete {
            let u = loading_sum(&m.g, ones);
            value -= *w * (ones.iter().map(|&i| m.b[i]).sum::<T>() + half * dot(&u, &u));
            for &i in ones {
                gb[i] -= *w;
                for k in 0..pz {
                    gg[(i, k)] -= *w * u[k];
                }
            }
        }

        let mut gmu = vec![T::zero(); px];
        let mut gtheta = vec![T::zero(); px];
        let mut gw = Matrix::zeros(px, pz);
        if px > 0 {
            let sx = &Matrix::from_diag(&m.psi) + &m.w.matmul(&m.w.transpose());
            let chol = sx.cholesky().ok()?;
            let sinv = chol.inverse();
            let log_det = chol.log_det();
            let c = cast::<T>((2.0 * std::f64::consts::PI).ln()) * from_usize::<T>(px);
            let mut acc = Matrix::zeros(px, px);
            for (ones, xr) in &self.continuous {
                let u = loading_sum(&m.g, ones);
                let mean = m.w.mat_vec(&u);
                let r: Vec<T> = (0..px).map(|i| xr[i] - m.mu_x[i] - mean[i]).collect();
                let alpha = chol.solve_vec(&r);
                value += half * (log_det + dot(&r, &alpha) + c);
                let wa = m.w.tr_vec(&alpha);
                for i in 0..px {
                    gmu[i] -= alpha[i];
                    for k in 0..pz {
                        gw[(i, k)] -= alpha[i] * u[k];
                    }
                    for j in 0..px {
                        acc[(i, j)] += sinv[(i, j)] - alpha[i] * alpha[j];
                    }
                }
                for &i in ones {
                    for k in 0..pz {
                        gg[(i, k)] -= wa[k];
                    }
                }
            }
            gw = &gw + &acc.matmul(&m.w);
            for i in 0..px {
                gtheta[i] = half * acc[(i, i)] * m.psi[i];
            }
        }

        let scale = T::one() / self.n;
        value *= scale;
        let mut grad: Vec<T> = gb.iter().map(|&v| v * scale).collect();
        let gg = gg.scale(scale);
        let mut gs = T::zero();
        let gg = if lay.with_s {
            let (pen, dg, ds) = self.penalty(&m.g, s)?;
            value += pen;
            gs = ds;
            &gg + &dg
        } else {
            gg
        };
        grad.extend_from_slice(gg.as_slice());
        if lay.with_s {
            grad.push(gs);
        }
        grad.extend(gmu.iter().map(|&v| v * scale));
        grad.extend(gtheta.iter().map(|&v| v * scale));
        grad.extend(gw.as_slice().iter().map(|&v| v * scale));
        value.is_finite().then_some((value, grad))
    }

    /// `μ Σ_l (‖g_l‖ − s)²` over every combined loading vector.
    fn penalty(&self, g: &Matrix<T>, s: T) -> Option<(T, Matrix<T>, T)> {
        let cl = combined_loadings(self.schema, g).ok()?;
        let tiny = cast::<T>(1e-30);
        let two_mu = self.mu + self.mu;
        let mut value = T::zero();
        let mut ds = T::zero();
        let d: Vec<Vec<Vec<T>>> = cl
            .variables
            .iter()
            .map(|v| {
                v.vectors
                    .iter()
                    .map(|gl| {
                        let nrm = (dot(gl, gl) + tiny).sqrt();
                        let h = nrm - s;
                        value += self.mu * h * h;
                        ds -= two_mu * h;
                        gl.iter().map(|&c| two_mu * h * c / nrm).collect()
                    })
                    .collect()
            })
            .collect();
        Some((value, combined_loadings_adjoint(self.schema, &d, g.cols()), ds))
    }
}

fn norm_spread<T: Real>(schema: &VariableSchema, g: &Matrix<T>, s: T) -> Result<f64> {
    Ok(combined_loadings(schema, g)?
        .norms()
        .iter()
        .map(|&n| to_f64((n - s).abs()))
        .fold(0.0, f64::max))
}

/// Maximum-likelihood fit with `p_z` latent dimensions, returned with the
/// rotation fixed.
pub fn fit_factor_model<T: Real>(
    schema: &VariableSchema,
    data: &FactorData<T>,
    p_z: usize,
    config: &FactorFitConfig,
) -> Result<FactorFit<T>> {
    if config.max_iter == 0 || !(config.grad_tol > 0.0) || config.restarts == 0 {
        return Err(Error::Parameter("max_iter, grad_tol and restarts must be positive".into()));
    }
    if !(config.penalty.initial > 0.0 && config.penalty.factor > 1.0 && config.penalty.max >= config.penalty.initial) {
        return Err(Error::Parameter("penalty schedule needs initial > 0, factor > 1, max ≥ initial".into()));
    }
    for y in &data.y {
        schema.check_state(y)?;
    }
    if p_z > schema.q() + data.p_x() {
        return Err(Error::Parameter(format!(
            "p_z = {p_z} exceeds the number of observed coordinates {}",
            schema.q() + data.p_x()
        )));
    }
    let counts = StateCounts::from_states(schema, data.y.iter())?;
    let (b0, mut warnings) = independent_b::<T>(schema, &counts)?;
    let b0: Vec<T> = b0.into_iter().flatten().collect();
    let allowed: Vec<Vec<usize>> = enumerate_allowed_states(schema, config.state_cap)?
        .iter()
        .map(DummyState::ones)
        .collect();
    let px = data.p_x();
    let with_s = config.equal_norm && p_z > 0;
    let obj_base = FactorObjective {
        schema,
        layout: FactorLayout {
            q: schema.q(),
            pz: p_z,
            px,
            with_s,
        },
        allowed,
        discrete: counts.iter().map(|(s, c)| (s.ones(), cast::<T>(c as f64))).collect(),
        continuous: (0..data.n())
            .filter_map(|i| data.x_row(i).map(|x| (data.y[i].ones(), x.to_vec())))
            .collect(),
        n: from_usize(data.n()),
        mu: cast(config.penalty.initial),
    };

    let (mu_x0, psi0) = continuous_moments(data);
    let mut best: Option<(FactorModel<T>, T, T, usize, bool)> = None;
    let mut restarts = Vec::with_capacity(config.restarts);
    let mut obj = obj_base;
    for r in 0..config.restarts {
        let seed = config.seed.wrapping_add(r as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, config.init_scale.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::Parameter(format!("init scale: {e}")))?;
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| cast::<T>(normal.sample(&mut rng))).collect() };
        let g0 = Matrix::from_row_major(schema.q(), p_z, draw(schema.q() * p_z))?;
        let w0 = Matrix::from_row_major(px, p_z, draw(px * p_z))?;
        let start = FactorModel {
            mu_x: mu_x0.clone(),
            psi: psi0.clone(),
            w: w0,
            b: b0.clone(),
            g: g0,
            mu_z: vec![T::zero(); p_z],
            sigma_z: Matrix::identity(p_z),
        };
        let s0 = if with_s {
            let norms = combined_loadings(schema, &start.g)?.norms();
            norms.iter().copied().sum::<T>() / from_usize(norms.len().max(1))
        } else {
            T::zero()
        };
        let mut x = obj.layout.pack(&start, s0);
        obj.mu = cast(config.penalty.initial);
        let lb = LbfgsConfig {
            max_iter: config.max_iter,
            grad_tol: config.grad_tol,
            ..LbfgsConfig::default()
        };
        let mut iterations = 0;
        let (model, s, converged) = loop {
            let res = minimize(x, &lb, |z| obj.eval(z))?;
            iterations += res.iterations;
            x = res.x;
            let (m, s) = obj.layout.unpack(&x);
            let spread = if with_s { norm_spread(schema, &m.g, s)? } else { 0.0 };
            let feasible = spread <= config.norm_tol;
            let at_max = to_f64(obj.mu) >= config.penalty.max;
            let conv = matches!(
                res.stop,
                crate::optim::StopReason::GradientTolerance | crate::optim::StopReason::ValueTolerance
            );
            if !with_s || (feasible && conv) || at_max {
                break (m, s, conv && feasible);
            }
            obj.mu = cast::<T>((to_f64(obj.mu) * config.penalty.factor).min(config.penalty.max));
        };
        let nll = factor_negative_log_likelihood(schema, &model, data, config.state_cap)?;
        restarts.push(FactorRestart {
            seed,
            nll: to_f64(nll),
            iterations,
            converged,
        });
        let better = match &best {
            None => true,
            Some((bm, bn, _, _, _)) => {
                let tol = 1e-9 * to_f64(nll).abs().max(1.0);
                let (a, b) = (to_f64(nll), to_f64(*bn));
                a < b - tol || ((a - b).abs() <= tol && param_norm(&model) < param_norm(bm))
            }
        };
        if better {
            best = Some((model, nll, s, iterations, converged));
        }
    }
    let (model, nll, s, iterations, converged) = best.expect("at least one restart");
    let spread = if with_s { norm_spread(schema, &model.g, s)? } else { 0.0 };
    let (model, ratios) = if p_z > 0 {
        let rot = fix_rotation(&model)?;
        (rot.model, rot.ratios)
    } else {
        (model, Vec::new())
    };
    let ev = FactorEvaluator::new(&model, schema, config.state_cap)?;
    let mean = ev.mean_y();
    let n = from_usize::<T>(data.n());
    let mut empirical_mean = vec![T::zero(); schema.q()];
    for y in &data.y {
        for i in y.ones() {
            empirical_mean[i] += T::one() / n;
        }
    }
    let max_mean_error = mean
        .iter()
        .zip(&empirical_mean)
        .map(|(&a, &b)| to_f64((a - b).abs()))
        .fold(0.0, f64::max);
    if !converged {
        warnings.push("factor fit stopped before convergence".into());
    }
    let k = bic_parameter_count(schema.q(), p_z, px);
    let bic = k as f64 * (data.n() as f64).ln() + 2.0 * to_f64(nll);
    Ok(FactorFit {
        report: FactorFitReport {
            nll,
            n: data.n(),
            p_z,
            p_x: px,
            parameter_count: k,
            bic,
            iterations,
            converged,
            norm_spread: spread,
            norm_scale: to_f64(s),
            contribution_ratios: ratios,
            mean,
            empirical_mean,
            max_mean_error,
            restarts,
            warnings,
        },
        model,
    })
}

fn param_norm<T: Real>(m: &FactorModel<T>) -> f64 {
    m.b.iter()
        .chain(m.g.as_slice())
        .chain(&m.mu_x)
        .chain(&m.psi)
        .chain(m.w.as_slice())
        .map(|&v| to_f64(v * v))
        .sum()
}

fn continuous_moments<T: Real>(data: &FactorData<T>) -> (Vec<T>, Vec<T>) {
    let Some(x) = &data.x else {
        return (Vec::new(), Vec::new());
    };
    let n = from_usize::<T>(x.rows());
    let mean: Vec<T> = (0..x.cols()).map(|j| x.col(j).iter().copied().sum::<T>() / n).collect();
    let var = (0..x.cols())
        .map(|j| {
            let v = x.col(j).iter().map(|&v| (v - mean[j]) * (v - mean[j])).sum::<T>() / n;
            v.max(cast(1e-6))
        })
        .collect();
    (mean, var)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BicRow {
    pub p_z: usize,
    pub parameter_count: usize,
    pub nll: f64,
    pub bic: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BicSelection<T> {
    pub chosen: usize,
    /// BIC of the runner-up minus the chosen BIC; infinite for one candidate.
    pub margin: f64,
    pub table: Vec<BicRow>,
    pub fit: FactorFit<T>,
}

/// Fit each `p_z` in `range` and keep the smallest BIC; ties go to the
/// smaller dimension.
pub fn select_dimension_bic<T: Real>(
    schema: &VariableSchema,
    data: &FactorData<T>,
    range: std::ops::RangeInclusive<usize>,
    config: &FactorFitConfig,
) -> Result<BicSelection<T>> {
    if range.is_empty() {
        return Err(Error::Parameter("empty latent dimension range".into()));
    }
    let mut table = Vec::new();
    let mut best: Option<FactorFit<T>> = None;
    for pz in range {
        let fit = fit_factor_model(schema, data, pz, config)?;
        table.push(BicRow {
            p_z: pz,
            parameter_count: fit.report.parameter_count,
            nll: to_f64(fit.report.nll),
            bic: fit.report.bic,
            converged: fit.report.converged,
        });
        if best.as_ref().map_or(true, |b| fit.report.bic < b.report.bic) {
            best = Some(fit);
        }
    }
    let fit = best.expect("nonempty range");
    let chosen = fit.report.p_z;
    let margin = table
        .iter()
        .filter(|r| r.p_z != chosen)
        .map(|r| r.bic - fit.report.bic)
        .fold(f64::INFINITY, f64::min);
    Ok(BicSelection {
        chosen,
        margin,
        table,
        fit,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorePoint<T> {
    /// 1-based index of the first data row with this observation.
    pub row_id: usize,
    pub score: Vec<T>,
    pub multiplicity: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadingArrow<T> {
    pub variable: String,
    pub level: usize,
    pub vector: Vec<T>,
}

impl<T> LoadingArrow<T> {
    pub fn label(&self) -> String {
        format!("{}:{}", self.variable, self.level)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiplotData<T> {
    pub points: Vec<ScorePoint<T>>,
    pub loadings: Vec<LoadingArrow<T>>,
    /// Contribution ratios in `[0, 1]`, descending.
    pub ratios: Vec<T>,
    /// Fewer than two latent dimensions; missing axes are zero.
    pub padded: bool,
}

impl<T: Real> BiplotData<T> {
    pub fn dims(&self) -> usize {
        self.ratios.len()
    }
}

/// Factor scores for each distinct observation plus combined loadings.
pub fn biplot_data<T: Real>(
    schema: &VariableSchema,
    model: &FactorModel<T>,
    data: &FactorData<T>,
    cap: usize,
) -> Result<BiplotData<T>> {
    let pz = model.p_z();
    let dims = pz.max(2);
    let pad = |v: Vec<T>| -> Vec<T> {
        let mut v = v;
        v.resize(dims, T::zero());
        v
    };
    let (ratios, cl_g) = if pz > 0 {
        let rot = fix_rotation(model)?;
        (rot.ratios, model.g.clone())
    } else {
        (Vec::new(), model.g.clone())
    };
    let ev = FactorEvaluator::new(model, schema, cap)?;
    let mut index: BTreeMap<(Vec<bool>, Vec<u64>), usize> = BTreeMap::new();
    let mut points: Vec<ScorePoint<T>> = Vec::new();
    for i in 0..data.n() {
        let x = data.x_row(i);
        let key = (
            data.y[i].bits().to_vec(),
            x.map_or_else(Vec::new, |x| x.iter().map(|v| to_f64(*v).to_bits()).collect()),
        );
        if let Some(&p) = index.get(&key) {
            points[p].multiplicity += 1;
            continue;
        }
        let post = ev.posterior(x, &data.y[i])?;
        index.insert(key, points.len());
        points.push(ScorePoint {
            row_id: i + 1,
            score: pad(post.mean),
            multiplicity: 1,
        });
    }
    let cl = combined_loadings(schema, &cl_g)?;
    let loadings = cl
        .iter()
        .map(|(v, l, g)| LoadingArrow {
            variable: v.to_string(),
            level: l,
            vector: pad(g.to_vec()),
        })
        .collect();
    Ok(BiplotData {
        points,
        loadings,
        ratios: pad(ratios),
        padded: pz < 2,
    })
}

/// Axis label such as `PC1 (62.3%)`.
pub fn axis_label(k: usize, ratio: f64) -> String {
    format!("PC{} ({:.1}%)", k + 1, 100.0 * ratio)
}

/// Static SVG of the first two axes. Point area is proportional to
/// multiplicity; arrows are rescaled to the extent of the scores.
pub fn render_biplot_svg<T: Real>(data: &BiplotData<T>) -> String {
    const SIZE: f64 = 640.0;
    const PAD: f64 = 70.0;
    const R0: f64 = 3.0;
    let xy = |v: &[T]| (to_f64(v[0]), to_f64(v[1]));
    let score_ext = data
        .points
        .iter()
        .map(|p| {
            let (x, y) = xy(&p.score);
            x.abs().max(y.abs())
        })
        .fold(0.0, f64::max);
    let arrow_ext = data
        .loadings
        .iter()
        .map(|a| {
            let (x, y) = xy(&a.vector);
            x.abs().max(y.abs())
        })
        .fold(0.0, f64::max);
    let ext = if score_ext > 0.0 { score_ext } else { 1.0 };
    let arrow_scale = if arrow_ext > 0.0 { ext / arrow_ext } else { 1.0 };
    let half = (SIZE - 2.0 * PAD) / 2.0;
    let cx = SIZE / 2.0;
    let px = |x: f64| cx + x / ext * half;
    let py = |y: f64| cx - y / ext * half;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(
        s,
        r##"<defs><marker id="head" markerWidth="8" markerHeight="8" refX="7" refY="4" orient="auto"><path d="M0,0 L8,4 L0,8 z" fill="#c0392b"/></marker></defs>"##
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<line x1="{PAD}" y1="{cx}" x2="{}" y2="{cx}" stroke="#999" stroke-width="1"/>"##,
        SIZE - PAD
    );
    let _ = writeln!(
        s,
        r##"<line x1="{cx}" y1="{PAD}" x2="{cx}" y2="{}" stroke="#999" stroke-width="1"/>"##,
        SIZE - PAD
    );
    let _ = writeln!(
        s,
        r#"<text x="{cx}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        SIZE - PAD / 3.0,
        axis_label(0, to_f64(data.ratios[0]))
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{cx}" text-anchor="middle" font-family="sans-serif" font-size="14" transform="rotate(-90 {:.1} {cx})">{}</text>"#,
        PAD / 3.0,
        PAD / 3.0,
        axis_label(1, to_f64(data.ratios[1]))
    );
    for p in &data.points {
        let (x, y) = xy(&p.score);
        let r = R0 * (p.multiplicity as f64).sqrt();
        let _ = writeln!(
            s,
            r##"<circle cx="{:.3}" cy="{:.3}" r="{:.3}" fill="#2e86c1" fill-opacity="0.4" stroke="#1b4f72" stroke-width="0.5"/>"##,
            px(x),
            py(y),
            r
        );
    }
    for a in &data.loadings {
        let (x, y) = xy(&a.vector);
        let (x, y) = (x * arrow_scale, y * arrow_scale);
        let _ = writeln!(
            s,
            r##"<line x1="{cx:.3}" y1="{cx:.3}" x2="{:.3}" y2="{:.3}" stroke="#c0392b" stroke-width="1.5" marker-end="url(#head)"/>"##,
            px(x),
            py(y)
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="11" fill="#c0392b">{}</text>"##,
            px(x * 1.05),
            py(y * 1.05),
            xml_escape(&a.label())
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
