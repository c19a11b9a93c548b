//! Maximum-likelihood fitting of [`StructuredParams`].
//!
//! The likelihood is `Π_n det(Λ_{R₁R₁} − I) / det Λ`. Its gradient with
//! respect to `A = Λ − I` is
//! `N Σᵀ − Σ_s n_s embed((A_{R₁R₁})⁻ᵀ)` and is chained by hand through
//! `A = Ψ⁻¹ − I + W diag(ω) Vᵀ`.
//!
//! Positivity is kept in one of two ways. When every variable has a single
//! dummy the B/C dominance certificate is feasible and is enforced by a
//! squared-hinge penalty on its row margins with an increasing weight.
//! Otherwise every allowed state receives a small pseudo-count, which acts
//! as a logarithmic barrier on all allowed-state probabilities.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::{model_correlation, Correlation, GrassmannParams};
use crate::linalg::Matrix;
use crate::optim::{minimize, LbfgsConfig};
use crate::scalar::{cast, from_usize, to_f64, Real};
use crate::schema::{enumerate_allowed_states, DummyState, Record, VariableKind, VariableSchema, DEFAULT_STATE_CAP};
use crate::structured::{
    assemble_b, build_psi_inv_minus_identity, build_w, certificate_feasible, lambda_minus_identity,
    StructuredParams, OMEGA_EPS, TAU_C,
};

/// Pseudo-count added to every allowed state in enumeration mode.
pub const BARRIER_KAPPA: f64 = 1e-6;

/// Bound on initial `|b|` when a level is never observed.
pub const MAX_ABS_B: f64 = 30.0;

/// Target margin used inside the penalty so that the limit is feasible.
const PENALTY_MARGIN: f64 = 1e-6;

/// Multiset of observed dummy states.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateCounts {
    states: Vec<DummyState>,
    counts: Vec<u64>,
    n: u64,
}

impl StateCounts {
    /// Aggregate already-encoded states. Every state must be allowed.
    pub fn from_states<'a>(
        schema: &VariableSchema,
        states: impl IntoIterator<Item = &'a DummyState>,
    ) -> Result<Self> {
        let mut map: BTreeMap<Vec<bool>, u64> = BTreeMap::new();
        for (row, s) in states.into_iter().enumerate() {
            schema.check_state(s).map_err(|e| Error::Ingest {
                row: row + 1,
                source: Box::new(e),
            })?;
            *map.entry(s.bits().to_vec()).or_default() += 1;
        }
        Self::from_map(map)
    }

    fn from_map(map: BTreeMap<Vec<bool>, u64>) -> Result<Self> {
        let n: u64 = map.values().sum();
        if n == 0 {
            return Err(Error::NoData);
        }
        let (states, counts) = map.into_iter().map(|(k, v)| (DummyState::new(k), v)).unzip();
        Ok(StateCounts { states, counts, n })
    }

    pub fn states(&self) -> &[DummyState] {
        &self.states
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DummyState, u64)> {
        self.states.iter().zip(self.counts.iter().copied())
    }
}

/// Count encoded records. Row numbers in errors are 1-based.
pub fn state_counts(schema: &VariableSchema, rows: &[Record]) -> Result<StateCounts> {
    let mut map: BTreeMap<Vec<bool>, u64> = BTreeMap::new();
    for (i, rec) in rows.iter().enumerate() {
        let s = schema.encode(rec).map_err(|e| Error::Ingest {
            row: i + 1,
            source: Box::new(e),
        })?;
        *map.entry(s.bits().to_vec()).or_default() += 1;
    }
    StateCounts::from_map(map)
}

/// Empirical dummy means and covariance.
pub fn empirical_moments<T: Real>(counts: &StateCounts) -> (Vec<T>, Matrix<T>) {
    let q = counts.states.first().map_or(0, DummyState::len);
    let n = cast::<T>(counts.n as f64);
    let mut mean = vec![T::zero(); q];
    let mut second = Matrix::<T>::zeros(q, q);
    for (s, c) in counts.iter() {
        let c = cast::<T>(c as f64);
        let ones = s.ones();
        for &r in &ones {
            mean[r] += c;
            for &t in &ones {
                second[(r, t)] += c;
            }
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let cov = Matrix::from_fn(q, q, |r, t| second[(r, t)] / n - mean[r] * mean[t]);
    (mean, cov)
}

/// Empirical Pearson correlation of the dummies.
pub fn empirical_correlation<T: Real>(counts: &StateCounts) -> Correlation<T> {
    crate::grassmann::correlation_from_cov(&empirical_moments::<T>(counts).1)
}

/// Negative log-likelihood value; `valid = false` signals an observed state
/// with non-positive probability, in which case `value` is a large finite
/// sentinel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nll<T> {
    pub value: T,
    pub valid: bool,
}

fn invalid_nll<T: Real>() -> T {
    T::max_value() / cast(4.0)
}

/// Weighted states as (indices of set bits, weight).
type Terms<T> = Vec<(Vec<usize>, T)>;

fn terms_from_counts<T: Real>(counts: &StateCounts) -> Terms<T> {
    counts
        .iter()
        .map(|(s, c)| (s.ones(), cast::<T>(c as f64)))
        .collect()
}

/// `Σ_s w_s [ln det Λ − ln det A_{R₁}]` and optionally its gradient with
/// respect to `A`. `None` when `Λ` is singular or some weighted state has
/// non-positive probability.
fn nll_in_a<T: Real>(a: &Matrix<T>, terms: &Terms<T>, want_grad: bool) -> Option<(T, Option<Matrix<T>>)> {
    let q = a.rows();
    let lambda = a + &Matrix::identity(q);
    let lu = lambda.lu();
    if lu.is_singular() {
        return None;
    }
    let det = lu.det();
    if !(det > T::zero()) {
        return None;
    }
    let total: T = terms.iter().map(|t| t.1).sum();
    let mut value = total * det.ln();
    let mut grad = if want_grad {
        let sigma = lu.inverse().ok()?;
        Some(sigma.transpose().scale(total))
    } else {
        None
    };
    for (ones, w) in terms {
        if ones.is_empty() {
            continue;
        }
        let sub = a.principal(ones);
        let slu = sub.lu();
        let d = slu.det();
        if !(d > T::zero()) || slu.is_singular() {
            return None;
        }
        value -= *w * d.ln();
        if let Some(g) = grad.as_mut() {
            let inv = slu.inverse().ok()?;
            for (i, &r) in ones.iter().enumerate() {
                for (j, &c) in ones.iter().enumerate() {
                    g[(r, c)] -= *w * inv[(j, i)];
                }
            }
        }
    }
    value.is_finite().then_some((value, grad))
}

pub fn negative_log_likelihood<T: Real>(
    schema: &VariableSchema,
    sp: &StructuredParams<T>,
    counts: &StateCounts,
) -> Result<Nll<T>> {
    check_counts(schema, counts)?;
    let a = lambda_minus_identity(schema, sp)?;
    Ok(match nll_in_a(&a, &terms_from_counts(counts), false) {
        Some((v, _)) => Nll { value: v, valid: true },
        None => Nll {
            value: invalid_nll(),
            valid: false,
        },
    })
}

/// Row-by-row NLL; aggregates identical rows first so it matches
/// [`negative_log_likelihood`] bit for bit.
pub fn negative_log_likelihood_rows<T: Real>(
    schema: &VariableSchema,
    sp: &StructuredParams<T>,
    rows: &[Record],
) -> Result<Nll<T>> {
    negative_log_likelihood(schema, sp, &state_counts(schema, rows)?)
}

fn check_counts(schema: &VariableSchema, counts: &StateCounts) -> Result<()> {
    if let Some(s) = counts.states.first() {
        if s.len() != schema.q() {
            return Err(Error::dim(format!(
                "counts have q = {}, schema has q = {}",
                s.len(),
                schema.q()
            )));
        }
    }
    Ok(())
}

/// Gradient with respect to the natural parameters `(b, w, V, ω)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NllGradient<T> {
    pub b: Vec<Vec<T>>,
    pub w: Vec<Vec<T>>,
    pub v: Matrix<T>,
    pub omega: Vec<T>,
}

impl<T: Real> NllGradient<T> {
    pub fn flatten(&self) -> Vec<T> {
        let mut out: Vec<T> = self.b.iter().flatten().copied().collect();
        out.extend(self.w.iter().flatten().copied());
        out.extend_from_slice(self.v.as_slice());
        out.extend_from_slice(&self.omega);
        out
    }
}

/// Analytic NLL gradient. Fails with a numerical error when the NLL is
/// undefined at `sp`.
pub fn nll_gradient<T: Real>(
    schema: &VariableSchema,
    sp: &StructuredParams<T>,
    counts: &StateCounts,
) -> Result<NllGradient<T>> {
    check_counts(schema, counts)?;
    let a = lambda_minus_identity(schema, sp)?;
    let (_, g) = nll_in_a(&a, &terms_from_counts(counts), true).ok_or_else(|| {
        Error::Numerical("NLL undefined: an observed state has non-positive probability".into())
    })?;
    let g = g.expect("gradient requested");
    chain_structured(schema, sp, &g, &Matrix::zeros(0, 0), &Matrix::zeros(0, 0), &Matrix::zeros(0, 0))
}

/// Chain `∂/∂A` plus optional `∂/∂M` blocks (`M₁₁`, `M₁₂`, `M₂₁` of the
/// middle factor) into `(b, w, V, ω)`.
fn chain_structured<T: Real>(
    schema: &VariableSchema,
    sp: &StructuredParams<T>,
    g_a: &Matrix<T>,
    g_m11: &Matrix<T>,
    g_m12: &Matrix<T>,
    g_m21: &Matrix<T>,
) -> Result<NllGradient<T>> {
    let q = schema.q();
    let a = sp.aux_dim();
    let w_mat = build_w(schema, &sp.w, a)?;
    let v = &sp.v;
    let vo = Matrix::from_fn(q, a, |i, k| v[(i, k)] * sp.omega[k]);
    let wo = Matrix::from_fn(q, a, |i, k| w_mat[(i, k)] * sp.omega[k]);
    let mut g_p = g_a.clone();
    let mut g_w = g_a.matmul(&vo);
    let mut g_v = g_a.transpose().matmul(&wo);
    let wtgv = w_mat.transpose().matmul(g_a).matmul(v);
    let g_omega: Vec<T> = (0..a).map(|k| wtgv[(k, k)]).collect();
    if g_m11.rows() == q {
        g_p = &g_p + g_m11;
        g_w = &g_w + &g_m11.matmul(v);
        g_v = &g_v + &g_m11.transpose().matmul(&w_mat);
        g_w = &g_w - g_m12;
        g_v = &g_v - &g_m21.transpose();
    }

    let mut g_b = Vec::with_capacity(schema.len());
    let mut g_wv = Vec::with_capacity(schema.len());
    for (j, var) in schema.variables().iter().enumerate() {
        let block = schema.block(j);
        let r0 = block.start;
        let n = block.len();
        let b = &sp.b[j];
        match var.kind {
            VariableKind::Categorical => {
                g_b.push(
                    (0..n)
                        .map(|l| b[l].exp() * block.clone().map(|i| g_p[(i, r0 + l)]).sum::<T>())
                        .collect(),
                );
                g_wv.push(
                    (0..a)
                        .map(|k| block.clone().map(|i| g_w[(i, k)]).sum::<T>())
                        .collect(),
                );
            }
            VariableKind::Ordinal => {
                let mut cum = T::zero();
                let terms: Vec<T> = (0..n)
                    .map(|l| {
                        cum += b[l];
                        g_p[(r0, r0 + l)] * cum.exp()
                    })
                    .collect();
                let mut acc = T::zero();
                let mut gb = vec![T::zero(); n];
                for m in (0..n).rev() {
                    acc += terms[m];
                    gb[m] = acc;
                }
                g_b.push(gb);
                g_wv.push((0..a).map(|k| g_w[(r0, k)]).collect());
            }
        }
    }
    Ok(NllGradient {
        b: g_b,
        w: g_wv,
        v: g_v,
        omega: g_omega,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivityMode {
    /// Dominance when the schema admits it, enumeration otherwise.
    Auto,
    Dominance,
    Enumeration,
}

/// Penalty weight `μ` starts at `initial`, is multiplied by `factor` after
/// each outer round, and never exceeds `max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    pub initial: f64,
    pub factor: f64,
    pub max: f64,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        PenaltySchedule {
            initial: 1.0,
            factor: 10.0,
            max: 1e10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub penalty: PenaltySchedule,
    pub seed: u64,
    /// Auxiliary dimension `a`.
    pub aux_dim: usize,
    pub restarts: usize,
    pub positivity: PositivityMode,
    /// Standard deviation of the initial `w` and `V` entries.
    pub init_scale: f64,
    pub state_cap: usize,
    /// Optimize the dominance factor `C`; when false `C = I`.
    pub free_c: bool,
    /// Pseudo-count added to every allowed state in enumeration mode.
    pub barrier_kappa: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iter: 1000,
            grad_tol: 1e-6,
            penalty: PenaltySchedule::default(),
            seed: 0,
            aux_dim: 0,
            restarts: 1,
            positivity: PositivityMode::Auto,
            init_scale: 0.1,
            state_cap: DEFAULT_STATE_CAP,
            free_c: true,
            barrier_kappa: BARRIER_KAPPA,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.into()));
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol must be positive");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if !(self.penalty.initial > 0.0 && self.penalty.factor > 1.0 && self.penalty.max >= self.penalty.initial) {
            return bad("penalty schedule needs initial > 0, factor > 1, max ≥ initial");
        }
        if !(self.init_scale >= 0.0) {
            return bad("init_scale must be nonnegative");
        }
        if !(self.barrier_kappa > 0.0 && self.barrier_kappa < 0.5) {
            return bad("barrier_kappa must lie in (0, 0.5)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub seed: u64,
    pub nll: f64,
    pub iterations: usize,
    pub converged: bool,
    pub certificate_satisfied: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport<T> {
    pub nll: T,
    pub n: u64,
    pub iterations: usize,
    pub converged: bool,
    pub positivity: PositivityMode,
    /// Smallest `B` row margin `B_kk − Σ_{l≠k} |B_kl|`.
    pub worst_b_margin: f64,
    /// Smallest `C` row margin.
    pub worst_c_margin: f64,
    /// Smallest probability over allowed states (enumeration certificate).
    pub min_allowed_probability: Option<f64>,
    pub certificate_satisfied: bool,
    pub gradient_norm: f64,
    pub params: StructuredParams<T>,
    pub mean: Vec<T>,
    pub correlation: Vec<Vec<Option<T>>>,
    pub empirical_mean: Vec<T>,
    pub empirical_correlation: Vec<Vec<Option<T>>>,
    pub max_mean_error: f64,
    pub restarts: Vec<RestartSummary>,
    pub warnings: Vec<String>,
}

fn correlation_table<T: Real>(c: &Correlation<T>) -> Vec<Vec<Option<T>>> {
    (0..c.matrix.rows())
        .map(|r| {
            (0..c.matrix.cols())
                .map(|s| {
                    let v = c.matrix[(r, s)];
                    v.is_finite().then_some(v)
                })
                .collect()
        })
        .collect()
}

/// Per-variable level frequencies turned into biases of the independent
/// model. Levels never observed are smoothed by half a count and the
/// resulting `|b|` is capped at [`MAX_ABS_B`].
pub fn independent_b<T: Real>(
    schema: &VariableSchema,
    counts: &StateCounts,
) -> Result<(Vec<Vec<T>>, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut level_counts: Vec<Vec<f64>> = schema
        .variables()
        .iter()
        .map(|v| vec![0.0; v.levels])
        .collect();
    for (s, c) in counts.iter() {
        let rec = schema.decode(s)?;
        for (j, &l) in rec.0.iter().enumerate() {
            level_counts[j][l] += c as f64;
        }
    }
    let mut out = Vec::with_capacity(schema.len());
    for (j, var) in schema.variables().iter().enumerate() {
        let lc = &mut level_counts[j];
        if lc.iter().any(|&c| c == 0.0) {
            warnings.push(format!(
                "variable `{}` has unobserved levels; smoothing its initial biases",
                var.name
            ));
            for c in lc.iter_mut() {
                *c += 0.5;
            }
        }
        let logit: Vec<f64> = (1..var.levels).map(|l| (lc[l] / lc[0]).ln()).collect();
        let mut b: Vec<f64> = match var.kind {
            VariableKind::Categorical => logit,
            VariableKind::Ordinal => (0..logit.len())
                .map(|l| if l == 0 { logit[0] } else { logit[l] - logit[l - 1] })
                .collect(),
        };
        if b.iter().any(|x| x.abs() > MAX_ABS_B) {
            warnings.push(format!("variable `{}`: initial |b| capped at {MAX_ABS_B}", var.name));
            for x in &mut b {
                *x = x.clamp(-MAX_ABS_B, MAX_ABS_B);
            }
        }
        out.push(b.into_iter().map(cast).collect());
    }
    Ok((out, warnings))
}

/// Flat parameter layout `[b | w | V | ρ | C?]` with `ω = ε + (1 − 2ε) σ(ρ)`.
struct Layout {
    q: usize,
    nvars: usize,
    a: usize,
    with_c: bool,
    dummies: Vec<usize>,
}

impl Layout {
    fn new(schema: &VariableSchema, a: usize, with_c: bool) -> Self {
        Layout {
            q: schema.q(),
            nvars: schema.len(),
            a,
            with_c,
            dummies: schema.variables().iter().map(|v| v.dummies()).collect(),
        }
    }

    fn len(&self) -> usize {
        let base = self.q + self.nvars * self.a + self.q * self.a + self.a;
        if self.with_c {
            base + (self.q + self.a).pow(2)
        } else {
            base
        }
    }

    fn pack<T: Real>(&self, sp: &StructuredParams<T>) -> Vec<T> {
        let mut x: Vec<T> = sp.b.iter().flatten().copied().collect();
        x.extend(sp.w.iter().flatten().copied());
        x.extend_from_slice(sp.v.as_slice());
        x.extend(sp.omega.iter().map(|&w| omega_to_rho(w)));
        if self.with_c {
            x.extend_from_slice(sp.c.as_slice());
        }
        debug_assert_eq!(x.len(), self.len());
        x
    }

    fn unpack<T: Real>(&self, x: &[T]) -> StructuredParams<T> {
        let mut it = x.iter().copied();
        let b = self
            .dummies
            .iter()
            .map(|&n| it.by_ref().take(n).collect())
            .collect();
        let w = (0..self.nvars).map(|_| it.by_ref().take(self.a).collect()).collect();
        let v = Matrix::from_row_major(self.q, self.a, it.by_ref().take(self.q * self.a).collect())
            .expect("layout");
        let omega = it.by_ref().take(self.a).map(rho_to_omega).collect();
        let n = self.q + self.a;
        let c = if self.with_c {
            Matrix::from_row_major(n, n, it.by_ref().take(n * n).collect()).expect("layout")
        } else {
            Matrix::identity(n)
        };
        StructuredParams { b, w, v, omega, c }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn rho_to_omega<T: Real>(rho: T) -> T {
    let eps = cast::<T>(OMEGA_EPS);
    eps + (T::one() - eps - eps) * sigmoid(rho)
}

fn omega_to_rho<T: Real>(omega: T) -> T {
    let eps = cast::<T>(OMEGA_EPS);
    let s = (omega - eps) / (T::one() - eps - eps);
    (s / (T::one() - s)).ln()
}

struct Objective<'a, T> {
    schema: &'a VariableSchema,
    layout: Layout,
    terms: Terms<T>,
    /// Data term multiplier, `1/N`, so tolerances are per observation.
    scale: T,
    mu: T,
    dominance: bool,
}

impl<T: Real> Objective<'_, T> {
    fn eval(&self, x: &[T]) -> Option<(T, Vec<T>)> {
        let sp = self.layout.unpack(x);
        let a = lambda_minus_identity(self.schema, &sp).ok()?;
        let (value, g_a) = nll_in_a(&a, &self.terms, true)?;
        let mut value = value * self.scale;
        let g_a = g_a?.scale(self.scale);
        let (g_m11, g_m12, g_m21, g_c) = if self.dominance {
            let (pen, gm, gc) = self.penalty(&sp)?;
            value += pen;
            let q = self.layout.q;
            let n = q + self.layout.a;
            let all_q: Vec<usize> = (0..q).collect();
            let aux: Vec<usize> = (q..n).collect();
            (
                gm.select(&all_q, &all_q),
                gm.select(&all_q, &aux),
                gm.select(&aux, &all_q),
                Some(gc),
            )
        } else {
            (Matrix::zeros(0, 0), Matrix::zeros(0, 0), Matrix::zeros(0, 0), None)
        };
        let g = chain_structured(self.schema, &sp, &g_a, &g_m11, &g_m12, &g_m21).ok()?;
        let mut out: Vec<T> = g.b.iter().flatten().copied().collect();
        out.extend(g.w.iter().flatten().copied());
        out.extend_from_slice(g.v.as_slice());
        let eps = cast::<T>(OMEGA_EPS);
        let rho_start = self.layout.q + self.layout.nvars * self.layout.a + self.layout.q * self.layout.a;
        for (k, &gw) in g.omega.iter().enumerate() {
            let s = sigmoid(x[rho_start + k]);
            out.push(gw * (T::one() - eps - eps) * s * (T::one() - s));
        }
        if let (Some(gc), true) = (g_c, self.layout.with_c) {
            out.extend_from_slice(gc.as_slice());
        }
        Some((value, out))
    }

    /// `μ Σ_k max(0, δ − m_k)²` over `B` rows and `C` rows, with gradients
    /// with respect to `M` and `C`.
    fn penalty(&self, sp: &StructuredParams<T>) -> Option<(T, Matrix<T>, Matrix<T>)> {
        let rep = assemble_b(self.schema, sp).ok()?;
        let m = crate::structured::middle_factor(self.schema, sp).ok()?;
        let delta = cast::<T>(PENALTY_MARGIN);
        let two_mu = self.mu + self.mu;
        let n = m.rows();
        let mut value = T::zero();
        let mut g_b = Matrix::zeros(n, n);
        let mut g_c = Matrix::zeros(n, n);
        for (k, &mk) in rep.b_margins.iter().enumerate() {
            let h = delta - mk;
            if h > T::zero() {
                value += self.mu * h * h;
                add_margin_grad(&mut g_b, &rep.b, k, -two_mu * h);
            }
        }
        for (k, &mk) in rep.c_margins.iter().enumerate() {
            let h = delta.max(cast(TAU_C)) - mk;
            if h > T::zero() {
                value += self.mu * h * h;
                add_margin_grad(&mut g_c, &sp.c, k, -two_mu * h);
            }
        }
        let g_m = g_b.matmul(&sp.c.transpose());
        let g_c = &g_c + &m.transpose().matmul(&g_b);
        Some((value, g_m, g_c))
    }
}

/// Add `coef · ∂m_k/∂X` where `m_k = X_kk − Σ_{l≠k} |X_kl|`.
fn add_margin_grad<T: Real>(g: &mut Matrix<T>, x: &Matrix<T>, k: usize, coef: T) {
    for l in 0..x.cols() {
        let d = if l == k {
            T::one()
        } else {
            let v = x[(k, l)];
            if v > T::zero() {
                -T::one()
            } else if v < T::zero() {
                T::one()
            } else {
                T::zero()
            }
        };
        g[(k, l)] += coef * d;
    }
}

struct RestartOutcome<T> {
    sp: StructuredParams<T>,
    nll: T,
    iterations: usize,
    converged: bool,
    certificate: bool,
    grad_norm: f64,
}

/// Fit by penalized quasi-Newton descent, keeping the best of
/// `config.restarts` random initializations.
pub fn fit_grassmann<T: Real>(
    schema: &VariableSchema,
    counts: &StateCounts,
    config: &FitConfig,
) -> Result<FitReport<T>> {
    config.validate()?;
    check_counts(schema, counts)?;
    if schema.q() == 0 {
        return Err(Error::Schema("cannot fit a schema without dummies".into()));
    }
    let mode = match config.positivity {
        PositivityMode::Auto if certificate_feasible(schema) => PositivityMode::Dominance,
        PositivityMode::Auto => PositivityMode::Enumeration,
        PositivityMode::Dominance if !certificate_feasible(schema) => {
            return Err(Error::Schema(
                "the dominance certificate cannot hold when a variable has more than one dummy".into(),
            ))
        }
        m => m,
    };
    let (b0, mut warnings) = independent_b::<T>(schema, counts)?;
    let a = config.aux_dim;
    let allowed = if mode == PositivityMode::Enumeration {
        enumerate_allowed_states(schema, config.state_cap)?
    } else {
        Vec::new()
    };
    let mut terms: Terms<T> = terms_from_counts(counts);
    if mode == PositivityMode::Enumeration {
        let kappa = cast::<T>(config.barrier_kappa);
        let mut index: BTreeMap<Vec<usize>, usize> =
            terms.iter().enumerate().map(|(i, t)| (t.0.clone(), i)).collect();
        for s in &allowed {
            let ones = s.ones();
            match index.get(&ones) {
                Some(&i) => terms[i].1 += kappa,
                None => {
                    index.insert(ones.clone(), terms.len());
                    terms.push((ones, kappa));
                }
            }
        }
    }
    let dominance = mode == PositivityMode::Dominance;
    let layout = Layout::new(schema, a, dominance && config.free_c);
    let mut objective = Objective {
        schema,
        layout,
        terms,
        scale: T::one() / cast::<T>(counts.n() as f64),
        mu: cast(config.penalty.initial),
        dominance,
    };

    let mut outcomes = Vec::with_capacity(config.restarts);
    let mut summaries = Vec::with_capacity(config.restarts);
    for r in 0..config.restarts {
        let seed = config.seed.wrapping_add(r as u64);
        let out = run_restart(schema, &mut objective, &b0, config, seed)?;
        summaries.push(RestartSummary {
            seed,
            nll: to_f64(out.nll),
            iterations: out.iterations,
            converged: out.converged,
            certificate_satisfied: out.certificate,
        });
        outcomes.push(out);
    }
    let best = pick_best(&outcomes);
    let best = outcomes.swap_remove(best);

    let grassmann = crate::structured::assemble_lambda(schema, &best.sp, false)?;
    let (mean, _) = grassmann.moments();
    let (emp_mean, _) = empirical_moments::<T>(counts);
    let max_mean_error = mean
        .iter()
        .zip(&emp_mean)
        .map(|(&m, &e)| to_f64((m - e).abs()))
        .fold(0.0, f64::max);
    let rep = assemble_b(schema, &best.sp)?;
    let min_allowed = if mode == PositivityMode::Enumeration {
        Some(min_probability(&grassmann, &allowed)?)
    } else {
        None
    };
    if !best.converged {
        warnings.push("optimizer stopped before reaching the gradient tolerance".into());
    }
    if !best.certificate {
        warnings.push("positivity certificate not satisfied at exit".into());
    }
    Ok(FitReport {
        nll: best.nll,
        n: counts.n(),
        iterations: best.iterations,
        converged: best.converged && best.certificate,
        positivity: mode,
        worst_b_margin: to_f64(rep.worst_b().1),
        worst_c_margin: to_f64(rep.worst_c().1),
        min_allowed_probability: min_allowed,
        certificate_satisfied: best.certificate,
        gradient_norm: best.grad_norm,
        correlation: correlation_table(&model_correlation(&grassmann)),
        empirical_correlation: correlation_table(&empirical_correlation::<T>(counts)),
        params: best.sp,
        mean,
        empirical_mean: emp_mean,
        max_mean_error,
        restarts: summaries,
        warnings,
    })
}

fn min_probability<T: Real>(p: &GrassmannParams<T>, states: &[DummyState]) -> Result<f64> {
    let mut m = f64::INFINITY;
    for s in states {
        m = m.min(to_f64(p.joint_probability(s.bits())?));
    }
    Ok(m)
}

/// Lowest NLL among certificate-satisfying runs (all runs if none satisfy),
/// ties within 1e-9 relative broken by the smallest parameter norm.
fn pick_best<T: Real>(outs: &[RestartOutcome<T>]) -> usize {
    let any_ok = outs.iter().any(|o| o.certificate);
    let norm = |o: &RestartOutcome<T>| -> f64 {
        let sp = &o.sp;
        sp.b.iter()
            .flatten()
            .chain(sp.w.iter().flatten())
            .chain(sp.v.as_slice())
            .chain(&sp.omega)
            .map(|&x| to_f64(x * x))
            .sum()
    };
    let mut best: Option<usize> = None;
    for (i, o) in outs.iter().enumerate() {
        if any_ok && !o.certificate {
            continue;
        }
        best = Some(match best {
            None => i,
            Some(j) => {
                let (a, b) = (to_f64(o.nll), to_f64(outs[j].nll));
                let tol = 1e-9 * a.abs().max(b.abs()).max(1.0);
                if a < b - tol || ((a - b).abs() <= tol && norm(o) < norm(&outs[j])) {
                    i
                } else {
                    j
                }
            }
        });
    }
    best.unwrap_or(0)
}

fn run_restart<T: Real>(
    schema: &VariableSchema,
    obj: &mut Objective<'_, T>,
    b0: &[Vec<T>],
    config: &FitConfig,
    seed: u64,
) -> Result<RestartOutcome<T>> {
    let a = obj.layout.a;
    let q = schema.q();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, config.init_scale.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Parameter(format!("init scale: {e}")))?;
    let w_raw: Vec<Vec<f64>> = (0..schema.len())
        .map(|_| (0..a).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let v_raw: Vec<f64> = (0..q * a).map(|_| normal.sample(&mut rng)).collect();
    obj.mu = cast(config.penalty.initial);

    // Shrink the random loadings until the start is inside the domain.
    let mut shrink = 1.0;
    let mut x0 = None;
    for _ in 0..40 {
        let sp = StructuredParams {
            b: b0.to_vec(),
            w: w_raw
                .iter()
                .map(|r| r.iter().map(|&x| cast::<T>(x * shrink)).collect())
                .collect(),
            v: Matrix::from_row_major(q, a, v_raw.iter().map(|&x| cast::<T>(x * shrink)).collect())?,
            omega: vec![cast(0.5); a],
            c: Matrix::identity(q + a),
        };
        let x = obj.layout.pack(&sp);
        if obj.eval(&x).is_some() {
            x0 = Some(x);
            break;
        }
        shrink *= 0.5;
    }
    let mut x = x0.ok_or_else(|| Error::Numerical("no feasible starting point".into()))?;

    let lb = LbfgsConfig {
        max_iter: config.max_iter,
        grad_tol: config.grad_tol,
        ..LbfgsConfig::default()
    };
    let mut iterations = 0;
    loop {
        let res = minimize(x, &lb, |z| obj.eval(z))?;
        iterations += res.iterations;
        x = res.x.clone();
        let sp = obj.layout.unpack(&x);
        let certificate = certificate_holds(schema, &sp, obj.dominance)?;
        let at_max = to_f64(obj.mu) >= config.penalty.max;
        if !obj.dominance || (certificate && res.converged()) || at_max {
            let nll = match nll_in_a(&lambda_minus_identity(schema, &sp)?, &obj.terms, false) {
                Some((v, _)) => v,
                None => invalid_nll(),
            };
            // Report the pure data NLL, without barrier pseudo-counts.
            let data_nll = data_nll(schema, &sp, &obj.terms, obj.dominance, nll, config.barrier_kappa)?;
            return Ok(RestartOutcome {
                sp,
                nll: data_nll,
                iterations,
                converged: res.converged(),
                certificate,
                grad_norm: to_f64(res.grad_norm()),
            });
        }
        obj.mu = cast::<T>((to_f64(obj.mu) * config.penalty.factor).min(config.penalty.max));
    }
}

/// NLL over observed counts only: the terms minus the barrier pseudo-counts.
fn data_nll<T: Real>(
    schema: &VariableSchema,
    sp: &StructuredParams<T>,
    terms: &Terms<T>,
    dominance: bool,
    with_barrier: T,
    kappa: f64,
) -> Result<T> {
    if dominance {
        return Ok(with_barrier);
    }
    let kappa = cast::<T>(kappa);
    let half = cast::<T>(0.5);
    // Observed counts are integers, so anything at or above κ + ½ is data.
    let observed: Terms<T> = terms
        .iter()
        .filter(|t| t.1 >= kappa + half)
        .map(|t| (t.0.clone(), t.1 - kappa))
        .collect();
    let a = lambda_minus_identity(schema, sp)?;
    Ok(nll_in_a(&a, &observed, false).map_or_else(invalid_nll, |v| v.0))
}

fn certificate_holds<T: Real>(schema: &VariableSchema, sp: &StructuredParams<T>, dominance: bool) -> Result<bool> {
    if dominance {
        let rep = assemble_b(schema, sp)?;
        let tol = cast::<T>(1e-10);
        Ok(rep.b_margins.iter().all(|&m| m >= -tol) && rep.c_margins.iter().all(|&m| m >= cast(TAU_C)))
    } else {
        // The barrier keeps every allowed state strictly positive; verify.
        let p = crate::structured::assemble_lambda(schema, sp, false)?;
        let states = enumerate_allowed_states(schema, DEFAULT_STATE_CAP.max(1 << schema.q().min(20)))?;
        Ok(min_probability(&p, &states)? >= -1e-12)
    }
}

/// Independent-model biases expressed as the `Ψ⁻¹ − I` block diagonal;
/// convenience for callers comparing against the fit's starting point.
pub fn independent_psi<T: Real>(schema: &VariableSchema, counts: &StateCounts) -> Result<Matrix<T>> {
    let (b, _) = independent_b(schema, counts)?;
    build_psi_inv_minus_identity(schema, &b)
}

/// Natural parameter count `(b, w, V, ω)` for a given `a`.
pub fn parameter_count(schema: &VariableSchema, a: usize) -> usize {
    schema.q() + schema.len() * a + schema.q() * a + a
}

/// `N` as a scalar.
pub fn total<T: Real>(counts: &StateCounts) -> T {
    from_usize(counts.n() as usize)
}
