//! Brute-force reference computations.
//!
//! Everything here is deliberately naive and shares no numerical code with
//! the core routines: determinants come from memoized cofactor expansion
//! (up to 8×8) or fully pivoted elimination, and marginals/conditionals are
//! plain sums and ratios over an explicit table of all `2^q` states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::{GrassmannParams, IndexPartition};
use crate::linalg::Matrix;
use crate::scalar::{cast, Real};
use crate::schema::{DummyState, VariableSchema};

/// Largest `q` the oracle will tabulate.
pub const ORACLE_DIM_CAP: usize = 20;

/// Largest matrix handled by cofactor expansion.
const COFACTOR_MAX: usize = 8;

/// Conditioning events at or below this probability are treated as null.
const NULL_EVENT: f64 = 1e-13;

/// Conditioning events lighter than this are too ill-conditioned for an
/// absolute comparison at the cross-check tolerance.
pub const CONDITIONING_FLOOR: f64 = 1e-8;

/// Probabilities of all `2^q` states, indexed by bit mask (bit `r` ↔ dummy `r`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullTable<T> {
    q: usize,
    probs: Vec<T>,
}

/// Determinant by the oracle's own routines.
pub fn oracle_det<T: Real>(m: &Matrix<T>) -> T {
    let n = m.rows();
    if n <= COFACTOR_MAX {
        cofactor_det(m)
    } else {
        full_pivot_det(m)
    }
}

/// Laplace expansion along successive rows, memoized on the set of columns
/// still available.
fn cofactor_det<T: Real>(m: &Matrix<T>) -> T {
    let n = m.rows();
    if n == 0 {
        return T::one();
    }
    // memo[cols] = det of rows (n − |cols|)..n restricted to `cols`.
    let full = (1usize << n) - 1;
    let mut memo = vec![T::zero(); 1 << n];
    memo[0] = T::one();
    for cols in 1..=full {
        let k = cols.count_ones() as usize;
        let row = n - k;
        let mut acc = T::zero();
        let mut sign = T::one();
        for j in 0..n {
            if cols >> j & 1 == 1 {
                acc += sign * m[(row, j)] * memo[cols & !(1 << j)];
                sign = -sign;
            }
        }
        memo[cols] = acc;
    }
    memo[full]
}

/// Gaussian elimination with complete pivoting.
fn full_pivot_det<T: Real>(m: &Matrix<T>) -> T {
    let n = m.rows();
    let mut a: Vec<Vec<T>> = m.to_rows();
    let mut det = T::one();
    for k in 0..n {
        let (mut pi, mut pj, mut best) = (k, k, T::zero());
        for (i, row) in a.iter().enumerate().skip(k) {
            for (j, &x) in row.iter().enumerate().skip(k) {
                if x.abs() > best {
                    best = x.abs();
                    pi = i;
                    pj = j;
                }
            }
        }
        if best == T::zero() {
            return T::zero();
        }
        if pi != k {
            a.swap(pi, k);
            det = -det;
        }
        if pj != k {
            for row in a.iter_mut() {
                row.swap(pj, k);
            }
            det = -det;
        }
        let piv = a[k][k];
        det *= piv;
        for i in k + 1..n {
            let f = a[i][k] / piv;
            if f != T::zero() {
                for j in k..n {
                    let v = a[k][j];
                    a[i][j] -= f * v;
                }
            }
        }
    }
    det
}

/// Tabulate `det(Λ_{R₁R₁} − I) / det Λ` over every subset `R₁`.
pub fn brute_force_table<T: Real>(p: &GrassmannParams<T>) -> Result<FullTable<T>> {
    brute_force_from_lambda(p.lambda())
}

/// As [`brute_force_table`], starting from a raw `Λ`.
pub fn brute_force_from_lambda<T: Real>(lambda: &Matrix<T>) -> Result<FullTable<T>> {
    let q = lambda.rows();
    if q > ORACLE_DIM_CAP {
        return Err(Error::EnumerationTooLarge {
            count: 1u128 << q.min(127),
            cap: 1u128 << ORACLE_DIM_CAP,
        });
    }
    let det = oracle_det(lambda);
    if det == T::zero() {
        return Err(Error::Singular("Λ".into()));
    }
    let probs = (0..1usize << q)
        .map(|mask| {
            let ones: Vec<usize> = (0..q).filter(|&r| mask >> r & 1 == 1).collect();
            let sub = Matrix::from_fn(ones.len(), ones.len(), |i, j| {
                let x = lambda[(ones[i], ones[j])];
                if i == j {
                    x - T::one()
                } else {
                    x
                }
            });
            oracle_det(&sub) / det
        })
        .collect();
    Ok(FullTable { q, probs })
}

impl<T: Real> FullTable<T> {
    /// Wrap explicit probabilities (length must be a power of two).
    pub fn from_probs(probs: Vec<T>) -> Result<Self> {
        let n = probs.len();
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::dim(format!("{n} probabilities is not a power of two")));
        }
        Ok(FullTable {
            q: n.trailing_zeros() as usize,
            probs,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn probability(&self, mask: usize) -> T {
        self.probs[mask]
    }

    pub fn probability_of(&self, y: &[bool]) -> T {
        let mask = y
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .fold(0usize, |m, (r, _)| m | 1 << r);
        self.probs[mask]
    }

    pub fn sum(&self) -> T {
        self.probs.iter().copied().sum()
    }

    /// Smallest entry and its mask.
    pub fn min(&self) -> (usize, T) {
        self.probs
            .iter()
            .copied()
            .enumerate()
            .fold((0, T::infinity()), |acc, (i, p)| if p < acc.1 { (i, p) } else { acc })
    }

    /// Allowed states of `schema` with their probabilities, in mask order.
    pub fn restricted(&self, schema: &VariableSchema) -> Result<Vec<(DummyState, T)>> {
        if schema.q() != self.q {
            return Err(Error::dim("schema does not match table"));
        }
        Ok((0..self.probs.len())
            .map(|m| DummyState::from_mask(m as u64, self.q))
            .filter(|s| schema.is_allowed(s))
            .map(|s| {
                let p = self.probs[s.mask() as usize];
                (s, p)
            })
            .collect())
    }

    pub fn mean(&self) -> Vec<T> {
        (0..self.q)
            .map(|r| {
                self.probs
                    .iter()
                    .enumerate()
                    .filter(|(m, _)| m >> r & 1 == 1)
                    .map(|(_, &p)| p)
                    .sum()
            })
            .collect()
    }

    /// `E[y_r y_s] − E[y_r] E[y_s]`.
    pub fn covariance(&self) -> Matrix<T> {
        let mean = self.mean();
        Matrix::from_fn(self.q, self.q, |r, s| {
            let both: T = self
                .probs
                .iter()
                .enumerate()
                .filter(|(m, _)| m >> r & 1 == 1 && m >> s & 1 == 1)
                .map(|(_, &p)| p)
                .sum();
            both - mean[r] * mean[s]
        })
    }

    /// Pearson correlation; entries involving a zero-variance dummy are NaN.
    pub fn correlation(&self) -> Matrix<T> {
        let cov = self.covariance();
        Matrix::from_fn(self.q, self.q, |r, s| {
            let v = cov[(r, r)] * cov[(s, s)];
            if v <= T::zero() {
                T::nan()
            } else if r == s {
                T::one()
            } else {
                cov[(r, s)] / v.sqrt()
            }
        })
    }

    /// Marginal table over `t`; bit `i` of the result indexes `t[i]`.
    pub fn marginal(&self, t: &[usize]) -> Result<FullTable<T>> {
        check_distinct(t, self.q)?;
        let mut out = vec![T::zero(); 1 << t.len()];
        for (m, &p) in self.probs.iter().enumerate() {
            out[project(m, t)] += p;
        }
        Ok(FullTable { q: t.len(), probs: out })
    }

    /// Conditional table of `y_S` given `y_T₁ = 1`, `y_T₀ = 0`; every index
    /// must belong to exactly one of the three sets.
    pub fn conditional(&self, part: &IndexPartition) -> Result<FullTable<T>> {
        part.validate(self.q)?;
        let t1 = mask_of(&part.t1);
        let t0 = mask_of(&part.t0);
        let mut out = vec![T::zero(); 1 << part.s.len()];
        let mut event = T::zero();
        for (m, &p) in self.probs.iter().enumerate() {
            if m & t1 == t1 && m & t0 == 0 {
                out[project(m, &part.s)] += p;
                event += p;
            }
        }
        if event <= cast(NULL_EVENT) {
            return Err(Error::ZeroProbability(format!(
                "conditioning event has probability {event:e}"
            )));
        }
        for p in &mut out {
            *p /= event;
        }
        Ok(FullTable {
            q: part.s.len(),
            probs: out,
        })
    }
}

fn mask_of(idx: &[usize]) -> usize {
    idx.iter().fold(0, |m, &i| m | 1 << i)
}

fn project(m: usize, t: &[usize]) -> usize {
    t.iter()
        .enumerate()
        .fold(0, |acc, (i, &r)| acc | ((m >> r & 1) << i))
}

fn check_distinct(t: &[usize], q: usize) -> Result<()> {
    let mut seen = vec![false; q];
    for &i in t {
        if i >= q || seen[i] {
            return Err(Error::dim(format!("bad index {i} for q = {q}")));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Conditionals whose `‖Σ‖∞‖Λ‖∞` exceeds this are compared through `Σ` only.
const DEGENERATE_CONDITION: f64 = 1e6;

fn condition<T: Real>(p: &GrassmannParams<T>) -> f64 {
    let norm = |m: &Matrix<T>| {
        (0..m.rows())
            .map(|i| m.row(i).iter().map(|x| x.abs().to_f64().unwrap_or(f64::INFINITY)).sum::<f64>())
            .fold(0.0, f64::max)
    };
    norm(p.sigma()) * norm(p.lambda())
}

/// Largest discrepancies between the core formulas and the oracle.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub q: usize,
    pub joint: f64,
    pub mean: f64,
    pub covariance: f64,
    pub marginal: f64,
    pub conditional: f64,
    /// Conditioning patterns skipped because the event has probability zero.
    pub null_events: usize,
    /// Patterns skipped because the event mass is below [`CONDITIONING_FLOOR`].
    pub low_mass_events: usize,
    /// Patterns whose conditional `Σ` is singular or nearly so (a free index
    /// is determined by the event); only `Σ`-form probabilities are compared.
    pub degenerate_conditionals: usize,
    pub patterns: usize,
}

impl CrossCheck {
    pub fn worst(&self) -> f64 {
        [self.joint, self.mean, self.covariance, self.marginal, self.conditional]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Compare joint, moments, every marginal and every `(S, T₁, T₀)`
/// conditioning pattern against the oracle. Exhaustive up to `q = 6`;
/// above that marginals and conditionals use index sets of size ≤ 2.
pub fn cross_check<T: Real>(p: &GrassmannParams<T>) -> Result<CrossCheck> {
    let q = p.q();
    let table = brute_force_table(p)?;
    let f = |x: T| x.to_f64().unwrap_or(f64::NAN);
    let mut rep = CrossCheck {
        q,
        ..CrossCheck::default()
    };

    for m in 0..1usize << q {
        let y: Vec<bool> = (0..q).map(|r| m >> r & 1 == 1).collect();
        let d = f(p.joint_probability(&y)? - table.probability(m)).abs();
        rep.joint = rep.joint.max(d);
    }
    let (mean, cov) = p.moments();
    let (om, oc) = (table.mean(), table.covariance());
    for r in 0..q {
        rep.mean = rep.mean.max(f(mean[r] - om[r]).abs());
        for s in 0..q {
            rep.covariance = rep.covariance.max(f(cov[(r, s)] - oc[(r, s)]).abs());
        }
    }

    let subsets: Vec<Vec<usize>> = if q <= 6 {
        (0..1usize << q)
            .map(|m| (0..q).filter(|&r| m >> r & 1 == 1).collect())
            .collect()
    } else {
        let mut v: Vec<Vec<usize>> = (0..q).map(|r| vec![r]).collect();
        for r in 0..q {
            for s in r + 1..q {
                v.push(vec![r, s]);
            }
        }
        v
    };

    for t in &subsets {
        let om = table.marginal(t)?;
        let mp = p.marginal_params(t)?;
        for m in 0..1usize << t.len() {
            let y: Vec<bool> = (0..t.len()).map(|i| m >> i & 1 == 1).collect();
            let d = f(mp.joint_probability(&y)? - om.probability(m)).abs();
            rep.marginal = rep.marginal.max(d);
        }
    }

    // Every assignment of the indices outside `s` to T₁/T₀.
    for s in &subsets {
        let rest: Vec<usize> = (0..q).filter(|r| !s.contains(r)).collect();
        for tm in 0..1usize << rest.len() {
            let t1: Vec<usize> = rest
                .iter()
                .enumerate()
                .filter(|&(i, _)| tm >> i & 1 == 1)
                .map(|(_, &r)| r)
                .collect();
            let t0: Vec<usize> = rest.iter().copied().filter(|r| !t1.contains(r)).collect();
            let part = IndexPartition::new(s.clone(), t1, t0);
            rep.patterns += 1;
            let oc = match table.conditional(&part) {
                Ok(t) => t,
                Err(Error::ZeroProbability(_)) => {
                    rep.null_events += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let event = table
                .probs()
                .iter()
                .enumerate()
                .filter(|&(m, _)| part.t1.iter().all(|&r| m >> r & 1 == 1) && part.t0.iter().all(|&r| m >> r & 1 == 0))
                .map(|(_, &x)| f(x))
                .sum::<f64>();
            if event < CONDITIONING_FLOOR {
                rep.low_mass_events += 1;
                continue;
            }
            for m in 0..1usize << s.len() {
                let y: Vec<bool> = (0..s.len()).map(|i| m >> i & 1 == 1).collect();
                let d = match p.conditional_probability(&part, &y) {
                    Ok(v) => f(v - oc.probability(m)).abs(),
                    // The oracle found positive mass where the core sees a
                    // singular pivot; record the full conditional as a miss.
                    Err(Error::ZeroProbability(_)) => 1.0,
                    Err(e) => return Err(e),
                };
                rep.conditional = rep.conditional.max(d);
            }
            match p.conditional_params(&part) {
                Ok(cp) if condition(&cp) > DEGENERATE_CONDITION => rep.degenerate_conditionals += 1,
                Ok(cp) => {
                    for m in 0..1usize << s.len() {
                        let y: Vec<bool> = (0..s.len()).map(|i| m >> i & 1 == 1).collect();
                        let d = f(cp.joint_probability(&y)? - oc.probability(m)).abs();
                        rep.conditional = rep.conditional.max(d);
                    }
                }
                Err(Error::Singular(_)) => rep.degenerate_conditionals += 1,
                Err(Error::ZeroProbability(_)) | Err(Error::Numerical(_)) => rep.conditional = rep.conditional.max(1.0),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(rep)
}

/// Gauss–Hermite rule for `∫ e^{−t²} f(t) dt` with `n` nodes, by Newton
/// iteration on the orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let m = (n + 1) / 2;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    (nodes, weights)
}

/// `E[g(x)]` for `x ~ N(mean, cov)` by tensor-product Gauss–Hermite with
/// `n` nodes per axis. Intended for dimension ≤ 3.
pub fn gaussian_expectation(
    mean: &[f64],
    cov: &Matrix<f64>,
    n: usize,
    mut g: impl FnMut(&[f64]) -> f64,
) -> Result<f64> {
    let p = mean.len();
    if cov.rows() != p || cov.cols() != p {
        return Err(Error::dim("quadrature covariance shape"));
    }
    // Plain lower Cholesky; kept local so the oracle stays self-contained.
    let mut l = Matrix::zeros(p, p);
    for i in 0..p {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum();
            if i == j {
                let d = cov[(i, i)] - s;
                if d <= 0.0 {
                    return Err(Error::Parameter("quadrature covariance not SPD".into()));
                }
                l[(i, i)] = d.sqrt();
            } else {
                l[(i, j)] = (cov[(i, j)] - s) / l[(j, j)];
            }
        }
    }
    let (t, w) = gauss_hermite(n);
    let norm = std::f64::consts::PI.powf(-(p as f64) / 2.0);
    let mut idx = vec![0usize; p];
    let mut x = vec![0.0; p];
    let mut total = 0.0;
    loop {
        let mut wt = norm;
        for i in 0..p {
            wt *= w[idx[i]];
            x[i] = mean[i];
        }
        for i in 0..p {
            for j in 0..=i {
                x[i] += l[(i, j)] * std::f64::consts::SQRT_2 * t[idx[j]];
            }
        }
        total += wt * g(&x);
        let mut k = 0;
        loop {
            if k == p {
                return Ok(total);
            }
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
