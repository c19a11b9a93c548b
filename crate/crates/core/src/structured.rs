//! Structured parametrization `Λ − I = Ψ⁻¹ − I + W Ω Vᵀ`.
//!
//! `Ψ⁻¹ − I` is block diagonal with one quasi-diagonal block per variable:
//! identical rows `exp(b)ᵀ` for a categorical variable, and for an ordinal
//! variable a first row of cumulative products `exp(b₁), exp(b₁+b₂), …` over
//! a subdiagonal of `−1`. `W` repeats `wᵀ` on every row of a categorical
//! block and puts it on the first row only of an ordinal block. These shapes
//! make every disallowed co-occurrence minor vanish identically.
//!
//! Positivity can be certified by writing the middle factor
//! `[[Ψ⁻¹ − I + WVᵀ, −W], [−Vᵀ, I]]` as `B C⁻¹` with `B` row diagonally
//! dominant and `C` strictly so (both with nonnegative diagonals). That
//! certificate can only be met when every block has a single dummy: an
//! ordinal row `k ≥ 2` of `B` equals minus row `k − 1` of `C`, and identical
//! categorical rows cannot each dominate their own diagonal entry. See
//! [`certificate_feasible`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::GrassmannParams;
use crate::linalg::Matrix;
use crate::scalar::{cast, Real};
use crate::schema::{VariableKind, VariableSchema};

/// Lower clamp on `ω`; the upper clamp is `1 − OMEGA_EPS`.
pub const OMEGA_EPS: f64 = 1e-6;

/// Strict-dominance offset required of `C` rows.
pub const TAU_C: f64 = 1e-8;

/// Model parameters `(b, w, V, ω)` plus the auxiliary certificate matrix `C`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuredParams<T> {
    /// Per-variable bias vectors, one entry per dummy.
    pub b: Vec<Vec<T>>,
    /// Per-variable auxiliary loading vectors of length `a`.
    pub w: Vec<Vec<T>>,
    /// `q × a`.
    #[serde(rename = "V")]
    pub v: Matrix<T>,
    /// Diagonal of `Ω`, length `a`.
    pub omega: Vec<T>,
    /// `(q + a) × (q + a)`.
    #[serde(rename = "C")]
    pub c: Matrix<T>,
}

impl<T: Real> StructuredParams<T> {
    /// Independent model (`a = 0`, `C = I`) with the given biases.
    pub fn independent(schema: &VariableSchema, b: Vec<Vec<T>>) -> Result<Self> {
        let sp = StructuredParams {
            b,
            w: vec![Vec::new(); schema.len()],
            v: Matrix::zeros(schema.q(), 0),
            omega: Vec::new(),
            c: Matrix::identity(schema.q()),
        };
        sp.validate(schema)?;
        Ok(sp)
    }

    /// All-zero biases and loadings with `a` auxiliary dimensions.
    pub fn zeros(schema: &VariableSchema, a: usize) -> Self {
        StructuredParams {
            b: schema
                .variables()
                .iter()
                .map(|v| vec![T::zero(); v.dummies()])
                .collect(),
            w: vec![vec![T::zero(); a]; schema.len()],
            v: Matrix::zeros(schema.q(), a),
            omega: vec![cast(0.5); a],
            c: Matrix::identity(schema.q() + a),
        }
    }

    pub fn aux_dim(&self) -> usize {
        self.omega.len()
    }

    pub fn b_flat(&self) -> Vec<T> {
        self.b.iter().flatten().copied().collect()
    }

    pub fn validate(&self, schema: &VariableSchema) -> Result<()> {
        let q = schema.q();
        let a = self.aux_dim();
        if self.b.len() != schema.len() || self.w.len() != schema.len() {
            return Err(Error::Schema(format!(
                "expected {} per-variable b/w vectors, got {}/{}",
                schema.len(),
                self.b.len(),
                self.w.len()
            )));
        }
        for (i, v) in schema.variables().iter().enumerate() {
            if self.b[i].len() != v.dummies() {
                return Err(Error::Schema(format!(
                    "b for `{}` has length {}, expected {}",
                    v.name,
                    self.b[i].len(),
                    v.dummies()
                )));
            }
            if self.w[i].len() != a {
                return Err(Error::Schema(format!(
                    "w for `{}` has length {}, expected a = {a}",
                    v.name,
                    self.w[i].len()
                )));
            }
        }
        if self.v.rows() != q || self.v.cols() != a {
            return Err(Error::Schema(format!(
                "V is {}x{}, expected {q}x{a}",
                self.v.rows(),
                self.v.cols()
            )));
        }
        if self.c.rows() != q + a || self.c.cols() != q + a {
            return Err(Error::Schema(format!(
                "C is {}x{}, expected {}x{}",
                self.c.rows(),
                self.c.cols(),
                q + a,
                q + a
            )));
        }
        let lo = cast::<T>(OMEGA_EPS);
        let hi = T::one() - lo;
        if let Some(k) = self.omega.iter().position(|&w| !(w >= lo && w <= hi)) {
            return Err(Error::Parameter(format!(
                "ω[{k}] = {} outside [{OMEGA_EPS}, 1 − {OMEGA_EPS}]",
                self.omega[k]
            )));
        }
        Ok(())
    }
}

/// Quasi-diagonal block of `Ψ⁻¹ − I` for one variable.
pub fn quasi_diagonal_block<T: Real>(kind: VariableKind, b: &[T]) -> Matrix<T> {
    let n = b.len();
    match kind {
        VariableKind::Categorical => Matrix::from_fn(n, n, |_, j| b[j].exp()),
        VariableKind::Ordinal => {
            let mut m = Matrix::zeros(n, n);
            let mut cum = T::zero();
            for (j, &bj) in b.iter().enumerate() {
                cum += bj;
                m[(0, j)] = cum.exp();
            }
            for i in 1..n {
                m[(i, i - 1)] = -T::one();
            }
            m
        }
    }
}

/// Block-diagonal `Ψ⁻¹ − I`.
pub fn build_psi_inv_minus_identity<T: Real>(
    schema: &VariableSchema,
    b: &[Vec<T>],
) -> Result<Matrix<T>> {
    if b.len() != schema.len() {
        return Err(Error::Schema(format!(
            "{} b-vectors for {} variables",
            b.len(),
            schema.len()
        )));
    }
    let q = schema.q();
    let mut out = Matrix::zeros(q, q);
    for (j, v) in schema.variables().iter().enumerate() {
        if b[j].len() != v.dummies() {
            return Err(Error::Schema(format!(
                "b for `{}` has length {}, expected {}",
                v.name,
                b[j].len(),
                v.dummies()
            )));
        }
        let block = quasi_diagonal_block(v.kind, &b[j]);
        let r0 = schema.block(j).start;
        for i in 0..block.rows() {
            for k in 0..block.cols() {
                out[(r0 + i, r0 + k)] = block[(i, k)];
            }
        }
    }
    Ok(out)
}

/// `q × a` matrix `W` from per-variable vectors `w`.
pub fn build_w<T: Real>(schema: &VariableSchema, w: &[Vec<T>], a: usize) -> Result<Matrix<T>> {
    if w.len() != schema.len() {
        return Err(Error::Schema(format!(
            "{} w-vectors for {} variables",
            w.len(),
            schema.len()
        )));
    }
    let mut out = Matrix::zeros(schema.q(), a);
    for (j, v) in schema.variables().iter().enumerate() {
        if w[j].len() != a {
            return Err(Error::Schema(format!(
                "w for `{}` has length {}, expected {a}",
                v.name,
                w[j].len()
            )));
        }
        let block = schema.block(j);
        let rows = match v.kind {
            VariableKind::Categorical => block,
            VariableKind::Ordinal => block.start..block.start + 1,
        };
        for r in rows {
            out.row_mut(r).copy_from_slice(&w[j]);
        }
    }
    Ok(out)
}

/// `Ψ⁻¹ − I + W Ω Vᵀ` without any positivity check.
pub fn lambda_minus_identity<T: Real>(
    schema: &VariableSchema,
    sp: &StructuredParams<T>,
) -> Result<Matrix<T>> {
    sp.validate(schema)?;
    let psi = build_psi_inv_minus_identity(schema, &sp.b)?;
    let w = build_w(schema, &sp.w, sp.aux_dim())?;
    let wo = Matrix::from_fn(w.rows(), w.cols(), |i, k| w[(i, k)] * sp.omega[k]);
    Ok(&psi + &wo.matmul(&sp.v.transpose()))
}

/// Assemble the Grassmann parameter. With `check_certificate` the B/C
/// dominance certificate must hold.
pub fn assemble_lambda<T: Real>(
    schema: &VariableSchema,
    sp: &StructuredParams<T>,
    check_certificate: bool,
) -> Result<GrassmannParams<T>> {
    let lmi = lambda_minus_identity(schema, sp)?;
    if check_certificate {
        let rep = assemble_b(schema, sp)?;
        if let Some((row, margin)) = rep.first_violation() {
            return Err(Error::Positivity { margin, row });
        }
    }
    GrassmannParams::from_lambda(&lmi + &Matrix::identity(schema.q()))
}

/// Middle factor `[[Ψ⁻¹ − I + WVᵀ, −W], [−Vᵀ, I]]`.
pub fn middle_factor<T: Real>(schema: &VariableSchema, sp: &StructuredParams<T>) -> Result<Matrix<T>> {
    sp.validate(schema)?;
    let psi = build_psi_inv_minus_identity(schema, &sp.b)?;
    let w = build_w(schema, &sp.w, sp.aux_dim())?;
    let top = (&psi + &w.matmul(&sp.v.transpose())).hcat(&-&w);
    let bottom = (-&sp.v.transpose()).hcat(&Matrix::identity(sp.aux_dim()));
    Ok(top.vcat(&bottom))
}

/// Signed row dominance margins `M_kk − Σ_{l≠k} |M_kl|`.
pub fn row_margins<T: Real>(m: &Matrix<T>) -> Vec<T> {
    (0..m.rows())
        .map(|k| {
            let off: T = m
                .row(k)
                .iter()
                .enumerate()
                .filter(|&(l, _)| l != k)
                .map(|(_, x)| x.abs())
                .sum();
            m[(k, k)] - off
        })
        .collect()
}

/// `B` together with the dominance margins of `B` and `C`.
#[derive(Clone, Debug)]
pub struct DominanceReport<T> {
    pub b: Matrix<T>,
    pub b_margins: Vec<T>,
    pub c_margins: Vec<T>,
}

impl<T: Real> DominanceReport<T> {
    pub fn worst_b(&self) -> (usize, T) {
        worst(&self.b_margins)
    }

    pub fn worst_c(&self) -> (usize, T) {
        worst(&self.c_margins)
    }

    /// `B` margins must be `≥ 0` and `C` margins `≥ τ_C`.
    pub fn holds(&self) -> bool {
        self.first_violation().is_none()
    }

    /// First violated row (in the stacked `B` then `C` numbering) and its margin.
    pub fn first_violation(&self) -> Option<(usize, f64)> {
        let tol = T::tolerance(1e-12);
        let n = self.b_margins.len();
        if let Some(k) = self.b_margins.iter().position(|&m| m < -tol) {
            return Some((k, self.b_margins[k].to_f64().unwrap_or(f64::NAN)));
        }
        let tau = cast::<T>(TAU_C);
        self.c_margins
            .iter()
            .position(|&m| !(m >= tau))
            .map(|k| (n + k, self.c_margins[k].to_f64().unwrap_or(f64::NAN)))
    }
}

fn worst<T: Real>(m: &[T]) -> (usize, T) {
    m.iter()
        .copied()
        .enumerate()
        .fold((0, T::infinity()), |acc, (i, x)| if x < acc.1 { (i, x) } else { acc })
}

/// `B = [[Ψ⁻¹ − I + WVᵀ, −W], [−Vᵀ, I]] · C` with its row margins.
pub fn assemble_b<T: Real>(
    schema: &VariableSchema,
    sp: &StructuredParams<T>,
) -> Result<DominanceReport<T>> {
    let m = middle_factor(schema, sp)?;
    let b = m.matmul(&sp.c);
    Ok(DominanceReport {
        b_margins: row_margins(&b),
        c_margins: row_margins(&sp.c),
        b,
    })
}

/// Whether the B/C dominance certificate can hold at all for this schema:
/// only when every variable contributes a single dummy.
pub fn certificate_feasible(schema: &VariableSchema) -> bool {
    schema.variables().iter().all(|v| v.dummies() == 1)
}

/// Full `(q + a) × (q + a)` parameter `(Λ − I)_KK` over observed and
/// auxiliary dummies. Marginalizing the auxiliary block recovers
/// [`lambda_minus_identity`].
pub fn full_block_lambda_minus_identity<T: Real>(
    schema: &VariableSchema,
    sp: &StructuredParams<T>,
) -> Result<Matrix<T>> {
    let m = middle_factor(schema, sp)?;
    let q = schema.q();
    let d: Vec<T> = (0..q)
        .map(|_| T::one())
        .chain(sp.omega.iter().map(|&w| (T::one() / w - T::one()).sqrt()))
        .collect();
    let n = m.rows();
    Ok(Matrix::from_fn(n, n, |i, j| d[i] * m[(i, j)] * d[j]))
}

/// `exp(yᵀb) / (1 + Σ_l exp(b_l))`.
pub fn categorical_pmf<T: Real>(b: &[T], y: &[bool]) -> T {
    let num = b.iter().zip(y).filter(|(_, &on)| on).map(|(&x, _)| x).sum::<T>().exp();
    let den = T::one() + b.iter().map(|x| x.exp()).sum::<T>();
    num / den
}

/// `exp(yᵀb) / (1 + Σ_l Π_{m≤l} exp(b_m))`.
pub fn ordinal_pmf<T: Real>(b: &[T], y: &[bool]) -> T {
    let num = b.iter().zip(y).filter(|(_, &on)| on).map(|(&x, _)| x).sum::<T>().exp();
    let mut cum = T::zero();
    let mut den = T::one();
    for &x in b {
        cum += x;
        den += cum.exp();
    }
    num / den
}

/// Recover categorical biases from a single-variable `Λ`: `b_l = ln(Λ_ll − 1)`.
pub fn categorical_b_from_lambda<T: Real>(lambda: &Matrix<T>) -> Vec<T> {
    (0..lambda.rows()).map(|l| (lambda[(l, l)] - T::one()).ln()).collect()
}

/// Recover ordinal biases from a single-variable `Λ`: `Λ₁₁ − 1 = e^{b₁}`,
/// `Λ₁ₗ = e^{b₁+…+b_l}`.
pub fn ordinal_b_from_lambda<T: Real>(lambda: &Matrix<T>) -> Vec<T> {
    let n = lambda.rows();
    let cum: Vec<T> = (0..n)
        .map(|l| {
            let x = if l == 0 { lambda[(0, 0)] - T::one() } else { lambda[(0, l)] };
            x.ln()
        })
        .collect();
    (0..n)
        .map(|l| if l == 0 { cum[0] } else { cum[l] - cum[l - 1] })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{enumerate_allowed_states, VariableDecl, DEFAULT_STATE_CAP};

    fn schema(decls: Vec<VariableDecl>) -> VariableSchema {
        VariableSchema::new(decls).unwrap()
    }

    #[test]
    fn categorical_block_all_ones() {
        let s = schema(vec![VariableDecl::categorical("c", 4)]);
        let m = build_psi_inv_minus_identity(&s, &[vec![0.0; 3]]).unwrap();
        assert_eq!(m, Matrix::from_fn(3, 3, |_, _| 1.0));
    }

    #[test]
    fn ordinal_block_shape() {
        let s = schema(vec![VariableDecl::ordinal("o", 4)]);
        let m = build_psi_inv_minus_identity(&s, &[vec![0.0; 3]]).unwrap();
        let expect = Matrix::from_rows(vec![
            vec![1.0, 1.0, 1.0],
            vec![-1.0, 0.0, 0.0],
            vec![0.0, -1.0, 0.0],
        ])
        .unwrap();
        assert_eq!(m, expect);
        let m = build_psi_inv_minus_identity(&s, &[vec![0.1, 0.2, 0.3]]).unwrap();
        assert!((m[(0, 2)] - 0.6f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn mixed_block_layout() {
        let s = schema(vec![VariableDecl::categorical("c", 2), VariableDecl::ordinal("o", 3)]);
        let m = build_psi_inv_minus_identity(&s, &[vec![0.5], vec![0.0, 0.0]]).unwrap();
        let e = 0.5f64.exp();
        let expect = Matrix::from_rows(vec![
            vec![e, 0.0, 0.0],
            vec![0.0, 1.0, 1.0],
            vec![0.0, -1.0, 0.0],
        ])
        .unwrap();
        assert!(m.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn w_shapes() {
        let s = schema(vec![VariableDecl::categorical("c", 3)]);
        let w = build_w(&s, &[vec![1.0, 2.0]], 2).unwrap();
        assert_eq!(w.to_rows(), vec![vec![1.0, 2.0], vec![1.0, 2.0]]);
        let s = schema(vec![VariableDecl::ordinal("o", 3)]);
        let w = build_w(&s, &[vec![1.0, 2.0]], 2).unwrap();
        assert_eq!(w.to_rows(), vec![vec![1.0, 2.0], vec![0.0, 0.0]]);
        let w = build_w::<f64>(&s, &[vec![]], 0).unwrap();
        assert_eq!((w.rows(), w.cols()), (2, 0));
        assert!(build_w(&s, &[vec![1.0]], 2).is_err());
    }

    #[test]
    fn length_mismatch_is_schema_error() {
        let s = schema(vec![VariableDecl::categorical("c", 4)]);
        assert!(matches!(
            build_psi_inv_minus_identity(&s, &[vec![0.0; 2]]),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn uniform_single_variable_probabilities() {
        for decl in [VariableDecl::categorical("c", 4), VariableDecl::ordinal("o", 4)] {
            let s = schema(vec![decl]);
            let sp = StructuredParams::independent(&s, vec![vec![0.0f64; 3]]).unwrap();
            let p = assemble_lambda(&s, &sp, false).unwrap();
            for st in enumerate_allowed_states(&s, DEFAULT_STATE_CAP).unwrap() {
                let pr = p.joint_probability(st.bits()).unwrap();
                assert!((pr - 0.25).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn pmf_values() {
        let ln2 = 2f64.ln();
        assert!((categorical_pmf(&[0.0f64; 3], &[false, true, false]) - 0.25).abs() < 1e-15);
        assert!((categorical_pmf(&[ln2, 0.0, 0.0], &[true, false, false]) - 0.4).abs() < 1e-15);
        assert!((categorical_pmf(&[ln2, 0.0, 0.0], &[false; 3]) - 0.2).abs() < 1e-15);
        assert!((ordinal_pmf(&[0.0f64; 3], &[true, true, false]) - 0.25).abs() < 1e-15);
        assert!((ordinal_pmf(&[ln2, 0.0, -ln2], &[true, false, false]) - 1.0 / 3.0).abs() < 1e-15);
        assert!((ordinal_pmf(&[ln2, 0.0, -ln2], &[false; 3]) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn b_mapping_round_trip() {
        let b = vec![0.3f64, -0.7, 1.1];
        let s = schema(vec![VariableDecl::ordinal("o", 4)]);
        let sp = StructuredParams::independent(&s, vec![b.clone()]).unwrap();
        let l = assemble_lambda(&s, &sp, false).unwrap();
        let rb = ordinal_b_from_lambda(l.lambda());
        assert!(rb.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));

        let s = schema(vec![VariableDecl::categorical("c", 4)]);
        let sp = StructuredParams::independent(&s, vec![b.clone()]).unwrap();
        let l = assemble_lambda(&s, &sp, false).unwrap();
        let rb = categorical_b_from_lambda(l.lambda());
        assert!(rb.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn b_matrix_trivial_case() {
        // W = 0, V = 0, C = I: B = blockdiag(Ψ⁻¹ − I, I).
        let s = schema(vec![VariableDecl::categorical("x", 2), VariableDecl::categorical("y", 2)]);
        let mut sp = StructuredParams::zeros(&s, 1);
        sp.b = vec![vec![0.0], vec![1.0]];
        let rep = assemble_b(&s, &sp).unwrap();
        let e = 1f64.exp();
        let expect = Matrix::from_diag(&[1.0, e, 1.0]);
        assert!(rep.b.max_abs_diff(&expect) < 1e-15);
        assert_eq!(rep.b_margins, vec![1.0, e, 1.0]);
        assert_eq!(rep.c_margins, vec![1.0; 3]);
        assert!(rep.holds());
    }

    #[test]
    fn scalar_margins_by_hand() {
        // q = a = 1: M = [[e^b + w v, −w], [−v, 1]], C = [[2, 0.5], [0.25, 1]].
        let s = schema(vec![VariableDecl::categorical("x", 2)]);
        let sp = StructuredParams {
            b: vec![vec![0.0]],
            w: vec![vec![0.5]],
            v: Matrix::from_rows(vec![vec![0.4]]).unwrap(),
            omega: vec![0.5],
            c: Matrix::from_rows(vec![vec![2.0, 0.5], vec![0.25, 1.0]]).unwrap(),
        };
        let rep = assemble_b(&s, &sp).unwrap();
        let m11: f64 = 1.0 + 0.5 * 0.4;
        let b: [[f64; 2]; 2] = [
            [m11 * 2.0 - 0.5 * 0.25, m11 * 0.5 - 0.5],
            [-0.4 * 2.0 + 0.25, -0.4 * 0.5 + 1.0],
        ];
        assert!((rep.b_margins[0] - (b[0][0] - b[0][1].abs())).abs() < 1e-15);
        assert!((rep.b_margins[1] - (b[1][1] - b[1][0].abs())).abs() < 1e-15);
        assert_eq!(rep.c_margins, vec![1.5, 0.75]);
    }

    #[test]
    fn certificate_rejected_when_violated() {
        let s = schema(vec![VariableDecl::categorical("x", 2)]);
        let mut sp = StructuredParams::zeros(&s, 1);
        sp.w = vec![vec![5.0]];
        sp.v = Matrix::from_rows(vec![vec![-5.0]]).unwrap();
        assert!(matches!(
            assemble_lambda(&s, &sp, true),
            Err(Error::Positivity { .. })
        ));
    }

    #[test]
    fn feasibility_by_block_size() {
        assert!(certificate_feasible(&schema(vec![
            VariableDecl::categorical("a", 2),
            VariableDecl::ordinal("b", 2)
        ])));
        assert!(!certificate_feasible(&schema(vec![VariableDecl::ordinal("b", 3)])));
    }

    #[test]
    fn omega_bounds_enforced() {
        let s = schema(vec![VariableDecl::categorical("x", 2)]);
        let mut sp = StructuredParams::<f64>::zeros(&s, 1);
        sp.omega = vec![1.0];
        assert!(sp.validate(&s).is_err());
    }
}
