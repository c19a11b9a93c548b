use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;
use std::path::Path;

use grasscat::factor::{
    biplot_data, fit_factor_model, render_biplot_svg, select_dimension_bic, FactorData, FactorEvaluator,
    FactorFitConfig,
};
use grasscat::fit::{fit_grassmann, state_counts, FitConfig, FitReport, PositivityMode};
use grasscat::grassmann::{model_correlation, sigma_form_probability, Correlation};
use grasscat::oracle::cross_check;
use grasscat::schema::enumerate_allowed_states;
use grasscat::structured::assemble_lambda;
use grasscat::{
    DummyState, Error, FullTable64, GrassmannParams64, IndexPartition, Matrix64, MixedModel64, MixedPartition,
    Record, StateSampler, VariableSchema,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::io::{dummy_labels, emit, fmt_f64, load_data, load_schema, sibling, to_json, Caps, CsvOut};
use crate::model_file::{FactorParams, Model, ModelFile};
use crate::query::compile;
use crate::{
    FaCommand, FaDataArgs, FitArgs, MixedCommand, ModelOut, OracleCommand, Positivity, ProbArgs, SampleArgs,
    ValidateArgs,
};

fn positivity(p: Positivity) -> PositivityMode {
    match p {
        Positivity::Auto => PositivityMode::Auto,
        Positivity::Dominance => PositivityMode::Dominance,
        Positivity::Enumeration => PositivityMode::Enumeration,
    }
}

fn grassmann_of(schema: &VariableSchema, model: &Model) -> CliResult<GrassmannParams64> {
    match model {
        Model::Grassmann(sp) => Ok(assemble_lambda(schema, sp, false)?),
        _ => Err(CliError::invalid("expected a grassmann model")),
    }
}

fn correlation_rows(c: &Correlation<f64>) -> Vec<Vec<Option<f64>>> {
    c.matrix
        .to_rows()
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.is_finite().then_some(v)).collect())
        .collect()
}

fn correlation_csv(labels: &[String], corr: &[Vec<Option<f64>>]) -> CliResult<String> {
    let mut csv = CsvOut::new();
    csv.row(std::iter::once("dummy".to_string()).chain(labels.iter().cloned()))?;
    for (label, row) in labels.iter().zip(corr) {
        csv.row(std::iter::once(label.clone()).chain(row.iter().map(|v| v.map(fmt_f64).unwrap_or_default())))?;
    }
    Ok(csv.finish())
}

#[derive(Serialize)]
struct SweepRow {
    aux_dim: usize,
    nll: f64,
    converged: bool,
}

#[derive(Serialize)]
struct FitOutput {
    aux_dim: usize,
    sweep: Option<Vec<SweepRow>>,
    report: FitReport<f64>,
}

pub fn fit(a: &FitArgs) -> CliResult<()> {
    let caps = Caps::from_env()?;
    let schema = load_schema(&a.schema)?;
    let data = load_data(&a.data, &schema, &[])?;
    let counts = state_counts(&schema, &data.records)?;
    let base = FitConfig {
        max_iter: a.max_iter,
        grad_tol: a.tol,
        seed: a.seed,
        restarts: a.restarts,
        positivity: positivity(a.positivity),
        barrier_kappa: a.barrier_kappa,
        state_cap: caps.states,
        ..FitConfig::default()
    };
    let run = |aux: usize| {
        fit_grassmann::<f64>(
            &schema,
            &counts,
            &FitConfig {
                aux_dim: aux,
                ..base.clone()
            },
        )
    };
    let (aux_dim, sweep, report) = if a.latent_aux == "sweep" {
        if !(a.saturation_tol >= 0.0) {
            return Err(CliError::invalid("--saturation-tol must be nonnegative"));
        }
        let mut fits = (0..=schema.q()).map(run).collect::<Result<Vec<_>, _>>()?;
        let best = fits.iter().map(|f| f.nll).fold(f64::INFINITY, f64::min);
        let chosen = fits
            .iter()
            .position(|f| f.nll <= best + a.saturation_tol)
            .expect("the best fit is within tolerance");
        let rows = fits
            .iter()
            .enumerate()
            .map(|(aux_dim, f)| SweepRow {
                aux_dim,
                nll: f.nll,
                converged: f.converged,
            })
            .collect();
        (chosen, Some(rows), fits.swap_remove(chosen))
    } else {
        let aux: usize = a
            .latent_aux
            .parse()
            .map_err(|_| CliError::invalid(format!("--latent-aux: expected `sweep` or an integer, got `{}`", a.latent_aux)))?;
        (aux, None, run(aux)?)
    };

    let labels = dummy_labels(&schema);
    let corr_text = correlation_csv(&labels, &report.correlation)?;
    let output = FitOutput {
        aux_dim,
        sweep,
        report,
    };
    let report_value = serde_json::to_value(&output).expect("fit report serializes");
    let file = ModelFile::new(
        Some(schema),
        &Model::Grassmann(output.report.params.clone()),
        Some(report_value.clone()),
    );
    file.save(&a.out)?;
    let corr_path = a.correlation.clone().unwrap_or_else(|| sibling(&a.out, "correlation.csv"));
    emit(Some(&corr_path), &corr_text)?;
    emit(a.report.as_deref(), &to_json(&report_value))
}

#[derive(Serialize)]
struct Moments {
    labels: Vec<String>,
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    correlation: Vec<Vec<Option<f64>>>,
}

fn moments_of_table(labels: Vec<String>, table: &FullTable64) -> Moments {
    let cov = table.covariance();
    let corr = grasscat::grassmann::correlation_from_cov(&cov);
    Moments {
        labels,
        mean: table.mean(),
        covariance: cov.to_rows(),
        correlation: correlation_rows(&corr),
    }
}

/// Mean and covariance of the dummies under a distribution given on states.
fn state_moments(q: usize, states: &[DummyState], weights: &[f64]) -> (Vec<f64>, Matrix64) {
    let mut mean = vec![0.0; q];
    let mut second = Matrix64::zeros(q, q);
    for (s, &w) in states.iter().zip(weights) {
        let ones = s.ones();
        for &r in &ones {
            mean[r] += w;
            for &t in &ones {
                second[(r, t)] += w;
            }
        }
    }
    let cov = Matrix64::from_fn(q, q, |r, t| second[(r, t)] - mean[r] * mean[t]);
    (mean, cov)
}

pub fn moments(a: &ModelOut) -> CliResult<()> {
    let caps = Caps::from_env()?;
    let (file, model) = ModelFile::load(&a.model)?;
    let out = match &model {
        Model::Grassmann(_) => {
            let p = grassmann_of(file.schema(), &model)?;
            let (mean, cov) = p.moments();
            Moments {
                labels: dummy_labels(file.schema()),
                mean,
                covariance: cov.to_rows(),
                correlation: correlation_rows(&model_correlation(&p)),
            }
        }
        Model::Factor(fp) => {
            let schema = file.schema();
            let ev = FactorEvaluator::new(&fp.model, schema, caps.states)?;
            let mix = ev.mixture();
            let (mean, cov) = state_moments(schema.q(), &mix.states, &mix.weights);
            let corr = grasscat::grassmann::correlation_from_cov(&cov);
            Moments {
                labels: dummy_labels(schema),
                mean,
                covariance: cov.to_rows(),
                correlation: correlation_rows(&corr),
            }
        }
        Model::Mixed(mp) => {
            let m = MixedModel64::with_cap(mp.clone(), caps.dims)?;
            let table = FullTable64::from_probs(m.binary_marginal_table())?;
            moments_of_table((1..=m.q()).map(|i| format!("y{i}")).collect(), &table)
        }
    };
    emit(a.out.as_deref(), &to_json(&out))
}

fn split(pattern: &BTreeMap<usize, bool>) -> (Vec<usize>, Vec<bool>) {
    pattern.iter().map(|(&i, &v)| (i, v)).unzip()
}

fn merge(a: &BTreeMap<usize, bool>, b: &BTreeMap<usize, bool>) -> Option<BTreeMap<usize, bool>> {
    let mut out = a.clone();
    for (&i, &v) in b {
        if *out.entry(i).or_insert(v) != v {
            return None;
        }
    }
    Some(out)
}

fn grassmann_marginal(p: &GrassmannParams64, pattern: &BTreeMap<usize, bool>) -> CliResult<f64> {
    if pattern.is_empty() {
        return Ok(1.0);
    }
    let (t, v) = split(pattern);
    Ok(p.marginal_probability(&t, &v)?)
}

fn matches(s: &DummyState, pattern: &BTreeMap<usize, bool>) -> bool {
    pattern.iter().all(|(&i, &v)| s.bits()[i] == v)
}

/// Below this the conditioning event is treated as impossible.
const NULL_EVENT: f64 = 1e-300;

/// Whether some record of `schema` agrees with every fixed bit.
fn admissible(schema: &VariableSchema, pattern: &BTreeMap<usize, bool>) -> bool {
    schema.variables().iter().enumerate().all(|(j, var)| {
        let block = schema.block(j);
        (0..var.levels).any(|level| {
            let mut rec = vec![0; schema.len()];
            rec[j] = level;
            let bits = schema.encode(&Record(rec)).expect("level in range");
            block.clone().all(|i| pattern.get(&i).map_or(true, |&v| bits.bits()[i] == v))
        })
    })
}

pub fn prob(a: &ProbArgs) -> CliResult<()> {
    let caps = Caps::from_env()?;
    let (file, model) = ModelFile::load(&a.model)?;
    if matches!(model, Model::Mixed(_)) {
        return Err(CliError::invalid("prob needs a model with a schema (grassmann or factor)"));
    }
    let schema = file.schema();
    let query = compile(schema, &a.query)?;
    let given = compile(schema, &a.given)?
        .ok_or_else(|| CliError::Core(Error::ZeroProbability("conditioning pattern is contradictory".into())))?;
    if !admissible(schema, &given) {
        return Err(Error::ZeroProbability(format!("no record satisfies `{}`", a.given)).into());
    }
    let joint_pattern = query
        .as_ref()
        .and_then(|q| merge(q, &given))
        .filter(|pat| admissible(schema, pat));

    let (probability, joint, given_probability) = match &model {
        Model::Grassmann(_) => {
            let p = grassmann_of(schema, &model)?;
            let given_p = grassmann_marginal(&p, &given)?;
            if !(given_p > NULL_EVENT) {
                return Err(Error::ZeroProbability(format!("P({}) = {given_p:e}", a.given)).into());
            }
            let joint = match &joint_pattern {
                Some(pat) => grassmann_marginal(&p, pat)?,
                None => 0.0,
            };
            let probability = match (&joint_pattern, given.is_empty()) {
                (None, _) => 0.0,
                (Some(_), true) => joint,
                (Some(pat), false) => {
                    let s: Vec<usize> = (0..schema.q()).filter(|i| !given.contains_key(i)).collect();
                    let (t1, t0): (Vec<usize>, Vec<usize>) = {
                        let t1 = given.iter().filter(|e| *e.1).map(|e| *e.0).collect();
                        let t0 = given.iter().filter(|e| !*e.1).map(|e| *e.0).collect();
                        (t1, t0)
                    };
                    let free: BTreeMap<usize, bool> = pat
                        .iter()
                        .filter(|(i, _)| !given.contains_key(i))
                        .map(|(&i, &v)| (s.binary_search(&i).expect("free index"), v))
                        .collect();
                    if free.is_empty() {
                        1.0
                    } else {
                        let sc = p.conditional_sigma_form(&IndexPartition::new(s, t1, t0))?;
                        let (pos, vals) = split(&free);
                        sigma_form_probability(&sc.principal(&pos), &vals)
                    }
                }
            };
            (probability, joint, given_p)
        }
        Model::Factor(fp) => {
            let ev = FactorEvaluator::new(&fp.model, schema, caps.states)?;
            let mix = ev.mixture();
            let mass = |pat: &BTreeMap<usize, bool>| -> f64 {
                mix.states
                    .iter()
                    .zip(&mix.weights)
                    .filter(|(s, _)| matches(s, pat))
                    .map(|(_, &w)| w)
                    .sum()
            };
            let given_p = mass(&given);
            if !(given_p > NULL_EVENT) {
                return Err(Error::ZeroProbability(format!("P({}) = {given_p:e}", a.given)).into());
            }
            let joint = joint_pattern.as_ref().map_or(0.0, mass);
            (joint / given_p, joint, given_p)
        }
        Model::Mixed(_) => unreachable!("rejected above"),
    };
    let out = json!({
        "query": a.query,
        "given": a.given,
        "probability": probability,
        "joint": joint,
        "given_probability": given_probability,
    });
    emit(a.out.as_deref(), &to_json(&out))
}

pub fn sample(a: &SampleArgs) -> CliResult<()> {
    let caps = Caps::from_env()?;
    let (file, model) = ModelFile::load(&a.model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut csv = CsvOut::new();
    match &model {
        Model::Grassmann(_) => {
            let schema = file.schema();
            let p = grassmann_of(schema, &model)?;
            let sampler = StateSampler::from_grassmann(schema, &p, caps.states)?;
            csv.row(schema.variables().iter().map(|v| v.name.as_str()))?;
            for _ in 0..a.n {
                let rec = schema.decode(sampler.sample(&mut rng))?;
                csv.row(rec.0.iter().map(usize::to_string))?;
            }
        }
        Model::Factor(fp) => {
            let schema = file.schema();
            let ev = FactorEvaluator::new(&fp.model, schema, caps.states)?;
            csv.row(
                schema
                    .variables()
                    .iter()
                    .map(|v| v.name.clone())
                    .chain(fp.continuous.iter().cloned()),
            )?;
            for (y, x) in ev.sample(a.n, &mut rng)? {
                let rec = schema.decode(&y)?;
                csv.row(rec.0.iter().map(usize::to_string).chain(x.into_iter().map(fmt_f64)))?;
            }
        }
        Model::Mixed(mp) => {
            let m = MixedModel64::with_cap(mp.clone(), caps.dims)?;
            let (p, q) = (m.p(), m.q());
            let states: Vec<DummyState> = (0..1u64 << q).map(|mask| DummyState::from_mask(mask, q)).collect();
            let sampler = StateSampler::new(states, m.binary_marginal_table())?;
            let chol = mp.sigma.cholesky()?;
            csv.row((1..=q).map(|i| format!("y{i}")).chain((1..=p).map(|i| format!("x{i}"))))?;
            for _ in 0..a.n {
                let y = sampler.sample(&mut rng).clone();
                let u = mp.g.tr_vec(&y.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect::<Vec<_>>());
                let shift = mp.sigma.mat_vec(&u);
                let xi: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
                let noise = chol.factor().mat_vec(&xi);
                let x = (0..p).map(|i| mp.mu[i] + shift[i] + noise[i]);
                csv.row(
                    y.bits()
                        .iter()
                        .map(|&b| u8::from(b).to_string())
                        .chain(x.map(fmt_f64)),
                )?;
            }
        }
    }
    emit(a.out.as_deref(), &csv.finish())
}

/// `a..b`, `a..=b` and `a-b` are all inclusive.
fn parse_range(text: &str) -> CliResult<RangeInclusive<usize>> {
    let bad = || CliError::invalid(format!("latent range `{text}`: expected a..b"));
    let (lo, hi) = text
        .split_once("..=")
        .or_else(|| text.split_once(".."))
        .or_else(|| text.split_once('-'))
        .ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok(lo..=hi)
}

fn fa_inputs(d: &FaDataArgs) -> CliResult<(VariableSchema, FactorData<f64>, FactorFitConfig)> {
    let caps = Caps::from_env()?;
    let schema = load_schema(&d.schema)?;
    let ds = load_data(&d.data, &schema, &d.continuous)?;
    let data = FactorData::from_records(&schema, &ds.records, ds.continuous)?;
    let cfg = FactorFitConfig {
        max_iter: d.max_iter,
        grad_tol: d.tol,
        seed: d.seed,
        restarts: d.restarts,
        state_cap: caps.states,
        equal_norm: !d.no_equal_norm,
        ..FactorFitConfig::default()
    };
    Ok((schema, data, cfg))
}

fn save_factor(
    path: &Path,
    schema: VariableSchema,
    continuous: &[String],
    model: grasscat::factor::FactorModel<f64>,
    report: Value,
) -> CliResult<()> {
    let params = FactorParams {
        continuous: continuous.to_vec(),
        model,
    };
    ModelFile::new(Some(schema), &Model::Factor(params), Some(report)).save(path)
}

pub fn fa(c: &FaCommand) -> CliResult<()> {
    match c {
        FaCommand::Fit {
            data,
            latent_dim,
            bic_range,
            out,
            report,
        } => {
            let (schema, fd, cfg) = fa_inputs(data)?;
            let (fit, bic) = match (latent_dim, bic_range) {
                (Some(pz), _) => (fit_factor_model(&schema, &fd, *pz, &cfg)?, None),
                (None, Some(r)) => {
                    let sel = select_dimension_bic(&schema, &fd, parse_range(r)?, &cfg)?;
                    (sel.fit, Some(json!({"chosen": sel.chosen, "margin": sel.margin, "table": sel.table})))
                }
                (None, None) => return Err(CliError::invalid("pass --latent-dim or --bic-range")),
            };
            let value = json!({"report": fit.report, "bic": bic});
            save_factor(out, schema, &data.continuous, fit.model, value.clone())?;
            emit(report.as_deref(), &to_json(&value))
        }
        FaCommand::Bic {
            data,
            bic_range,
            out,
            report,
        } => {
            let (schema, fd, cfg) = fa_inputs(data)?;
            let sel = select_dimension_bic(&schema, &fd, parse_range(bic_range)?, &cfg)?;
            let value = json!({
                "chosen": sel.chosen,
                "margin": sel.margin,
                "table": sel.table,
                "report": sel.fit.report,
            });
            if let Some(out) = out {
                save_factor(out, schema, &data.continuous, sel.fit.model, value.clone())?;
            }
            emit(report.as_deref(), &to_json(&value))
        }
        FaCommand::Biplot {
            model,
            data,
            out_svg,
            out_scores,
            out_loadings,
        } => {
            let caps = Caps::from_env()?;
            let (file, m) = ModelFile::load(model)?;
            let Model::Factor(fp) = m else {
                return Err(CliError::invalid("fa biplot needs a factor model"));
            };
            let schema = file.schema();
            let ds = load_data(data, schema, &fp.continuous)?;
            let fd = FactorData::from_records(schema, &ds.records, ds.continuous)?;
            let bp = biplot_data(schema, &fp.model, &fd, caps.states)?;
            let pcs: Vec<String> = (1..=bp.dims()).map(|k| format!("pc{k}")).collect();

            let mut scores = CsvOut::new();
            scores.row(
                std::iter::once("row_id".to_string())
                    .chain(pcs.iter().cloned())
                    .chain(std::iter::once("multiplicity".to_string())),
            )?;
            for pt in &bp.points {
                scores.row(
                    std::iter::once(pt.row_id.to_string())
                        .chain(pt.score.iter().map(|&v| fmt_f64(v)))
                        .chain(std::iter::once(pt.multiplicity.to_string())),
                )?;
            }
            let mut loadings = CsvOut::new();
            loadings.row(["variable".to_string(), "level_label".to_string()].into_iter().chain(pcs.iter().cloned()))?;
            for arrow in &bp.loadings {
                loadings.row(
                    [arrow.variable.clone(), arrow.label()]
                        .into_iter()
                        .chain(arrow.vector.iter().map(|&v| fmt_f64(v))),
                )?;
            }
            emit(Some(out_scores), &scores.finish())?;
            emit(Some(out_loadings), &loadings.finish())?;
            emit(Some(out_svg), &render_biplot_svg(&bp))?;
            let summary = json!({
                "points": bp.points.len(),
                "loadings": bp.loadings.len(),
                "ratios": bp.ratios,
                "padded": bp.padded,
            });
            emit(None, &to_json(&summary))
        }
    }
}

fn complement(n: usize, a: &[usize], b: &[usize]) -> CliResult<Vec<usize>> {
    let taken: BTreeSet<usize> = a.iter().chain(b).copied().collect();
    if taken.len() != a.len() + b.len() || taken.iter().any(|&i| i >= n) {
        return Err(CliError::invalid(format!("index lists overlap or exceed {n}")));
    }
    Ok((0..n).filter(|i| !taken.contains(i)).collect())
}

pub fn mixed(c: &MixedCommand) -> CliResult<()> {
    let MixedCommand::Eval {
        model,
        x,
        y,
        given_x,
        given_y,
        marg_x,
        marg_y,
        out,
    } = c;
    let caps = Caps::from_env()?;
    let (_, m) = ModelFile::load(model)?;
    let Model::Mixed(mp) = m else {
        return Err(CliError::invalid("mixed eval needs a mixed model"));
    };
    let mm = MixedModel64::with_cap(mp, caps.dims)?;
    let (p, q) = (mm.p(), mm.q());
    if x.len() != p || y.len() != q {
        return Err(CliError::invalid(format!("--x needs {p} values and --y needs {q}")));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(CliError::invalid("--y entries must be 0 or 1"));
    }
    let yb: Vec<bool> = y.iter().map(|&v| v == 1).collect();
    let part = MixedPartition {
        j: complement(p, given_x, marg_x)?,
        l: marg_x.clone(),
        k: given_x.clone(),
        s: complement(q, given_y, marg_y)?,
        u: marg_y.clone(),
        t: given_y.clone(),
    };
    let pick_x = |idx: &[usize]| idx.iter().map(|&i| x[i]).collect::<Vec<_>>();
    let pick_y = |idx: &[usize]| idx.iter().map(|&i| yb[i]).collect::<Vec<_>>();
    let joint = mm.joint_density(x, &yb)?;
    let marginal = mm.marginal_density(&part, &pick_x(&part.k), &pick_y(&part.t))?;
    let conditional = mm.conditional_density(
        &part,
        &pick_x(&part.j),
        &pick_y(&part.s),
        &pick_x(&part.k),
        &pick_y(&part.t),
    )?;
    let binary = if part.k.len() == p && part.l.is_empty() && part.u.is_empty() {
        let t1: Vec<usize> = part.t.iter().copied().filter(|&i| yb[i]).collect();
        let t0: Vec<usize> = part.t.iter().copied().filter(|&i| !yb[i]).collect();
        let bc = mm.conditional_binary_given_continuous(x, &part.s, &t1, &t0)?;
        let prob = if part.s.is_empty() {
            1.0
        } else {
            bc.params.joint_probability(&pick_y(&part.s))?
        };
        Some(json!({
            "lambda": bc.params.lambda().to_rows(),
            "probability": prob,
            "p0": bc.p0,
        }))
    } else {
        None
    };
    let out_v = json!({
        "partition": part,
        "joint": joint,
        "marginal": marginal,
        "conditional": conditional,
        "binary_conditional": binary,
    });
    emit(out.as_deref(), &to_json(&out_v))
}

pub fn oracle(c: &OracleCommand) -> CliResult<()> {
    let OracleCommand::Check { model, tol, out } = c;
    let caps = Caps::from_env()?;
    let (file, m) = ModelFile::load(model)?;
    let (report, worst) = match &m {
        Model::Grassmann(_) => {
            let schema = file.schema();
            let p = grassmann_of(schema, &m)?;
            let cc = cross_check(&p)?;
            let p0 = p.check_p0(caps.dims)?;
            let allowed: BTreeSet<u64> = enumerate_allowed_states(schema, caps.states)?
                .iter()
                .map(DummyState::mask)
                .collect();
            let table = grasscat::brute_force_table(&p)?;
            let structural = (0..1usize << p.q())
                .filter(|&mask| !allowed.contains(&(mask as u64)))
                .map(|mask| table.probability(mask).abs())
                .fold(0.0, f64::max);
            let worst = cc.worst().max(structural).max((p0.sum - 1.0).abs());
            (
                json!({"cross_check": cc, "p0": p0, "structural_zero_max": structural}),
                worst,
            )
        }
        Model::Factor(fp) => {
            let schema = file.schema();
            let ev = FactorEvaluator::new(&fp.model, schema, caps.states)?;
            let sum = ev.mixture().sum();
            let bayes = bayes_identity_error(&ev)?;
            let worst = (sum - 1.0).abs().max(bayes);
            (json!({"weights_sum": sum, "bayes_identity": bayes}), worst)
        }
        Model::Mixed(mp) => {
            let mm = MixedModel64::with_cap(mp.clone(), caps.dims)?;
            let cc = cross_check(mm.grassmann())?;
            let table_sum: f64 = mm.binary_marginal_table().iter().sum();
            let worst = cc.worst().max((table_sum - 1.0).abs());
            (json!({"cross_check": cc, "binary_table_sum": table_sum}), worst)
        }
    };
    let passed = worst <= *tol;
    let out_v = json!({"kind": file.kind, "worst": worst, "tol": tol, "passed": passed, "details": report});
    emit(out.as_deref(), &to_json(&out_v))?;
    if passed {
        Ok(())
    } else {
        Err(Error::Numerical(format!("oracle discrepancy {worst:e} exceeds {tol:e}")).into())
    }
}

/// Largest relative gap in `p(x,y|z) p(z) = p(z|x,y) p(x,y)` over the
/// allowed states, at `x = μ_x` and two latent points per state.
fn bayes_identity_error(ev: &FactorEvaluator<'_, f64>) -> CliResult<f64> {
    let model = ev.model();
    let x = (model.p_x() > 0).then(|| model.mu_x.clone());
    let mut worst: f64 = 0.0;
    for y in &ev.mixture().states {
        let obs = ev.observed_density(x.as_deref(), y)?;
        if obs.structural_zero {
            continue;
        }
        let post = ev.posterior(x.as_deref(), y)?;
        let shifted: Vec<f64> = post.mean.iter().map(|m| m + 0.5).collect();
        for z in [post.mean.clone(), shifted] {
            let lhs = ev.conditional_density(x.as_deref(), y, &z)? * ev.prior_density(&z)?;
            let rhs = ev.posterior_density(&z, x.as_deref(), y)? * obs.value;
            worst = worst.max((lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE));
        }
    }
    Ok(worst)
}

pub fn validate(a: &ValidateArgs) -> CliResult<()> {
    let schema = load_schema(&a.schema)?;
    let mut out = json!({
        "variables": schema.len(),
        "q": schema.q(),
        "allowed_states": u64::try_from(schema.state_count()).map_or(Value::from(schema.state_count().to_string()), Value::from),
    });
    if let Some(path) = &a.data {
        let ds = load_data(path, &schema, &a.continuous)?;
        let counts = state_counts(&schema, &ds.records)?;
        let mut levels = serde_json::Map::new();
        let mut warnings = Vec::new();
        for (j, v) in schema.variables().iter().enumerate() {
            let mut c = vec![0u64; v.levels];
            for r in &ds.records {
                c[r.0[j]] += 1;
            }
            for (l, &n) in c.iter().enumerate() {
                if n == 0 {
                    warnings.push(format!("level {l} of `{}` never observed", v.name));
                }
            }
            levels.insert(v.name.clone(), json!(c));
        }
        out["rows"] = json!(ds.records.len());
        out["distinct_states"] = json!(counts.len());
        out["continuous"] = json!(ds.continuous_names);
        out["level_counts"] = Value::Object(levels);
        out["warnings"] = json!(warnings);
    }
    emit(None, &to_json(&out))
}
