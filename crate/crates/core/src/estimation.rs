//! Maximum-likelihood fitting of per-trace `(mu, sigma, xi, phi)` under the
//! null model, approximate standard errors, and the frozen parameter context
//! used for likelihood ratios.
//!
//! The optimizer works in unconstrained coordinates per trace: `ln mu`,
//! `ln sigma`, `logit xi`, and stick-breaking logits for the fractions.
//! Parameters that end up at the boundary (`xi = 0`, `phi_i = 0`) are fixed
//! there and dropped from the coordinate vector.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::engine::{CaseEvidence, CaseModel};
use crate::error::{Error, Result};
use crate::evidence::{CaseBundle, FitConfig, Sex};
use crate::optim::{bfgs, central_gradient, nelder_mead, numeric_hessian, BfgsOptions, NelderMeadOptions};
use crate::peak::{GammaParams, ModelParams};

/// Values below this are tried at exactly zero after the interior search.
const SNAP_BELOW: f64 = 1e-3;
const DEFAULT_SIGMA: f64 = 0.6;
const DEFAULT_XI: f64 = 0.05;
const GRADIENT_STEP: f64 = 1e-5;
const HESSIAN_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Jittered restarts in addition to the default start.
    pub restarts: usize,
    pub seed: u64,
    /// Budget of objective evaluations per start for the simplex search.
    pub max_evaluations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions::from(&FitConfig::default())
    }
}

impl From<&FitConfig> for FitOptions {
    fn from(c: &FitConfig) -> Self {
        FitOptions {
            restarts: c.restarts,
            seed: c.seed,
            max_evaluations: c.max_evaluations,
        }
    }
}

/// Standard errors of one trace's parameters; `None` where unavailable.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamErrors {
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub xi: Option<f64>,
    pub phi: Vec<Option<f64>>,
}

impl ParamErrors {
    fn unavailable(n: usize) -> Self {
        ParamErrors {
            mu: None,
            sigma: None,
            xi: None,
            phi: vec![None; n],
        }
    }
}

/// Which parameters of a trace sit exactly on the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    pub xi: bool,
    pub phi: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub trace_ids: Vec<String>,
    pub contributor_ids: Vec<String>,
    pub params: Vec<ModelParams>,
    pub log_likelihood: f64,
    pub standard_errors: Vec<ParamErrors>,
    pub boundary: Vec<Boundary>,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    /// Norm of the central-difference gradient over the free coordinates.
    pub gradient_norm: f64,
}

impl FitResult {
    /// Gradient tolerance `1e-4 * max(1, |logL|)`.
    pub fn gradient_tolerance(&self) -> f64 {
        1e-4 * self.log_likelihood.abs().max(1.0)
    }

    pub fn gamma_params(&self) -> Vec<GammaParams> {
        self.params.iter().map(ModelParams::gamma_form).collect()
    }

    /// `trace,parameter,estimate,se` with `NA` for unavailable errors.
    /// Estimates are written with full precision so the file reloads to
    /// identical values.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Validation(format!("csv write failed: {e}"));
        w.write_record(["trace", "parameter", "estimate", "se"]).map_err(err)?;
        let fmt_se = |s: Option<f64>| s.map(|v| v.to_string()).unwrap_or_else(|| "NA".to_string());
        for (t, p) in self.params.iter().enumerate() {
            let se = &self.standard_errors[t];
            let id = &self.trace_ids[t];
            w.write_record([id.as_str(), "mu", &p.mu.to_string(), &fmt_se(se.mu)]).map_err(err)?;
            w.write_record([id.as_str(), "sigma", &p.sigma.to_string(), &fmt_se(se.sigma)]).map_err(err)?;
            w.write_record([id.as_str(), "xi", &p.xi.to_string(), &fmt_se(se.xi)]).map_err(err)?;
            for (i, c) in self.contributor_ids.iter().enumerate() {
                w.write_record([id.as_str(), &format!("phi_{c}"), &p.phi[i].to_string(), &fmt_se(se.phi[i])])
                    .map_err(err)?;
            }
        }
        w.flush().map_err(|e| Error::io("<fit output>", e))?;
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct ParamRow {
    trace: String,
    parameter: String,
    estimate: f64,
}

/// Reads parameters written by [`FitResult::write_csv`].
pub fn read_params_csv<R: std::io::Read>(
    reader: R,
    path: &std::path::Path,
    trace_ids: &[String],
    contributor_ids: &[String],
) -> Result<Vec<ModelParams>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut slots: Vec<(Option<f64>, Option<f64>, Option<f64>, Vec<Option<f64>>)> =
        vec![(None, None, None, vec![None; contributor_ids.len()]); trace_ids.len()];
    for (i, row) in rdr.deserialize::<ParamRow>().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let t = trace_ids
            .iter()
            .position(|x| *x == row.trace)
            .ok_or_else(|| Error::parse(path, line, format!("unknown trace {}", row.trace)))?;
        let slot = &mut slots[t];
        match row.parameter.as_str() {
            "mu" => slot.0 = Some(row.estimate),
            "sigma" => slot.1 = Some(row.estimate),
            "xi" => slot.2 = Some(row.estimate),
            other => {
                let c = other
                    .strip_prefix("phi_")
                    .and_then(|id| contributor_ids.iter().position(|x| x == id))
                    .ok_or_else(|| Error::parse(path, line, format!("unknown parameter {other}")))?;
                slot.3[c] = Some(row.estimate);
            }
        }
    }
    slots
        .into_iter()
        .zip(trace_ids)
        .map(|((mu, sigma, xi, phi), id)| {
            let missing = || Error::Validation(format!("{}: incomplete parameters for trace {id}", path.display()));
            let p = ModelParams {
                mu: mu.ok_or_else(missing)?,
                sigma: sigma.ok_or_else(missing)?,
                xi: xi.ok_or_else(missing)?,
                phi: phi.into_iter().map(|v| v.ok_or_else(missing)).collect::<Result<_>>()?,
            };
            p.validate()?;
            Ok(p)
        })
        .collect()
}

fn sigmoid(y: f64) -> f64 {
    1.0 / (1.0 + (-y).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Free coordinates of each trace.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    n_contrib: usize,
    /// Per trace: whether xi is free, and which fractions are positive.
    xi_free: Vec<bool>,
    active: Vec<Vec<usize>>,
}

impl Layout {
    fn full(n_traces: usize, n_contrib: usize) -> Self {
        Layout {
            n_contrib,
            xi_free: vec![true; n_traces],
            active: vec![(0..n_contrib).collect(); n_traces],
        }
    }

    fn from_boundary(b: &[Boundary]) -> Self {
        Layout {
            n_contrib: b[0].phi.len(),
            xi_free: b.iter().map(|t| !t.xi).collect(),
            active: b
                .iter()
                .map(|t| t.phi.iter().enumerate().filter(|(_, z)| !**z).map(|(i, _)| i).collect())
                .collect(),
        }
    }

    fn boundary(&self) -> Vec<Boundary> {
        self.xi_free
            .iter()
            .zip(&self.active)
            .map(|(xf, act)| Boundary {
                xi: !xf,
                phi: (0..self.n_contrib).map(|i| !act.contains(&i)).collect(),
            })
            .collect()
    }

    fn trace_dim(&self, t: usize) -> usize {
        2 + self.xi_free[t] as usize + self.active[t].len().saturating_sub(1)
    }

    fn dim(&self) -> usize {
        (0..self.xi_free.len()).map(|t| self.trace_dim(t)).sum()
    }

    fn decode(&self, y: &[f64]) -> Vec<ModelParams> {
        let mut k = 0;
        let mut out = Vec::with_capacity(self.xi_free.len());
        for t in 0..self.xi_free.len() {
            let mu = y[k].exp();
            let sigma = y[k + 1].exp();
            k += 2;
            let xi = if self.xi_free[t] {
                k += 1;
                sigmoid(y[k - 1]).min(1.0 - 1e-12)
            } else {
                0.0
            };
            let mut phi = vec![0.0; self.n_contrib];
            let act = &self.active[t];
            let mut remaining = 1.0;
            for (j, &i) in act.iter().enumerate() {
                if j + 1 == act.len() {
                    phi[i] = remaining;
                } else {
                    let v = sigmoid(y[k]);
                    k += 1;
                    phi[i] = remaining * v;
                    remaining -= phi[i];
                }
            }
            out.push(ModelParams { mu, sigma, xi, phi });
        }
        out
    }

    fn encode(&self, params: &[ModelParams]) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.dim());
        for (t, p) in params.iter().enumerate() {
            y.push(p.mu.ln());
            y.push(p.sigma.ln());
            if self.xi_free[t] {
                y.push(logit(p.xi));
            }
            let act = &self.active[t];
            let total: f64 = act.iter().map(|&i| p.phi[i]).sum();
            let mut remaining = 1.0;
            for &i in act.iter().take(act.len().saturating_sub(1)) {
                let share = p.phi[i] / total;
                y.push(logit(share / remaining));
                remaining -= share;
            }
        }
        y
    }
}

/// Contributors whose labels may be permuted without changing the null
/// likelihood: unknowns with the same sex constraint.
fn exchangeable_groups(case: &CaseBundle) -> Vec<Vec<usize>> {
    let mut groups: Vec<(Option<Sex>, Vec<usize>)> = Vec::new();
    for i in case.unknown_contributors() {
        let sex = case.roster[i].sex;
        match groups.iter_mut().find(|g| g.0 == sex) {
            Some(g) => g.1.push(i),
            None => groups.push((sex, vec![i])),
        }
    }
    groups.into_iter().map(|g| g.1).filter(|g| g.len() > 1).collect()
}

struct Objective<'a> {
    model: &'a CaseModel,
}

impl Objective<'_> {
    fn value(&self, layout: &Layout, y: &[f64]) -> f64 {
        if y.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        let params: Vec<GammaParams> = layout.decode(y).iter().map(ModelParams::gamma_form).collect();
        match self.model.log_likelihood(&params) {
            Ok(l) if l.is_finite() => -l,
            _ => f64::INFINITY,
        }
    }
}

struct LocalFit {
    layout: Layout,
    y: Vec<f64>,
    value: f64,
    iterations: usize,
    evaluations: usize,
}

fn local_fit(obj: &Objective, layout: Layout, y0: &[f64], opts: &FitOptions) -> LocalFit {
    let nm = nelder_mead(
        |y| obj.value(&layout, y),
        y0,
        NelderMeadOptions {
            initial_step: 0.3,
            max_evaluations: opts.max_evaluations,
            f_tol: 1e-11,
        },
    );
    let polish = |layout: &Layout, y: &[f64], value: f64| {
        let b = bfgs(
            |z| obj.value(layout, z),
            y,
            BfgsOptions {
                max_iterations: 300,
                g_tol: 1e-6 * value.abs().max(1.0),
                h: GRADIENT_STEP,
            },
        );
        b
    };
    let b = polish(&layout, &nm.x, nm.value);
    let mut fit = LocalFit {
        layout,
        y: b.x,
        value: b.value,
        iterations: nm.iterations + b.iterations,
        evaluations: nm.evaluations + b.evaluations,
    };
    if !fit.value.is_finite() {
        return fit;
    }
    // fix near-boundary parameters at the boundary when that does not
    // worsen the fit
    loop {
        let params = fit.layout.decode(&fit.y);
        let mut snapped = fit.layout.clone();
        let mut changed = false;
        for (t, p) in params.iter().enumerate() {
            if snapped.xi_free[t] && p.xi < SNAP_BELOW {
                snapped.xi_free[t] = false;
                changed = true;
            }
            if snapped.active[t].len() > 1 {
                let keep: Vec<usize> = snapped.active[t].iter().cloned().filter(|&i| p.phi[i] >= SNAP_BELOW).collect();
                if !keep.is_empty() && keep.len() < snapped.active[t].len() {
                    snapped.active[t] = keep;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
        let mut start = params.clone();
        for (t, p) in start.iter_mut().enumerate() {
            if !snapped.xi_free[t] {
                p.xi = 0.0;
            }
            let total: f64 = snapped.active[t].iter().map(|&i| p.phi[i]).sum();
            for i in 0..p.phi.len() {
                p.phi[i] = if snapped.active[t].contains(&i) { p.phi[i] / total } else { 0.0 };
            }
        }
        let y = snapped.encode(&start);
        let v0 = obj.value(&snapped, &y);
        let b = polish(&snapped, &y, v0);
        fit.evaluations += b.evaluations + 1;
        fit.iterations += b.iterations;
        let tol = 1e-8 * fit.value.abs().max(1.0);
        if b.value <= fit.value + tol {
            fit.layout = snapped;
            fit.y = b.x;
            fit.value = b.value;
        } else {
            break;
        }
    }
    fit
}

/// Fits the null model to a case.
pub fn fit(case: &CaseBundle, opts: &FitOptions) -> Result<FitResult> {
    let evidence = CaseEvidence::from_case(case)?;
    fit_evidence(&evidence, &exchangeable_groups(case), opts)
}

/// Fits the null model to prepared evidence. `groups` lists sets of
/// contributors that are relabeled by descending fraction in the first
/// trace after fitting.
pub fn fit_evidence(evidence: &CaseEvidence, groups: &[Vec<usize>], opts: &FitOptions) -> Result<FitResult> {
    let n_traces = evidence.n_traces();
    let n_contrib = evidence.n_contributors();
    let mut start_mu = Vec::with_capacity(n_traces);
    for t in 0..n_traces {
        let heights: Vec<f64> = evidence
            .markers
            .iter()
            .filter_map(|m| m.traces[t].as_ref())
            .flat_map(|o| o.heights.iter().flatten().cloned())
            .collect();
        if heights.is_empty() {
            return Err(Error::Validation(format!(
                "trace {} has no observed peaks; nothing to fit",
                evidence.trace_ids[t]
            )));
        }
        start_mu.push(heights.iter().sum::<f64>() / heights.len() as f64);
    }
    let model = CaseModel::null(evidence)?;
    let obj = Objective { model: &model };
    let layout = Layout::full(n_traces, n_contrib);
    let default: Vec<ModelParams> = start_mu
        .iter()
        .map(|&mu| ModelParams {
            mu,
            sigma: DEFAULT_SIGMA,
            xi: DEFAULT_XI,
            phi: vec![1.0 / n_contrib as f64; n_contrib],
        })
        .collect();
    let y0 = layout.encode(&default);
    let mut starts = vec![y0.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for _ in 0..opts.restarts {
        let mut y = y0.clone();
        let mut k = 0;
        for t in 0..n_traces {
            for j in 0..layout.trace_dim(t) {
                let scale = if j < 2 { 0.3 } else { 1.0 };
                y[k] += scale * normal.sample(&mut rng);
                k += 1;
            }
        }
        // keep the stream position independent of the layout
        let _: u64 = rng.random();
        starts.push(y);
    }

    let mut best: Option<LocalFit> = None;
    let mut evaluations = 0;
    for y in &starts {
        let f = local_fit(&obj, layout.clone(), y, opts);
        evaluations += f.evaluations;
        log::debug!("start finished at -logL {}", f.value);
        if best.as_ref().is_none_or(|b| f.value < b.value) {
            best = Some(f);
        }
    }
    let best = best.expect("at least one start");
    if !best.value.is_finite() {
        return Err(Error::Convergence("no start reached a finite likelihood".into()));
    }

    // relabel exchangeable contributors by descending fraction in trace 1
    let mut params = best.layout.decode(&best.y);
    let mut boundary = best.layout.boundary();
    for g in groups {
        let mut order = g.clone();
        order.sort_by(|&a, &b| params[0].phi[b].total_cmp(&params[0].phi[a]).then(a.cmp(&b)));
        for (p, bd) in params.iter_mut().zip(boundary.iter_mut()) {
            let phi: Vec<f64> = order.iter().map(|&i| p.phi[i]).collect();
            let zero: Vec<bool> = order.iter().map(|&i| bd.phi[i]).collect();
            for (k, &slot) in g.iter().enumerate() {
                p.phi[slot] = phi[k];
                bd.phi[slot] = zero[k];
            }
        }
    }
    let layout = Layout::from_boundary(&boundary);
    let y = layout.encode(&params);
    // decode again so reported parameters are exactly the evaluated ones
    let params = layout.decode(&y);
    let gp: Vec<GammaParams> = params.iter().map(ModelParams::gamma_form).collect();
    let log_likelihood = model.log_likelihood(&gp)?;
    let grad = central_gradient(|z| obj.value(&layout, z), &y, GRADIENT_STEP);
    let gradient_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let converged = gradient_norm.is_finite() && gradient_norm <= 1e-4 * log_likelihood.abs().max(1.0);
    if !converged {
        log::warn!("fit did not reach the gradient tolerance (norm {gradient_norm:.3e})");
    }
    let standard_errors = transformed_errors(&obj, &layout, &y);

    Ok(FitResult {
        trace_ids: evidence.trace_ids.clone(),
        contributor_ids: evidence.contributor_ids.clone(),
        params,
        log_likelihood,
        standard_errors,
        boundary,
        converged,
        iterations: best.iterations,
        evaluations,
        gradient_norm,
    })
}

/// Standard errors of `map(y)` from the numeric Hessian of `neg_log_lik` at
/// `y`, mapped by the delta method. `None` when the Hessian is not positive
/// definite.
pub fn delta_method_errors<F, G>(neg_log_lik: F, y: &[f64], map: G, step: f64) -> Option<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let n = y.len();
    let theta0 = map(y);
    if n == 0 {
        return Some(vec![0.0; theta0.len()]);
    }
    let h = numeric_hessian(neg_log_lik, y, step);
    if h.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let chol = h.cholesky()?;
    let cov = chol.inverse();
    let m = theta0.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut yp = y.to_vec();
    let d = 1e-6;
    for j in 0..n {
        yp[j] = y[j] + d;
        let plus = map(&yp);
        yp[j] = y[j] - d;
        let minus = map(&yp);
        yp[j] = y[j];
        for i in 0..m {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * d);
        }
    }
    let cov_theta = &jac * cov * jac.transpose();
    Some((0..m).map(|i| cov_theta[(i, i)].max(0.0).sqrt()).collect())
}

fn transformed_errors(obj: &Objective, layout: &Layout, y: &[f64]) -> Vec<ParamErrors> {
    let n_contrib = layout.n_contrib;
    let n_traces = layout.xi_free.len();
    let flatten = |y: &[f64]| -> Vec<f64> {
        layout
            .decode(y)
            .iter()
            .flat_map(|p| {
                let mut v = vec![p.mu, p.sigma, p.xi];
                v.extend(&p.phi);
                v
            })
            .collect()
    };
    let Some(se) = delta_method_errors(|z| obj.value(layout, z), y, flatten, HESSIAN_STEP) else {
        log::warn!("Hessian is not positive definite; standard errors unavailable");
        return (0..n_traces).map(|_| ParamErrors::unavailable(n_contrib)).collect();
    };
    let width = 3 + n_contrib;
    let ok = |v: f64| (v.is_finite() && v > 0.0).then_some(v);
    (0..n_traces)
        .map(|t| {
            let s = &se[t * width..(t + 1) * width];
            let single = layout.active[t].len() == 1;
            ParamErrors {
                mu: ok(s[0]),
                sigma: ok(s[1]),
                xi: if layout.xi_free[t] { ok(s[2]) } else { None },
                phi: (0..n_contrib)
                    .map(|i| if single || !layout.active[t].contains(&i) { None } else { ok(s[3 + i]) })
                    .collect(),
            }
        })
        .collect()
}

/// Recomputes standard errors for a fit of `case`.
pub fn standard_errors(fit: &FitResult, case: &CaseBundle) -> Result<Vec<ParamErrors>> {
    let evidence = CaseEvidence::from_case(case)?;
    let model = CaseModel::null(&evidence)?;
    let obj = Objective { model: &model };
    let layout = Layout::from_boundary(&fit.boundary);
    let y = layout.encode(&fit.params);
    Ok(transformed_errors(&obj, &layout, &y))
}

/// Parameters frozen at the null-model estimates. Both numerator and
/// denominator of every likelihood ratio are evaluated under one context;
/// there is deliberately no way to re-maximize under a kinship hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct NullContext {
    params: Vec<ModelParams>,
    id: String,
}

impl NullContext {
    pub fn new(params: Vec<ModelParams>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Validation("parameter context needs at least one trace".into()));
        }
        for p in &params {
            p.validate()?;
        }
        let mut h = Sha256::new();
        for p in &params {
            for v in [p.mu, p.sigma, p.xi].iter().chain(&p.phi) {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update(b";");
        }
        let id = hex::encode(h.finalize())[..16].to_string();
        Ok(NullContext { params, id })
    }

    pub fn params(&self) -> &[ModelParams] {
        &self.params
    }

    pub fn gamma_params(&self) -> Vec<GammaParams> {
        self.params.iter().map(ModelParams::gamma_form).collect()
    }

    /// Short digest of the parameter values.
    pub fn id(&self) -> &str {
        &self.id
    }
}

pub fn null_mle_context(fit: &FitResult) -> Result<NullContext> {
    NullContext::new(fit.params.clone())
}
