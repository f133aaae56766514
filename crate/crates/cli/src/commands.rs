use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mixkin_core::deconvolution::{self, compatibility_flags, RankedGenotypes, TopK};
use mixkin_core::engine::CaseEvidence;
use mixkin_core::estimation::{self, read_params_csv, FitOptions, FitResult, NullContext};
use mixkin_core::evidence::{
    CaseBundle, CaseConfig, CaseOptions, ContributorConfig, FitConfig, KinshipConfig, ProfileConfig, TraceConfig,
};
use mixkin_core::kinship::{
    combine_union, format_log10, format_lr, format_probability, two_way_grid, write_summary_csv, Hypothesis,
    KinshipAnalysis, LrReport, Method, UnionMode, UnionResult,
};
use mixkin_core::peak::ModelParams;
use mixkin_core::simulate::ScenarioConfig;
use mixkin_core::Error;

use crate::manifest::RunManifest;
use crate::{DeconvolveArgs, FitArgs, FitOverrides, HypothesisArgs, LrArgs, MethodArg, ParamSource, ReportArgs, SimulateArgs};

/// Largest tolerated difference in natural-log ratio between exact methods,
/// relative to `max(1, |log LR|)`.
pub const AGREEMENT_TOLERANCE: f64 = 1e-9;

struct LoadedCase {
    config: CaseConfig,
    bundle: CaseBundle,
    evidence: CaseEvidence,
    inputs: Vec<PathBuf>,
}

fn load_case(path: &Path) -> Result<LoadedCase> {
    let (bundle, config) = CaseBundle::load(path)?;
    let evidence = CaseEvidence::from_case(&bundle)?;
    let mut inputs = vec![path.to_path_buf()];
    inputs.extend(bundle.inputs.iter().cloned());
    Ok(LoadedCase {
        config,
        bundle,
        evidence,
        inputs,
    })
}

fn fit_options(config: &FitConfig, o: &FitOverrides) -> FitOptions {
    FitOptions {
        restarts: o.restarts.unwrap_or(config.restarts),
        seed: o.seed.unwrap_or(config.seed),
        max_evaluations: o.max_evaluations.unwrap_or(config.max_evaluations),
    }
}

fn resolved_config(case: &LoadedCase, o: &FitOverrides) -> CaseConfig {
    let mut c = case.config.clone();
    let f = fit_options(&c.fit, o);
    c.fit = FitConfig {
        restarts: f.restarts,
        seed: f.seed,
        max_evaluations: f.max_evaluations,
    };
    c
}

/// Estimates from a parameter file, or a fresh fit.
fn obtain_params(case: &LoadedCase, source: &ParamSource) -> Result<(Vec<ModelParams>, Option<FitResult>)> {
    match &source.params {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            let params = read_params_csv(file, path, &case.evidence.trace_ids, &case.evidence.contributor_ids)?;
            Ok((params, None))
        }
        None => {
            let fit = estimation::fit(&case.bundle, &fit_options(&case.config.fit, &source.fit))?;
            if !fit.converged {
                log::warn!(
                    "fit not converged (gradient norm {:.3e}); results use the best point found",
                    fit.gradient_norm
                );
            }
            Ok((fit.params.clone(), Some(fit)))
        }
    }
}

/// Config `[kinship]` table with command-line overrides applied.
fn kinship_config(base: Option<&KinshipConfig>, a: &HypothesisArgs) -> Option<KinshipConfig> {
    let any_flag = a.relationship.is_some() || a.child.is_some() || a.parent.is_some();
    let mut k = match (base, any_flag) {
        (Some(k), _) => k.clone(),
        (None, true) => KinshipConfig {
            target: None,
            relationship: "parent-of-child".into(),
            child: None,
            mother: None,
            parent: None,
            prior: None,
        },
        (None, false) => return None,
    };
    if let Some(r) = &a.relationship {
        k.relationship = r.clone();
    }
    for (dst, src) in [
        (&mut k.target, &a.target),
        (&mut k.child, &a.child),
        (&mut k.mother, &a.mother),
        (&mut k.parent, &a.parent),
    ] {
        if src.is_some() {
            *dst = src.clone();
        }
    }
    Some(k)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn write_output(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    log::info!("wrote {}", path.display());
    Ok(path)
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    write_output(dir, "manifest.json", manifest.to_json().as_bytes())?;
    Ok(())
}

fn sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    let e = x.abs().log10().floor() as i32;
    let decimals = (digits as i32 - 1 - e).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Parameters as rows, traces as columns, standard errors in parentheses.
pub fn fit_table(fit: &FitResult) -> String {
    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    let cell = |v: f64, se: Option<f64>| match se {
        Some(s) => format!("{} ({})", sig(v, 4), sig(s, 2)),
        None => format!("{} (NA)", sig(v, 4)),
    };
    let per = |f: &dyn Fn(usize) -> String| (0..fit.params.len()).map(f).collect::<Vec<_>>();
    rows.push(("mu".into(), per(&|t| cell(fit.params[t].mu, fit.standard_errors[t].mu))));
    rows.push(("sigma".into(), per(&|t| cell(fit.params[t].sigma, fit.standard_errors[t].sigma))));
    rows.push(("xi".into(), per(&|t| cell(fit.params[t].xi, fit.standard_errors[t].xi))));
    for (i, c) in fit.contributor_ids.iter().enumerate() {
        rows.push((
            format!("phi_{c}"),
            per(&|t| cell(fit.params[t].phi[i], fit.standard_errors[t].phi[i])),
        ));
    }
    let mut header = vec!["parameter".to_string()];
    header.extend(fit.trace_ids.iter().cloned());
    let mut table = vec![header];
    table.extend(rows.into_iter().map(|(name, cells)| {
        let mut r = vec![name];
        r.extend(cells);
        r
    }));
    let mut out = render(&table);
    let _ = writeln!(
        out,
        "log-likelihood {:.4}; converged: {}; gradient norm {:.2e}; evaluations {}",
        fit.log_likelihood,
        if fit.converged { "yes" } else { "no" },
        fit.gradient_norm,
        fit.evaluations
    );
    out.push_str("standard errors: numeric observed information, delta method; NA at boundary estimates\n");
    out
}

fn render(table: &[Vec<String>]) -> String {
    let cols = table.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| table.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in table {
        let line: Vec<String> = row.iter().enumerate().map(|(c, s)| format!("{s:<w$}", w = widths[c])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn fit_csv(fit: &FitResult) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fit.write_csv(&mut buf)?;
    Ok(buf)
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let case = load_case(&a.config)?;
    let opts = fit_options(&case.config.fit, &a.fit);
    let fit = estimation::fit(&case.bundle, &opts)?;
    ensure_dir(&a.out)?;
    let path = write_output(&a.out, "fit.csv", &fit_csv(&fit)?)?;
    let mut manifest = RunManifest::new("fit", &resolved_config(&case, &a.fit), &case.inputs, opts.seed)?;
    manifest.params_context = Some(NullContext::new(fit.params.clone())?.id().to_string());
    write_manifest(&a.out, &manifest)?;
    print!("{}", fit_table(&fit));
    if !fit.converged {
        return Err(Error::Convergence(format!(
            "gradient norm {:.3e} exceeds {:.3e}; estimates written to {}",
            fit.gradient_norm,
            fit.gradient_tolerance(),
            path.display()
        ))
        .into());
    }
    Ok(())
}

fn hypothesis_for(case: &LoadedCase, args: &HypothesisArgs) -> Result<Option<Hypothesis>> {
    kinship_config(case.config.kinship.as_ref(), args)
        .map(|k| Hypothesis::from_config(&case.bundle, &k))
        .transpose()
        .context("invalid kinship hypothesis")
}

fn ranked_genotypes(
    case: &LoadedCase,
    params: &[ModelParams],
    contributors: &[usize],
    top: TopK,
    hypothesis: Option<&Hypothesis>,
) -> Result<Vec<RankedGenotypes>> {
    let gamma: Vec<_> = params.iter().map(ModelParams::gamma_form).collect();
    let mut ranked = deconvolution::deconvolve(&case.evidence, &gamma, contributors, top)?;
    if let Some(h) = hypothesis {
        let context = NullContext::new(params.to_vec())?;
        let analysis = KinshipAnalysis::new(&case.evidence, h, &context)?;
        for r in ranked.iter_mut().filter(|r| r.contributor == h.target) {
            let m = case
                .evidence
                .markers
                .iter()
                .position(|m| m.marker == r.marker)
                .ok_or_else(|| Error::Invariant(format!("ranked marker {} not in case", r.marker)))?;
            *r = compatibility_flags(r, &analysis.relatives()[m], case.evidence.markers[m].panel.freqs())?;
        }
    }
    Ok(ranked)
}

fn contributor_indices(case: &LoadedCase, ids: &[String]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            case.bundle
                .contributor_index(id)
                .ok_or_else(|| Error::Validation(format!("unknown contributor {id}")).into())
        })
        .collect()
}

pub fn deconvolve(a: &DeconvolveArgs) -> Result<()> {
    let case = load_case(&a.config)?;
    let top: TopK = a.top.parse()?;
    let contributors = contributor_indices(&case, &a.contributor)?;
    let (params, _) = obtain_params(&case, &a.source)?;
    let hypothesis = hypothesis_for(&case, &a.hypothesis)?;
    let ranked = ranked_genotypes(&case, &params, &contributors, top, hypothesis.as_ref())?;
    ensure_dir(&a.out)?;
    let mut buf = Vec::new();
    deconvolution::write_csv(&ranked, &case.evidence.contributor_ids, &mut buf)?;
    write_output(&a.out, "deconvolution.csv", &buf)?;
    let mut inputs = case.inputs.clone();
    inputs.extend(a.source.params.iter().cloned());
    let manifest = RunManifest::new("deconvolve", &resolved_config(&case, &a.source.fit), &inputs, case.config.fit.seed)?;
    write_manifest(&a.out, &manifest)?;
    print!("{}", ranking_table(&ranked, &case.evidence.contributor_ids, 1));
    Ok(())
}

fn ranking_table(ranked: &[RankedGenotypes], ids: &[String], per_group: usize) -> String {
    let mut table = vec![["marker", "contributor", "rank", "genotype", "probability", "compatible"]
        .map(String::from)
        .to_vec()];
    for r in ranked {
        for (i, e) in r.entries.iter().take(per_group).enumerate() {
            table.push(vec![
                r.marker.clone(),
                ids[r.contributor].clone(),
                (i + 1).to_string(),
                format!("{},{}", e.alleles.0, e.alleles.1),
                format_lr(e.probability),
                match e.compatible {
                    Some(true) => "yes".into(),
                    Some(false) => "no".into(),
                    None => "".into(),
                },
            ]);
        }
    }
    render(&table)
}

/// Checks that exact methods agree marker by marker and overall.
pub fn check_agreement(reports: &[LrReport]) -> Result<(), Error> {
    let close = |x: f64, y: f64| {
        if x == y {
            return true;
        }
        (x - y).abs() <= AGREEMENT_TOLERANCE * x.abs().max(y.abs()).max(1.0)
    };
    let ln = |lr: f64| lr.ln();
    for r in &reports[1..] {
        let base = &reports[0];
        let a = base.log10_lr * std::f64::consts::LN_10;
        let b = r.log10_lr * std::f64::consts::LN_10;
        if !close(a, b) {
            return Err(Error::Invariant(format!(
                "methods {} and {} disagree: log10 LR {} vs {}",
                base.method, r.method, base.log10_lr, r.log10_lr
            )));
        }
        for (x, y) in base.markers.iter().zip(&r.markers) {
            if !close(ln(x.lr), ln(y.lr)) {
                return Err(Error::Invariant(format!(
                    "methods {} and {} disagree at marker {}: {} vs {}",
                    base.method, r.method, x.marker, x.lr, y.lr
                )));
            }
        }
    }
    Ok(())
}

fn lr_table(reports: &[LrReport]) -> String {
    let mut header = vec!["marker".to_string()];
    header.extend(reports.iter().map(|r| r.method.name().to_uppercase()));
    let mut table = vec![header];
    for (m, ml) in reports[0].markers.iter().enumerate() {
        let mut row = vec![ml.marker.clone()];
        row.extend(reports.iter().map(|r| format_lr(r.markers[m].lr)));
        table.push(row);
    }
    let mut row = vec!["LR".to_string()];
    row.extend(reports.iter().map(|r| format_lr(r.lr())));
    table.push(row);
    let mut row = vec!["log10 LR".to_string()];
    row.extend(reports.iter().map(|r| format_log10(r.log10_lr)));
    table.push(row);
    render(&table)
}

fn union_lines(lrs: &[f64], priors: &[f64], range: Option<usize>) -> Result<(String, String)> {
    let priors = if priors.is_empty() { vec![1.0; lrs.len()] } else { priors.to_vec() };
    let value = |mode| -> Result<f64> {
        match combine_union(lrs, &priors, &mode)? {
            UnionResult::Value(v) => Ok(v),
            UnionResult::Range(_) => Err(Error::Invariant("scalar union mode returned a range".into()).into()),
        }
    };
    let joined = |p: &[f64]| p.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
    let mut text = String::new();
    let mut csv = String::from("mode,priors,lr\n");
    for (mode, v) in [
        ("weighted", value(UnionMode::Weighted)?),
        ("min", value(UnionMode::Min)?),
        ("max", value(UnionMode::Max)?),
    ] {
        let _ = writeln!(text, "union {mode:<9} {}", format_lr(v));
        let pr = if mode == "weighted" { joined(&priors) } else { String::new() };
        let _ = writeln!(csv, "{mode},{pr},{}", format_lr(v));
    }
    if let Some(steps) = range {
        if lrs.len() != 2 {
            return Err(Error::Validation("--union-range needs exactly two hypotheses".into()).into());
        }
        let UnionResult::Range(grid) = combine_union(lrs, &priors, &UnionMode::Range(two_way_grid(steps.max(1))))? else {
            return Err(Error::Invariant("range union mode returned a scalar".into()).into());
        };
        for (p, v) in grid {
            let _ = writeln!(text, "union range     priors {:<12} {}", joined(&p), format_lr(v));
            let _ = writeln!(csv, "range,{},{}", joined(&p), format_lr(v));
        }
    }
    Ok((text, csv))
}

fn methods_for(arg: MethodArg) -> Option<Method> {
    match arg {
        MethodArg::Wlr => Some(Method::Wlr),
        MethodArg::Aln => Some(Method::Aln),
        MethodArg::Mbn => Some(Method::Mbn),
        MethodArg::Rpt => Some(Method::Rpt),
        MethodArg::All => None,
    }
}

struct LrOutcome {
    reports: Vec<LrReport>,
    context: NullContext,
    hypothesis: Hypothesis,
}

fn compute_lrs(case: &LoadedCase, params: Vec<ModelParams>, h: Hypothesis, method: MethodArg) -> Result<LrOutcome> {
    let context = estimation::NullContext::new(params)?;
    let analysis = KinshipAnalysis::new(&case.evidence, &h, &context)?;
    let reports = match methods_for(method) {
        Some(m) => vec![analysis.run(m)?],
        None => {
            let reports = analysis.run_all()?;
            check_agreement(&reports)?;
            reports
        }
    };
    Ok(LrOutcome {
        reports,
        context,
        hypothesis: h,
    })
}

fn prior_value(cli: Option<f64>, k: Option<&KinshipConfig>) -> Result<f64> {
    let p = cli.or(k.and_then(|k| k.prior)).unwrap_or(0.5);
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Validation(format!("prior {p} is outside [0, 1]")).into());
    }
    Ok(p)
}

pub fn lr(a: &LrArgs) -> Result<()> {
    if !a.union_lrs.is_empty() {
        let (text, csv) = union_lines(&a.union_lrs, &a.union_priors, a.union_range)?;
        ensure_dir(&a.out)?;
        write_output(&a.out, "union.csv", csv.as_bytes())?;
        print!("{text}");
        return Ok(());
    }
    let config_path = a
        .config
        .as_ref()
        .ok_or_else(|| Error::Validation("a case file is required unless --union-lrs is given".into()))?;
    let case = load_case(config_path)?;
    let kcfg = kinship_config(case.config.kinship.as_ref(), &a.hypothesis)
        .ok_or_else(|| Error::Validation("no kinship hypothesis: add [kinship] to the case or pass --child".into()))?;
    let prior = prior_value(a.prior, Some(&kcfg))?;
    let h = Hypothesis::from_config(&case.bundle, &kcfg).context("invalid kinship hypothesis")?;
    let (params, _) = obtain_params(&case, &a.source)?;
    let outcome = compute_lrs(&case, params.clone(), h, a.method)?;

    ensure_dir(&a.out)?;
    for r in &outcome.reports {
        let mut buf = Vec::new();
        r.write_csv(&mut buf)?;
        write_output(&a.out, &format!("lr_{}.csv", r.method), &buf)?;
    }
    let mut buf = Vec::new();
    write_summary_csv(&outcome.reports, &mut buf)?;
    write_output(&a.out, "lr_summary.csv", &buf)?;

    let target = &case.evidence.contributor_ids[outcome.hypothesis.target];
    println!("target {target}, {}", outcome.hypothesis.relationship);
    print!("{}", lr_table(&outcome.reports));
    if outcome.reports.len() > 1 {
        println!("methods agree within {AGREEMENT_TOLERANCE:e} in log LR");
    }
    let post = outcome.reports[0].posterior(prior)?;
    println!("posterior probability at prior {prior}: {}", format_probability(post));

    if !a.union_targets.is_empty() {
        let method = methods_for(a.method).unwrap_or(Method::Aln);
        let mut lrs = Vec::new();
        for t in &a.union_targets {
            let mut k = kcfg.clone();
            k.target = Some(t.clone());
            let h = Hypothesis::from_config(&case.bundle, &k)?;
            let analysis = KinshipAnalysis::new(&case.evidence, &h, &outcome.context)?;
            let r = analysis.run(method)?;
            println!("union member {t}: LR {}", format_lr(r.lr()));
            lrs.push(r.lr());
        }
        let (text, csv) = union_lines(&lrs, &a.union_priors, a.union_range)?;
        write_output(&a.out, "union.csv", csv.as_bytes())?;
        print!("{text}");
    }

    let mut inputs = case.inputs.clone();
    inputs.extend(a.source.params.iter().cloned());
    let mut config = resolved_config(&case, &a.source.fit);
    config.kinship = Some(KinshipConfig {
        prior: Some(prior),
        ..kcfg
    });
    let mut manifest = RunManifest::new("lr", &config, &inputs, config.fit.seed)?;
    manifest.params_context = Some(outcome.context.id().to_string());
    write_manifest(&a.out, &manifest)?;
    Ok(())
}

fn indexed(name: &str, r: u64, replicates: u64) -> String {
    if replicates == 1 {
        name.to_string()
    } else {
        let width = replicates.to_string().len().max(3);
        format!("{name}_r{:0width$}", r + 1)
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    if a.replicates == 0 {
        return Err(Error::Validation("--replicates must be positive".into()).into());
    }
    let cfg = ScenarioConfig::from_path(&a.scenario)?;
    let base = a.scenario.parent().unwrap_or(Path::new("."));
    let mut scenario = cfg.to_scenario(base)?;
    if let Some(s) = a.seed {
        scenario.seed = s;
    }
    ensure_dir(&a.out)?;
    let mut buf = Vec::new();
    scenario.frequencies.write(&mut buf)?;
    write_output(&a.out, "frequencies.csv", &buf)?;
    let typed: Vec<&str> = cfg.people.iter().filter(|p| p.typed).map(|p| p.id.as_str()).collect();
    let defaults = CaseOptions::default();
    for r in 0..a.replicates {
        let rep = scenario.replicate(r);
        let sim = rep.run()?;
        let mut traces = Vec::new();
        for (t, table) in sim.traces.iter().enumerate() {
            let name = format!("{}.csv", indexed(&table.trace_id, r, a.replicates));
            let mut buf = Vec::new();
            table.write(&mut buf)?;
            write_output(&a.out, &name, &buf)?;
            traces.push(TraceConfig {
                id: table.trace_id.clone(),
                peaks: name.into(),
                threshold: rep.traces[t].threshold,
            });
        }
        let mut profiles = Vec::new();
        for id in &typed {
            let p = sim.person(id).ok_or_else(|| Error::Invariant(format!("person {id} not simulated")))?;
            let name = format!("{}.csv", indexed(&format!("profile_{id}"), r, a.replicates));
            let mut buf = Vec::new();
            p.write(&mut buf)?;
            write_output(&a.out, &name, &buf)?;
            profiles.push(ProfileConfig {
                id: id.to_string(),
                path: name.into(),
            });
        }
        let case = CaseConfig {
            frequencies: "frequencies.csv".into(),
            frequency_floor: defaults.frequency_floor,
            sex_marker: defaults.sex_marker.clone(),
            sex_pseudo_frequencies: defaults.sex_pseudo_frequencies,
            traces,
            profiles,
            contributors: rep
                .contributors
                .iter()
                .map(|c| ContributorConfig {
                    id: c.clone(),
                    profile: typed.contains(&c.as_str()).then(|| c.clone()),
                    sex: None,
                })
                .collect(),
            kinship: cfg.kinship.clone(),
            fit: FitConfig::default(),
        };
        write_output(&a.out, &format!("{}.toml", indexed("case", r, a.replicates)), case.to_toml().as_bytes())?;
    }
    let mut resolved = cfg.clone();
    resolved.seed = scenario.seed;
    let mut inputs = vec![a.scenario.clone()];
    inputs.extend(cfg.frequencies.iter().map(|f| if f.is_absolute() { f.clone() } else { base.join(f) }));
    inputs.extend(cfg.people.iter().filter_map(|p| p.profile.as_ref()).map(|f| base.join(f)));
    let manifest = RunManifest::new("simulate", &resolved, &inputs, scenario.seed)?;
    write_manifest(&a.out, &manifest)?;
    println!(
        "simulated {} replicate(s) of {} trace(s) into {}",
        a.replicates,
        scenario.traces.len(),
        a.out.display()
    );
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let case = load_case(&a.config)?;
    let top: TopK = a.top.parse()?;
    let (params, fit) = obtain_params(&case, &a.source)?;
    let hypothesis = hypothesis_for(&case, &a.hypothesis)?;
    let mut out = String::new();
    let _ = writeln!(out, "Mixture report: {}\n", a.config.display());

    let _ = writeln!(out, "Parameter estimates");
    match &fit {
        Some(f) => out.push_str(&fit_table(f)),
        None => {
            let _ = writeln!(out, "loaded from {}", a.source.params.as_ref().expect("params path").display());
            for (t, p) in params.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{}: mu {} sigma {} xi {} phi {:?}",
                    case.evidence.trace_ids[t],
                    sig(p.mu, 4),
                    sig(p.sigma, 4),
                    sig(p.xi, 4),
                    p.phi
                );
            }
        }
    }

    let ranked = ranked_genotypes(&case, &params, &[], top, hypothesis.as_ref())?;
    let per = match top {
        TopK::All => usize::MAX,
        TopK::Count(k) => k,
    };
    let _ = writeln!(out, "\nGenotype ranking");
    out.push_str(&ranking_table(&ranked, &case.evidence.contributor_ids, per));

    let mut context_id = None;
    if let Some(h) = hypothesis {
        let kcfg = kinship_config(case.config.kinship.as_ref(), &a.hypothesis);
        let prior = prior_value(a.prior, kcfg.as_ref())?;
        let outcome = compute_lrs(&case, params.clone(), h, MethodArg::All)?;
        let target = &case.evidence.contributor_ids[outcome.hypothesis.target];
        let _ = writeln!(out, "\nLikelihood ratios: target {target}, {}", outcome.hypothesis.relationship);
        out.push_str(&lr_table(&outcome.reports));
        let _ = writeln!(out, "exact methods agree within {AGREEMENT_TOLERANCE:e} in log LR");
        let post = outcome.reports[0].posterior(prior)?;
        let _ = writeln!(out, "posterior probability at prior {prior}: {}", format_probability(post));
        context_id = Some(outcome.context.id().to_string());
    }

    let mut inputs = case.inputs.clone();
    inputs.extend(a.source.params.iter().cloned());
    let mut manifest = RunManifest::new("report", &resolved_config(&case, &a.source.fit), &inputs, case.config.fit.seed)?;
    manifest.params_context = context_id.or(Some(NullContext::new(params)?.id().to_string()));
    let _ = writeln!(out, "\nRun manifest\n{}", manifest.to_json());
    ensure_dir(&a.out)?;
    write_output(&a.out, "report.txt", out.as_bytes())?;
    write_manifest(&a.out, &manifest)?;
    print!("{out}");
    Ok(())
}
