//! Likelihood ratios for a parent-child relationship between a mixture
//! contributor and typed relatives.
//!
//! Four routes give the same ratio:
//!
//! * `Wlr` weights the genotype-level ratio by the exact posterior of the
//!   target's genotype under the null model.
//! * `Aln` multiplies the numerator likelihood by the genotype-level ratio
//!   as an extra factor on the target's allele counts.
//! * `Mbn` extends the target's chain with meiosis to the typed child.
//! * `Rpt` replaces the target's genotype prior with its conditional
//!   distribution given the relatives.
//!
//! All of them evaluate numerator and denominator with the same frozen
//! parameters from [`NullContext`].

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::engine::{
    null_priors, ChainSpec, ContributorPrior, CountFactor, Genotype, MarkerEvidence, MarkerModel, Panel,
};
use crate::engine::CaseEvidence;
use crate::error::{Error, Result};
use crate::estimation::NullContext;
use crate::evidence::{CaseBundle, GenotypeProfile, KinshipConfig};
use crate::peak::GammaParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relationship {
    /// The target is the father of a typed child.
    ParentOfChild,
    /// As above, with the child's mother also typed.
    ParentOfChildWithMother,
    /// The target is a child of a typed parent.
    ChildOfParent,
}

impl Relationship {
    pub fn name(self) -> &'static str {
        match self {
            Relationship::ParentOfChild => "parent-of-child",
            Relationship::ParentOfChildWithMother => "parent-of-child-with-mother",
            Relationship::ChildOfParent => "child-of-parent",
        }
    }
}

impl FromStr for Relationship {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parent-of-child" => Ok(Relationship::ParentOfChild),
            "parent-of-child-with-mother" => Ok(Relationship::ParentOfChildWithMother),
            "child-of-parent" => Ok(Relationship::ChildOfParent),
            _ => Err(Error::Validation(format!("unknown relationship {s:?}"))),
        }
    }
}

impl fmt::Display for Relationship {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Wlr,
    Aln,
    Mbn,
    Rpt,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Wlr, Method::Aln, Method::Mbn, Method::Rpt];

    pub fn name(self) -> &'static str {
        match self {
            Method::Wlr => "wlr",
            Method::Aln => "aln",
            Method::Mbn => "mbn",
            Method::Rpt => "rpt",
        }
    }

    /// Whether the method handles the relationship.
    pub fn supports(self, r: Relationship) -> bool {
        !(self == Method::Mbn && r == Relationship::ParentOfChildWithMother)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Validation(format!("unknown method {s:?}")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A relationship between roster contributor `target` and typed profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub target: usize,
    pub relationship: Relationship,
    /// The typed child, or the typed parent for [`Relationship::ChildOfParent`].
    pub relative: GenotypeProfile,
    pub mother: Option<GenotypeProfile>,
}

impl Hypothesis {
    pub fn new(
        case: &CaseBundle,
        target: &str,
        relationship: Relationship,
        relative: &str,
        mother: Option<&str>,
    ) -> Result<Self> {
        let target_index = case
            .contributor_index(target)
            .ok_or_else(|| Error::Validation(format!("target {target} is not in the roster")))?;
        let typed = |id: &str| -> Result<GenotypeProfile> {
            let p = case
                .profile(id)
                .ok_or_else(|| Error::Validation(format!("unknown profile {id}")))?;
            let autosomal = p.markers.iter().any(|(m, _)| !case.is_sex_marker(m));
            if !autosomal {
                return Err(Error::Validation(format!("profile {id} is not typed at any autosomal marker")));
            }
            Ok(p.clone())
        };
        let mother = match (relationship, mother) {
            (Relationship::ParentOfChildWithMother, Some(m)) => Some(typed(m)?),
            (Relationship::ParentOfChildWithMother, None) => {
                return Err(Error::Validation("relationship needs a typed mother".into()))
            }
            (_, Some(_)) => {
                return Err(Error::Validation(format!(
                    "a mother profile only applies to {}",
                    Relationship::ParentOfChildWithMother
                )))
            }
            (_, None) => None,
        };
        Ok(Hypothesis {
            target: target_index,
            relationship,
            relative: typed(relative)?,
            mother,
        })
    }

    /// Reads the hypothesis from a case's `[kinship]` table. The target
    /// defaults to the first contributor without a profile.
    pub fn from_config(case: &CaseBundle, config: &KinshipConfig) -> Result<Self> {
        let relationship: Relationship = config.relationship.parse()?;
        let target = match &config.target {
            Some(t) => t.clone(),
            None => {
                let i = case.unknown_contributors().first().copied().unwrap_or(0);
                case.roster[i].id.clone()
            }
        };
        let relative = match relationship {
            Relationship::ChildOfParent => config.parent.as_deref(),
            _ => config.child.as_deref(),
        }
        .ok_or_else(|| {
            let key = if relationship == Relationship::ChildOfParent { "parent" } else { "child" };
            Error::Validation(format!("relationship {relationship} needs `{key}`"))
        })?;
        Self::new(case, &target, relationship, relative, config.mother.as_deref())
    }
}

/// Which allele the child received from the tested parent.
#[derive(Debug, Clone, Copy, PartialEq)]
enum PaternalAllele {
    Forced(usize),
    Either(usize, usize),
}

fn frequency(q: &[f64], a: usize) -> Result<f64> {
    match q.get(a) {
        Some(&v) if v > 0.0 => Ok(v),
        _ => Err(Error::Domain(format!("allele position {a} has no positive frequency"))),
    }
}

fn paternal_allele(cgt: Genotype, mgt: Genotype) -> Option<PaternalAllele> {
    let (a, b) = (cgt.low, cgt.high);
    let has = |x: usize| mgt.low == x || mgt.high == x;
    match (has(a), has(b)) {
        _ if a == b => has(a).then_some(PaternalAllele::Forced(a)),
        (true, true) => Some(PaternalAllele::Either(a, b)),
        (true, false) => Some(PaternalAllele::Forced(b)),
        (false, true) => Some(PaternalAllele::Forced(a)),
        (false, false) => None,
    }
}

/// `P(cgt | Ugt father) / P(cgt)` with the child's other parent untyped.
pub fn lr_ugt_child_only(ugt: Genotype, cgt: Genotype, q: &[f64]) -> Result<f64> {
    let (a, b) = (cgt.low, cgt.high);
    let n = |x: usize| ugt.count(x) as f64;
    if a == b {
        Ok(n(a) / (2.0 * frequency(q, a)?))
    } else {
        Ok(n(a) / (4.0 * frequency(q, a)?) + n(b) / (4.0 * frequency(q, b)?))
    }
}

/// `P(cgt | mgt, Ugt father) / P(cgt | mgt)`. A child sharing no allele
/// with the mother is an error, not an exclusion of the tested man.
pub fn lr_ugt_mother_child(ugt: Genotype, cgt: Genotype, mgt: Genotype, q: &[f64]) -> Result<f64> {
    let n = |x: usize| ugt.count(x) as f64;
    match paternal_allele(cgt, mgt) {
        Some(PaternalAllele::Forced(x)) => Ok(n(x) / (2.0 * frequency(q, x)?)),
        Some(PaternalAllele::Either(a, b)) => Ok((n(a) + n(b)) / (2.0 * (frequency(q, a)? + frequency(q, b)?))),
        None => Err(Error::MaternalExclusion { marker: String::new() }),
    }
}

/// Relatives' genotypes at one marker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RelativeEvidence {
    /// Sex marker, or the relative is not typed here; the ratio is 1.
    Neutral,
    /// One typed relative; for the reversed relationship this holds the
    /// parent's genotype, which enters the same formula.
    ChildOnly { cgt: Genotype },
    WithMother { cgt: Genotype, mgt: Genotype },
}

impl RelativeEvidence {
    pub fn lr_ugt(&self, ugt: Genotype, q: &[f64]) -> Result<f64> {
        match *self {
            RelativeEvidence::Neutral => Ok(1.0),
            RelativeEvidence::ChildOnly { cgt } => lr_ugt_child_only(ugt, cgt, q),
            RelativeEvidence::WithMother { cgt, mgt } => lr_ugt_mother_child(ugt, cgt, mgt, q),
        }
    }

    /// The genotype-level ratio as a factor on the target's counts; it
    /// depends on the counts at one or two positions only.
    fn count_factor(&self, q: &[f64]) -> Result<Option<CountFactor>> {
        let single = |x: usize| -> Result<CountFactor> {
            let qx = frequency(q, x)?;
            Ok(CountFactor::single(x, move |n| n as f64 / (2.0 * qx)))
        };
        Ok(match *self {
            RelativeEvidence::Neutral => None,
            RelativeEvidence::ChildOnly { cgt } if cgt.is_homozygous() => Some(single(cgt.low)?),
            RelativeEvidence::ChildOnly { cgt } => {
                let (qa, qb) = (frequency(q, cgt.low)?, frequency(q, cgt.high)?);
                Some(CountFactor::pair(cgt.low, cgt.high, move |m0, m1| {
                    m0 as f64 / (4.0 * qa) + m1 as f64 / (4.0 * qb)
                }))
            }
            RelativeEvidence::WithMother { cgt, mgt } => match paternal_allele(cgt, mgt) {
                Some(PaternalAllele::Forced(x)) => Some(single(x)?),
                Some(PaternalAllele::Either(a, b)) => {
                    let s = frequency(q, a)? + frequency(q, b)?;
                    Some(CountFactor::pair(a, b, move |m0, m1| (m0 + m1) as f64 / (2.0 * s)))
                }
                None => return Err(Error::MaternalExclusion { marker: String::new() }),
            },
        })
    }

    /// Choices of the allele the target shares by descent, with weights.
    fn ibd_options(&self, q: &[f64]) -> Result<Option<Vec<(usize, f64)>>> {
        Ok(match *self {
            RelativeEvidence::Neutral => None,
            RelativeEvidence::ChildOnly { cgt } if cgt.is_homozygous() => Some(vec![(cgt.low, 1.0)]),
            RelativeEvidence::ChildOnly { cgt } => Some(vec![(cgt.low, 0.5), (cgt.high, 0.5)]),
            RelativeEvidence::WithMother { cgt, mgt } => match paternal_allele(cgt, mgt) {
                Some(PaternalAllele::Forced(x)) => Some(vec![(x, 1.0)]),
                Some(PaternalAllele::Either(a, b)) => {
                    let (qa, qb) = (frequency(q, a)?, frequency(q, b)?);
                    Some(vec![(a, qa / (qa + qb)), (b, qb / (qa + qb))])
                }
                None => return Err(Error::MaternalExclusion { marker: String::new() }),
            },
        })
    }
}

fn hw_probability(g: Genotype, q: &[f64]) -> f64 {
    if g.is_homozygous() {
        q[g.low] * q[g.low]
    } else {
        2.0 * q[g.low] * q[g.high]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerLr {
    pub marker: String,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrReport {
    pub method: Method,
    pub target: String,
    pub relationship: Relationship,
    pub markers: Vec<MarkerLr>,
    /// Sum of per-marker log10 ratios; `-inf` when any marker excludes.
    pub log10_lr: f64,
    pub context_id: String,
}

impl LrReport {
    fn new(method: Method, analysis: &KinshipAnalysis, markers: Vec<MarkerLr>) -> Self {
        let log10_lr = markers.iter().map(|m| m.lr.log10()).sum();
        LrReport {
            method,
            target: analysis.evidence.contributor_ids[analysis.hypothesis.target].clone(),
            relationship: analysis.hypothesis.relationship,
            markers,
            log10_lr,
            context_id: analysis.context.id().to_string(),
        }
    }

    pub fn lr(&self) -> f64 {
        10f64.powf(self.log10_lr)
    }

    pub fn posterior(&self, prior: f64) -> Result<f64> {
        posterior_probability(self.lr(), prior)
    }

    /// `marker,lr` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Validation(format!("csv write failed: {e}"));
        w.write_record(["marker", "lr"]).map_err(err)?;
        for m in &self.markers {
            w.write_record([m.marker.as_str(), &format_lr(m.lr)]).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io("<lr output>", e))?;
        Ok(())
    }
}

/// `method,log10_lr,lr,posterior_uniform_prior` rows.
pub fn write_summary_csv<W: Write>(reports: &[LrReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Validation(format!("csv write failed: {e}"));
    w.write_record(["method", "log10_lr", "lr", "posterior_uniform_prior"]).map_err(err)?;
    for r in reports {
        w.write_record([
            r.method.name(),
            &format_log10(r.log10_lr),
            &format_lr(r.lr()),
            &format_probability(r.posterior(0.5)?),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<lr output>", e))?;
    Ok(())
}

/// Six significant digits.
pub fn format_lr(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let e = x.abs().log10().floor() as i32;
    if (-4..15).contains(&e) {
        format!("{:.*}", (5 - e).max(0) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

/// Four decimals.
pub fn format_log10(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.4}")
    } else {
        x.to_string()
    }
}

pub fn format_probability(p: f64) -> String {
    format!("{p:.6}")
}

/// `LR pi / (LR pi + 1 - pi)`.
pub fn posterior_probability(lr: f64, prior: f64) -> Result<f64> {
    if lr.is_nan() || lr < 0.0 {
        return Err(Error::Domain(format!("likelihood ratio {lr} is negative")));
    }
    if !(0.0..=1.0).contains(&prior) {
        return Err(Error::Domain(format!("prior {prior} is outside [0, 1]")));
    }
    if lr == 0.0 || prior == 0.0 {
        return Ok(0.0);
    }
    if lr.is_infinite() {
        return Ok(1.0);
    }
    Ok(lr * prior / (lr * prior + (1.0 - prior)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum UnionMode {
    Weighted,
    Min,
    Max,
    /// Weighted ratio at each prior vector of the grid.
    Range(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum UnionResult {
    Value(f64),
    Range(Vec<(Vec<f64>, f64)>),
}

fn weighted_union(lrs: &[f64], priors: &[f64]) -> Result<f64> {
    if priors.len() != lrs.len() {
        return Err(Error::Validation(format!("{} priors for {} hypotheses", priors.len(), lrs.len())));
    }
    if priors.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Domain("union priors must be nonnegative".into()));
    }
    let total: f64 = priors.iter().sum();
    if total <= 0.0 {
        return Err(Error::Domain("union priors are all zero".into()));
    }
    Ok(lrs.iter().zip(priors).map(|(l, p)| l * p).sum::<f64>() / total)
}

/// Ratio for the union of hypotheses `H_k` given their relative priors
/// within the union: `sum_k LR_k P(H_k | union)`.
pub fn combine_union(lrs: &[f64], priors: &[f64], mode: &UnionMode) -> Result<UnionResult> {
    if lrs.is_empty() {
        return Err(Error::Validation("union of no hypotheses".into()));
    }
    if lrs.iter().any(|l| l.is_nan() || *l < 0.0) {
        return Err(Error::Domain("likelihood ratios must be nonnegative".into()));
    }
    Ok(match mode {
        UnionMode::Weighted => UnionResult::Value(weighted_union(lrs, priors)?),
        UnionMode::Min => UnionResult::Value(lrs.iter().cloned().fold(f64::INFINITY, f64::min)),
        UnionMode::Max => UnionResult::Value(lrs.iter().cloned().fold(0.0, f64::max)),
        UnionMode::Range(grid) => UnionResult::Range(
            grid.iter()
                .map(|p| Ok((p.clone(), weighted_union(lrs, p)?)))
                .collect::<Result<_>>()?,
        ),
    })
}

/// Prior vectors `(w, 1 - w)` for `w = 0, 1/steps, ..., 1`.
pub fn two_way_grid(steps: usize) -> Vec<Vec<f64>> {
    (0..=steps)
        .map(|i| {
            let w = i as f64 / steps as f64;
            vec![w, 1.0 - w]
        })
        .collect()
}

/// A hypothesis bound to case evidence and a frozen parameter context.
pub struct KinshipAnalysis<'a> {
    evidence: &'a CaseEvidence,
    context: &'a NullContext,
    hypothesis: Hypothesis,
    params: Vec<GammaParams>,
    relatives: Vec<RelativeEvidence>,
    null: Vec<f64>,
}

impl<'a> KinshipAnalysis<'a> {
    pub fn new(evidence: &'a CaseEvidence, hypothesis: &Hypothesis, context: &'a NullContext) -> Result<Self> {
        if hypothesis.target >= evidence.n_contributors() {
            return Err(Error::Validation(format!("target index {} outside roster", hypothesis.target)));
        }
        if context.params().len() != evidence.n_traces() {
            return Err(Error::Validation(format!(
                "parameter context has {} traces, case has {}",
                context.params().len(),
                evidence.n_traces()
            )));
        }
        let relatives = evidence
            .markers
            .iter()
            .map(|m| relative_evidence(evidence, m, hypothesis))
            .collect::<Result<Vec<_>>>()?;
        let params = context.gamma_params();
        let priors = null_priors(evidence.n_contributors());
        let null = evidence
            .markers
            .par_iter()
            .map(|m| MarkerModel::compile(m, &priors, None)?.log_likelihood(&params))
            .collect::<Result<Vec<_>>>()?;
        Ok(KinshipAnalysis {
            evidence,
            context,
            hypothesis: hypothesis.clone(),
            params,
            relatives,
            null,
        })
    }

    pub fn hypothesis(&self) -> &Hypothesis {
        &self.hypothesis
    }

    /// Relatives' genotypes at each evidence marker, in marker order.
    pub fn relatives(&self) -> &[RelativeEvidence] {
        &self.relatives
    }

    /// Genotype-level ratio for the target at marker `m`.
    pub fn lr_ugt(&self, m: usize, ugt: Genotype) -> Result<f64> {
        self.relatives[m].lr_ugt(ugt, self.evidence.markers[m].panel.freqs())
    }

    pub fn run(&self, method: Method) -> Result<LrReport> {
        if !method.supports(self.hypothesis.relationship) {
            return Err(Error::Unsupported(format!(
                "method {method} does not handle {}; use wlr, aln or rpt",
                self.hypothesis.relationship
            )));
        }
        let lrs = (0..self.evidence.markers.len())
            .into_par_iter()
            .map(|m| self.marker_lr(method, m))
            .collect::<Result<Vec<_>>>()?;
        let markers = self
            .evidence
            .markers
            .iter()
            .zip(lrs)
            .map(|(ev, lr)| MarkerLr {
                marker: ev.marker.clone(),
                lr,
            })
            .collect();
        Ok(LrReport::new(method, self, markers))
    }

    /// Every method that handles the relationship.
    pub fn run_all(&self) -> Result<Vec<LrReport>> {
        Method::ALL
            .into_iter()
            .filter(|m| m.supports(self.hypothesis.relationship))
            .map(|m| self.run(m))
            .collect()
    }

    fn marker_lr(&self, method: Method, m: usize) -> Result<f64> {
        let rel = &self.relatives[m];
        if *rel == RelativeEvidence::Neutral {
            return Ok(1.0);
        }
        let ev = &self.evidence.markers[m];
        let q = ev.panel.freqs();
        let target = self.hypothesis.target;
        let with_marker = |e: Error| match e {
            Error::MaternalExclusion { .. } => Error::MaternalExclusion {
                marker: ev.marker.clone(),
            },
            e => e,
        };
        if let Some(g) = ev.clamps[target] {
            return rel.lr_ugt(g, q).map_err(with_marker);
        }
        let mut priors = null_priors(self.evidence.n_contributors());
        let ratio = |num: f64| (num - self.null[m]).exp();
        match method {
            Method::Wlr => {
                let post = MarkerModel::compile(ev, &priors, Some(target))?.posterior(&self.params)?;
                let mut sum = 0.0;
                for e in &post.entries {
                    sum += rel.lr_ugt(e.genotype, q).map_err(with_marker)? * e.probability;
                }
                Ok(sum)
            }
            Method::Aln => {
                priors[target].factor = rel.count_factor(q).map_err(with_marker)?;
                Ok(ratio(self.numerator(ev, &priors)?))
            }
            Method::Rpt => {
                let options = rel.ibd_options(q).map_err(with_marker)?.expect("non-neutral");
                priors[target] = ChainSpec::with_prior(ContributorPrior::Replaced(options));
                Ok(ratio(self.numerator(ev, &priors)?))
            }
            Method::Mbn => {
                let RelativeEvidence::ChildOnly { cgt } = *rel else {
                    return Err(Error::Unsupported("meiosis chain with a typed mother".into()));
                };
                priors[target] = ChainSpec::with_prior(ContributorPrior::Meiosis { child: cgt });
                Ok(ratio(self.numerator(ev, &priors)?) / hw_probability(cgt, q))
            }
        }
    }

    fn numerator(&self, ev: &MarkerEvidence, priors: &[ChainSpec]) -> Result<f64> {
        MarkerModel::compile(ev, priors, None)?.log_likelihood(&self.params)
    }
}

fn relative_evidence(evidence: &CaseEvidence, m: &MarkerEvidence, h: &Hypothesis) -> Result<RelativeEvidence> {
    if evidence.is_sex_marker(&m.marker) {
        return Ok(RelativeEvidence::Neutral);
    }
    let genotype = |p: &GenotypeProfile| -> Result<Option<Genotype>> {
        p.genotype(&m.marker).map(|pair| panel_genotype(&m.panel, pair, &p.person_id)).transpose()
    };
    let Some(cgt) = genotype(&h.relative)? else {
        return Ok(RelativeEvidence::Neutral);
    };
    let mgt = match &h.mother {
        Some(mother) => match genotype(mother)? {
            Some(mgt) => Some(mgt),
            None => {
                log::warn!(
                    "marker {}: mother {} not typed; using the child-only ratio",
                    m.marker,
                    mother.person_id
                );
                None
            }
        },
        None => None,
    };
    Ok(match mgt {
        Some(mgt) => {
            if paternal_allele(cgt, mgt).is_none() {
                return Err(Error::MaternalExclusion {
                    marker: m.marker.clone(),
                });
            }
            RelativeEvidence::WithMother { cgt, mgt }
        }
        None => RelativeEvidence::ChildOnly { cgt },
    })
}

fn panel_genotype(panel: &Panel, pair: &crate::evidence::AllelePair, person: &str) -> Result<Genotype> {
    panel
        .genotype(pair)
        .map_err(|e| Error::Validation(format!("profile {person}: {e}")))
}

/// Runs one method for a case, fitting nothing: parameters come from `context`.
pub fn likelihood_ratio(
    case: &CaseBundle,
    hypothesis: &Hypothesis,
    context: &NullContext,
    method: Method,
) -> Result<LrReport> {
    let evidence = CaseEvidence::from_case(case)?;
    KinshipAnalysis::new(&evidence, hypothesis, context)?.run(method)
}

#[cfg(test)]
mod tests {
    use super::*;

    const Q4: [f64; 4] = [0.25; 4];

    fn g(a: usize, b: usize) -> Genotype {
        Genotype::new(a, b)
    }

    #[test]
    fn child_only_cases() {
        assert_eq!(lr_ugt_child_only(g(0, 1), g(0, 1), &Q4).unwrap(), 2.0);
        assert_eq!(lr_ugt_child_only(g(1, 2), g(0, 0), &Q4).unwrap(), 0.0);
        assert_eq!(lr_ugt_child_only(g(0, 0), g(0, 0), &Q4).unwrap(), 4.0);
        assert!(lr_ugt_child_only(g(0, 0), g(0, 0), &[0.0, 1.0]).is_err());
    }

    #[test]
    fn mother_child_cases() {
        let q = [0.3, 0.2, 0.5];
        // paternal b forced
        assert!((lr_ugt_mother_child(g(1, 1), g(0, 1), g(0, 0), &q).unwrap() - 5.0).abs() < 1e-15);
        assert_eq!(lr_ugt_mother_child(g(0, 1), g(0, 1), g(0, 1), &Q4).unwrap(), 2.0);
        assert_eq!(lr_ugt_mother_child(g(0, 0), g(0, 1), g(0, 2), &Q4).unwrap(), 0.0);
        assert!(matches!(
            lr_ugt_mother_child(g(0, 0), g(0, 1), g(2, 3), &Q4),
            Err(Error::MaternalExclusion { .. })
        ));
        assert!(lr_ugt_mother_child(g(0, 0), g(0, 0), g(1, 2), &Q4).is_err());
    }

    #[test]
    fn ratios_average_to_one_under_the_prior() {
        // E[LR_Ugt] over Hardy-Weinberg Ugt is 1 for every relative setting
        let q = [0.1, 0.2, 0.3, 0.4];
        let settings = [
            RelativeEvidence::ChildOnly { cgt: g(1, 1) },
            RelativeEvidence::ChildOnly { cgt: g(0, 3) },
            RelativeEvidence::WithMother { cgt: g(0, 2), mgt: g(2, 3) },
            RelativeEvidence::WithMother { cgt: g(1, 2), mgt: g(1, 2) },
        ];
        for rel in settings {
            let mean: f64 = Genotype::all(4).map(|u| rel.lr_ugt(u, &q).unwrap() * hw_probability(u, &q)).sum();
            assert!((mean - 1.0).abs() < 1e-12, "{rel:?}");
        }
    }

    #[test]
    fn factor_and_ibd_weights_match_formula() {
        let q = [0.1, 0.2, 0.3, 0.4];
        let settings = [
            RelativeEvidence::ChildOnly { cgt: g(1, 1) },
            RelativeEvidence::ChildOnly { cgt: g(0, 3) },
            RelativeEvidence::WithMother { cgt: g(0, 2), mgt: g(2, 3) },
            RelativeEvidence::WithMother { cgt: g(1, 2), mgt: g(1, 2) },
        ];
        for rel in settings {
            let f = rel.count_factor(&q).unwrap().unwrap();
            let opts = rel.ibd_options(&q).unwrap().unwrap();
            for u in Genotype::all(4) {
                let lr = rel.lr_ugt(u, &q).unwrap();
                let m0 = u.count(f.positions[0]) as usize;
                let m1 = f.positions.get(1).map(|&p| u.count(p) as usize).unwrap_or(0);
                assert!((f.table[m0][m1] - lr).abs() < 1e-12);
                // replaced prior: shared allele x with weight w, other allele from the population
                let replaced: f64 = opts
                    .iter()
                    .map(|&(x, w)| {
                        let other = if u.low == x {
                            Some(u.high)
                        } else if u.high == x {
                            Some(u.low)
                        } else {
                            None
                        };
                        other.map_or(0.0, |o| w * q[o])
                    })
                    .sum();
                assert!((replaced - lr * hw_probability(u, &q)).abs() < 1e-12, "{rel:?} {u:?}");
            }
        }
    }

    #[test]
    fn posterior_probability_fixtures() {
        assert!((posterior_probability(370.0, 0.5).unwrap() - 0.99730).abs() < 1e-5);
        let p = posterior_probability(10f64.powf(5.4251), 0.5).unwrap();
        assert!((p - 0.999996).abs() < 1e-6);
        assert_eq!(posterior_probability(0.0, 0.5).unwrap(), 0.0);
        assert!(posterior_probability(-1.0, 0.5).is_err());
        assert!(posterior_probability(1.0, 1.5).is_err());
        let a = posterior_probability(2.0, 0.1).unwrap();
        let b = posterior_probability(3.0, 0.1).unwrap();
        assert!(b > a);
    }

    #[test]
    fn union_fixtures() {
        let lrs = [188330.3, 37.05];
        let UnionResult::Value(w) = combine_union(&lrs, &[0.5, 0.5], &UnionMode::Weighted).unwrap() else {
            panic!()
        };
        assert!((w / 94183.67 - 1.0).abs() < 1e-6);
        assert_eq!(
            combine_union(&lrs, &[1.0, 1.0], &UnionMode::Min).unwrap(),
            UnionResult::Value(37.05)
        );
        assert_eq!(
            combine_union(&lrs, &[1.0, 1.0], &UnionMode::Max).unwrap(),
            UnionResult::Value(188330.3)
        );
        for mode in [UnionMode::Weighted, UnionMode::Min, UnionMode::Max] {
            assert_eq!(combine_union(&[7.5], &[2.0], &mode).unwrap(), UnionResult::Value(7.5));
        }
        let UnionResult::Range(r) = combine_union(&lrs, &[], &UnionMode::Range(two_way_grid(4))).unwrap() else {
            panic!()
        };
        assert_eq!(r.len(), 5);
        assert_eq!(r[0].1, 37.05);
        assert_eq!(r[4].1, 188330.3);
        assert!(combine_union(&lrs, &[0.0, 0.0], &UnionMode::Weighted).is_err());
    }

    #[test]
    fn lr_formatting() {
        assert_eq!(format_lr(1.0800001), "1.08000");
        assert_eq!(format_lr(188330.3), "188330");
        assert_eq!(format_lr(0.0), "0");
        assert_eq!(format_lr(2.5e20), "2.50000e20");
        assert_eq!(format_log10(5.42514), "5.4251");
    }
}
