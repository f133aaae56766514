//! Per-marker ranking of contributor genotypes by posterior probability.

use std::io::Write;

use rayon::prelude::*;

use crate::engine::{null_priors, CaseEvidence, Genotype, GenotypePosterior, MarkerModel};
use crate::error::{Error, Result};
use crate::evidence::Allele;
use crate::kinship::{format_lr, RelativeEvidence};
use crate::peak::GammaParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopK {
    All,
    Count(usize),
}

impl std::str::FromStr for TopK {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(TopK::All);
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(TopK::Count(k)),
            _ => Err(Error::Validation(format!("top must be a positive count or `all`, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub genotype: Genotype,
    /// Alleles in ascending allele order.
    pub alleles: (Allele, Allele),
    pub probability: f64,
    /// Whether the genotype is consistent with the relatives; `None` when
    /// no relative is typed at the marker.
    pub compatible: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedGenotypes {
    pub marker: String,
    pub contributor: usize,
    pub entries: Vec<RankedEntry>,
}

/// Sorts by descending probability, ties by allele order, and keeps the
/// first `top_k` entries.
pub fn rank_genotypes(posterior: &GenotypePosterior, top_k: TopK) -> RankedGenotypes {
    let mut entries: Vec<RankedEntry> = posterior
        .entries
        .iter()
        .map(|e| {
            let (a, b) = e.alleles.clone();
            RankedEntry {
                genotype: e.genotype,
                alleles: if b < a { (b, a) } else { (a, b) },
                probability: e.probability,
                compatible: None,
            }
        })
        .collect();
    entries.sort_by(|x, y| y.probability.total_cmp(&x.probability).then_with(|| x.alleles.cmp(&y.alleles)));
    if let TopK::Count(k) = top_k {
        entries.truncate(k);
    }
    RankedGenotypes {
        marker: posterior.marker.clone(),
        contributor: posterior.contributor,
        entries,
    }
}

/// Flags each genotype compatible iff its genotype-level likelihood ratio
/// under the relationship is positive.
pub fn compatibility_flags(ranked: &RankedGenotypes, relatives: &RelativeEvidence, q: &[f64]) -> Result<RankedGenotypes> {
    let mut out = ranked.clone();
    if *relatives == RelativeEvidence::Neutral {
        return Ok(out);
    }
    for e in &mut out.entries {
        e.compatible = Some(relatives.lr_ugt(e.genotype, q)? > 0.0);
    }
    Ok(out)
}

/// Rankings for every marker and each listed contributor (all when
/// `contributors` is empty), markers in case order.
pub fn deconvolve(
    evidence: &CaseEvidence,
    params: &[GammaParams],
    contributors: &[usize],
    top_k: TopK,
) -> Result<Vec<RankedGenotypes>> {
    let targets: Vec<usize> = if contributors.is_empty() {
        (0..evidence.n_contributors()).collect()
    } else {
        contributors.to_vec()
    };
    if let Some(&bad) = targets.iter().find(|&&c| c >= evidence.n_contributors()) {
        return Err(Error::Validation(format!("contributor index {bad} outside roster")));
    }
    let priors = null_priors(evidence.n_contributors());
    let per_marker = evidence
        .markers
        .par_iter()
        .map(|m| {
            targets
                .iter()
                .map(|&c| Ok(rank_genotypes(&MarkerModel::compile(m, &priors, Some(c))?.posterior(params)?, top_k)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_marker.into_iter().flatten().collect())
}

/// `marker,contributor,rank,allele1,allele2,probability,compatible`.
pub fn write_csv<W: Write>(ranked: &[RankedGenotypes], contributor_ids: &[String], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Validation(format!("csv write failed: {e}"));
    w.write_record(["marker", "contributor", "rank", "allele1", "allele2", "probability", "compatible"])
        .map_err(err)?;
    for r in ranked {
        for (i, e) in r.entries.iter().enumerate() {
            let compatible = match e.compatible {
                Some(true) => "yes",
                Some(false) => "no",
                None => "NA",
            };
            w.write_record([
                r.marker.as_str(),
                &contributor_ids[r.contributor],
                &(i + 1).to_string(),
                e.alleles.0.label(),
                e.alleles.1.label(),
                &format_lr(e.probability),
                compatible,
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<deconvolution output>", e))?;
    Ok(())
}
