//! Exact per-marker likelihoods and genotype posteriors.
//!
//! Each contributor's counts over the ordered allele panel form a Markov
//! chain ([`chain`]); the product chain is compiled once per marker into a
//! layered graph ([`model`]) and evaluated by a scaled forward pass, or by
//! forward-backward in log space for posteriors.

pub mod chain;
pub mod evidence;
pub mod model;

use rayon::prelude::*;

pub use chain::{prior_transition, ChainSpec, ContributorPrior, CountFactor, GenotypeChain};
pub use evidence::{apply_sex_evidence, CaseEvidence, Genotype, MarkerEvidence, Panel, TraceObservation};
pub use model::{EmissionTable, GenotypePosterior, MarkerModel, PosteriorEntry};

use crate::error::Result;
use crate::peak::GammaParams;

pub fn marker_log_likelihood(evidence: &MarkerEvidence, params: &[GammaParams], priors: &[ChainSpec]) -> Result<f64> {
    MarkerModel::compile(evidence, priors, None)?.log_likelihood(params)
}

pub fn marker_posterior(
    evidence: &MarkerEvidence,
    params: &[GammaParams],
    priors: &[ChainSpec],
    target: usize,
) -> Result<GenotypePosterior> {
    MarkerModel::compile(evidence, priors, Some(target))?.posterior(params)
}

/// Hardy-Weinberg priors for every contributor.
pub fn null_priors(n_contributors: usize) -> Vec<ChainSpec> {
    vec![ChainSpec::hardy_weinberg(); n_contributors]
}

/// Compiled models for every marker of a case.
#[derive(Debug, Clone)]
pub struct CaseModel {
    pub markers: Vec<MarkerModel>,
    thresholds: Vec<Option<f64>>,
    n_contributors: usize,
}

impl CaseModel {
    /// Compiles every marker with priors chosen per marker.
    pub fn compile<F>(case: &CaseEvidence, priors: F) -> Result<Self>
    where
        F: Fn(&MarkerEvidence) -> Result<Vec<ChainSpec>> + Sync,
    {
        let markers = case
            .markers
            .par_iter()
            .map(|m| MarkerModel::compile(m, &priors(m)?, None))
            .collect::<Result<Vec<_>>>()?;
        let thresholds = (0..case.n_traces())
            .map(|t| case.markers.iter().find_map(|m| m.traces[t].as_ref().map(|o| o.threshold)))
            .collect();
        Ok(CaseModel {
            markers,
            thresholds,
            n_contributors: case.n_contributors(),
        })
    }

    /// Every contributor Hardy-Weinberg apart from clamps.
    pub fn null(case: &CaseEvidence) -> Result<Self> {
        let priors = null_priors(case.n_contributors());
        Self::compile(case, |_| Ok(priors.clone()))
    }

    /// Per-marker log-likelihoods, in marker order.
    pub fn marker_log_likelihoods(&self, params: &[GammaParams]) -> Result<Vec<f64>> {
        let table = EmissionTable::new(params, &self.thresholds, self.n_contributors);
        self.markers.par_iter().map(|m| m.log_likelihood_with(params, &table)).collect()
    }

    /// Total log-likelihood, summed in marker order regardless of threading.
    pub fn log_likelihood(&self, params: &[GammaParams]) -> Result<f64> {
        Ok(self.marker_log_likelihoods(params)?.iter().sum())
    }
}
