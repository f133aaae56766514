//! Case data: allele frequencies, peak tables, reference profiles and the
//! case configuration that ties them together.

mod allele;
mod case;
mod frequencies;
mod peaks;
mod profile;

pub use allele::{Allele, AlleleKey};
pub use case::{
    CaseBundle, CaseConfig, CaseOptions, Contributor, ContributorConfig, FitConfig, KinshipConfig, ProfileConfig,
    Sex, TraceConfig,
};
pub use frequencies::{FrequencyTable, MarkerFrequencies};
pub use peaks::{MarkerPeaks, Peak, PeakTable};
pub use profile::{AllelePair, GenotypeProfile};
