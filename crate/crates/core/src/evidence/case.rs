use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::allele::Allele;
use super::frequencies::{FrequencyTable, MarkerFrequencies};
use super::peaks::PeakTable;
use super::profile::GenotypeProfile;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

fn default_floor() -> f64 {
    0.001
}

fn default_sex_marker() -> String {
    "AMEL".to_string()
}

fn default_sex_freqs() -> [f64; 2] {
    [0.5, 0.5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub id: String,
    pub peaks: PathBuf,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributorConfig {
    pub id: String,
    /// Profile id of a known contributor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sex: Option<Sex>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinshipConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// `parent-of-child`, `parent-of-child-with-mother` or `child-of-parent`.
    pub relationship: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub child: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mother: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "FitConfig::default_restarts")]
    pub restarts: usize,
    #[serde(default = "FitConfig::default_seed")]
    pub seed: u64,
    #[serde(default = "FitConfig::default_max_evaluations")]
    pub max_evaluations: usize,
}

impl FitConfig {
    fn default_restarts() -> usize {
        5
    }
    fn default_seed() -> u64 {
        1
    }
    fn default_max_evaluations() -> usize {
        20_000
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            restarts: Self::default_restarts(),
            seed: Self::default_seed(),
            max_evaluations: Self::default_max_evaluations(),
        }
    }
}

/// The case configuration file (TOML). Relative paths resolve against the
/// directory containing the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub frequencies: PathBuf,
    #[serde(default = "default_floor")]
    pub frequency_floor: f64,
    #[serde(default = "default_sex_marker")]
    pub sex_marker: String,
    /// Pseudo-frequencies of X and Y at the sex marker.
    #[serde(default = "default_sex_freqs")]
    pub sex_pseudo_frequencies: [f64; 2],
    pub traces: Vec<TraceConfig>,
    #[serde(default)]
    pub profiles: Vec<ProfileConfig>,
    pub contributors: Vec<ContributorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinship: Option<KinshipConfig>,
    #[serde(default)]
    pub fit: FitConfig,
}

impl CaseConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].lines().count() as u64)
                .unwrap_or(0);
            Error::parse(path, line, e.message().to_string())
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseOptions {
    pub frequency_floor: f64,
    pub sex_marker: String,
    pub sex_pseudo_frequencies: [f64; 2],
}

impl Default for CaseOptions {
    fn default() -> Self {
        CaseOptions {
            frequency_floor: default_floor(),
            sex_marker: default_sex_marker(),
            sex_pseudo_frequencies: default_sex_freqs(),
        }
    }
}

/// One mixture contributor; roster position `i` is what labels like `U1`
/// or contributor index `i` refer to throughout a case.
#[derive(Debug, Clone, PartialEq)]
pub struct Contributor {
    pub id: String,
    pub profile: Option<String>,
    pub sex: Option<Sex>,
}

impl Contributor {
    pub fn unknown(id: &str) -> Self {
        Contributor {
            id: id.to_string(),
            profile: None,
            sex: None,
        }
    }
}

/// Everything needed to evaluate a case: validated panel, traces, typed
/// profiles and the contributor roster.
#[derive(Debug, Clone)]
pub struct CaseBundle {
    pub frequencies: FrequencyTable,
    pub traces: Vec<PeakTable>,
    pub profiles: Vec<GenotypeProfile>,
    pub roster: Vec<Contributor>,
    pub options: CaseOptions,
    /// Files read to build the case, for provenance.
    pub inputs: Vec<PathBuf>,
}

impl CaseBundle {
    /// Validates and normalizes in-memory case data: adds the sex marker's
    /// pseudo-alleles when needed, floors unseen alleles, and checks every
    /// peak and profile against the resulting panel.
    pub fn assemble(
        frequencies: FrequencyTable,
        traces: Vec<PeakTable>,
        profiles: Vec<GenotypeProfile>,
        roster: Vec<Contributor>,
        options: CaseOptions,
    ) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::Validation("case has no traces".into()));
        }
        if roster.is_empty() {
            return Err(Error::Validation("contributor roster is empty".into()));
        }
        for (i, c) in roster.iter().enumerate() {
            if roster[..i].iter().any(|o| o.id == c.id) {
                return Err(Error::Validation(format!("contributor {} listed twice", c.id)));
            }
            if let Some(p) = &c.profile {
                if !profiles.iter().any(|x| &x.person_id == p) {
                    return Err(Error::Validation(format!(
                        "contributor {} refers to unknown profile {p}",
                        c.id
                    )));
                }
            }
        }
        for (i, t) in traces.iter().enumerate() {
            if traces[..i].iter().any(|o| o.trace_id == t.trace_id) {
                return Err(Error::Validation(format!("trace {} listed twice", t.trace_id)));
            }
        }

        let mut frequencies = frequencies;
        let sex = &options.sex_marker;
        let sex_used = traces.iter().any(|t| t.marker(sex).is_some())
            || profiles.iter().any(|p| p.genotype(sex).is_some());
        if sex_used && frequencies.marker(sex).is_none() {
            let [x, y] = options.sex_pseudo_frequencies;
            let (m, _) = MarkerFrequencies::new(sex, vec![(Allele::new("X"), x), (Allele::new("Y"), y)])?;
            frequencies.push_marker(m);
        }

        let mut observed: BTreeSet<(String, Allele)> = BTreeSet::new();
        for t in &traces {
            for m in &t.markers {
                for p in &m.peaks {
                    observed.insert((m.marker.clone(), p.allele.clone()));
                }
            }
        }
        for p in &profiles {
            for (m, pair) in &p.markers {
                observed.insert((m.clone(), pair.first().clone()));
                observed.insert((m.clone(), pair.second().clone()));
            }
        }
        let frequencies = frequencies.augment_rare_alleles(&observed, options.frequency_floor)?;

        for t in &traces {
            t.validate_against(&frequencies)?;
        }
        for p in &profiles {
            p.validate_against(&frequencies)?;
        }
        Ok(CaseBundle {
            frequencies,
            traces,
            profiles,
            roster,
            options,
            inputs: Vec::new(),
        })
    }

    pub fn load(config_path: impl AsRef<Path>) -> Result<(Self, CaseConfig)> {
        let config_path = config_path.as_ref();
        let config = CaseConfig::from_path(config_path)?;
        let bundle = Self::from_config(&config, config_path.parent().unwrap_or(Path::new(".")))?;
        Ok((bundle, config))
    }

    pub fn from_config(config: &CaseConfig, base: &Path) -> Result<Self> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let mut inputs = Vec::new();

        let freq_path = resolve(&config.frequencies);
        let frequencies = FrequencyTable::from_path(&freq_path)?;
        inputs.push(freq_path);

        let mut traces = Vec::new();
        for t in &config.traces {
            let p = resolve(&t.peaks);
            traces.push(PeakTable::from_path(&p, &t.id, t.threshold)?);
            inputs.push(p);
        }
        let mut profiles = Vec::new();
        for pc in &config.profiles {
            let p = resolve(&pc.path);
            profiles.push(GenotypeProfile::from_path(&p, &pc.id)?);
            inputs.push(p);
        }
        let roster = config
            .contributors
            .iter()
            .map(|c| Contributor {
                id: c.id.clone(),
                profile: c.profile.clone(),
                sex: c.sex,
            })
            .collect();
        let options = CaseOptions {
            frequency_floor: config.frequency_floor,
            sex_marker: config.sex_marker.clone(),
            sex_pseudo_frequencies: config.sex_pseudo_frequencies,
        };
        let mut bundle = Self::assemble(frequencies, traces, profiles, roster, options)?;
        bundle.inputs = inputs;
        Ok(bundle)
    }

    pub fn profile(&self, id: &str) -> Option<&GenotypeProfile> {
        self.profiles.iter().find(|p| p.person_id == id)
    }

    pub fn contributor_index(&self, id: &str) -> Option<usize> {
        self.roster.iter().position(|c| c.id == id)
    }

    pub fn is_sex_marker(&self, marker: &str) -> bool {
        marker == self.options.sex_marker
    }

    /// Contributors without a reference profile; these are exchangeable
    /// under the null model.
    pub fn unknown_contributors(&self) -> Vec<usize> {
        self.roster
            .iter()
            .enumerate()
            .filter(|(_, c)| c.profile.is_none())
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::peaks::{MarkerPeaks, Peak};

    fn freqs() -> FrequencyTable {
        let (m, _) = MarkerFrequencies::new(
            "M",
            vec![(Allele::new("10"), 0.5), (Allele::new("11"), 0.5)],
        )
        .unwrap();
        FrequencyTable::from_markers(vec![m])
    }

    fn trace(markers: Vec<(&str, Vec<(&str, f64)>)>) -> PeakTable {
        let markers = markers
            .into_iter()
            .map(|(m, ps)| MarkerPeaks {
                marker: m.into(),
                peaks: ps
                    .into_iter()
                    .map(|(a, h)| Peak {
                        allele: Allele::new(a),
                        height: h,
                        sub_threshold: false,
                    })
                    .collect(),
            })
            .collect();
        PeakTable::new("T1", 50.0, markers).unwrap()
    }

    #[test]
    fn sex_marker_gets_pseudo_alleles_and_unseen_alleles_are_floored() {
        let t = trace(vec![("M", vec![("10", 300.0), ("12", 200.0)]), ("AMEL", vec![("X", 500.0)])]);
        let case = CaseBundle::assemble(freqs(), vec![t], vec![], vec![Contributor::unknown("U1")], CaseOptions::default())
            .unwrap();
        let amel = case.frequencies.marker("AMEL").unwrap();
        assert_eq!(amel.freqs(), &[0.5, 0.5]);
        let m = case.frequencies.marker("M").unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.frequency(&Allele::new("12")), Some(0.001));
    }

    #[test]
    fn roster_errors() {
        let t = trace(vec![("M", vec![("10", 300.0)])]);
        let dup = vec![Contributor::unknown("U1"), Contributor::unknown("U1")];
        assert!(CaseBundle::assemble(freqs(), vec![t.clone()], vec![], dup, CaseOptions::default()).is_err());
        let missing = vec![Contributor {
            id: "V".into(),
            profile: Some("nobody".into()),
            sex: None,
        }];
        assert!(CaseBundle::assemble(freqs(), vec![t.clone()], vec![], missing, CaseOptions::default()).is_err());
        assert!(CaseBundle::assemble(freqs(), vec![t], vec![], vec![], CaseOptions::default()).is_err());
    }

    #[test]
    fn config_parses_with_defaults() {
        let text = r#"
frequencies = "f.csv"

[[traces]]
id = "T1"
peaks = "t1.csv"
threshold = 50.0

[[contributors]]
id = "U1"
sex = "male"

[kinship]
relationship = "parent-of-child"
child = "cgt"
"#;
        let c = CaseConfig::from_toml(text, Path::new("case.toml")).unwrap();
        assert_eq!(c.frequency_floor, 0.001);
        assert_eq!(c.sex_marker, "AMEL");
        assert_eq!(c.contributors[0].sex, Some(Sex::Male));
        assert_eq!(c.fit.restarts, 5);
        let back = CaseConfig::from_toml(&c.to_toml(), Path::new("x")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let text = "frequencies = \"f.csv\"\nbogus = 1\ntraces = []\ncontributors = []\n";
        assert!(matches!(
            CaseConfig::from_toml(text, Path::new("case.toml")),
            Err(Error::Parse { .. })
        ));
    }
}
