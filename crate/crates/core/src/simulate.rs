//! Synthetic mixtures drawn from the gamma model.
//!
//! People are sampled first (Hardy-Weinberg, fixed profiles, or children of
//! other people by Mendelian sampling); each trace then draws one
//! Gamma(rho D_a, eta) height per panel position. Every random stream is a
//! ChaCha8 generator derived from the scenario seed, so a scenario and seed
//! always reproduce the same files.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{Allele, AllelePair, CaseBundle, CaseOptions, Contributor, FrequencyTable, KinshipConfig, GenotypeProfile, MarkerFrequencies, MarkerPeaks, Peak, PeakTable};
use crate::peak::{effective_doses, ModelParams};

/// How a simulated person's genotype is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum GenotypeSource {
    HardyWeinberg,
    Fixed(GenotypeProfile),
    /// Child of one or two earlier people; a missing second parent is drawn
    /// from the population.
    ChildOf(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimPerson {
    pub id: String,
    pub source: GenotypeSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub id: String,
    pub params: ModelParams,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub frequencies: FrequencyTable,
    pub people: Vec<SimPerson>,
    /// Person ids of the mixture contributors, in roster order.
    pub contributors: Vec<String>,
    pub traces: Vec<SimTrace>,
    pub seed: u64,
}

/// Sampled people and the traces simulated from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub people: Vec<GenotypeProfile>,
    pub traces: Vec<PeakTable>,
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        if self.traces.is_empty() {
            return Err(Error::Validation("scenario has no traces".into()));
        }
        for (i, p) in self.people.iter().enumerate() {
            if self.people[..i].iter().any(|o| o.id == p.id) {
                return Err(Error::Validation(format!("person {} listed twice", p.id)));
            }
            match &p.source {
                GenotypeSource::ChildOf(parents) => {
                    if parents.is_empty() || parents.len() > 2 {
                        return Err(Error::Validation(format!("person {}: one or two parents required", p.id)));
                    }
                    for parent in parents {
                        if !self.people[..i].iter().any(|o| &o.id == parent) {
                            return Err(Error::Validation(format!(
                                "person {}: parent {parent} must be listed earlier",
                                p.id
                            )));
                        }
                    }
                }
                GenotypeSource::Fixed(profile) => {
                    profile.validate_against(&self.frequencies)?;
                    for m in self.frequencies.markers() {
                        if profile.genotype(m.name()).is_none() {
                            return Err(Error::Validation(format!(
                                "person {}: fixed profile lacks marker {}",
                                p.id,
                                m.name()
                            )));
                        }
                    }
                }
                GenotypeSource::HardyWeinberg => {}
            }
        }
        if self.contributors.is_empty() {
            return Err(Error::Validation("scenario has no contributors".into()));
        }
        for c in &self.contributors {
            if !self.people.iter().any(|p| &p.id == c) {
                return Err(Error::Validation(format!("contributor {c} is not a listed person")));
            }
        }
        for t in &self.traces {
            t.params.validate()?;
            if t.params.phi.len() != self.contributors.len() {
                return Err(Error::Validation(format!(
                    "trace {}: {} fractions for {} contributors",
                    t.id,
                    t.params.phi.len(),
                    self.contributors.len()
                )));
            }
            if !(t.threshold > 0.0 && t.threshold.is_finite()) {
                return Err(Error::Domain(format!("trace {}: threshold must be positive", t.id)));
            }
        }
        Ok(())
    }

    /// The same scenario with the seed of replicate `r`.
    pub fn replicate(&self, r: u64) -> SimScenario {
        SimScenario {
            seed: self.seed.wrapping_add(r),
            ..self.clone()
        }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Samples every person's genotype (stream 0 of the seed).
    pub fn sample_people(&self) -> Result<Vec<GenotypeProfile>> {
        self.validate()?;
        let mut rng = self.rng(0);
        let mut out: Vec<GenotypeProfile> = Vec::with_capacity(self.people.len());
        for p in &self.people {
            let g = match &p.source {
                GenotypeSource::HardyWeinberg => sample_hw_profile(&self.frequencies, &p.id, &mut rng),
                GenotypeSource::Fixed(profile) => GenotypeProfile {
                    person_id: p.id.clone(),
                    ..profile.clone()
                },
                GenotypeSource::ChildOf(parents) => {
                    let find = |id: &String| out.iter().find(|o| &o.person_id == id).expect("validated");
                    let first = find(&parents[0]);
                    let second = parents.get(1).map(find);
                    sample_child(first, second, &self.frequencies, &p.id, &mut rng)?
                }
            };
            out.push(g);
        }
        Ok(out)
    }

    pub fn run(&self) -> Result<Simulation> {
        let people = self.sample_people()?;
        let traces = (0..self.traces.len())
            .map(|t| simulate_trace(self, &people, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Simulation { people, traces })
    }
}

impl Simulation {
    pub fn person(&self, id: &str) -> Option<&GenotypeProfile> {
        self.people.iter().find(|p| p.person_id == id)
    }

    /// A case built from the simulated traces. The roster lists the
    /// scenario's contributors under their person ids; people in `typed`
    /// contribute profiles, and contributors among them are clamped.
    pub fn to_case(&self, scenario: &SimScenario, typed: &[&str], options: CaseOptions) -> Result<CaseBundle> {
        let mut profiles = Vec::new();
        for id in typed {
            let p = self
                .person(id)
                .ok_or_else(|| Error::Validation(format!("unknown person {id}")))?;
            profiles.push(p.clone());
        }
        let roster = scenario
            .contributors
            .iter()
            .map(|c| Contributor {
                id: c.clone(),
                profile: typed.contains(&c.as_str()).then(|| c.clone()),
                sex: None,
            })
            .collect();
        CaseBundle::assemble(scenario.frequencies.clone(), self.traces.clone(), profiles, roster, options)
    }
}

fn draw_allele<R: Rng>(m: &MarkerFrequencies, rng: &mut R) -> Allele {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, q) in m.alleles().iter().zip(m.freqs()) {
        acc += q;
        if u < acc {
            return a.clone();
        }
    }
    m.alleles().last().expect("nonempty marker").clone()
}

/// A Hardy-Weinberg genotype at one marker.
pub fn sample_hw_genotype<R: Rng>(m: &MarkerFrequencies, rng: &mut R) -> AllelePair {
    let a = draw_allele(m, rng);
    let b = draw_allele(m, rng);
    AllelePair::new(a, b)
}

pub fn sample_hw_profile<R: Rng>(freqs: &FrequencyTable, id: &str, rng: &mut R) -> GenotypeProfile {
    GenotypeProfile {
        person_id: id.to_string(),
        markers: freqs
            .markers()
            .iter()
            .map(|m| (m.name().to_string(), sample_hw_genotype(m, rng)))
            .collect(),
    }
}

/// One allele from each parent, uniformly; an absent second parent
/// contributes a population allele. Markers untyped in a parent are treated
/// the same way.
pub fn sample_child<R: Rng>(
    parent: &GenotypeProfile,
    other: Option<&GenotypeProfile>,
    freqs: &FrequencyTable,
    id: &str,
    rng: &mut R,
) -> Result<GenotypeProfile> {
    let mut markers = Vec::new();
    for m in freqs.markers() {
        let from = |p: Option<&GenotypeProfile>, rng: &mut R| match p.and_then(|p| p.genotype(m.name())) {
            Some(g) => {
                if rng.random::<bool>() {
                    g.first().clone()
                } else {
                    g.second().clone()
                }
            }
            None => draw_allele(m, rng),
        };
        let a = from(Some(parent), rng);
        let b = from(other, rng);
        markers.push((m.name().to_string(), AllelePair::new(a, b)));
    }
    Ok(GenotypeProfile {
        person_id: id.to_string(),
        markers,
    })
}

/// Draws trace `trace` of the scenario from the given people (stream
/// `trace + 1` of the seed). Heights below the threshold are not recorded;
/// a marker with no recorded peak is kept as an empty marker.
pub fn simulate_trace(scenario: &SimScenario, people: &[GenotypeProfile], trace: usize) -> Result<PeakTable> {
    let t = scenario
        .traces
        .get(trace)
        .ok_or_else(|| Error::Validation(format!("no trace {trace} in scenario")))?;
    let gp = t.params.gamma_form();
    let mut rng = scenario.rng(trace as u64 + 1);
    let contributors: Vec<&GenotypeProfile> = scenario
        .contributors
        .iter()
        .map(|c| {
            people
                .iter()
                .find(|p| &p.person_id == c)
                .ok_or_else(|| Error::Validation(format!("no genotype for contributor {c}")))
        })
        .collect::<Result<_>>()?;
    let mut markers = Vec::new();
    for m in scenario.frequencies.markers() {
        let n = m.len();
        let mut counts = Vec::with_capacity(contributors.len());
        for p in &contributors {
            let g = p
                .genotype(m.name())
                .ok_or_else(|| Error::Validation(format!("{} untyped at {}", p.person_id, m.name())))?;
            let mut c = vec![0u8; n];
            for a in [g.first(), g.second()] {
                let pos = m
                    .position(a)
                    .ok_or_else(|| Error::Validation(format!("allele {a} not in panel of {}", m.name())))?;
                c[pos] += 1;
            }
            counts.push(c);
        }
        let links: Vec<bool> = (0..n)
            .map(|a| a + 1 < n && m.alleles()[a].is_one_unit_below(&m.alleles()[a + 1]))
            .collect();
        let doses = effective_doses(&counts, &gp.phi, gp.xi, &links);
        let mut peaks = Vec::new();
        for (a, d) in doses.iter().enumerate() {
            if *d <= 0.0 {
                continue;
            }
            let g = Gamma::new(gp.rho * d, gp.eta).map_err(|e| Error::Domain(e.to_string()))?;
            let h: f64 = g.sample(&mut rng);
            if h >= t.threshold {
                peaks.push(Peak {
                    allele: m.alleles()[a].clone(),
                    height: h,
                    sub_threshold: false,
                });
            }
        }
        markers.push(MarkerPeaks {
            marker: m.name().to_string(),
            peaks,
        });
    }
    PeakTable::new(&t.id, t.threshold, markers)
}

/// `n_markers` markers `M01, M02, ...` of `n_alleles` consecutive repeat
/// alleles starting at `first`, all equally frequent.
pub fn equifrequent_panel(n_markers: usize, n_alleles: usize, first: u32) -> Result<FrequencyTable> {
    if n_markers == 0 || n_alleles == 0 {
        return Err(Error::Validation("panel needs at least one marker and allele".into()));
    }
    let width = n_markers.to_string().len().max(2);
    let markers = (1..=n_markers)
        .map(|i| {
            let entries = (0..n_alleles)
                .map(|k| (Allele::new(&(first + k as u32).to_string()), 1.0 / n_alleles as f64))
                .collect();
            MarkerFrequencies::new(&format!("M{i:0width$}"), entries).map(|(m, _)| m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrequencyTable::from_markers(markers))
}

fn default_threshold() -> f64 {
    50.0
}

fn default_first_allele() -> u32 {
    10
}

/// Synthetic equifrequent panel description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelConfig {
    pub markers: usize,
    pub alleles: usize,
    #[serde(default = "default_first_allele")]
    pub first_allele: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonConfig {
    pub id: String,
    /// Profile CSV fixing this person's genotype.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<PathBuf>,
    /// Ids of one or two parents listed earlier.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub child_of: Vec<String>,
    /// Write this person's profile as a typed reference.
    #[serde(default)]
    pub typed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimTraceConfig {
    pub id: String,
    pub mu: f64,
    pub sigma: f64,
    #[serde(default)]
    pub xi: f64,
    pub phi: Vec<f64>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

/// Scenario file (TOML). Either `frequencies` or `panel` must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequencies: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panel: Option<PanelConfig>,
    #[serde(default)]
    pub seed: u64,
    pub people: Vec<PersonConfig>,
    /// Person ids of the mixture contributors.
    pub contributors: Vec<String>,
    pub traces: Vec<SimTraceConfig>,
    /// Copied into generated case files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinship: Option<KinshipConfig>,
}

impl ScenarioConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].lines().count() as u64).unwrap_or(0);
            Error::parse(path, line, e.message().to_string())
        })
    }

    /// Resolves files relative to `base` and builds the scenario.
    pub fn to_scenario(&self, base: &Path) -> Result<SimScenario> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let frequencies = match (&self.frequencies, &self.panel) {
            (Some(f), None) => FrequencyTable::from_path(resolve(f))?,
            (None, Some(p)) => equifrequent_panel(p.markers, p.alleles, p.first_allele)?,
            _ => {
                return Err(Error::Validation(
                    "scenario needs exactly one of `frequencies` and `panel`".into(),
                ))
            }
        };
        let mut people = Vec::new();
        for p in &self.people {
            let source = match (&p.profile, p.child_of.is_empty()) {
                (Some(path), true) => GenotypeSource::Fixed(GenotypeProfile::from_path(resolve(path), &p.id)?),
                (None, false) => GenotypeSource::ChildOf(p.child_of.clone()),
                (None, true) => GenotypeSource::HardyWeinberg,
                (Some(_), false) => {
                    return Err(Error::Validation(format!(
                        "person {}: give a profile or parents, not both",
                        p.id
                    )))
                }
            };
            people.push(SimPerson {
                id: p.id.clone(),
                source,
            });
        }
        let traces = self
            .traces
            .iter()
            .map(|t| SimTrace {
                id: t.id.clone(),
                params: ModelParams {
                    mu: t.mu,
                    sigma: t.sigma,
                    xi: t.xi,
                    phi: t.phi.clone(),
                },
                threshold: t.threshold,
            })
            .collect();
        let scenario = SimScenario {
            frequencies,
            people,
            contributors: self.contributors.clone(),
            traces,
            seed: self.seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}
