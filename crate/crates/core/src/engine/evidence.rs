use super::chain::MAX_TAGGED_ALLELES;
use crate::error::{Error, Result};
use crate::evidence::{Allele, AllelePair, CaseBundle, MarkerFrequencies, Sex};

/// Ordered allele panel of one marker with the quantities the chains need.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    alleles: Vec<Allele>,
    freqs: Vec<f64>,
    continuation: Vec<f64>,
    stutter_from_above: Vec<bool>,
}

impl Panel {
    /// `alleles` must be sorted ascending with positive frequencies summing
    /// to one.
    pub fn new(alleles: Vec<Allele>, freqs: Vec<f64>) -> Self {
        assert_eq!(alleles.len(), freqs.len());
        assert!(!alleles.is_empty());
        let n = freqs.len();
        let mut tail = vec![0.0; n + 1];
        for a in (0..n).rev() {
            tail[a] = tail[a + 1] + freqs[a];
        }
        let continuation = (0..n)
            .map(|a| if a + 1 == n { 1.0 } else { (freqs[a] / tail[a]).min(1.0) })
            .collect();
        let stutter_from_above = (0..n)
            .map(|a| a + 1 < n && alleles[a].is_one_unit_below(&alleles[a + 1]))
            .collect();
        Panel {
            alleles,
            freqs,
            continuation,
            stutter_from_above,
        }
    }

    pub fn from_frequencies(m: &MarkerFrequencies) -> Self {
        Panel::new(m.alleles().to_vec(), m.freqs().to_vec())
    }

    pub fn len(&self) -> usize {
        self.alleles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alleles.is_empty()
    }

    pub fn alleles(&self) -> &[Allele] {
        &self.alleles
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn position(&self, allele: &Allele) -> Option<usize> {
        self.alleles.binary_search(allele).ok()
    }

    /// `q_a / sum_{b >= a} q_b`, exactly 1 at the last position.
    pub fn continuation(&self, pos: usize) -> f64 {
        self.continuation[pos]
    }

    /// Whether allele `pos + 1` stutters into `pos`.
    pub fn stutter_from_above(&self, pos: usize) -> bool {
        self.stutter_from_above[pos]
    }

    pub fn stutter_links(&self) -> &[bool] {
        &self.stutter_from_above
    }

    pub fn genotype(&self, pair: &AllelePair) -> Result<Genotype> {
        let pos = |a: &Allele| {
            self.position(a)
                .ok_or_else(|| Error::Validation(format!("allele {a} not in panel")))
        };
        Ok(Genotype::new(pos(pair.first())?, pos(pair.second())?))
    }
}

/// Unordered genotype as panel positions, `low <= high`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genotype {
    pub low: usize,
    pub high: usize,
}

impl Genotype {
    pub fn new(a: usize, b: usize) -> Self {
        Genotype {
            low: a.min(b),
            high: a.max(b),
        }
    }

    pub fn is_homozygous(&self) -> bool {
        self.low == self.high
    }

    pub fn count(&self, pos: usize) -> u8 {
        (self.low == pos) as u8 + (self.high == pos) as u8
    }

    pub fn counts(&self, len: usize) -> Vec<u8> {
        (0..len).map(|a| self.count(a)).collect()
    }

    pub fn check(&self, panel: &Panel) -> Result<()> {
        if self.high >= panel.len() {
            return Err(Error::Invariant(format!(
                "genotype {:?} outside a panel of {} alleles",
                self,
                panel.len()
            )));
        }
        Ok(())
    }

    pub fn labels<'a>(&self, panel: &'a Panel) -> (&'a Allele, &'a Allele) {
        (&panel.alleles[self.low], &panel.alleles[self.high])
    }

    /// Every unordered genotype on a panel of `len` alleles, in order.
    pub fn all(len: usize) -> impl Iterator<Item = Genotype> {
        (0..len).flat_map(move |a| (a..len).map(move |b| Genotype::new(a, b)))
    }
}

/// Peak data of one trace at one marker, aligned to the panel.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceObservation {
    pub threshold: f64,
    /// Heights at or above the threshold; `None` marks a dropout, whether
    /// unlisted or recorded below the threshold.
    pub heights: Vec<Option<f64>>,
    /// Peaks recorded below the threshold (informational).
    pub sub_threshold: Vec<bool>,
}

impl TraceObservation {
    pub fn new(threshold: f64, heights: Vec<Option<f64>>) -> Result<Self> {
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(Error::Domain(format!("threshold C must be positive, got {threshold}")));
        }
        let mut sub = vec![false; heights.len()];
        let mut kept = heights;
        for (h, s) in kept.iter_mut().zip(&mut sub) {
            if let Some(z) = *h {
                if !(z >= 0.0 && z.is_finite()) {
                    return Err(Error::Domain(format!("peak height must be nonnegative, got {z}")));
                }
                if z < threshold {
                    *h = None;
                    *s = true;
                }
            }
        }
        Ok(TraceObservation {
            threshold,
            heights: kept,
            sub_threshold: sub,
        })
    }
}

/// Everything the engine needs at one marker.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerEvidence {
    pub marker: String,
    pub panel: Panel,
    /// One entry per trace of the case; `None` when the trace did not type
    /// this marker, in which case it contributes no terms.
    pub traces: Vec<Option<TraceObservation>>,
    /// Per contributor: genotype fixed by a reference profile or by sex.
    pub clamps: Vec<Option<Genotype>>,
}

impl MarkerEvidence {
    pub fn new(
        marker: &str,
        panel: Panel,
        traces: Vec<Option<TraceObservation>>,
        clamps: Vec<Option<Genotype>>,
    ) -> Result<Self> {
        for t in traces.iter().flatten() {
            if t.heights.len() != panel.len() {
                return Err(Error::Invariant(format!(
                    "marker {marker}: {} heights for {} alleles",
                    t.heights.len(),
                    panel.len()
                )));
            }
        }
        for g in clamps.iter().flatten() {
            g.check(&panel)?;
        }
        Ok(MarkerEvidence {
            marker: marker.to_string(),
            panel,
            traces,
            clamps,
        })
    }

    pub fn n_contributors(&self) -> usize {
        self.clamps.len()
    }

    pub fn n_traces(&self) -> usize {
        self.traces.len()
    }

    /// The same evidence with no peak data, e.g. for prior computations.
    pub fn without_peaks(&self) -> Self {
        MarkerEvidence {
            traces: vec![None; self.traces.len()],
            ..self.clone()
        }
    }

    pub fn has_peak_data(&self) -> bool {
        self.traces.iter().any(|t| t.is_some())
    }
}

/// Clamps `contributor` at a sex marker to `{X, Y}` (male) or `{X, X}`
/// (female). Evidence whose panel lacks the needed pseudo-alleles is
/// returned unchanged with a warning.
pub fn apply_sex_evidence(evidence: &MarkerEvidence, contributor: usize, sex: Sex) -> MarkerEvidence {
    let mut out = evidence.clone();
    let x = evidence.panel.position(&Allele::new("X"));
    let y = evidence.panel.position(&Allele::new("Y"));
    let clamp = match (sex, x, y) {
        (Sex::Male, Some(x), Some(y)) => Some(Genotype::new(x, y)),
        (Sex::Female, Some(x), _) => Some(Genotype::new(x, x)),
        _ => None,
    };
    match clamp {
        Some(g) if contributor < out.clamps.len() => out.clamps[contributor] = Some(g),
        _ => log::warn!(
            "marker {}: cannot apply sex evidence to contributor {contributor}; left unchanged",
            evidence.marker
        ),
    }
    out
}

/// Engine view of a whole case: one [`MarkerEvidence`] per marker typed in
/// at least one trace, in frequency-table order.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseEvidence {
    pub markers: Vec<MarkerEvidence>,
    pub trace_ids: Vec<String>,
    pub contributor_ids: Vec<String>,
    pub sex_marker: String,
}

impl CaseEvidence {
    pub fn from_case(case: &CaseBundle) -> Result<Self> {
        let n = case.roster.len();
        let mut markers = Vec::new();
        for mf in case.frequencies.markers() {
            let name = mf.name();
            if case.traces.iter().all(|t| t.marker(name).is_none()) {
                continue;
            }
            let panel = Panel::from_frequencies(mf);
            if name != case.options.sex_marker && panel.len() > MAX_TAGGED_ALLELES {
                return Err(Error::Unsupported(format!(
                    "marker {name} has {} alleles; at most {MAX_TAGGED_ALLELES} are supported",
                    panel.len()
                )));
            }
            let mut traces = Vec::with_capacity(case.traces.len());
            for t in &case.traces {
                traces.push(match t.marker(name) {
                    None => None,
                    Some(mp) => {
                        let mut heights = vec![None; panel.len()];
                        for p in &mp.peaks {
                            let pos = panel.position(&p.allele).ok_or_else(|| {
                                Error::Validation(format!("marker {name}: allele {} not in panel", p.allele))
                            })?;
                            heights[pos] = Some(p.height);
                        }
                        Some(TraceObservation::new(t.threshold, heights)?)
                    }
                });
            }
            let mut clamps = vec![None; n];
            for (i, c) in case.roster.iter().enumerate() {
                if let Some(pid) = &c.profile {
                    let profile = case
                        .profile(pid)
                        .ok_or_else(|| Error::Validation(format!("unknown profile {pid}")))?;
                    if let Some(pair) = profile.genotype(name) {
                        clamps[i] = Some(panel.genotype(pair)?);
                    }
                }
            }
            let mut ev = MarkerEvidence::new(name, panel, traces, clamps)?;
            if case.is_sex_marker(name) {
                for (i, c) in case.roster.iter().enumerate() {
                    if let (Some(sex), None) = (c.sex, ev.clamps[i]) {
                        ev = apply_sex_evidence(&ev, i, sex);
                    }
                }
            }
            markers.push(ev);
        }
        if markers.is_empty() {
            return Err(Error::Validation("no marker is typed in any trace".into()));
        }
        Ok(CaseEvidence {
            markers,
            trace_ids: case.traces.iter().map(|t| t.trace_id.clone()).collect(),
            contributor_ids: case.roster.iter().map(|c| c.id.clone()).collect(),
            sex_marker: case.options.sex_marker.clone(),
        })
    }

    pub fn n_traces(&self) -> usize {
        self.trace_ids.len()
    }

    pub fn n_contributors(&self) -> usize {
        self.contributor_ids.len()
    }

    pub fn marker(&self, name: &str) -> Option<&MarkerEvidence> {
        self.markers.iter().find(|m| m.marker == name)
    }

    pub fn is_sex_marker(&self, name: &str) -> bool {
        name == self.sex_marker
    }

    /// Number of observed (at or above threshold) peaks in each trace.
    pub fn observed_peaks(&self) -> Vec<usize> {
        (0..self.n_traces())
            .map(|t| {
                self.markers
                    .iter()
                    .filter_map(|m| m.traces[t].as_ref())
                    .map(|o| o.heights.iter().flatten().count())
                    .sum()
            })
            .collect()
    }
}
