use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use super::allele::Allele;
use crate::error::{Error, Result};

/// Population allele frequencies of one marker, sorted by allele.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerFrequencies {
    name: String,
    alleles: Vec<Allele>,
    freqs: Vec<f64>,
}

impl MarkerFrequencies {
    /// Builds a marker from unsorted `(allele, frequency)` pairs, sorting
    /// alleles and normalizing the frequencies. Returns whether a rescale
    /// was needed.
    pub fn new(name: &str, entries: Vec<(Allele, f64)>) -> Result<(Self, bool)> {
        if entries.is_empty() {
            return Err(Error::Validation(format!("marker {name} has no alleles")));
        }
        let mut entries = entries;
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Validation(format!(
                    "marker {name}: duplicate allele {} / {}",
                    w[0].0, w[1].0
                )));
            }
        }
        for (allele, f) in &entries {
            if !(f.is_finite() && *f > 0.0) {
                return Err(Error::Validation(format!(
                    "marker {name}: allele {allele} has nonpositive frequency {f}"
                )));
            }
        }
        let (alleles, mut freqs): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let rescaled = normalize(&mut freqs);
        Ok((
            MarkerFrequencies {
                name: name.to_string(),
                alleles,
                freqs,
            },
            rescaled,
        ))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn alleles(&self) -> &[Allele] {
        &self.alleles
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn len(&self) -> usize {
        self.alleles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alleles.is_empty()
    }

    pub fn position(&self, allele: &Allele) -> Option<usize> {
        self.alleles.binary_search(allele).ok()
    }

    pub fn frequency(&self, allele: &Allele) -> Option<f64> {
        self.position(allele).map(|i| self.freqs[i])
    }
}

/// Rescales to unit sum when off by more than 1e-12; returns whether it did.
fn normalize(freqs: &mut [f64]) -> bool {
    let sum: f64 = freqs.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        freqs.iter_mut().for_each(|f| *f /= sum);
        true
    } else {
        false
    }
}

#[derive(Debug, Clone, Default)]
pub struct FrequencyTable {
    markers: Vec<MarkerFrequencies>,
    notes: Vec<String>,
}

impl PartialEq for FrequencyTable {
    fn eq(&self, other: &Self) -> bool {
        self.markers == other.markers
    }
}

#[derive(Debug, Deserialize)]
struct FrequencyRow {
    marker: String,
    allele: String,
    frequency: f64,
}

impl FrequencyTable {
    pub fn from_markers(markers: Vec<MarkerFrequencies>) -> Self {
        FrequencyTable {
            markers,
            notes: Vec::new(),
        }
    }

    /// Reads a `marker,allele,frequency` CSV.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, path)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        check_header(&mut rdr, path, &["marker", "allele", "frequency"])?;

        let mut grouped: Vec<(String, Vec<(Allele, f64)>)> = Vec::new();
        for (i, row) in rdr.deserialize::<FrequencyRow>().enumerate() {
            let line = i as u64 + 2;
            let row = row.map_err(|e| Error::parse(path, line, e.to_string()))?;
            if row.marker.is_empty() || row.allele.is_empty() {
                return Err(Error::parse(path, line, "empty marker or allele"));
            }
            if !(row.frequency.is_finite() && row.frequency > 0.0) {
                return Err(Error::Validation(format!(
                    "{}:{line}: nonpositive frequency {} for {} allele {}",
                    path.display(),
                    row.frequency,
                    row.marker,
                    row.allele
                )));
            }
            let entry = (Allele::new(&row.allele), row.frequency);
            match grouped.iter_mut().find(|(m, _)| *m == row.marker) {
                Some((_, v)) => v.push(entry),
                None => grouped.push((row.marker, vec![entry])),
            }
        }

        let mut table = FrequencyTable::default();
        for (name, entries) in grouped {
            let (marker, rescaled) = MarkerFrequencies::new(&name, entries)?;
            if rescaled {
                let note = format!("marker {name}: frequencies rescaled to sum to 1");
                log::warn!("{note}");
                table.notes.push(note);
            }
            table.markers.push(marker);
        }
        Ok(table)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Validation(format!("csv write failed: {e}"));
        w.write_record(["marker", "allele", "frequency"]).map_err(io)?;
        for m in &self.markers {
            for (a, f) in m.alleles.iter().zip(&m.freqs) {
                w.write_record([m.name.as_str(), a.label(), &f.to_string()]).map_err(io)?;
            }
        }
        w.flush().map_err(|e| Error::io("<frequency output>", e))?;
        Ok(())
    }

    pub fn markers(&self) -> &[MarkerFrequencies] {
        &self.markers
    }

    pub fn marker(&self, name: &str) -> Option<&MarkerFrequencies> {
        self.markers.iter().find(|m| m.name == name)
    }

    pub fn marker_index(&self, name: &str) -> Option<usize> {
        self.markers.iter().position(|m| m.name == name)
    }

    /// Warnings raised while loading or augmenting.
    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    /// Whether any marker needed rescaling on load.
    pub fn was_rescaled(&self) -> bool {
        self.notes.iter().any(|n| n.contains("rescaled"))
    }

    pub(crate) fn push_marker(&mut self, marker: MarkerFrequencies) {
        self.markers.push(marker);
    }

    /// Ensures every observed allele is in the table with frequency at least
    /// `floor`.
    ///
    /// Alleles that need raising are set to exactly `floor`; the remaining
    /// alleles of the marker share `1 - k * floor` in their original
    /// proportions. This is repeated until no observed allele sits below the
    /// floor, so the operation is idempotent. Observations at markers absent
    /// from the table are ignored.
    pub fn augment_rare_alleles(&self, observed: &BTreeSet<(String, Allele)>, floor: f64) -> Result<FrequencyTable> {
        if !(floor > 0.0 && floor <= 0.01) {
            return Err(Error::Domain(format!("frequency floor {floor} outside (0, 0.01]")));
        }
        let mut out = self.clone();
        for marker in &mut out.markers {
            let wanted: Vec<&Allele> = observed
                .iter()
                .filter(|(m, _)| *m == marker.name)
                .map(|(_, a)| a)
                .collect();
            if wanted.is_empty() {
                continue;
            }
            let mut added = Vec::new();
            for allele in &wanted {
                if marker.position(allele).is_none() {
                    let at = marker.alleles.partition_point(|a| a < *allele);
                    marker.alleles.insert(at, (*allele).clone());
                    marker.freqs.insert(at, 0.0);
                    added.push(allele.label().to_string());
                }
            }
            let mut raised = vec![false; marker.len()];
            loop {
                let mut changed = false;
                for allele in &wanted {
                    let i = marker.position(allele).expect("inserted above");
                    if !raised[i] && marker.freqs[i] < floor {
                        raised[i] = true;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
                let k = raised.iter().filter(|r| **r).count() as f64;
                let rest: f64 = marker
                    .freqs
                    .iter()
                    .zip(&raised)
                    .filter(|(_, r)| !**r)
                    .map(|(f, _)| *f)
                    .sum();
                let budget = 1.0 - k * floor;
                if budget <= 0.0 || rest <= 0.0 {
                    return Err(Error::Validation(format!(
                        "marker {}: cannot floor {k} alleles at {floor}",
                        marker.name
                    )));
                }
                let scale = budget / rest;
                for (f, r) in marker.freqs.iter_mut().zip(&raised) {
                    *f = if *r { floor } else { *f * scale };
                }
            }
            if !added.is_empty() {
                let note = format!(
                    "marker {}: added unseen allele(s) {} at frequency {floor}",
                    marker.name,
                    added.join(", ")
                );
                log::info!("{note}");
                out.notes.push(note);
            }
        }
        Ok(out)
    }
}

pub(crate) fn check_header<R: std::io::Read>(
    rdr: &mut csv::Reader<R>,
    path: &Path,
    expected: &[&str],
) -> Result<()> {
    let header = rdr.headers().map_err(|e| Error::parse(path, 1, e.to_string()))?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::parse(
            path,
            1,
            format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}
