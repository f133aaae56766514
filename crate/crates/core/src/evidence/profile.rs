use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use super::allele::Allele;
use super::frequencies::{check_header, FrequencyTable};
use crate::error::{Error, Result};

/// Unordered allele pair, stored low allele first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AllelePair(Allele, Allele);

impl AllelePair {
    pub fn new(a: Allele, b: Allele) -> Self {
        if b < a {
            AllelePair(b, a)
        } else {
            AllelePair(a, b)
        }
    }

    pub fn first(&self) -> &Allele {
        &self.0
    }

    pub fn second(&self) -> &Allele {
        &self.1
    }

    pub fn is_homozygous(&self) -> bool {
        self.0 == self.1
    }
}

/// Genotype of a typed person (child, mother, victim, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeProfile {
    pub person_id: String,
    pub markers: Vec<(String, AllelePair)>,
}

#[derive(Debug, Deserialize)]
struct ProfileRow {
    marker: String,
    allele1: String,
    allele2: String,
}

impl GenotypeProfile {
    pub fn from_path(path: impl AsRef<Path>, person_id: &str) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, path, person_id)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, path: &Path, person_id: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        check_header(&mut rdr, path, &["marker", "allele1", "allele2"])?;
        let mut markers: Vec<(String, AllelePair)> = Vec::new();
        for (i, row) in rdr.deserialize::<ProfileRow>().enumerate() {
            let line = i as u64 + 2;
            let row = row.map_err(|e| Error::parse(path, line, e.to_string()))?;
            if row.marker.is_empty() || row.allele1.is_empty() || row.allele2.is_empty() {
                return Err(Error::parse(path, line, "marker and both alleles are required"));
            }
            if markers.iter().any(|(m, _)| *m == row.marker) {
                return Err(Error::Validation(format!(
                    "{}:{line}: marker {} typed twice",
                    path.display(),
                    row.marker
                )));
            }
            markers.push((
                row.marker,
                AllelePair::new(Allele::new(&row.allele1), Allele::new(&row.allele2)),
            ));
        }
        Ok(GenotypeProfile {
            person_id: person_id.to_string(),
            markers,
        })
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Validation(format!("csv write failed: {e}"));
        w.write_record(["marker", "allele1", "allele2"]).map_err(err)?;
        for (m, pair) in &self.markers {
            w.write_record([m.as_str(), pair.first().label(), pair.second().label()])
                .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io("<profile output>", e))?;
        Ok(())
    }

    pub fn genotype(&self, marker: &str) -> Option<&AllelePair> {
        self.markers.iter().find(|(m, _)| m == marker).map(|(_, g)| g)
    }

    pub fn validate_against(&self, table: &FrequencyTable) -> Result<()> {
        for (m, pair) in &self.markers {
            let panel = table.marker(m).ok_or_else(|| {
                Error::Validation(format!("profile {}: unknown marker {m}", self.person_id))
            })?;
            for a in [pair.first(), pair.second()] {
                if panel.position(a).is_none() {
                    return Err(Error::Validation(format!(
                        "profile {} marker {m}: allele {a} not in panel",
                        self.person_id
                    )));
                }
            }
        }
        Ok(())
    }
}
