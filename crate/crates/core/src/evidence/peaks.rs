use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use super::allele::Allele;
use super::frequencies::{check_header, FrequencyTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Peak {
    pub allele: Allele,
    pub height: f64,
    /// Recorded but below the detection threshold; such a peak is treated
    /// as unobserved by the likelihood.
    pub sub_threshold: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerPeaks {
    pub marker: String,
    pub peaks: Vec<Peak>,
}

impl MarkerPeaks {
    /// Height of a peak at or above threshold, if any.
    pub fn observed_height(&self, allele: &Allele) -> Option<f64> {
        self.peaks
            .iter()
            .find(|p| &p.allele == allele && !p.sub_threshold)
            .map(|p| p.height)
    }
}

/// Peaks of one trace (one amplification), with its detection threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakTable {
    pub trace_id: String,
    pub threshold: f64,
    pub markers: Vec<MarkerPeaks>,
}

#[derive(Debug, Deserialize)]
struct PeakRow {
    marker: String,
    allele: String,
    height: Option<f64>,
}

impl PeakTable {
    pub fn new(trace_id: &str, threshold: f64, markers: Vec<MarkerPeaks>) -> Result<Self> {
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(Error::Domain(format!("threshold C must be positive, got {threshold}")));
        }
        let mut table = PeakTable {
            trace_id: trace_id.to_string(),
            threshold,
            markers,
        };
        for m in &mut table.markers {
            m.peaks.sort_by(|a, b| a.allele.cmp(&b.allele));
            for p in &mut m.peaks {
                if !(p.height.is_finite() && p.height >= 0.0) {
                    return Err(Error::Validation(format!(
                        "trace {trace_id} marker {}: invalid height {}",
                        m.marker, p.height
                    )));
                }
                p.sub_threshold = p.height < threshold;
            }
            for w in m.peaks.windows(2) {
                if w[0].allele == w[1].allele {
                    return Err(Error::Validation(format!(
                        "trace {trace_id} marker {}: allele {} listed twice",
                        m.marker, w[0].allele
                    )));
                }
            }
        }
        Ok(table)
    }

    /// Reads a `marker,allele,height` CSV. A row with an empty allele and
    /// height declares a marker with no peaks.
    pub fn from_path(path: impl AsRef<Path>, trace_id: &str, threshold: f64) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, path, trace_id, threshold)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, path: &Path, trace_id: &str, threshold: f64) -> Result<Self> {
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(Error::Domain(format!("threshold C must be positive, got {threshold}")));
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        check_header(&mut rdr, path, &["marker", "allele", "height"])?;
        let mut markers: Vec<MarkerPeaks> = Vec::new();
        for (i, row) in rdr.deserialize::<PeakRow>().enumerate() {
            let line = i as u64 + 2;
            let row = row.map_err(|e| Error::parse(path, line, e.to_string()))?;
            if row.marker.is_empty() {
                return Err(Error::parse(path, line, "empty marker"));
            }
            let idx = match markers.iter().position(|m| m.marker == row.marker) {
                Some(i) => i,
                None => {
                    markers.push(MarkerPeaks {
                        marker: row.marker.clone(),
                        peaks: Vec::new(),
                    });
                    markers.len() - 1
                }
            };
            match (row.allele.is_empty(), row.height) {
                (true, None) => {}
                (false, Some(h)) => {
                    if h < 0.0 || !h.is_finite() {
                        return Err(Error::Validation(format!(
                            "{}:{line}: negative or invalid height {h}",
                            path.display()
                        )));
                    }
                    markers[idx].peaks.push(Peak {
                        allele: Allele::new(&row.allele),
                        height: h,
                        sub_threshold: false,
                    });
                }
                _ => return Err(Error::parse(path, line, "allele and height must both be set or both empty")),
            }
        }
        PeakTable::new(trace_id, threshold, markers)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Validation(format!("csv write failed: {e}"));
        w.write_record(["marker", "allele", "height"]).map_err(err)?;
        for m in &self.markers {
            if m.peaks.is_empty() {
                w.write_record([m.marker.as_str(), "", ""]).map_err(err)?;
            }
            for p in &m.peaks {
                w.write_record([m.marker.as_str(), p.allele.label(), &p.height.to_string()])
                    .map_err(err)?;
            }
        }
        w.flush().map_err(|e| Error::io("<peak output>", e))?;
        Ok(())
    }

    pub fn marker(&self, name: &str) -> Option<&MarkerPeaks> {
        self.markers.iter().find(|m| m.marker == name)
    }

    /// Checks every marker and allele against the (augmented) panel.
    pub fn validate_against(&self, table: &FrequencyTable) -> Result<()> {
        for m in &self.markers {
            let panel = table.marker(&m.marker).ok_or_else(|| {
                Error::Validation(format!("trace {}: unknown marker {}", self.trace_id, m.marker))
            })?;
            for p in &m.peaks {
                if panel.position(&p.allele).is_none() {
                    return Err(Error::Validation(format!(
                        "trace {} marker {}: allele {} not in panel",
                        self.trace_id, m.marker, p.allele
                    )));
                }
            }
        }
        Ok(())
    }

    /// Mean height of peaks at or above threshold.
    pub fn mean_observed_height(&self) -> Option<f64> {
        let hs: Vec<f64> = self
            .markers
            .iter()
            .flat_map(|m| m.peaks.iter())
            .filter(|p| !p.sub_threshold)
            .map(|p| p.height)
            .collect();
        if hs.is_empty() {
            None
        } else {
            Some(hs.iter().sum::<f64>() / hs.len() as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn parse(text: &str, c: f64) -> Result<PeakTable> {
        PeakTable::from_reader(text.as_bytes(), &PathBuf::from("peaks.csv"), "T1", c)
    }

    #[test]
    fn table1_rows() {
        let t = parse("marker,allele,height\nD16S539,11,83\nD16S539,12,182\n", 0.001).unwrap();
        let m = t.marker("D16S539").unwrap();
        assert_eq!(m.peaks.len(), 2);
        assert_eq!(m.observed_height(&Allele::new("12")), Some(182.0));
    }

    #[test]
    fn empty_marker_section() {
        let t = parse("marker,allele,height\nD16S539,,\nTH01,6,100\n", 50.0).unwrap();
        assert!(t.marker("D16S539").unwrap().peaks.is_empty());
        assert_eq!(t.markers.len(), 2);
    }

    #[test]
    fn sub_threshold_flag() {
        let t = parse("marker,allele,height\nM,10,49\nM,11,50\n", 50.0).unwrap();
        let m = t.marker("M").unwrap();
        assert!(m.peaks[0].sub_threshold);
        assert!(!m.peaks[1].sub_threshold);
        assert_eq!(m.observed_height(&Allele::new("10")), None);
    }

    #[test]
    fn rejects_negative_height_and_bad_threshold() {
        assert!(matches!(parse("marker,allele,height\nM,10,-1\n", 50.0), Err(Error::Validation(_))));
        assert!(matches!(parse("marker,allele,height\nM,10,1\n", 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn unknown_marker_fails_validation() {
        let freqs = FrequencyTable::from_reader(
            "marker,allele,frequency\nM,10,1\n".as_bytes(),
            &PathBuf::from("f.csv"),
        )
        .unwrap();
        let t = parse("marker,allele,height\nQ,10,100\n", 50.0).unwrap();
        assert!(matches!(t.validate_against(&freqs), Err(Error::Validation(_))));
        let t = parse("marker,allele,height\nM,11,100\n", 50.0).unwrap();
        assert!(matches!(t.validate_against(&freqs), Err(Error::Validation(_))));
    }
}
