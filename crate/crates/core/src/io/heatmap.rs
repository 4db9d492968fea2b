//! Heatmap export of similarity fields.
//!
//! CSV: one line per grid row (`y`), comma-separated scores for each column,
//! invalid cells left empty. Scores use the shortest decimal form that parses
//! back to the same value.
//!
//! PGM: binary `P5`, one byte per cell,
//! `round(255·(s − min)/(max − min))` over valid cells, invalid cells 0. A
//! uniform field maps every valid cell to 255. The comment line records
//! `min` and `max`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::SimilarityField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapFormat {
    Csv,
    Pgm,
}

impl std::str::FromStr for HeatmapFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(HeatmapFormat::Csv),
            "pgm" => Ok(HeatmapFormat::Pgm),
            other => Err(Error::input(format!("unknown heatmap format '{other}'"))),
        }
    }
}

pub fn export_heatmap(field: &SimilarityField, format: HeatmapFormat) -> Vec<u8> {
    match format {
        HeatmapFormat::Csv => to_csv(field).into_bytes(),
        HeatmapFormat::Pgm => to_pgm(field),
    }
}

fn to_csv(field: &SimilarityField) -> String {
    let n = field.size();
    let mut out = String::new();
    for y in 0..n {
        for x in 0..n {
            if x > 0 {
                out.push(',');
            }
            let i = y * n + x;
            if field.valid_mask()[i] {
                write!(out, "{}", field.scores()[i]).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

fn to_pgm(field: &SimilarityField) -> Vec<u8> {
    let n = field.size();
    let (lo, hi) = field.range().unwrap_or((0.0, 0.0));
    let mut out = format!("P5\n# min={lo} max={hi}\n{n} {n}\n255\n").into_bytes();
    out.extend(field.scores().iter().zip(field.valid_mask()).map(|(&s, &v)| {
        if !v {
            0
        } else if hi > lo {
            (255.0 * (s - lo) / (hi - lo)).round() as u8
        } else {
            255
        }
    }));
    out
}

/// Parses the CSV form back into row-major optional scores.
pub fn parse_heatmap_csv(text: &str) -> Result<(usize, Vec<Option<f64>>)> {
    let rows: Vec<&str> = text.lines().collect();
    let n = rows.len();
    let mut out = Vec::with_capacity(n * n);
    for (y, row) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        if cols.len() != n {
            return Err(Error::input(format!(
                "row {y} has {} columns, expected {n}",
                cols.len()
            )));
        }
        for c in cols {
            out.push(if c.is_empty() {
                None
            } else {
                Some(c.parse::<f64>().map_err(|e| Error::input(e.to_string()))?)
            });
        }
    }
    Ok((n, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::FieldKind;

    fn field(scores: &[f64], valid: &[bool]) -> SimilarityField {
        let n = (scores.len() as f64).sqrt() as usize;
        SimilarityField::new(n, scores.to_vec(), valid.to_vec(), FieldKind::Cosine).unwrap()
    }

    #[test]
    fn uniform_pgm_single_level() {
        let f = field(&[0.3; 4], &[true; 4]);
        let pgm = export_heatmap(&f, HeatmapFormat::Pgm);
        let header = b"P5\n# min=0.3 max=0.3\n2 2\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(&pgm[header.len()..], &[255, 255, 255, 255]);
    }

    #[test]
    fn pgm_formula() {
        let f = field(&[-1.0, 0.0, 0.5, 1.0], &[true, true, false, true]);
        let pgm = export_heatmap(&f, HeatmapFormat::Pgm);
        let body = &pgm[pgm.len() - 4..];
        assert_eq!(body, &[0, 128, 0, 255]);
        assert!(std::str::from_utf8(&pgm[..pgm.len() - 4])
            .unwrap()
            .contains("# min=-1 max=1"));
    }

    #[test]
    fn csv_round_trip() {
        let f = field(&[0.1, 1.0 / 3.0, -0.75, 0.0], &[true, true, true, false]);
        let csv = String::from_utf8(export_heatmap(&f, HeatmapFormat::Csv)).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "-0.75,");
        let (n, cells) = parse_heatmap_csv(&csv).unwrap();
        assert_eq!(n, 2);
        assert_eq!(cells, vec![Some(0.1), Some(1.0 / 3.0), Some(-0.75), None]);
    }

    #[test]
    fn format_parsing() {
        assert_eq!("PGM".parse::<HeatmapFormat>().unwrap(), HeatmapFormat::Pgm);
        assert!("png".parse::<HeatmapFormat>().is_err());
    }
}
