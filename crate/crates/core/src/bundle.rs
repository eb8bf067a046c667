//! On-disk formats: prediction bundles and decoded structure files.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::{CellSpan, GridLattice, ImageSize, TableStructure};
use crate::kor::{num_keypoints, Axis, StartProbVector};
use crate::merge::MergeActionMap;
use crate::pipeline::{DecodeSummary, StageTimings};

/// Everything the decoder needs: start probabilities, per-line offsets and
/// the merge maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionBundle {
    pub image_size: ImageSize,
    pub stride: u32,
    pub row_start_prob: Vec<f64>,
    pub col_start_prob: Vec<f64>,
    /// One offset vector per row line, `ceil(W / stride)` entries each.
    pub row_offsets: Vec<Vec<f64>>,
    /// One offset vector per column line, `ceil(H / stride)` entries each.
    pub col_offsets: Vec<Vec<f64>>,
    /// One `SLUX` string per grid row.
    pub actions: Vec<String>,
    pub start_grid: Vec<Vec<u8>>,
}

fn check_probs(field: &str, p: &[f64], len: usize) -> Result<()> {
    if p.len() != len {
        return Err(Error::schema(
            field,
            format!("expected {len} entries, got {}", p.len()),
        ));
    }
    if let Some(i) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::schema(
            format!("{field}[{i}]"),
            format!("probability {} outside [0, 1]", p[i]),
        ));
    }
    Ok(())
}

fn check_offsets(field: &str, rows: &[Vec<f64>], nk: usize) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != nk {
            return Err(Error::schema(
                format!("{field}[{i}]"),
                format!("expected {nk} offsets, got {}", r.len()),
            ));
        }
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(Error::schema(
                format!("{field}[{i}][{j}]"),
                "offset is not finite",
            ));
        }
    }
    Ok(())
}

impl PredictionBundle {
    /// Checks shapes against the image size and stride.
    pub fn validate(&self) -> Result<()> {
        let img = self.image_size;
        if img.width == 0 || img.height == 0 {
            return Err(Error::schema(
                "image_size",
                "width and height must be positive",
            ));
        }
        if self.stride == 0 {
            return Err(Error::schema("stride", "must be positive"));
        }
        check_probs("row_start_prob", &self.row_start_prob, img.half_height())?;
        check_probs("col_start_prob", &self.col_start_prob, img.half_width())?;
        check_offsets(
            "row_offsets",
            &self.row_offsets,
            num_keypoints(img.width, self.stride)?,
        )?;
        check_offsets(
            "col_offsets",
            &self.col_offsets,
            num_keypoints(img.height, self.stride)?,
        )?;
        self.action_map()?;
        Ok(())
    }

    pub fn start_probs(&self, axis: Axis) -> StartProbVector {
        let p = match axis {
            Axis::Row => &self.row_start_prob,
            Axis::Col => &self.col_start_prob,
        };
        StartProbVector::new(axis, p.clone())
    }

    pub fn offsets(&self, axis: Axis) -> &[Vec<f64>] {
        match axis {
            Axis::Row => &self.row_offsets,
            Axis::Col => &self.col_offsets,
        }
    }

    pub fn action_map(&self) -> Result<MergeActionMap> {
        MergeActionMap::from_strings(&self.actions, Some(&self.start_grid))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: Self = parse_json(s)?;
        b.validate()?;
        Ok(b)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Decoded (or ground-truth) table: lattice, cells with polygons and, for
/// decoder output, the repair report and stage timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureFile {
    pub image_size: ImageSize,
    pub lattice: GridLattice,
    pub cells: Vec<CellSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<DecodeSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

impl StructureFile {
    pub fn new(image_size: ImageSize, lattice: GridLattice, structure: &TableStructure) -> Self {
        StructureFile {
            image_size,
            lattice,
            cells: structure.cells.clone(),
            report: None,
            config: None,
            timings: None,
        }
    }

    /// Structure over the lattice dimensions, validated as a partition.
    pub fn structure(&self) -> Result<TableStructure> {
        TableStructure::new(self.lattice.rows, self.lattice.cols, self.cells.clone())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: Self = parse_json(s)?;
        if f.lattice.boxes.len() != f.lattice.rows * f.lattice.cols
            || f.lattice.corners.len() != (f.lattice.rows + 1) * (f.lattice.cols + 1)
        {
            return Err(Error::schema(
                "lattice",
                "corner or box count does not match rows and cols",
            ));
        }
        f.structure()?;
        Ok(f)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Parses JSON, reporting type errors with the path of the offending field.
pub fn parse_json<T: DeserializeOwned>(s: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(s);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.to_string();
        if let Some(name) = msg
            .strip_prefix("missing field `")
            .and_then(|r| r.split('`').next())
        {
            let field = if path == "." {
                name.to_string()
            } else {
                format!("{path}.{name}")
            };
            return Error::schema(field, "missing field");
        }
        if inner.is_syntax() || inner.is_eof() || path == "." {
            Error::Json(inner)
        } else {
            Error::schema(path, msg)
        }
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PredictionBundle {
        PredictionBundle {
            image_size: ImageSize::new(64, 32),
            stride: 32,
            row_start_prob: vec![0.0; 16],
            col_start_prob: vec![0.0; 32],
            row_offsets: vec![vec![0.0; 2]],
            col_offsets: vec![vec![0.5]],
            actions: vec!["SL".into()],
            start_grid: vec![vec![1, 0]],
        }
    }

    #[test]
    fn bundle_round_trip() {
        let b = tiny();
        let s = to_json(&b).unwrap();
        assert_eq!(PredictionBundle::from_json(&s).unwrap(), b);
    }

    #[test]
    fn wrong_length_names_field() {
        let mut b = tiny();
        b.row_offsets[0].push(1.0);
        let err = PredictionBundle::from_json(&to_json(&b).unwrap()).unwrap_err();
        assert!(
            matches!(err, Error::Schema { ref field, .. } if field == "row_offsets[0]"),
            "{err}"
        );
    }

    #[test]
    fn type_error_names_path() {
        let s = to_json(&tiny())
            .unwrap()
            .replace("\"stride\": 32", "\"stride\": \"x\"");
        let err = PredictionBundle::from_json(&s).unwrap_err();
        assert!(
            matches!(err, Error::Schema { ref field, .. } if field == "stride"),
            "{err}"
        );
    }

    #[test]
    fn missing_field_is_schema_error() {
        let s = to_json(&tiny()).unwrap().replace("\"stride\": 32,", "");
        let err = PredictionBundle::from_json(&s).unwrap_err();
        assert!(
            matches!(err, Error::Schema { ref field, .. } if field == "stride"),
            "{err}"
        );
    }

    #[test]
    fn bad_action_names_cell() {
        let mut b = tiny();
        b.actions[0] = "SQ".into();
        let err = b.validate().unwrap_err();
        assert!(
            matches!(err, Error::Schema { ref field, .. } if field == "actions[0][1]"),
            "{err}"
        );
    }
}
