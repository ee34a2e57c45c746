//! Readers and writers for the toolkit's file formats.
//!
//! Text formats are UTF-8 CSV with LF line endings and `.` as the decimal
//! separator. Numbers are written in the shortest form that parses back to
//! the same `f64`. Readers reject malformed input; nothing is repaired.
//!
//! | artifact        | layout                                                                 |
//! |-----------------|------------------------------------------------------------------------|
//! | submission      | `image_path,dataset,scene,rotation_matrix,translation_vector`, `;`-joined numbers |
//! | match table     | `image_a,image_b,num_matches`                                          |
//! | descriptors     | `dim,<d>` then `id,v1,...,vd` per image                                |
//! | distance matrix | `image_id,<id>...` then `id,w...` per row, `inf` for absent edges       |
//! | image           | binary PGM (`P5`), 8 or 16 bit                                         |

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{Pose, RotationMatrix, Scene};
use crate::metrics::{DistanceMatrix, GrayImage};
use crate::pairs::{DescriptorSet, MatchTable, PairError};

pub const SUBMISSION_HEADER: &str = "image_path,dataset,scene,rotation_matrix,translation_vector";
pub const MATCH_TABLE_HEADER: &str = "image_a,image_b,num_matches";

/// Rotations off by more than this are rejected when read.
pub const ROTATION_REJECT_TOL: f64 = 1e-3;
/// Rotations off by more than this (but within the reject tolerance) are logged.
pub const ROTATION_WARN_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IoError {
    #[error("line 1: unexpected header `{found}`")]
    BadHeader { found: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    BadFieldCount { line: usize, expected: usize, found: usize },
    #[error("line {line}, column {column}: invalid number")]
    BadNumber { line: usize, column: usize },
    #[error("line {line}: rotation is not a proper rotation matrix")]
    BadRotation { line: usize },
    #[error("row {index}: {reason}")]
    InvalidRow { index: usize, reason: String },
    #[error("line {line}: pair ({a}, {b}) already listed")]
    DuplicatePair { line: usize, a: String, b: String },
    #[error("line {line}: image `{id}` paired with itself")]
    SelfPair { line: usize, id: String },
    #[error("line {line}: id `{id}` listed twice")]
    DuplicateId { line: usize, id: String },
    #[error("descriptor `{id}` does not have the declared dimension")]
    DimMismatch { id: String },
    #[error("descriptor `{id}` has non-finite values")]
    NonFinite { id: String },
    #[error("descriptor `{id}` is all zeros")]
    ZeroVector { id: String },
    #[error("invalid distance matrix: {0}")]
    InvalidMatrix(String),
    #[error("not a binary PGM (magic must be P5)")]
    BadMagic,
    #[error("invalid PGM dimensions")]
    BadDimensions,
    #[error("invalid PGM maxval")]
    BadMaxval,
    #[error("PGM sample exceeds maxval")]
    BadSample,
    #[error("PGM data is truncated")]
    TruncatedData,
}

/// Splits text into lines, dropping the empty tail after a final LF.
fn lines(text: &str) -> Vec<&str> {
    let mut v: Vec<&str> = text.split('\n').collect();
    if v.last() == Some(&"") {
        v.pop();
    }
    v
}

fn parse_finite(s: &str, line: usize, column: usize) -> Result<f64, IoError> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(IoError::BadNumber { line, column }),
    }
}

fn join_numbers(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

fn check_field(s: &str) -> Result<(), String> {
    if s.contains([',', '\n', '\r']) {
        Err(format!("field `{s}` contains a separator"))
    } else {
        Ok(())
    }
}

/// One camera of a submission or ground-truth file.
#[derive(Debug, Clone, PartialEq)]
pub struct SubmissionRow {
    pub image_path: String,
    pub dataset: String,
    pub scene: String,
    /// Row-major rotation matrix.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl SubmissionRow {
    pub fn from_pose(image_path: &str, dataset: &str, scene: &str, pose: &Pose) -> Self {
        Self {
            image_path: image_path.to_owned(),
            dataset: dataset.to_owned(),
            scene: scene.to_owned(),
            rotation: pose.rotation.to_row_major(),
            translation: [pose.translation.x, pose.translation.y, pose.translation.z],
        }
    }

    fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.rotation)
    }

    pub fn pose(&self) -> Result<Pose, crate::geometry::GeometryError> {
        let r = RotationMatrix::with_tolerance(self.rotation_matrix(), ROTATION_REJECT_TOL)?;
        Pose::new(r, Vector3::from_row_slice(&self.translation))
    }
}

pub fn write_submission(rows: &[SubmissionRow]) -> Result<String, IoError> {
    let mut out = String::from(SUBMISSION_HEADER);
    out.push('\n');
    for (index, row) in rows.iter().enumerate() {
        let invalid = |reason: String| IoError::InvalidRow { index, reason };
        for f in [&row.image_path, &row.dataset, &row.scene] {
            check_field(f).map_err(invalid)?;
        }
        row.pose().map_err(|e| invalid(e.to_string()))?;
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.image_path,
            row.dataset,
            row.scene,
            join_numbers(&row.rotation),
            join_numbers(&row.translation)
        ));
    }
    Ok(out)
}

fn parse_numbers<const N: usize>(field: &str, line: usize, column: usize) -> Result<[f64; N], IoError> {
    let parts: Vec<&str> = field.split(';').collect();
    if parts.len() != N {
        return Err(IoError::BadFieldCount {
            line,
            expected: N,
            found: parts.len(),
        });
    }
    let mut out = [0.0; N];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = parse_finite(p, line, column)?;
    }
    Ok(out)
}

pub fn read_submission(text: &str) -> Result<Vec<SubmissionRow>, IoError> {
    let lines = lines(text);
    match lines.first() {
        Some(&h) if h == SUBMISSION_HEADER => {}
        other => {
            return Err(IoError::BadHeader {
                found: other.unwrap_or(&"").to_string(),
            })
        }
    }
    let mut rows = Vec::with_capacity(lines.len() - 1);
    for (k, l) in lines.iter().enumerate().skip(1) {
        let line = k + 1;
        let fields: Vec<&str> = l.split(',').collect();
        if fields.len() != 5 {
            return Err(IoError::BadFieldCount {
                line,
                expected: 5,
                found: fields.len(),
            });
        }
        let row = SubmissionRow {
            image_path: fields[0].to_owned(),
            dataset: fields[1].to_owned(),
            scene: fields[2].to_owned(),
            rotation: parse_numbers::<9>(fields[3], line, 4)?,
            translation: parse_numbers::<3>(fields[4], line, 5)?,
        };
        let m = row.rotation_matrix();
        if !crate::geometry::validate_rotation(&m, ROTATION_REJECT_TOL) {
            return Err(IoError::BadRotation { line });
        }
        if !crate::geometry::validate_rotation(&m, ROTATION_WARN_TOL) {
            log::warn!(
                "line {line}: rotation of `{}` is only approximately orthonormal",
                row.image_path
            );
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Groups rows into scenes, in order of first appearance of `(dataset, scene)`.
/// Image order within a scene follows the file.
pub fn rows_to_scenes(rows: &[SubmissionRow]) -> Result<Vec<Scene>, IoError> {
    let mut scenes: Vec<Scene> = Vec::new();
    let mut index: HashMap<(&str, &str), usize> = HashMap::new();
    for (i, row) in rows.iter().enumerate() {
        let key = (row.dataset.as_str(), row.scene.as_str());
        let k = *index.entry(key).or_insert_with(|| {
            scenes.push(Scene::new(&row.dataset, &row.scene));
            scenes.len() - 1
        });
        let pose = row.pose().map_err(|e| IoError::InvalidRow {
            index: i,
            reason: e.to_string(),
        })?;
        scenes[k]
            .push(row.image_path.clone(), Some(pose))
            .map_err(|e| IoError::InvalidRow {
                index: i,
                reason: e.to_string(),
            })?;
    }
    Ok(scenes)
}

/// Rows for every posed image of `scene`.
pub fn scene_to_rows(scene: &Scene) -> Vec<SubmissionRow> {
    scene
        .images()
        .iter()
        .filter_map(|im| {
            im.pose
                .as_ref()
                .map(|p| SubmissionRow::from_pose(&im.image_id, &scene.dataset_id, &scene.scene_id, p))
        })
        .collect()
}

/// Reads a match table. The `image_a,image_b,num_matches` header line is optional.
pub fn read_match_table(text: &str) -> Result<MatchTable, IoError> {
    let mut table = MatchTable::new();
    for (k, l) in lines(text).into_iter().enumerate() {
        let line = k + 1;
        if line == 1 && l == MATCH_TABLE_HEADER {
            continue;
        }
        let fields: Vec<&str> = l.split(',').collect();
        if fields.len() != 3 {
            return Err(IoError::BadFieldCount {
                line,
                expected: 3,
                found: fields.len(),
            });
        }
        let count: u64 = fields[2].parse().map_err(|_| IoError::BadNumber { line, column: 3 })?;
        table.insert(fields[0], fields[1], count).map_err(|e| match e {
            PairError::SelfPair(id) => IoError::SelfPair { line, id },
            _ => IoError::DuplicatePair {
                line,
                a: fields[0].to_owned(),
                b: fields[1].to_owned(),
            },
        })?;
    }
    Ok(table)
}

pub fn write_match_table(table: &MatchTable) -> Result<String, IoError> {
    let mut out = String::from(MATCH_TABLE_HEADER);
    out.push('\n');
    for (index, (a, b, c)) in table.entries().enumerate() {
        for f in [a, b] {
            check_field(f).map_err(|reason| IoError::InvalidRow { index, reason })?;
        }
        out.push_str(&format!("{a},{b},{c}\n"));
    }
    Ok(out)
}

pub fn read_descriptors(text: &str) -> Result<DescriptorSet, IoError> {
    let lines = lines(text);
    let header = lines.first().copied().unwrap_or("");
    let dim: usize = header
        .strip_prefix("dim,")
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| IoError::BadHeader {
            found: header.to_owned(),
        })?;
    let mut entries = Vec::with_capacity(lines.len().saturating_sub(1));
    let mut seen: HashMap<&str, ()> = HashMap::new();
    for (k, l) in lines.iter().enumerate().skip(1) {
        let line = k + 1;
        let mut fields = l.split(',');
        let id = fields.next().unwrap_or("");
        if seen.insert(id, ()).is_some() {
            return Err(IoError::DuplicateId {
                line,
                id: id.to_owned(),
            });
        }
        let mut values = Vec::with_capacity(dim);
        for (c, f) in fields.enumerate() {
            match f.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                Ok(_) => return Err(IoError::NonFinite { id: id.to_owned() }),
                Err(_) => return Err(IoError::BadNumber { line, column: c + 2 }),
            }
        }
        if values.len() != dim {
            return Err(IoError::DimMismatch { id: id.to_owned() });
        }
        entries.push((id.to_owned(), values));
    }
    DescriptorSet::new(dim, entries).map_err(|e| match e {
        PairError::ZeroVector(id) => IoError::ZeroVector { id },
        PairError::NonFinite(id) => IoError::NonFinite { id },
        PairError::DimMismatch { id, .. } => IoError::DimMismatch { id },
        other => IoError::InvalidMatrix(other.to_string()),
    })
}

pub fn write_descriptors(set: &DescriptorSet) -> Result<String, IoError> {
    let mut out = format!("dim,{}\n", set.dim());
    for (index, (id, v)) in set.labels().iter().zip(set.vectors()).enumerate() {
        check_field(id).map_err(|reason| IoError::InvalidRow { index, reason })?;
        out.push_str(id);
        for x in v {
            out.push(',');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

const MATRIX_CORNER: &str = "image_id";

pub fn write_distance_matrix(d: &DistanceMatrix) -> Result<String, IoError> {
    let mut out = String::from(MATRIX_CORNER);
    for (index, l) in d.labels().iter().enumerate() {
        check_field(l).map_err(|reason| IoError::InvalidRow { index, reason })?;
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (i, l) in d.labels().iter().enumerate() {
        out.push_str(l);
        for v in d.row(i) {
            out.push(',');
            // f64::INFINITY displays as `inf`
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn read_distance_matrix(text: &str) -> Result<DistanceMatrix, IoError> {
    let lines = lines(text);
    let header: Vec<&str> = lines.first().copied().unwrap_or("").split(',').collect();
    if header[0] != MATRIX_CORNER {
        return Err(IoError::BadHeader {
            found: lines.first().copied().unwrap_or("").to_owned(),
        });
    }
    let labels: Vec<String> = header[1..].iter().map(|s| s.to_string()).collect();
    let n = labels.len();
    if lines.len() != n + 1 {
        return Err(IoError::InvalidMatrix(format!(
            "{} rows for {n} labels",
            lines.len() - 1
        )));
    }
    let mut w = Vec::with_capacity(n * n);
    for (k, l) in lines.iter().enumerate().skip(1) {
        let line = k + 1;
        let fields: Vec<&str> = l.split(',').collect();
        if fields.len() != n + 1 {
            return Err(IoError::BadFieldCount {
                line,
                expected: n + 1,
                found: fields.len(),
            });
        }
        if fields[0] != labels[k - 1] {
            return Err(IoError::InvalidMatrix(format!(
                "row {line} is labelled `{}`",
                fields[0]
            )));
        }
        for (c, f) in fields[1..].iter().enumerate() {
            let v = if *f == "inf" {
                f64::INFINITY
            } else {
                parse_finite(f, line, c + 2)?
            };
            w.push(v);
        }
    }
    DistanceMatrix::new(labels, w).map_err(|e| IoError::InvalidMatrix(e.to_string()))
}

/// Cursor over a PGM header.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, invalid: IoError) -> Result<usize, IoError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if self.pos >= self.bytes.len() {
                IoError::TruncatedData
            } else {
                invalid
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(invalid)
    }
}

/// Decodes a binary PGM, normalizing samples by maxval.
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage, IoError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(IoError::BadMagic);
    }
    let mut r = HeaderReader { bytes, pos: 2 };
    if r.bytes.get(2).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
        return Err(IoError::BadMagic);
    }
    let width = r.number(IoError::BadDimensions)?;
    let height = r.number(IoError::BadDimensions)?;
    let maxval = r.number(IoError::BadMaxval)?;
    if width == 0 || height == 0 {
        return Err(IoError::BadDimensions);
    }
    if maxval == 0 || maxval > 65535 {
        return Err(IoError::BadMaxval);
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(r.pos) {
        Some(b) if b.is_ascii_whitespace() => r.pos += 1,
        Some(_) => return Err(IoError::BadMaxval),
        None => return Err(IoError::TruncatedData),
    }
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let needed = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(sample_bytes))
        .ok_or(IoError::BadDimensions)?;
    let raster = bytes.get(r.pos..r.pos + needed).ok_or(IoError::TruncatedData)?;
    let scale = maxval as f64;
    let data = if sample_bytes == 1 {
        raster
            .iter()
            .map(|&b| usize::from(b))
            .map(|v| {
                if v > maxval {
                    Err(IoError::BadSample)
                } else {
                    Ok(v as f64 / scale)
                }
            })
            .collect::<Result<Vec<_>, _>>()?
    } else {
        raster
            .chunks_exact(2)
            .map(|c| usize::from(u16::from_be_bytes([c[0], c[1]])))
            .map(|v| {
                if v > maxval {
                    Err(IoError::BadSample)
                } else {
                    Ok(v as f64 / scale)
                }
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    GrayImage::new(width, height, data).map_err(|_| IoError::BadDimensions)
}

/// Encodes `img` as a binary PGM, rounding samples to `maxval` levels.
pub fn write_pgm(img: &GrayImage, maxval: u16) -> Vec<u8> {
    let maxval = maxval.max(1);
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    for &v in img.data() {
        let q = (v * f64::from(maxval)).round() as u16;
        if maxval > 255 {
            out.extend_from_slice(&q.to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    out
}
