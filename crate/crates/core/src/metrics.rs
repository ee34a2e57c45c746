//! Pairwise image distances used to order views and to flag turntable-style scenes.
//!
//! All image metrics first resample both inputs to a common square working size,
//! so images of different resolutions can be compared.

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pairs::{match_matrix, MatchTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("image has no pixels")]
    EmptyImage,
    #[error("image data length {len} does not match {width}x{height}")]
    SizeMismatch { width: usize, height: usize, len: usize },
    #[error("pixel value {0} outside [0, 1]")]
    ValueOutOfRange(f64),
    #[error("working size {size} is smaller than the required {required} pixels")]
    ImageTooSmall { size: usize, required: usize },
    #[error("pair ({a}, {b}): {source}")]
    Pair {
        a: String,
        b: String,
        #[source]
        source: Box<MetricError>,
    },
    #[error("metric `{0}` needs {1}")]
    MissingInput(Metric, &'static str),
    #[error("need at least 2 images, got {0}")]
    TooFewImages(usize),
    #[error("invalid distance matrix: {0}")]
    InvalidMatrix(String),
}

/// Row-major luminance image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, MetricError> {
        if data.len() != width * height {
            return Err(MetricError::SizeMismatch {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some(&v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(MetricError::ValueOutOfRange(v));
        }
        Ok(Self { width, height, data })
    }

    /// Builds an image from `f(x, y)`, clamping values into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self { width, height, data }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricConfig {
    pub working_size: usize,
    pub ssim_window: usize,
    pub ssim_stride: usize,
    pub flow_block: usize,
    pub flow_radius: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            working_size: 256,
            ssim_window: 8,
            ssim_stride: 4,
            flow_block: 16,
            flow_radius: 8,
        }
    }
}

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Box-average by integer factors along each axis. Trailing partial blocks
/// average only the pixels they cover.
fn pool(img: &GrayImage, fx: usize, fy: usize) -> GrayImage {
    let w = img.width.div_ceil(fx);
    let h = img.height.div_ceil(fy);
    GrayImage::from_fn(w, h, |x, y| {
        let (x0, y0) = (x * fx, y * fy);
        let (x1, y1) = ((x0 + fx).min(img.width), (y0 + fy).min(img.height));
        let mut sum = 0.0;
        for yy in y0..y1 {
            for xx in x0..x1 {
                sum += img.get(xx, yy);
            }
        }
        sum / ((x1 - x0) * (y1 - y0)) as f64
    })
}

/// Resamples to `width`×`height`: average pooling when shrinking by 2× or more,
/// then bilinear interpolation on pixel centers.
pub fn resample(img: &GrayImage, width: usize, height: usize) -> Result<GrayImage, MetricError> {
    if img.is_empty() {
        return Err(MetricError::EmptyImage);
    }
    if img.width == width && img.height == height {
        return Ok(img.clone());
    }
    let fx = (img.width / width.max(1)).max(1);
    let fy = (img.height / height.max(1)).max(1);
    let pooled;
    let src = if fx >= 2 || fy >= 2 {
        pooled = pool(img, fx, fy);
        &pooled
    } else {
        img
    };
    let sample_axis = |dst: usize, src_len: usize, dst_len: usize| {
        let pos = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, pos - i0 as f64)
    };
    Ok(GrayImage::from_fn(width, height, |x, y| {
        let (x0, x1, tx) = sample_axis(x, src.width, width);
        let (y0, y1, ty) = sample_axis(y, src.height, height);
        let top = src.get(x0, y0) * (1.0 - tx) + src.get(x1, y0) * tx;
        let bottom = src.get(x0, y1) * (1.0 - tx) + src.get(x1, y1) * tx;
        top * (1.0 - ty) + bottom * ty
    }))
}

/// Per-block displacement field from one image to another.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub block: usize,
    pub rows: usize,
    pub cols: usize,
    /// `(dx, dy)` per block, row-major.
    pub vectors: Vec<(i32, i32)>,
}

impl FlowField {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.vectors
            .iter()
            .map(|&(dx, dy)| ((dx * dx + dy * dy) as f64).sqrt())
            .collect()
    }
}

/// Exhaustive block matching of `a` against `b` (same size) by sum of absolute
/// differences. Candidate positions wrap around the borders of `b`. Ties prefer
/// the shorter displacement, then the smaller `(dy, dx)`.
pub fn block_matching_flow(
    a: &GrayImage,
    b: &GrayImage,
    block: usize,
    radius: usize,
) -> Result<FlowField, MetricError> {
    assert_eq!((a.width, a.height), (b.width, b.height), "flow needs equal sizes");
    if a.width < block || a.height < block || block == 0 {
        return Err(MetricError::ImageTooSmall {
            size: a.width.min(a.height),
            required: block.max(1),
        });
    }
    let (w, h) = (a.width as i64, a.height as i64);
    let r = radius as i64;
    let rows = a.height.div_ceil(block);
    let cols = a.width.div_ceil(block);
    let mut vectors = Vec::with_capacity(rows * cols);
    for by in 0..rows {
        for bx in 0..cols {
            let (x0, y0) = (bx * block, by * block);
            let (x1, y1) = ((x0 + block).min(a.width), (y0 + block).min(a.height));
            let mut best: Option<(f64, i64, (i64, i64))> = None;
            for dy in -r..=r {
                for dx in -r..=r {
                    let mut sad = 0.0;
                    for y in y0..y1 {
                        let yb = (y as i64 + dy).rem_euclid(h) as usize;
                        for x in x0..x1 {
                            let xb = (x as i64 + dx).rem_euclid(w) as usize;
                            sad += (a.get(x, y) - b.get(xb, yb)).abs();
                        }
                    }
                    let key = (sad, dx * dx + dy * dy, (dy, dx));
                    let better = match &best {
                        None => true,
                        Some(cur) => key
                            .0
                            .total_cmp(&cur.0)
                            .then(key.1.cmp(&cur.1))
                            .then(key.2.cmp(&cur.2))
                            .is_lt(),
                    };
                    if better {
                        best = Some(key);
                    }
                }
            }
            let (_, _, (dy, dx)) = best.expect("search window is nonempty");
            vectors.push((dx as i32, dy as i32));
        }
    }
    Ok(FlowField {
        block,
        rows,
        cols,
        vectors,
    })
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn ssim_equal_size(a: &GrayImage, b: &GrayImage, window: usize, stride: usize) -> f64 {
    let n = (window * window) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in (0..=a.height - window).step_by(stride) {
        for x0 in (0..=a.width - window).step_by(stride) {
            let (mut sa, mut sb) = (0.0, 0.0);
            for y in y0..y0 + window {
                for x in x0..x0 + window {
                    sa += a.get(x, y);
                    sb += b.get(x, y);
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
            for y in y0..y0 + window {
                for x in x0..x0 + window {
                    let da = a.get(x, y) - ma;
                    let db = b.get(x, y) - mb;
                    vaa += da * da;
                    vbb += db * db;
                    vab += da * db;
                }
            }
            let (vaa, vbb, vab) = (vaa / n, vbb / n, vab / n);
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * vab + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (vaa + vbb + SSIM_C2));
            count += 1;
        }
    }
    total / count as f64
}

impl MetricConfig {
    fn working(&self, img: &GrayImage) -> Result<GrayImage, MetricError> {
        resample(img, self.working_size, self.working_size)
    }

    fn check_ssim_size(&self) -> Result<(), MetricError> {
        if self.working_size < self.ssim_window || self.ssim_window == 0 || self.ssim_stride == 0 {
            return Err(MetricError::ImageTooSmall {
                size: self.working_size,
                required: self.ssim_window.max(1),
            });
        }
        Ok(())
    }

    /// Mean absolute luminance difference, in `[0, 1]`.
    pub fn pixel_diff_weight(&self, a: &GrayImage, b: &GrayImage) -> Result<f64, MetricError> {
        Ok(pixel_diff_working(&self.working(a)?, &self.working(b)?))
    }

    /// `1 − SSIM`, in `[0, 2]`.
    pub fn ssim_weight(&self, a: &GrayImage, b: &GrayImage) -> Result<f64, MetricError> {
        self.check_ssim_size()?;
        Ok(self.ssim_weight_working(&self.working(a)?, &self.working(b)?))
    }

    /// Population standard deviation of block-flow magnitudes from `a` to `b`.
    pub fn flow_std_weight(&self, a: &GrayImage, b: &GrayImage) -> Result<f64, MetricError> {
        self.flow_std_working(&self.working(a)?, &self.working(b)?)
    }

    fn ssim_weight_working(&self, a: &GrayImage, b: &GrayImage) -> f64 {
        (1.0 - ssim_equal_size(a, b, self.ssim_window, self.ssim_stride)).clamp(0.0, 2.0)
    }

    fn flow_std_working(&self, a: &GrayImage, b: &GrayImage) -> Result<f64, MetricError> {
        let flow = block_matching_flow(a, b, self.flow_block, self.flow_radius)?;
        Ok(population_std(&flow.magnitudes()))
    }

    /// Weight of one pair of images already at working size.
    fn pair_weight(&self, metric: Metric, a: &GrayImage, b: &GrayImage) -> Result<f64, MetricError> {
        match metric {
            Metric::Pixel => Ok(pixel_diff_working(a, b)),
            Metric::Ssim => Ok(self.ssim_weight_working(a, b)),
            Metric::Flow => {
                let ab = self.flow_std_working(a, b)?;
                let ba = self.flow_std_working(b, a)?;
                Ok(0.5 * (ab + ba))
            }
            Metric::Matches => unreachable!("match weights do not use pixels"),
        }
    }
}

fn pixel_diff_working(a: &GrayImage, b: &GrayImage) -> f64 {
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum();
    (sum / a.data.len() as f64).clamp(0.0, 1.0)
}

pub fn pixel_diff_weight(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricError> {
    MetricConfig::default().pixel_diff_weight(a, b)
}

pub fn ssim_weight(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricError> {
    MetricConfig::default().ssim_weight(a, b)
}

pub fn flow_std_weight(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricError> {
    MetricConfig::default().flow_std_weight(a, b)
}

/// `1 / num_matches`, or `+∞` (edge absent) when there are no matches.
pub fn match_count_weight(num_matches: u64) -> f64 {
    if num_matches == 0 {
        f64::INFINITY
    } else {
        1.0 / num_matches as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Pixel,
    Ssim,
    Flow,
    Matches,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Pixel => "pixel",
            Metric::Ssim => "ssim",
            Metric::Flow => "flow",
            Metric::Matches => "matches",
        })
    }
}

/// Symmetric matrix of nonnegative pairwise weights with zero diagonal.
/// `+∞` marks an absent edge.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    labels: Vec<String>,
    w: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(labels: Vec<String>, w: Vec<f64>) -> Result<Self, MetricError> {
        let n = labels.len();
        if w.len() != n * n {
            return Err(MetricError::InvalidMatrix(format!(
                "{} entries for {n} labels",
                w.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(MetricError::InvalidMatrix(format!("duplicate label `{dup}`")));
        }
        for i in 0..n {
            if w[i * n + i] != 0.0 {
                return Err(MetricError::InvalidMatrix(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = w[i * n + j];
                if v.is_nan() || v < 0.0 {
                    return Err(MetricError::InvalidMatrix(format!("entry ({i}, {j}) = {v}")));
                }
                if v != w[j * n + i] {
                    return Err(MetricError::InvalidMatrix(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { labels, w })
    }

    /// Builds the matrix from a weight function evaluated on `i < j`.
    pub fn from_fn(labels: Vec<String>, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, MetricError> {
        let n = labels.len();
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                w[i * n + j] = v;
                w[j * n + i] = v;
            }
        }
        Self::new(labels, w)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.labels.len() + j]
    }

    pub fn is_absent(&self, i: usize, j: usize) -> bool {
        self.get(i, j).is_infinite()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.labels.len();
        &self.w[i * n..(i + 1) * n]
    }

    /// Same matrix with indices permuted: entry `(i, j)` of the result is
    /// entry `(perm[i], perm[j])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let labels = perm.iter().map(|&p| self.labels[p].clone()).collect();
        let n = perm.len();
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                w[i * n + j] = self.get(perm[i], perm[j]);
            }
        }
        Self { labels, w }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedImage {
    pub id: String,
    pub image: GrayImage,
}

/// What a distance matrix is computed from.
#[derive(Debug, Clone, Copy)]
pub enum MetricSource<'a> {
    Images(&'a [NamedImage]),
    Matches(&'a MatchTable),
}

/// Evaluates `metric` on every unordered pair. Flow weights are symmetrized as
/// the mean of both directions.
pub fn build_distance_matrix(
    source: MetricSource<'_>,
    metric: Metric,
    cfg: &MetricConfig,
) -> Result<DistanceMatrix, MetricError> {
    let images = match (source, metric) {
        (MetricSource::Matches(table), Metric::Matches) => {
            return match_matrix(table, table.labels());
        }
        (MetricSource::Matches(_), m) => return Err(MetricError::MissingInput(m, "images")),
        (MetricSource::Images(_), Metric::Matches) => {
            return Err(MetricError::MissingInput(Metric::Matches, "a match table"))
        }
        (MetricSource::Images(images), _) => images,
    };
    if metric == Metric::Ssim {
        cfg.check_ssim_size()?;
    }
    let working = images
        .par_iter()
        .map(|im| {
            cfg.working(&im.image).map_err(|e| MetricError::Pair {
                a: im.id.clone(),
                b: im.id.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let n = images.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let weights = pairs
        .par_iter()
        .map(|&(i, j)| {
            cfg.pair_weight(metric, &working[i], &working[j])
                .map_err(|e| MetricError::Pair {
                    a: images[i].id.clone(),
                    b: images[j].id.clone(),
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut w = vec![0.0; n * n];
    for (&(i, j), v) in pairs.iter().zip(weights) {
        w[i * n + j] = v;
        w[j * n + i] = v;
    }
    DistanceMatrix::new(images.iter().map(|im| im.id.clone()).collect(), w)
}

/// True when the mean off-diagonal weight is strictly below `threshold`,
/// i.e. the views are nearly indistinguishable.
pub fn classify_transparency(d: &DistanceMatrix, threshold: f64) -> Result<bool, MetricError> {
    let n = d.len();
    if n < 2 {
        return Err(MetricError::TooFewImages(n));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += d.get(i, j);
        }
    }
    let mean = sum / (n * (n - 1) / 2) as f64;
    Ok(mean < threshold)
}

/// True iff every image has the same `(width, height)`.
pub fn shared_dimensions(sizes: &[(usize, usize)]) -> bool {
    sizes.windows(2).all(|w| w[0] == w[1])
}
