use std::fmt::Display;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ExplainError;
use crate::config::ExplainConfig;
use crate::domain::BoundingBox;
use crate::scalar::Scalar;

/// Largest segment count for which full mask enumeration is attempted.
pub const MAX_EXHAUSTIVE_SEGMENTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    pub rows: usize,
    pub cols: usize,
    pub n_samples: usize,
    pub kernel_width: f64,
    pub ridge_lambda: f64,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig::from(&ExplainConfig::default())
    }
}

impl From<&ExplainConfig> for LimeConfig {
    fn from(c: &ExplainConfig) -> Self {
        LimeConfig {
            rows: c.lime_rows,
            cols: c.lime_cols,
            n_samples: c.lime_samples,
            kernel_width: c.kernel_width,
            ridge_lambda: c.ridge_lambda,
            top_k: c.top_k,
            seed: c.seed,
        }
    }
}

impl LimeConfig {
    pub fn segments(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LimeExplanation<T = f64> {
    /// Surrogate coefficient per segment, row-major over the segment grid.
    pub cell_importance: Vec<T>,
    pub intercept: T,
    pub segment_grid: (usize, usize),
    pub n_samples: usize,
    pub kernel_width: f64,
    /// Segment ids by descending |importance|, ties by id.
    pub top_k: Vec<usize>,
    pub exhaustive: bool,
}

/// Either every mask in `{0,1}^s` (when `n >= 2^s`) or the all-ones mask
/// followed by `n - 1` uniform draws.
pub fn sample_masks(s: usize, n: usize, seed: u64) -> (Vec<Vec<bool>>, bool) {
    if s <= MAX_EXHAUSTIVE_SEGMENTS && n >= 1usize << s {
        let all = (0..1usize << s)
            .rev()
            .map(|m| (0..s).map(|j| m >> j & 1 == 1).collect())
            .collect();
        return (all, true);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    out.push(vec![true; s]);
    while out.len() < n {
        out.push((0..s).map(|_| rng.random::<bool>()).collect());
    }
    (out, false)
}

pub fn kernel_weight(mask: &[bool], kernel_width: f64) -> f64 {
    let on = mask.iter().filter(|b| **b).count() as f64 / mask.len() as f64;
    (-(1.0 - on).powi(2) / (kernel_width * kernel_width)).exp()
}

/// Weighted ridge regression of `y` on the mask indicators with an
/// unpenalized intercept. Returns `(coefficients, intercept)`.
pub fn fit_weighted_ridge<T: Scalar>(
    masks: &[Vec<bool>],
    y: &[T],
    weights: &[T],
    lambda: T,
) -> Result<(Vec<T>, T), ExplainError> {
    let s = masks.first().map_or(0, Vec::len);
    let p = s + 1;
    let mut a = vec![vec![T::zero(); p + 1]; p];
    for ((z, yi), wi) in masks.iter().zip(y).zip(weights) {
        let x = |j: usize| if j == 0 || z[j - 1] { T::one() } else { T::zero() };
        for r in 0..p {
            let xr = x(r);
            if xr == T::zero() {
                continue;
            }
            for c in 0..p {
                a[r][c] = a[r][c] + *wi * xr * x(c);
            }
            a[r][p] = a[r][p] + *wi * xr * *yi;
        }
    }
    for (j, row) in a.iter_mut().enumerate().skip(1) {
        row[j] = row[j] + lambda;
    }
    let beta = solve(a).ok_or(ExplainError::Singular)?;
    Ok((beta[1..].to_vec(), beta[0]))
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve<T: Scalar>(mut a: Vec<Vec<T>>) -> Option<Vec<T>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| {
            a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[piv][col].abs() <= T::epsilon() {
            return None;
        }
        a.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == T::zero() {
                continue;
            }
            for c in col..=n {
                a[r][c] = a[r][c] - f * a[col][c];
            }
        }
    }
    let mut x = vec![T::zero(); n];
    for r in (0..n).rev() {
        let mut acc = a[r][n];
        for c in r + 1..n {
            acc = acc - a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    Some(x)
}

pub fn rank_segments<T: Scalar>(importance: &[T], k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..importance.len()).collect();
    ids.sort_by(|&i, &j| {
        importance[j]
            .abs()
            .partial_cmp(&importance[i].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    ids.truncate(k.min(importance.len()));
    ids
}

/// LIME over `s` abstract segments: `predict` maps a mask (true = kept)
/// to the target score.
pub fn explain_masks<T, E, F>(
    s: usize,
    rows_cols: (usize, usize),
    cfg: &LimeConfig,
    mut predict: F,
) -> Result<LimeExplanation<T>, ExplainError>
where
    T: Scalar,
    E: Display,
    F: FnMut(&[bool]) -> Result<T, E>,
{
    if s == 0 || cfg.n_samples < s {
        return Err(ExplainError::TooFewSamples {
            n_samples: cfg.n_samples,
            segments: s,
        });
    }
    let (masks, exhaustive) = sample_masks(s, cfg.n_samples, cfg.seed);
    let mut y = Vec::with_capacity(masks.len());
    for m in &masks {
        let v = predict(m).map_err(|e| ExplainError::PredictorFailure {
            completed: y.len(),
            reason: e.to_string(),
        })?;
        y.push(v);
    }
    let w: Vec<T> = masks.iter().map(|m| T::lit(kernel_weight(m, cfg.kernel_width))).collect();
    let (coef, intercept) = fit_weighted_ridge(&masks, &y, &w, T::lit(cfg.ridge_lambda))?;
    let top_k = rank_segments(&coef, cfg.top_k);
    Ok(LimeExplanation {
        cell_importance: coef,
        intercept,
        segment_grid: rows_cols,
        n_samples: masks.len(),
        kernel_width: cfg.kernel_width,
        top_k,
        exhaustive,
    })
}

/// Segment index of each pixel inside `bbox` (row-major over the grid),
/// assigned by pixel centre.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    col_of: Vec<usize>,
    row_of: Vec<usize>,
    cols: usize,
}

impl Segmentation {
    pub fn new(bbox: &BoundingBox, rows: usize, cols: usize) -> Self {
        let [xmin, ymin, xmax, ymax] = bbox.to_array();
        // pixels whose centre lies inside the box
        let x0 = (xmin - 0.5).ceil().max(0.0) as u32;
        let y0 = (ymin - 0.5).ceil().max(0.0) as u32;
        let x1 = ((xmax - 0.5).ceil().max(0.0) as u32).max(x0);
        let y1 = ((ymax - 0.5).ceil().max(0.0) as u32).max(y0);
        let idx = |p: u32, lo: f64, len: f64, n: usize| {
            (((p as f64 + 0.5 - lo) / len * n as f64).floor().max(0.0) as usize).min(n - 1)
        };
        Segmentation {
            x0,
            y0,
            x1,
            y1,
            col_of: (x0..x1).map(|x| idx(x, xmin, xmax - xmin, cols)).collect(),
            row_of: (y0..y1).map(|y| idx(y, ymin, ymax - ymin, rows)).collect(),
            cols,
        }
    }

    pub fn segment_of(&self, x: u32, y: u32) -> Option<usize> {
        if x < self.x0 || x >= self.x1 || y < self.y0 || y >= self.y1 {
            return None;
        }
        Some(self.row_of[(y - self.y0) as usize] * self.cols + self.col_of[(x - self.x0) as usize])
    }
}

pub fn mean_color(img: &RgbImage) -> Rgb<u8> {
    let n = (img.width() as u64 * img.height() as u64).max(1);
    let mut acc = [0u64; 3];
    for p in img.pixels() {
        for k in 0..3 {
            acc[k] += p.0[k] as u64;
        }
    }
    Rgb(acc.map(|v| ((v + n / 2) / n) as u8))
}

/// Copy of `img` with segments whose mask bit is false painted `fill`.
pub fn apply_mask(img: &RgbImage, seg: &Segmentation, mask: &[bool], fill: Rgb<u8>) -> RgbImage {
    let mut out = img.clone();
    for y in seg.y0..seg.y1 {
        for x in seg.x0..seg.x1 {
            if let Some(s) = seg.segment_of(x, y) {
                if !mask[s] {
                    out.put_pixel(x, y, fill);
                }
            }
        }
    }
    out
}

/// Explains the score `predict` assigns to the target detection by
/// masking grid cells of `bbox` with the image mean color.
pub fn lime_explain<T, E, F>(
    mut predict: F,
    image: &RgbImage,
    bbox: &BoundingBox,
    cfg: &LimeConfig,
) -> Result<LimeExplanation<T>, ExplainError>
where
    T: Scalar,
    E: Display,
    F: FnMut(&RgbImage) -> Result<T, E>,
{
    if !bbox.within(image.width() as f64, image.height() as f64) {
        return Err(ExplainError::BoxOutsideImage);
    }
    let seg = Segmentation::new(bbox, cfg.rows, cfg.cols);
    let fill = mean_color(image);
    explain_masks(cfg.segments(), (cfg.rows, cfg.cols), cfg, |mask| {
        predict(&apply_mask(image, &seg, mask, fill))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn cfg(rows: usize, cols: usize, n: usize) -> LimeConfig {
        LimeConfig {
            rows,
            cols,
            n_samples: n,
            ..LimeConfig::default()
        }
    }

    #[test]
    fn masks_include_all_ones() {
        let (m, ex) = sample_masks(36, 1000, 3);
        assert!(!ex);
        assert_eq!(m.len(), 1000);
        assert!(m[0].iter().all(|b| *b));
        let (m, ex) = sample_masks(4, 16, 3);
        assert!(ex);
        assert_eq!(m.len(), 16);
        assert!(m[0].iter().all(|b| *b));
    }

    #[test]
    fn kernel() {
        assert_eq!(kernel_weight(&[true, true], 0.25), 1.0);
        assert!((kernel_weight(&[true, false], 0.25) - (-4.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn constant_predictor() {
        let e = explain_masks(36, (6, 6), &cfg(6, 6, 1000), |_| Ok::<_, Infallible>(0.8)).unwrap();
        assert!(e.cell_importance.iter().all(|c: &f64| c.abs() < 1e-6));
        assert!((e.intercept - 0.8).abs() < 1e-9);
    }

    #[test]
    fn single_segment_indicator() {
        let e = explain_masks(4, (2, 2), &cfg(2, 2, 16), |m| Ok::<f64, Infallible>(if m[3] { 1.0 } else { 0.0 }))
            .unwrap();
        assert!(e.exhaustive);
        assert!(e.cell_importance[3] > 0.0);
        assert!((0..3).all(|j| e.cell_importance[3] > e.cell_importance[j]));
        assert_eq!(e.top_k[0], 3);
    }

    #[test]
    fn predictor_failure_reports_progress() {
        let mut calls = 0;
        let err = explain_masks(4, (2, 2), &cfg(2, 2, 100), |_| {
            calls += 1;
            if calls > 7 {
                Err("backend down")
            } else {
                Ok(1.0f64)
            }
        })
        .unwrap_err();
        assert!(matches!(err, ExplainError::PredictorFailure { completed: 7, .. }));
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            explain_masks(36, (6, 6), &cfg(6, 6, 10), |_| Ok::<f64, Infallible>(0.0)),
            Err(ExplainError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn segmentation_covers_box() {
        let b = BoundingBox::new(10.0, 20.0, 70.0, 50.0).unwrap();
        let seg = Segmentation::new(&b, 6, 6);
        assert_eq!((seg.x0, seg.y0, seg.x1, seg.y1), (10, 20, 70, 50));
        assert_eq!(seg.segment_of(10, 20), Some(0));
        assert_eq!(seg.segment_of(69, 49), Some(35));
        assert_eq!(seg.segment_of(20, 22), Some(1));
        assert_eq!(seg.segment_of(20, 25), Some(7));
        assert_eq!(seg.segment_of(9, 25), None);
        let mut counts = [0; 36];
        for y in 20..50 {
            for x in 10..70 {
                counts[seg.segment_of(x, y).unwrap()] += 1;
            }
        }
        assert!(counts.iter().all(|c| *c == 50));
    }

    #[test]
    fn image_level_masking_uses_mean_color() {
        let img = RgbImage::from_fn(12, 12, |x, _| if x < 6 { Rgb([0, 0, 0]) } else { Rgb([200, 100, 50]) });
        let b = BoundingBox::new(0.0, 0.0, 12.0, 12.0).unwrap();
        let seg = Segmentation::new(&b, 2, 2);
        let out = apply_mask(&img, &seg, &[false, true, true, true], mean_color(&img));
        assert_eq!(out.get_pixel(0, 0).0, [100, 50, 25]);
        assert_eq!(out.get_pixel(11, 11).0, [200, 100, 50]);
        let outside = BoundingBox::new(0.0, 0.0, 13.0, 12.0).unwrap();
        assert!(matches!(
            lime_explain(|_| Ok::<f64, Infallible>(0.0), &img, &outside, &cfg(2, 2, 16)),
            Err(ExplainError::BoxOutsideImage)
        ));
    }
}
