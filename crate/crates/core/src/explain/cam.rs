use serde::{Deserialize, Serialize};

use super::ExplainError;
use crate::detector::FeatureStack;
use crate::domain::HazardClass;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CamHeatmap<T = f64> {
    pub grid_height: usize,
    pub grid_width: usize,
    /// Row-major normalized grid.
    pub grid: Vec<T>,
    pub image_width: u32,
    pub image_height: u32,
    /// Row-major, `image_height` x `image_width`.
    pub upsampled: Vec<T>,
    pub peak: (usize, usize),
}

impl<T: Scalar> CamHeatmap<T> {
    pub fn at(&self, row: usize, col: usize) -> T {
        self.grid[row * self.grid_width + col]
    }

    pub fn pixel(&self, x: u32, y: u32) -> T {
        self.upsampled[y as usize * self.image_width as usize + x as usize]
    }

    /// Heatmap whose upsampled plane is given directly (grid == upsampled).
    pub fn from_pixels(width: u32, height: u32, values: Vec<T>) -> Self {
        assert_eq!(values.len(), width as usize * height as usize);
        let peak_idx = argmax(&values);
        let w = width as usize;
        CamHeatmap {
            grid_height: height as usize,
            grid_width: w,
            grid: values.clone(),
            image_width: width,
            image_height: height,
            upsampled: values,
            peak: (peak_idx / w.max(1), peak_idx % w.max(1)),
        }
    }
}

/// Class activation map for `class`, upsampled to `image_width` x `image_height`.
pub fn cam<T: Scalar>(
    features: &FeatureStack<T>,
    class: HazardClass,
    image_width: u32,
    image_height: u32,
) -> Result<CamHeatmap<T>, ExplainError> {
    let weights = features.weights(class).ok_or(ExplainError::UnknownClass(class))?;
    let (h, w) = (features.height(), features.width());
    let mut raw = vec![T::zero(); h * w];
    for (wk, ch) in weights.iter().zip(features.channels()) {
        for (r, f) in raw.iter_mut().zip(ch) {
            *r = *r + *wk * *f;
        }
    }
    for r in raw.iter_mut() {
        *r = r.max(T::zero());
    }
    let lo = raw.iter().copied().fold(T::infinity(), T::min);
    let hi = raw.iter().copied().fold(T::neg_infinity(), T::max);
    let grid: Vec<T> = if hi > lo {
        raw.iter().map(|v| (*v - lo) / (hi - lo)).collect()
    } else {
        vec![T::zero(); raw.len()]
    };
    let p = argmax(&grid);
    let upsampled = bilinear(&grid, h, w, image_width as usize, image_height as usize);
    Ok(CamHeatmap {
        grid_height: h,
        grid_width: w,
        grid,
        image_width,
        image_height,
        upsampled,
        peak: (p / w, p % w),
    })
}

/// First index of the maximum value.
fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Half-pixel-centred bilinear resampling with edge clamping.
pub fn bilinear<T: Scalar>(src: &[T], h: usize, w: usize, out_w: usize, out_h: usize) -> Vec<T> {
    let axis = |n_out: usize, n_in: usize| -> Vec<(usize, usize, T)> {
        (0..n_out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5)
                    .clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, T::lit(s - i0 as f64))
            })
            .collect()
    };
    let xs = axis(out_w, w);
    let ys = axis(out_h, h);
    let mut out = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
            out.push((top * (T::one() - fy) + bot * fy).clamp_to(T::zero(), T::one()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use approx::assert_abs_diff_eq;

    fn stack(h: usize, w: usize, channels: Vec<Vec<f64>>, weights: Vec<f64>) -> FeatureStack {
        FeatureStack::new(h, w, channels, BTreeMap::from([(HazardClass::MetalCan, weights)])).unwrap()
    }

    #[test]
    fn uniform_is_all_zero() {
        let fs = stack(4, 4, vec![vec![0.7; 16]], vec![1.0]);
        let hm = cam(&fs, HazardClass::MetalCan, 32, 32).unwrap();
        assert!(hm.grid.iter().all(|v| *v == 0.0));
        assert!(hm.upsampled.iter().all(|v| *v == 0.0));
        assert_eq!(hm.peak, (0, 0));
    }

    #[test]
    fn single_hot_cell() {
        let mut ch = vec![0.0; 5 * 6];
        ch[2 * 6 + 3] = 4.0;
        let hm = cam(&stack(5, 6, vec![ch], vec![1.0]), HazardClass::MetalCan, 60, 50).unwrap();
        assert_eq!(hm.peak, (2, 3));
        assert_eq!(hm.at(2, 3), 1.0);
        assert_eq!(hm.upsampled.len(), 60 * 50);
        // pixel 35 samples grid x = 35.5 * 6 / 60 - 0.5 = 3.05, so 0.95 per axis
        assert_abs_diff_eq!(hm.pixel(35, 25), 0.95 * 0.95, epsilon = 1e-12);
        assert_abs_diff_eq!(hm.pixel(34, 24), 0.95 * 0.95, epsilon = 1e-12);
    }

    #[test]
    fn relu_difference_by_hand() {
        let a = vec![3.0, 1.0, 0.0, 2.0, 2.0, 5.0, 0.0, 4.0, 1.0];
        let b = vec![1.0, 2.0, 0.0, 0.0, 1.0, 1.0, 3.0, 0.0, 1.0];
        // a - b = [2,-1,0,2,1,4,-3,4,0] -> relu [2,0,0,2,1,4,0,4,0] -> /4
        let hm = cam(&stack(3, 3, vec![a, b], vec![1.0, -1.0]), HazardClass::MetalCan, 3, 3).unwrap();
        assert_eq!(hm.grid, vec![0.5, 0.0, 0.0, 0.5, 0.25, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(hm.peak, (1, 2));
        // same size upsampling is the identity
        assert_eq!(hm.upsampled, hm.grid);
    }

    #[test]
    fn unknown_class() {
        let fs = stack(2, 2, vec![vec![1.0; 4]], vec![1.0]);
        assert!(matches!(
            cam(&fs, HazardClass::Other, 4, 4),
            Err(ExplainError::UnknownClass(HazardClass::Other))
        ));
    }

    #[test]
    fn f32_scalar() {
        let mut ch = vec![0.0f32; 9];
        ch[4] = 1.0;
        let fs = FeatureStack::new(3, 3, vec![ch], BTreeMap::from([(HazardClass::Other, vec![2.0f32])])).unwrap();
        let hm = cam(&fs, HazardClass::Other, 9, 9).unwrap();
        assert_eq!(hm.peak, (1, 1));
    }
}
