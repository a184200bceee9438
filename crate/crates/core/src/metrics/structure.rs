//! Structure measure: `alpha * S_object + (1 - alpha) * S_region`.
//!
//! Follows the reference structure-measure definition, including its use of
//! machine epsilon, sample standard deviations, and 1-based rounded
//! centroids for the region split.

use super::{nonempty, stable_mean, MapPair, MetricConfig};
use crate::error::Result;

const EPS: f64 = f64::EPSILON;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SScore {
    pub s: f64,
    /// `None` for an all-background or all-foreground ground truth.
    pub object: Option<f64>,
    pub region: Option<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn object_score(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let x = mean(values);
    2.0 * x / (x * x + 1.0 + sample_std(values) + EPS)
}

fn s_object(pair: &MapPair) -> f64 {
    let fg: Vec<f64> = pair.pred.iter().zip(&pair.gt).filter(|(_, &g)| g).map(|(&p, _)| p).collect();
    let bg: Vec<f64> = pair.pred.iter().zip(&pair.gt).filter(|(_, &g)| !g).map(|(&p, _)| 1.0 - p).collect();
    let u = fg.len() as f64 / pair.len() as f64;
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

fn region_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let x = mean(pred);
    let y = mean(gt);
    let sx2 = pred.iter().map(|p| (p - x).powi(2)).sum::<f64>() / (n - 1.0 + EPS);
    let sy2 = gt.iter().map(|g| (g - y).powi(2)).sum::<f64>() / (n - 1.0 + EPS);
    let sxy = pred.iter().zip(gt).map(|(p, g)| (p - x) * (g - y)).sum::<f64>() / (n - 1.0 + EPS);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx2 + sy2);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// 1-based `(column, row)` split point, rounded half away from zero.
pub(crate) fn centroid(pair: &MapPair) -> (usize, usize) {
    let (w, h) = (pair.width, pair.height);
    let total = pair.positives();
    if total == 0 {
        return (((w as f64) / 2.0).round() as usize, ((h as f64) / 2.0).round() as usize);
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for (i, _) in pair.gt.iter().enumerate().filter(|(_, &g)| g) {
        sx += (i % w + 1) as f64;
        sy += (i / w + 1) as f64;
    }
    ((sx / total as f64).round() as usize, (sy / total as f64).round() as usize)
}

fn s_region(pair: &MapPair) -> f64 {
    let (w, h) = (pair.width, pair.height);
    let (cx, cy) = centroid(pair);
    let area = (w * h) as f64;
    let quads = [(0, cx, 0, cy), (cx, w, 0, cy), (0, cx, cy, h), (cx, w, cy, h)];
    let mut q = 0.0;
    for (x0, x1, y0, y1) in quads {
        let count = (x1 - x0) * (y1 - y0);
        if count == 0 {
            continue;
        }
        let mut p = Vec::with_capacity(count);
        let mut g = Vec::with_capacity(count);
        for y in y0..y1 {
            for x in x0..x1 {
                p.push(pair.pred[y * w + x]);
                g.push(if pair.gt[y * w + x] { 1.0 } else { 0.0 });
            }
        }
        q += count as f64 / area * region_ssim(&p, &g);
    }
    q
}

pub fn image_s_measure(pair: &MapPair, cfg: &MetricConfig) -> SScore {
    let y = pair.positives() as f64 / pair.len() as f64;
    if y == 0.0 {
        return SScore { s: 1.0 - mean(&pair.pred), object: None, region: None };
    }
    if y == 1.0 {
        return SScore { s: mean(&pair.pred), object: None, region: None };
    }
    let o = s_object(pair);
    let r = s_region(pair);
    let s = (cfg.s_alpha * o + (1.0 - cfg.s_alpha) * r).max(0.0);
    SScore { s, object: Some(o), region: Some(r) }
}

pub fn s_measure(pairs: &[MapPair], cfg: &MetricConfig) -> Result<f64> {
    nonempty(pairs)?;
    Ok(stable_mean(&pairs.iter().map(|p| image_s_measure(p, cfg).s).collect::<Vec<_>>()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(side: usize, x0: usize, x1: usize, y0: usize, y1: usize) -> Vec<bool> {
        (0..side * side)
            .map(|i| (x0..x1).contains(&(i % side)) && (y0..y1).contains(&(i / side)))
            .collect()
    }

    #[test]
    fn degenerate_fallbacks() {
        let cfg = MetricConfig::default();
        let bg = MapPair::new(2, 2, vec![0.0; 4], vec![false; 4]).unwrap();
        assert_eq!(image_s_measure(&bg, &cfg).s, 1.0);
        let bg1 = MapPair::new(2, 2, vec![1.0; 4], vec![false; 4]).unwrap();
        assert_eq!(image_s_measure(&bg1, &cfg).s, 0.0);
        let fg = MapPair::new(2, 2, vec![0.25; 4], vec![true; 4]).unwrap();
        assert_eq!(image_s_measure(&fg, &cfg).s, 0.25);
    }

    #[test]
    fn perfect_binary_prediction_scores_high() {
        let gt = square(16, 3, 9, 5, 12);
        let pred = gt.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
        let s = image_s_measure(&MapPair::new(16, 16, pred, gt).unwrap(), &MetricConfig::default());
        // object terms are 2/(2+eps) each; every region is either a perfect
        // two-valued match or a constant match
        assert!(s.s > 0.98 && s.s <= 1.0, "{s:?}");
    }

    #[test]
    fn centroid_rounds_one_based() {
        // positives in columns 1 and 2 (0-based) of row 0: mean 1-based column 2.5 -> 3
        let mut gt = vec![false; 16];
        gt[1] = true;
        gt[2] = true;
        let p = MapPair::new(4, 4, vec![0.0; 16], gt).unwrap();
        assert_eq!(centroid(&p), (3, 1));
    }
}
