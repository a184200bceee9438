//! Co-saliency evaluation: PR curve, max F-measure, MAE, S-measure and
//! E-measure, all averaged per image.

mod alignment;
mod structure;

use serde::{Deserialize, Serialize};

pub use alignment::{e_curve, e_measure, image_e_curve};
pub use structure::{image_s_measure, s_measure, SScore};

use crate::error::{shape_err, Error, Result};
use crate::imageio::{resize_bilinear, GrayImage};

pub const LEVELS: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub beta2: f64,
    pub s_alpha: f64,
    pub gt_level: u8,
    pub eps: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { beta2: 0.3, s_alpha: 0.5, gt_level: 128, eps: 1e-8 }
    }
}

/// A prediction in `[0,1]` and a binary ground truth of equal extents.
#[derive(Clone, Debug, PartialEq)]
pub struct MapPair {
    pub width: usize,
    pub height: usize,
    pub pred: Vec<f64>,
    pub gt: Vec<bool>,
}

impl MapPair {
    pub fn new(width: usize, height: usize, pred: Vec<f64>, gt: Vec<bool>) -> Result<Self> {
        if pred.len() != width * height || gt.len() != width * height || pred.is_empty() {
            return Err(shape_err(
                "map_pair",
                format!("{}x{} pair with {} / {} values", width, height, pred.len(), gt.len()),
            ));
        }
        if pred.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("prediction values must lie in [0, 1]".into()));
        }
        Ok(Self { width, height, pred, gt })
    }

    /// From 8-bit images; the prediction is resized (bilinear) to the
    /// ground truth's extents.
    pub fn from_images(pred: &GrayImage, gt: &GrayImage, cfg: &MetricConfig) -> Result<Self> {
        let p = resize_bilinear(&pred.to_unit(), pred.width, pred.height, gt.width, gt.height);
        let p = p.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let g = gt.data.iter().map(|&v| v >= cfg.gt_level).collect();
        Self::new(gt.width, gt.height, p, g)
    }

    pub fn len(&self) -> usize {
        self.pred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pred.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.gt.iter().filter(|&&g| g).count()
    }
}

/// Largest threshold level `t` with `v >= t / 255`.
pub fn level_of(v: f64) -> usize {
    let mut k = ((v * 255.0).floor().max(0.0) as usize).min(LEVELS - 1);
    while k + 1 < LEVELS && v >= (k + 1) as f64 / 255.0 {
        k += 1;
    }
    while k > 0 && v < k as f64 / 255.0 {
        k -= 1;
    }
    k
}

/// Per-threshold confusion counts of one image.
#[derive(Clone, Debug)]
pub(crate) struct Sweep {
    /// `tp[t]`: positives predicted at threshold `t`.
    pub tp: Vec<usize>,
    /// `fp[t]`: negatives predicted at threshold `t`.
    pub fp: Vec<usize>,
    pub positives: usize,
    pub negatives: usize,
}

impl Sweep {
    pub fn new(pair: &MapPair) -> Self {
        let mut pos = vec![0usize; LEVELS];
        let mut neg = vec![0usize; LEVELS];
        for (&v, &g) in pair.pred.iter().zip(&pair.gt) {
            let k = level_of(v);
            if g {
                pos[k] += 1;
            } else {
                neg[k] += 1;
            }
        }
        // suffix sums: a pixel at level k is predicted for every t <= k
        for t in (0..LEVELS - 1).rev() {
            pos[t] += pos[t + 1];
            neg[t] += neg[t + 1];
        }
        let positives = pos[0];
        let negatives = neg[0];
        Self { tp: pos, fp: neg, positives, negatives }
    }
}

/// Order-independent mean: values are sorted before summation.
pub fn stable_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

fn nonempty(pairs: &[MapPair]) -> Result<()> {
    if pairs.is_empty() {
        Err(Error::Empty("no prediction/ground-truth pairs"))
    } else {
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Per-image (precision, recall) at every threshold level.
pub fn image_pr(pair: &MapPair, cfg: &MetricConfig) -> Vec<(f64, f64)> {
    let s = Sweep::new(pair);
    (0..LEVELS)
        .map(|t| {
            let tp = s.tp[t] as f64;
            let predicted = (s.tp[t] + s.fp[t]) as f64;
            (tp / (predicted + cfg.eps), tp / (s.positives as f64 + cfg.eps))
        })
        .collect()
}

/// Dataset-mean precision and recall for thresholds `0..=255`, ascending.
pub fn pr_curve(pairs: &[MapPair], cfg: &MetricConfig) -> Result<Vec<PrPoint>> {
    nonempty(pairs)?;
    if pairs.iter().all(|p| p.positives() == 0) {
        return Err(Error::Empty("no ground truth contains a positive pixel"));
    }
    let per: Vec<Vec<(f64, f64)>> = pairs.iter().map(|p| image_pr(p, cfg)).collect();
    Ok((0..LEVELS)
        .map(|t| {
            let ps: Vec<f64> = per.iter().map(|c| c[t].0).collect();
            let rs: Vec<f64> = per.iter().map(|c| c[t].1).collect();
            PrPoint { threshold: t, precision: stable_mean(&ps), recall: stable_mean(&rs) }
        })
        .collect())
}

/// `(1 + b) P R / (b P + R)`, zero when both are zero.
pub fn f_beta(precision: f64, recall: f64, beta2: f64) -> f64 {
    // the weighted harmonic mean of two equal values is that value; the
    // general formula would only approximate it
    if precision == recall {
        return precision;
    }
    let denom = beta2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / denom
    }
}

pub fn max_f_from_curve(curve: &[PrPoint], beta2: f64) -> f64 {
    curve.iter().map(|p| f_beta(p.precision, p.recall, beta2)).fold(0.0, f64::max)
}

pub fn max_f_measure(pairs: &[MapPair], cfg: &MetricConfig) -> Result<f64> {
    Ok(max_f_from_curve(&pr_curve(pairs, cfg)?, cfg.beta2))
}

pub fn image_mae(pair: &MapPair) -> f64 {
    let sum: f64 = pair
        .pred
        .iter()
        .zip(&pair.gt)
        .map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs())
        .sum();
    sum / pair.len() as f64
}

pub fn mae(pairs: &[MapPair]) -> Result<f64> {
    nonempty(pairs)?;
    Ok(stable_mean(&pairs.iter().map(image_mae).collect::<Vec<_>>()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub images: usize,
    pub max_f: f64,
    pub mae: f64,
    pub s: f64,
    /// Mean object term over images with a non-degenerate ground truth.
    pub s_object: Option<f64>,
    /// Mean region term over the same images.
    pub s_region: Option<f64>,
    pub max_e: f64,
    pub pr: Vec<PrPoint>,
}

pub fn evaluate(pairs: &[MapPair], cfg: &MetricConfig) -> Result<MetricReport> {
    let pr = pr_curve(pairs, cfg)?;
    let s_scores: Vec<SScore> = pairs.iter().map(|p| image_s_measure(p, cfg)).collect();
    let s = stable_mean(&s_scores.iter().map(|s| s.s).collect::<Vec<_>>());
    let component = |f: fn(&SScore) -> Option<f64>| {
        let v: Vec<f64> = s_scores.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| stable_mean(&v))
    };
    Ok(MetricReport {
        images: pairs.len(),
        max_f: max_f_from_curve(&pr, cfg.beta2),
        mae: mae(pairs)?,
        s,
        s_object: component(|s| s.object),
        s_region: component(|s| s.region),
        max_e: e_measure(pairs, cfg)?,
        pr,
    })
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn opt_fixed(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), fixed)
}

impl MetricReport {
    /// Scalar scores as a JSON object with six decimals (no PR curve).
    pub fn scores_json(&self) -> String {
        format!(
            "{{\"images\": {}, \"max_f\": {}, \"s\": {}, \"s_object\": {}, \"s_region\": {}, \"max_e\": {}, \"mae\": {}}}",
            self.images,
            fixed(self.max_f),
            fixed(self.s),
            opt_fixed(self.s_object),
            opt_fixed(self.s_region),
            fixed(self.max_e),
            fixed(self.mae)
        )
    }

    /// `threshold,precision,recall` with one row per level.
    pub fn pr_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for p in &self.pr {
            out.push_str(&format!("{},{:.6},{:.6}\n", p.threshold, p.precision, p.recall));
        }
        out
    }
}

/// Full JSON report: overall scores, optionally followed by per-group scores
/// in the given order.
pub fn report_json(overall: &MetricReport, per_group: &[(String, MetricReport)]) -> String {
    let mut out = format!("{{\n  \"overall\": {}", overall.scores_json());
    if !per_group.is_empty() {
        out.push_str(",\n  \"groups\": {");
        for (i, (name, r)) in per_group.iter().enumerate() {
            let sep = if i == 0 { "" } else { "," };
            out.push_str(&format!("{sep}\n    {}: {}", serde_json::to_string(name).unwrap(), r.scores_json()));
        }
        out.push_str("\n  }");
    }
    out.push_str("\n}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(pred: &[f64], gt: &[u8]) -> MapPair {
        MapPair::new(pred.len(), 1, pred.to_vec(), gt.iter().map(|&g| g == 1).collect()).unwrap()
    }

    #[test]
    fn level_matches_direct_comparison() {
        for i in 0..=2550 {
            let v = i as f64 / 2550.0;
            let k = level_of(v);
            assert!(v >= k as f64 / 255.0);
            assert!(k == 255 || v < (k + 1) as f64 / 255.0);
        }
        assert_eq!(level_of(0.0), 0);
        assert_eq!(level_of(1.0), 255);
        assert_eq!(level_of(128.0 / 255.0), 128);
    }

    #[test]
    fn mae_hand_example() {
        let p = MapPair::new(2, 2, vec![1.0, 0.0, 0.5, 0.5], vec![true, false, false, true]).unwrap();
        assert_eq!(mae(&[p]).unwrap(), 0.25);
        assert!(mae(&[]).is_err());
    }

    #[test]
    fn perfect_and_constant_predictions() {
        let gt = [1, 1, 0, 0, 0, 1, 0, 0];
        let exact = pair(&gt.map(|g| g as f64), &gt);
        let curve = pr_curve(&[exact], &MetricConfig::default()).unwrap();
        for p in &curve[1..] {
            assert!((p.precision - 1.0).abs() < 1e-8 && (p.recall - 1.0).abs() < 1e-8);
        }
        let ones = pair(&[1.0; 8], &gt);
        for p in pr_curve(&[ones], &MetricConfig::default()).unwrap() {
            assert!((p.recall - 1.0).abs() < 1e-8);
            assert!((p.precision - 3.0 / 8.0).abs() < 1e-8);
        }
    }

    #[test]
    fn f_beta_identity() {
        assert_eq!(f_beta(0.5, 0.5, 0.3), 0.5);
        assert_eq!(f_beta(0.0, 0.0, 0.3), 0.0);
    }

    #[test]
    fn report_formats() {
        let gt = [1, 0, 0, 1];
        let r = evaluate(&[pair(&[0.9, 0.2, 0.1, 0.6], &gt)], &MetricConfig::default()).unwrap();
        let json = report_json(&r, &[("g\"1".into(), r.clone())]);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["overall"]["mae"].as_f64().unwrap(), format!("{:.6}", r.mae).parse::<f64>().unwrap());
        assert!(v["groups"]["g\"1"]["max_f"].is_number());
        assert!(json.contains(&format!("\"mae\": {:.6}", r.mae)));
        let csv = r.pr_csv();
        assert_eq!(csv.lines().count(), 257);
        assert!(csv.starts_with("threshold,precision,recall\n0,"));
    }
}
