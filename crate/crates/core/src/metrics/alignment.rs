//! Enhanced-alignment measure over the 256-level threshold sweep.

use super::{nonempty, stable_mean, MapPair, MetricConfig, Sweep, LEVELS};
use crate::error::Result;

fn theta(fm: f64, gt: f64, eps: f64) -> f64 {
    let phi = 2.0 * fm * gt / (fm * fm + gt * gt + eps);
    0.25 * (1.0 + phi).powi(2)
}

/// Per-threshold E of one image. The binarized map and the mask each take
/// two values, so the mean alignment is a count-weighted sum over the four
/// combinations.
pub fn image_e_curve(pair: &MapPair, cfg: &MetricConfig) -> Vec<f64> {
    let s = Sweep::new(pair);
    let n = pair.len() as f64;
    let pos = s.positives as f64;
    (0..LEVELS)
        .map(|t| {
            let (tp, fp) = (s.tp[t] as f64, s.fp[t] as f64);
            let on = tp + fp;
            if s.positives == 0 {
                return (n - on) / n;
            }
            if s.negatives == 0 {
                return on / n;
            }
            let mb = on / n;
            let mt = pos / n;
            let e = cfg.eps;
            (tp * theta(1.0 - mb, 1.0 - mt, e)
                + fp * theta(1.0 - mb, -mt, e)
                + (pos - tp) * theta(-mb, 1.0 - mt, e)
                + (s.negatives as f64 - fp) * theta(-mb, -mt, e))
                / n
        })
        .collect()
}

/// Dataset-mean E per threshold.
pub fn e_curve(pairs: &[MapPair], cfg: &MetricConfig) -> Result<Vec<f64>> {
    nonempty(pairs)?;
    let per: Vec<Vec<f64>> = pairs.iter().map(|p| image_e_curve(p, cfg)).collect();
    Ok((0..LEVELS)
        .map(|t| stable_mean(&per.iter().map(|c| c[t]).collect::<Vec<_>>()))
        .collect())
}

/// Maximum over thresholds of the dataset-mean E.
pub fn e_measure(pairs: &[MapPair], cfg: &MetricConfig) -> Result<f64> {
    Ok(e_curve(pairs, cfg)?.into_iter().fold(0.0, f64::max))
}
