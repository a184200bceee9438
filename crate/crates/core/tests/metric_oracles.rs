use glnet_core::metrics::{
    e_measure, f_beta, image_s_measure, mae, max_f_measure, pr_curve, s_measure, MapPair, MetricConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIDE: usize = 8;

fn random_pair(rng: &mut ChaCha8Rng) -> MapPair {
    let fg_rate = rng.gen_range(0.1..0.6);
    let gt: Vec<bool> = (0..SIDE * SIDE).map(|_| rng.gen_bool(fg_rate)).collect();
    let pred = gt
        .iter()
        .map(|&g| {
            // half the values sit exactly on a threshold level
            let v: f64 = if g { rng.gen_range(0.2..1.0) } else { rng.gen_range(0.0..0.8) };
            if rng.gen_bool(0.5) {
                (v * 255.0).round() / 255.0
            } else {
                v
            }
        })
        .collect();
    MapPair::new(SIDE, SIDE, pred, gt).unwrap()
}

fn pairs(seed: u64, n: usize) -> Vec<MapPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_pair(&mut rng)).collect()
}

fn on(v: f64, t: usize) -> bool {
    v >= t as f64 / 255.0
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn max_f_matches_pixel_oracle() {
    let cfg = MetricConfig::default();
    for seed in 0..20 {
        let ps = pairs(seed, 4);
        let mut best = 0.0f64;
        for t in 0..256 {
            let mut precisions = vec![];
            let mut recalls = vec![];
            for p in &ps {
                let (mut tp, mut fp, mut pos) = (0.0, 0.0, 0.0);
                for (&v, &g) in p.pred.iter().zip(&p.gt) {
                    pos += g as u8 as f64;
                    if on(v, t) {
                        if g {
                            tp += 1.0
                        } else {
                            fp += 1.0
                        }
                    }
                }
                precisions.push(tp / (tp + fp + cfg.eps));
                recalls.push(tp / (pos + cfg.eps));
            }
            let (pr, rc) = (mean(&precisions), mean(&recalls));
            if pr + rc > 0.0 {
                best = best.max(1.3 * pr * rc / (0.3 * pr + rc));
            }
        }
        let got = max_f_measure(&ps, &cfg).unwrap();
        assert!((got - best).abs() < 1e-6, "seed {seed}: {got} vs {best}");
    }
}

#[test]
fn pr_curve_is_monotone_in_recall() {
    let curve = pr_curve(&pairs(3, 5), &MetricConfig::default()).unwrap();
    assert_eq!(curve.len(), 256);
    assert!(curve.windows(2).all(|w| w[1].recall <= w[0].recall));
    assert!((curve[0].recall - 1.0).abs() < 1e-6);
}

#[test]
fn mae_matches_pixel_oracle_and_inverts() {
    for seed in 0..20 {
        let ps = pairs(100 + seed, 3);
        let oracle = mean(
            &ps.iter()
                .map(|p| mean(&p.pred.iter().zip(&p.gt).map(|(v, &g)| (v - g as u8 as f64).abs()).collect::<Vec<_>>()))
                .collect::<Vec<_>>(),
        );
        let m = mae(&ps).unwrap();
        assert!((m - oracle).abs() < 1e-6);
        let inverted: Vec<MapPair> = ps
            .iter()
            .map(|p| MapPair::new(SIDE, SIDE, p.pred.iter().map(|v| 1.0 - v).collect(), p.gt.clone()).unwrap())
            .collect();
        assert!((m + mae(&inverted).unwrap() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn f_equals_precision_when_precision_equals_recall() {
    for i in 1..=9 {
        let p = i as f64 / 10.0;
        assert_eq!(f_beta(p, p, 0.3), p, "p = {p}");
    }
}

fn e_oracle(p: &MapPair, t: usize, eps: f64) -> f64 {
    let n = p.pred.len() as f64;
    let b: Vec<f64> = p.pred.iter().map(|&v| on(v, t) as u8 as f64).collect();
    let g: Vec<f64> = p.gt.iter().map(|&g| g as u8 as f64).collect();
    let gsum: f64 = g.iter().sum();
    if gsum == 0.0 {
        return b.iter().map(|v| 1.0 - v).sum::<f64>() / n;
    }
    if gsum == n {
        return b.iter().sum::<f64>() / n;
    }
    let (mb, mg) = (mean(&b), mean(&g));
    b.iter()
        .zip(&g)
        .map(|(bv, gv)| {
            let (x, y) = (bv - mb, gv - mg);
            let phi = 2.0 * x * y / (x * x + y * y + eps);
            (1.0 + phi).powi(2) / 4.0
        })
        .sum::<f64>()
        / n
}

#[test]
fn max_e_matches_pixel_oracle() {
    let cfg = MetricConfig::default();
    for seed in 0..10 {
        let mut ps = pairs(200 + seed, 3);
        // include the all-background fallback
        ps.push(MapPair::new(SIDE, SIDE, ps[0].pred.clone(), vec![false; SIDE * SIDE]).unwrap());
        let best = (0..256)
            .map(|t| mean(&ps.iter().map(|p| e_oracle(p, t, cfg.eps)).collect::<Vec<_>>()))
            .fold(0.0, f64::max);
        let got = e_measure(&ps, &cfg).unwrap();
        assert!((got - best).abs() < 1e-6, "seed {seed}: {got} vs {best}");
    }
}

#[test]
fn e_is_one_for_exact_binary_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gt: Vec<bool> = (0..64).map(|i| i % 3 == 0 || rng.gen_bool(0.2)).collect();
    let pred = gt.iter().map(|&g| g as u8 as f64).collect();
    let p = MapPair::new(SIDE, SIDE, pred, gt).unwrap();
    assert!((e_measure(&[p], &MetricConfig::default()).unwrap() - 1.0).abs() < 1e-7);
}

/// Structure measure written from its definition on a 2D grid.
fn s_oracle(p: &MapPair) -> f64 {
    let eps = f64::EPSILON;
    let (w, h) = (p.width, p.height);
    let at = |x: usize, y: usize| (p.pred[y * w + x], if p.gt[y * w + x] { 1.0 } else { 0.0 });
    let fg_ratio = p.gt.iter().filter(|&&g| g).count() as f64 / (w * h) as f64;
    if fg_ratio == 0.0 {
        return 1.0 - mean(&p.pred);
    }
    if fg_ratio == 1.0 {
        return mean(&p.pred);
    }

    let score = |vals: &[f64]| {
        let m = mean(vals);
        let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() as f64 - 1.0);
        let sd = if vals.len() > 1 { var.sqrt() } else { 0.0 };
        2.0 * m / (m * m + 1.0 + sd + eps)
    };
    let mut fg = vec![];
    let mut bg = vec![];
    for y in 0..h {
        for x in 0..w {
            let (v, g) = at(x, y);
            if g == 1.0 {
                fg.push(v)
            } else {
                bg.push(1.0 - v)
            }
        }
    }
    let s_o = fg_ratio * score(&fg) + (1.0 - fg_ratio) * score(&bg);

    // 1-based centroid of the foreground
    let (mut sx, mut sy, mut cnt) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if at(x, y).1 == 1.0 {
                sx += (x + 1) as f64;
                sy += (y + 1) as f64;
                cnt += 1.0;
            }
        }
    }
    let cx = (sx / cnt).round() as usize;
    let cy = (sy / cnt).round() as usize;
    let ssim = |xs: &[usize], ys: &[usize]| -> f64 {
        let mut pv = vec![];
        let mut gv = vec![];
        for &y in ys {
            for &x in xs {
                let (v, g) = at(x, y);
                pv.push(v);
                gv.push(g);
            }
        }
        let n = pv.len() as f64;
        let (mx, my) = (mean(&pv), mean(&gv));
        let d = n - 1.0 + eps;
        let vx = pv.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / d;
        let vy = gv.iter().map(|a| (a - my).powi(2)).sum::<f64>() / d;
        let cxy = pv.iter().zip(&gv).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / d;
        let a = 4.0 * mx * my * cxy;
        let b = (mx * mx + my * my) * (vx + vy);
        if a != 0.0 {
            a / (b + eps)
        } else if b == 0.0 {
            1.0
        } else {
            0.0
        }
    };
    let left: Vec<usize> = (0..cx).collect();
    let right: Vec<usize> = (cx..w).collect();
    let top: Vec<usize> = (0..cy).collect();
    let bottom: Vec<usize> = (cy..h).collect();
    let total = (w * h) as f64;
    let mut s_r = 0.0;
    for (xs, ys) in [(&left, &top), (&right, &top), (&left, &bottom), (&right, &bottom)] {
        if xs.is_empty() || ys.is_empty() {
            continue;
        }
        s_r += (xs.len() * ys.len()) as f64 / total * ssim(xs, ys);
    }
    (0.5 * s_o + 0.5 * s_r).max(0.0)
}

#[test]
fn s_matches_definition_oracle() {
    let cfg = MetricConfig::default();
    for seed in 0..30 {
        let ps = pairs(300 + seed, 2);
        for p in &ps {
            let got = image_s_measure(p, &cfg).s;
            let want = s_oracle(p);
            assert!((got - want).abs() < 1e-6, "seed {seed}: {got} vs {want}");
        }
        let want = mean(&ps.iter().map(s_oracle).collect::<Vec<_>>());
        assert!((s_measure(&ps, &cfg).unwrap() - want).abs() < 1e-6);
    }
    // a foreground blob in one corner puts the split on the border
    let gt: Vec<bool> = (0..64).map(|i| i % 8 < 2 && i / 8 < 2).collect();
    let pred: Vec<f64> = (0..64).map(|i| (i % 7) as f64 / 7.0).collect();
    let p = MapPair::new(SIDE, SIDE, pred, gt).unwrap();
    assert!((image_s_measure(&p, &cfg).s - s_oracle(&p)).abs() < 1e-6);
}

#[test]
fn perfect_prediction_scores() {
    let cfg = MetricConfig::default();
    let gt: Vec<bool> = (0..64).map(|i| (2..6).contains(&(i % 8)) && (1..5).contains(&(i / 8))).collect();
    let pred = gt.iter().map(|&g| g as u8 as f64).collect();
    let p = vec![MapPair::new(SIDE, SIDE, pred, gt).unwrap()];
    assert_eq!(mae(&p).unwrap(), 0.0);
    assert!((max_f_measure(&p, &cfg).unwrap() - 1.0).abs() < 1e-7);
    assert!((s_measure(&p, &cfg).unwrap() - 1.0).abs() < 1e-7);
}
