//! Synthetic co-salient groups: every image of a group contains one object of
//! the group's category on a cluttered background, plus distractor objects of
//! other categories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ImageGroup;
use crate::imageio::{GrayImage, RgbImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Disk,
    Square,
    Triangle,
}

pub const SHAPES: [Shape; 3] = [Shape::Disk, Shape::Square, Shape::Triangle];

pub const PALETTE: [(&str, [f64; 3]); 6] = [
    ("red", [0.9, 0.1, 0.1]),
    ("green", [0.1, 0.8, 0.2]),
    ("blue", [0.15, 0.25, 0.95]),
    ("yellow", [0.95, 0.85, 0.1]),
    ("magenta", [0.85, 0.1, 0.8]),
    ("cyan", [0.1, 0.85, 0.9]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub shape: Shape,
    /// Index into [`PALETTE`].
    pub color: usize,
}

impl Category {
    pub fn name(&self) -> String {
        let shape = match self.shape {
            Shape::Disk => "disk",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        };
        format!("{}_{shape}", PALETTE[self.color].0)
    }
}

/// An object placed in an image; `size` is the diameter, side, or base and
/// height of an upward triangle, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placed {
    pub category: Category,
    pub cx: f64,
    pub cy: f64,
    pub size: f64,
}

impl Placed {
    /// Whether the point `(x, y)` (pixel units) lies inside the object.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let h = self.size / 2.0;
        match self.category.shape {
            Shape::Disk => (x - self.cx).powi(2) + (y - self.cy).powi(2) <= h * h,
            Shape::Square => (x - self.cx).abs() <= h && (y - self.cy).abs() <= h,
            Shape::Triangle => {
                let depth = y - (self.cy - h);
                depth >= 0.0 && depth <= self.size && (x - self.cx).abs() <= depth / 2.0
            }
        }
    }

    /// Whether pixel `(px, py)` is covered, judged at its centre.
    pub fn covers(&self, px: usize, py: usize) -> bool {
        self.contains(px as f64 + 0.5, py as f64 + 0.5)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub common: Placed,
    pub distractors: Vec<Placed>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMeta {
    pub name: String,
    pub category: Category,
    pub images: Vec<ImageMeta>,
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub groups: usize,
    pub group_size: usize,
    pub side: usize,
    pub seed: u64,
}

/// Generates `cfg.groups` labelled groups; group `g` only depends on
/// `(seed, g)`.
pub fn synth_dataset(cfg: &SynthConfig) -> Vec<(ImageGroup, GroupMeta)> {
    (0..cfg.groups).map(|g| synth_group(cfg, g)).collect()
}

fn synth_group(cfg: &SynthConfig, g: usize) -> (ImageGroup, GroupMeta) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(g as u64);
    let category = Category {
        shape: SHAPES[rng.gen_range(0..SHAPES.len())],
        color: rng.gen_range(0..PALETTE.len()),
    };
    let name = format!("group_{g:03}");
    let mut group = ImageGroup { name: name.clone(), ids: vec![], images: vec![], masks: vec![] };
    let mut metas = Vec::with_capacity(cfg.group_size);
    for i in 0..cfg.group_size {
        let (img, mask, meta) = synth_image(&mut rng, category, cfg.side);
        group.ids.push(format!("{i:02}"));
        group.images.push(img);
        group.masks.push(mask);
        metas.push(meta);
    }
    (group, GroupMeta { name, category, images: metas })
}

fn place(rng: &mut ChaCha8Rng, category: Category, side: usize) -> Placed {
    let s = side as f64;
    let size = rng.gen_range(0.15 * s..=0.4 * s);
    let h = size / 2.0;
    Placed {
        category,
        cx: rng.gen_range(h..=s - h),
        cy: rng.gen_range(h..=s - h),
        size,
    }
}

fn synth_image(rng: &mut ChaCha8Rng, category: Category, side: usize) -> (RgbImage, GrayImage, ImageMeta) {
    let n = side * side;
    let s = side as f64;
    let mut rgb = vec![[0.0f64; 3]; n];

    // low-frequency background: a two-colour linear gradient plus a sinusoid
    let c0: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.25..0.75));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.25..0.75));
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    let freq = rng.gen_range(0.5..2.0) * std::f64::consts::TAU / s;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let amp = rng.gen_range(0.02..0.08);
    for y in 0..side {
        for x in 0..side {
            let (u, v) = (x as f64 + 0.5 - s / 2.0, y as f64 + 0.5 - s / 2.0);
            let t = ((u * dx + v * dy) / s + 0.5).clamp(0.0, 1.0);
            let wave = amp * (freq * (u * dy - v * dx) + phase).sin();
            for c in 0..3 {
                rgb[y * side + x][c] = c0[c] + (c1[c] - c0[c]) * t + wave;
            }
        }
    }

    let n_distractors = rng.gen_range(1..=3);
    let distractors: Vec<Placed> = (0..n_distractors)
        .map(|_| {
            let cat = loop {
                let c = Category {
                    shape: SHAPES[rng.gen_range(0..SHAPES.len())],
                    color: rng.gen_range(0..PALETTE.len()),
                };
                if c.color != category.color {
                    break c;
                }
            };
            place(rng, cat, side)
        })
        .collect();
    let common = loop {
        let p = place(rng, category, side);
        if (0..n).any(|i| p.covers(i % side, i / side)) {
            break p;
        }
    };

    let mut mask = vec![0u8; n];
    for (k, obj) in distractors.iter().chain(std::iter::once(&common)).enumerate() {
        let color = PALETTE[obj.category.color].1;
        let is_common = k == n_distractors;
        for i in 0..n {
            if obj.covers(i % side, i / side) {
                rgb[i] = color;
                if is_common {
                    mask[i] = 255;
                }
            }
        }
    }

    let data = rgb
        .iter()
        .flat_map(|px| *px)
        .map(|v| {
            let noisy = v + rng.gen_range(-0.04..0.04);
            (noisy.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    (
        RgbImage { width: side, height: side, data },
        GrayImage { width: side, height: side, data: mask },
        ImageMeta { common, distractors },
    )
}
