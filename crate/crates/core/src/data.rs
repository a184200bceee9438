//! Image groups, the on-disk dataset layout, and dihedral augmentation.
//!
//! Layout: `root/<group>/<id>.ppm` with `root/<group>/<id>_gt.pgm` masks.
//! Predictions mirror it as `root/<group>/<id>.pgm`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imageio::{read_pgm, read_ppm, write_pgm, write_ppm, GrayImage, RgbImage};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageGroup {
    pub name: String,
    pub ids: Vec<String>,
    pub images: Vec<RgbImage>,
    /// Empty for unlabelled (inference) groups; values 0 or 255.
    pub masks: Vec<GrayImage>,
}

impl ImageGroup {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn has_masks(&self) -> bool {
        !self.masks.is_empty()
    }
}

fn image_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "ppm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Sorted subdirectories of `root`.
pub fn group_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::Image {
            path: root.to_path_buf(),
            reason: "not a directory".into(),
        });
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Loads every group under `root`. With `with_masks`, each image must have a
/// same-extents `<id>_gt.pgm`.
pub fn load_dataset(root: &Path, with_masks: bool) -> Result<Vec<ImageGroup>> {
    let mut groups = Vec::new();
    for dir in group_dirs(root)? {
        let ids = image_ids(&dir)?;
        if ids.len() < 2 {
            return Err(Error::Image {
                path: dir.clone(),
                reason: format!("group has {} images, need at least 2", ids.len()),
            });
        }
        let mut images = Vec::with_capacity(ids.len());
        let mut masks = Vec::new();
        for id in &ids {
            let img = read_ppm(&dir.join(format!("{id}.ppm")))?;
            if with_masks {
                let gt_path = dir.join(format!("{id}_gt.pgm"));
                let gt = read_pgm(&gt_path)?;
                if (gt.width, gt.height) != (img.width, img.height) {
                    return Err(Error::Image {
                        path: gt_path.clone(),
                        reason: format!(
                            "mask is {}x{}, image is {}x{}",
                            gt.width, gt.height, img.width, img.height
                        ),
                    });
                }
                masks.push(gt);
            }
            images.push(img);
        }
        let name = dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        groups.push(ImageGroup { name, ids, images, masks });
    }
    if groups.is_empty() {
        return Err(Error::Empty("dataset contains no groups"));
    }
    Ok(groups)
}

pub fn save_group(root: &Path, group: &ImageGroup) -> Result<()> {
    let dir = root.join(&group.name);
    fs::create_dir_all(&dir)?;
    for (i, id) in group.ids.iter().enumerate() {
        write_ppm(&dir.join(format!("{id}.ppm")), &group.images[i])?;
        if let Some(m) = group.masks.get(i) {
            write_pgm(&dir.join(format!("{id}_gt.pgm")), m)?;
        }
    }
    Ok(())
}

/// Horizontal flip followed by `rot` quarter turns counter-clockwise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Dihedral {
    pub flip: bool,
    pub rot: u8,
}

impl Dihedral {
    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8).map(|i| Dihedral { flip: i >= 4, rot: (i % 4) as u8 })
    }

    /// Source pixel of output pixel `(x, y)` in a `side x side` image.
    pub fn source_of(&self, x: usize, y: usize, side: usize) -> (usize, usize) {
        let (mut x, mut y) = (x, y);
        // undo the quarter turns: a CCW turn maps (x, y) to (y, side-1-x)
        for _ in 0..self.rot % 4 {
            (x, y) = (side - 1 - y, x);
        }
        if self.flip {
            x = side - 1 - x;
        }
        (x, y)
    }

    fn apply<const C: usize>(&self, data: &[u8], side: usize) -> Vec<u8> {
        let mut out = vec![0u8; data.len()];
        for y in 0..side {
            for x in 0..side {
                let (sx, sy) = self.source_of(x, y, side);
                let (d, s) = ((y * side + x) * C, (sy * side + sx) * C);
                out[d..d + C].copy_from_slice(&data[s..s + C]);
            }
        }
        out
    }

    /// Transforms a square image and its mask identically.
    pub fn apply_pair(&self, img: &RgbImage, mask: &GrayImage) -> (RgbImage, GrayImage) {
        assert!(img.width == img.height && (mask.width, mask.height) == (img.width, img.height));
        let side = img.width;
        (
            RgbImage { width: side, height: side, data: self.apply::<3>(&img.data, side) },
            GrayImage { width: side, height: side, data: self.apply::<1>(&mask.data, side) },
        )
    }
}
