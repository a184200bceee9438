use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use glnet_core::data::{group_dirs, load_dataset, save_group};
use glnet_core::gradcheck::GradCheckConfig;
use glnet_core::gradsuite::run_all;
use glnet_core::imageio::{read_pgm, resize_bilinear, resize_rgb, write_pgm, GrayImage};
use glnet_core::metrics::{evaluate, report_json, MapPair, MetricConfig};
use glnet_core::synth::{synth_dataset, SynthConfig};
use glnet_core::train::train as run_training;
use glnet_core::{Checkpoint, GlNet};

use crate::config::RunConfig;
use crate::CliError;

const GRAD_TOLERANCE: f64 = 1e-3;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::usage(format!("{}: {e}", path.display()))
}

fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{what} {} is not a directory", path.display())))
    }
}

/// The parent of an output file must already exist.
fn require_parent(path: &Path, what: &str) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(CliError::usage(format!(
            "{what} {}: directory {} does not exist",
            path.display(),
            p.display()
        ))),
        _ => Ok(()),
    }
}

pub fn synth(out: &Path, groups: usize, group_size: usize, side: usize, seed: u64) -> Result<(), CliError> {
    if groups == 0 || group_size < 2 || side == 0 {
        return Err(CliError::usage("need --groups >= 1, --group-size >= 2 and --side >= 1"));
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let data = synth_dataset(&SynthConfig { groups, group_size, side, seed });
    println!("groups: {groups}");
    for (group, meta) in &data {
        save_group(out, group)?;
        println!("{}\t{}", group.name, meta.category.name());
    }
    Ok(())
}

pub struct TrainArgs {
    pub data: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub iterations: Option<usize>,
    pub inject_nan: Option<usize>,
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(n) = args.iterations {
        cfg.train.iterations = n;
        cfg.train.validate()?;
    }
    cfg.train.poison_step = args.inject_nan;
    let data_dir = args
        .data
        .or(cfg.data.clone())
        .ok_or_else(|| CliError::usage("no dataset: pass --data or set `data` in the config"))?;
    let ckpt_path = args
        .out
        .or(cfg.checkpoint.clone())
        .or_else(|| cfg.output.as_ref().map(|d| d.join("model.glnc")))
        .ok_or_else(|| CliError::usage("no checkpoint path: pass --out or set `checkpoint` in the config"))?;
    let log_path = args.log.unwrap_or_else(|| ckpt_path.with_extension("loss.csv"));
    require_dir(&data_dir, "dataset")?;
    require_parent(&ckpt_path, "checkpoint")?;
    require_parent(&log_path, "loss log")?;

    let groups = load_dataset(&data_dir, true)?;
    let model = GlNet::<f32>::new(&cfg.model, cfg.seed)?;
    let file = File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut log = BufWriter::new(file);
    writeln!(log, "step,loss,lr").map_err(|e| io_err(&log_path, e))?;
    let mut write_err = None;
    let every = cfg.log_every;
    let result = run_training(&model, &groups, &cfg.train, |r| {
        if let Err(e) = writeln!(log, "{},{:.6},{}", r.step, r.loss, r.lr) {
            write_err.get_or_insert(e);
        }
        if every > 0 && (r.step + 1) % every == 0 {
            eprintln!("step {} loss {:.6} lr {:.3e}", r.step, r.loss, r.lr);
        }
    });
    log.flush().map_err(|e| io_err(&log_path, e))?;
    if let Some(e) = write_err {
        return Err(io_err(&log_path, e));
    }
    let records = result?;
    Checkpoint::from_model(&model, records.len() as u64).save(&ckpt_path)?;
    let last = records.last().map_or(f64::NAN, |r| r.loss);
    println!("checkpoint {} final loss {last:.6}", ckpt_path.display());
    Ok(())
}

pub fn infer(ckpt: &Path, data: &Path, out: &Path) -> Result<(), CliError> {
    if !ckpt.is_file() {
        return Err(CliError::usage(format!("checkpoint {} not found", ckpt.display())));
    }
    require_dir(data, "dataset")?;
    let model = Checkpoint::load(ckpt)?.to_model::<f32>()?;
    let side = model.config.side;
    let groups = load_dataset(data, false)?;
    let mut written = 0;
    for group in &groups {
        let inputs: Vec<_> = group
            .images
            .iter()
            .map(|im| resize_rgb(im, side, side).to_tensor::<f32>())
            .collect();
        let maps = model.predict(&inputs)?;
        let dir = out.join(&group.name);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        for ((id, img), map) in group.ids.iter().zip(&group.images).zip(&maps) {
            let values: Vec<f64> = map.to_vec().iter().map(|&v| v as f64).collect();
            let full = resize_bilinear(&values, side, side, img.width, img.height);
            write_pgm(&dir.join(format!("{id}.pgm")), &GrayImage::from_unit(&full, img.width, img.height))?;
            written += 1;
        }
    }
    println!("wrote {written} maps to {}", out.display());
    Ok(())
}

/// `(group, id)` of every file under `root/<group>/` whose name ends in `suffix`.
fn tree_entries(root: &Path, suffix: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for dir in group_dirs(root)? {
        let group = dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
            let path = entry.map_err(|e| io_err(&dir, e))?.path();
            let Some(name) = path.file_name().and_then(|s| s.to_str()) else { continue };
            if let Some(id) = name.strip_suffix(suffix) {
                if suffix != ".pgm" || !id.ends_with("_gt") {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        out.extend(ids.into_iter().map(|id| (group.clone(), id)));
    }
    Ok(out)
}

pub fn eval(pred: &Path, gt: &Path, out: &Path, pr: Option<&Path>, per_group: bool) -> Result<(), CliError> {
    require_dir(pred, "prediction tree")?;
    require_dir(gt, "ground-truth tree")?;
    require_parent(out, "report")?;
    if let Some(p) = pr {
        require_parent(p, "PR curve")?;
    }
    let truths = tree_entries(gt, "_gt.pgm")?;
    let preds = tree_entries(pred, ".pgm")?;
    for (g, id) in &truths {
        if !preds.contains(&(g.clone(), id.clone())) {
            return Err(CliError::usage(format!(
                "no prediction {} for ground truth {}",
                pred.join(g).join(format!("{id}.pgm")).display(),
                gt.join(g).join(format!("{id}_gt.pgm")).display()
            )));
        }
    }
    if let Some((g, id)) = preds.iter().find(|p| !truths.contains(p)) {
        return Err(CliError::usage(format!(
            "prediction {} has no ground truth",
            pred.join(g).join(format!("{id}.pgm")).display()
        )));
    }
    if truths.is_empty() {
        return Err(CliError::usage(format!("no ground-truth masks under {}", gt.display())));
    }

    let cfg = MetricConfig::default();
    let mut pairs: Vec<(String, MapPair)> = Vec::with_capacity(truths.len());
    for (g, id) in &truths {
        let p = read_pgm(&pred.join(g).join(format!("{id}.pgm")))?;
        let t = read_pgm(&gt.join(g).join(format!("{id}_gt.pgm")))?;
        pairs.push((g.clone(), MapPair::from_images(&p, &t, &cfg)?));
    }
    let all: Vec<MapPair> = pairs.iter().map(|(_, p)| p.clone()).collect();
    let overall = evaluate(&all, &cfg)?;
    let mut groups = Vec::new();
    if per_group {
        let mut names: Vec<&String> = pairs.iter().map(|(g, _)| g).collect();
        names.dedup();
        for name in names {
            let members: Vec<MapPair> = pairs.iter().filter(|(g, _)| g == name).map(|(_, p)| p.clone()).collect();
            // groups whose masks are all empty have no PR curve
            if let Ok(r) = evaluate(&members, &cfg) {
                groups.push((name.clone(), r));
            }
        }
    }
    fs::write(out, report_json(&overall, &groups)).map_err(|e| io_err(out, e))?;
    if let Some(p) = pr {
        fs::write(p, overall.pr_csv()).map_err(|e| io_err(p, e))?;
    }
    println!(
        "images {} max_f {:.6} s {:.6} max_e {:.6} mae {:.6}",
        overall.images, overall.max_f, overall.s, overall.max_e, overall.mae
    );
    Ok(())
}

pub fn gradcheck(seed: u64, perturb: bool) -> Result<(), CliError> {
    let cfg = GradCheckConfig { seed, analytic_scale: if perturb { 1.01 } else { 1.0 }, ..Default::default() };
    let reports = run_all(&cfg)?;
    println!("{:<20} {:>12} {:>8}  status", "module", "max_rel_err", "checked");
    let mut failed = Vec::new();
    for (name, r) in &reports {
        let ok = r.passes(GRAD_TOLERANCE);
        println!("{name:<20} {:>12.3e} {:>8}  {}", r.max_rel_err, r.checked, if ok { "pass" } else { "FAIL" });
        if !ok {
            failed.push(*name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::verification(format!("gradient check failed for {}", failed.join(", "))))
    }
}
