use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sessd::eval::{average_precision_with, read_kitti_labels, ApTable, Calib, EvalConfig, KittiError, ScoredBox};
use sessd::{Exec, ObjectLabel};

use crate::args::EvalArgs;
use crate::error::{print_resolved, Classify, Failure};

fn txt_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
    let mut out = BTreeMap::new();
    for e in entries {
        let p = e.map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?.path();
        if p.extension().is_some_and(|x| x == "txt") {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), p);
            }
        }
    }
    Ok(out)
}

fn calib_for(dir: Option<&Path>, id: &str) -> Result<Calib, KittiError> {
    match dir {
        Some(d) => Calib::read(&d.join(format!("{id}.txt"))),
        None => Ok(Calib::default()),
    }
}

pub fn run(a: EvalArgs) -> Result<(), Failure> {
    let mut cfg = EvalConfig::default();
    a.eval.apply(&mut cfg);
    if !(0.0..=1.0).contains(&cfg.iou_threshold) {
        return Err(Failure::usage(format!("iou_threshold must be in [0,1], got {}", cfg.iou_threshold)));
    }
    print_resolved(&serde_json::json!({
        "command": "eval",
        "pred_dir": a.pred_dir,
        "gt_dir": a.gt_dir,
        "calib_dir": a.calib_dir,
        "eval": cfg,
    }));

    let gt_files = txt_files(&a.gt_dir)?;
    let pred_files = txt_files(&a.pred_dir)?;
    let unmatched: Vec<&str> = pred_files.keys().filter(|k| !gt_files.contains_key(*k)).map(String::as_str).collect();
    if !unmatched.is_empty() {
        return Err(Failure::data(format!("predictions without ground truth for scene ids: {}", unmatched.join(", "))));
    }

    let mut gts: Vec<Vec<ObjectLabel>> = Vec::new();
    let mut preds: Vec<Vec<ScoredBox>> = Vec::new();
    for (id, gt_path) in &gt_files {
        let calib = calib_for(a.calib_dir.as_deref(), id).data()?;
        gts.push(read_kitti_labels(gt_path, &calib).data()?.into_iter().map(|o| o.label).collect());
        let mut p = Vec::new();
        if let Some(path) = pred_files.get(id) {
            for o in read_kitti_labels(path, &calib).data()? {
                let score = o.score.ok_or_else(|| Failure::data(format!("{}: prediction without a score field", path.display())))?;
                if o.label.class == cfg.class {
                    p.push(ScoredBox { bbox: o.label.bbox, score });
                }
            }
        }
        preds.push(p);
    }

    let exec = if Exec::parallel_available() { Exec::Parallel } else { Exec::Sequential };
    let table = ApTable::compute(&preds, &gts, &cfg, exec);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&table).internal()?);
    } else {
        println!("{} scenes, class {}, IoU >= {}", gts.len(), cfg.class, cfg.iou_threshold);
        print!("{}", table.render());
    }
    if let Some(path) = &a.pr_csv {
        let curve = average_precision_with(&preds, &gts, &cfg, exec);
        std::fs::write(path, curve.to_csv()).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
