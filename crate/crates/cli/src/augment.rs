use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sessd::augment::{apply_record, global_augment, shape_aware_augment, AugConfig, AugRecord};
use sessd::Scene;

use crate::args::AugmentArgs;
use crate::error::{print_resolved, Classify, Failure};

pub fn run(a: AugmentArgs) -> Result<(), Failure> {
    let mut cfg = AugConfig::default();
    a.aug.apply(&mut cfg);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.validate().usage()?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log");
        p.into()
    });
    print_resolved(&serde_json::json!({
        "command": "augment",
        "input": a.input,
        "out": a.out,
        "log": if a.replay.is_some() { serde_json::Value::Null } else { serde_json::json!(log_path) },
        "replay": a.replay,
        "global": a.global,
        "aug": cfg,
    }));

    let raw = std::fs::read_to_string(&a.input).map_err(|e| Failure::data(format!("{}: {e}", a.input.display())))?;
    let scene = Scene::from_text(&raw, &a.input.display().to_string()).data()?;

    let (out, record) = match &a.replay {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            let rec: AugRecord = text.parse().data()?;
            (apply_record(&scene, &rec, cfg.sparsify_keep_ratio).data()?, rec)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let (base, t) = if a.global {
                let (moved, t) = global_augment(&scene, &cfg, &mut rng).data()?;
                (moved, Some(t))
            } else {
                (scene.clone(), None)
            };
            let (out, mut rec) = shape_aware_augment(&base, &cfg, &mut rng).data()?;
            rec.global = t;
            (out, rec)
        }
    };

    // nothing applied: keep the input bytes exactly
    let text = if record.ops.is_empty() && record.global.is_none() { raw } else { out.to_text() };
    std::fs::write(&a.out, text).map_err(|e| Failure::data(format!("{}: {e}", a.out.display())))?;
    if a.replay.is_none() {
        std::fs::write(&log_path, record.to_string()).map_err(|e| Failure::data(format!("{}: {e}", log_path.display())))?;
    }
    eprintln!("{} ops, {} -> {} points", record.ops.len(), scene.points.len(), out.points.len());
    Ok(())
}
