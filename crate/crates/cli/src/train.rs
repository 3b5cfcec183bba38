use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sessd::eval::{write_kitti_labels, Calib, EvalConfig};
use sessd::pipeline::{
    evaluate, load_checkpoint, metrics_csv, predict, pretrain_with, run_variant, save_checkpoint, synth_dataset,
    train_se_ssd_with, BoxLossKind, ParamVector, PhaseReport, StepObserver, SynthConfig, ToyDetector, TrainConfig,
    TrainError,
};
use sessd::{Exec, Scene};

use crate::args::{Mode, TrainArgs};
use crate::error::{print_resolved, Classify, Failure};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub train_scenes: usize,
    pub train_seed: u64,
    pub val_scenes: usize,
    pub val_seed: u64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self { train_scenes: 50, train_seed: 1000, val_scenes: 30, val_seed: 2000 }
    }
}

/// Layout of the `--config` file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub data: DataSpec,
    pub eval: EvalConfig,
}

fn exec() -> Exec {
    if Exec::parallel_available() {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::Config(_) => Failure::usage(e),
        TrainError::NoScenes => Failure::data(e),
        _ => Failure::internal(e),
    }
}

fn parse_sweep(s: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::usage(format!("--gamma-sweep expects START:STOP:STEP, got `{s}`"));
    let v: Vec<f64> = s.split(':').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let [start, stop, step] = v[..] else { return Err(bad()) };
    if !(step > 0.0) || stop < start || start < 0.0 {
        return Err(bad());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

fn read_scene_dir(dir: &Path) -> Result<Vec<Scene>, Failure> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "scene"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::data(format!("{}: no .scene files", dir.display())));
    }
    paths.iter().map(|p| Scene::read(p).data()).collect()
}

/// Saves a checkpoint per epoch; remembers the first I/O failure.
struct EpochSaver<'a> {
    dir: &'a Path,
    prefix: &'a str,
    error: Option<Failure>,
}

impl StepObserver for EpochSaver<'_> {
    fn on_epoch(&mut self, epoch: usize, student: &ParamVector, teacher: Option<&ParamVector>) {
        if self.error.is_some() {
            return;
        }
        let mut save = |name: String, p: &ParamVector| {
            if let Err(e) = save_checkpoint(p, &self.dir.join(name)) {
                self.error = Some(Failure::data(e));
            }
        };
        save(format!("{}student_epoch_{epoch:03}.ckpt", self.prefix), student);
        if let Some(t) = teacher {
            save(format!("{}teacher_epoch_{epoch:03}.ckpt", self.prefix), t);
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn write_phase(out: &Path, name: &str, report: &PhaseReport) -> Result<(), Failure> {
    write(&out.join(name), &metrics_csv(&report.trace))
}

fn export(dir: &Path, model: &ToyDetector, val: &[Scene], cfg: &TrainConfig) -> Result<(), Failure> {
    let calib = Calib::default();
    for sub in ["gt", "pred"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
    }
    for (i, s) in val.iter().enumerate() {
        let name = format!("{i:06}.txt");
        write_kitti_labels(&dir.join("gt").join(&name), &s.labels, None, &calib).data()?;
        let dets = predict(model, s, cfg.score_thresh, cfg.nms_iou);
        let labels: Vec<_> = dets.iter().map(|d| sessd::ObjectLabel { bbox_height: 100.0, ..sessd::ObjectLabel::car(d.bbox) }).collect();
        let scores: Vec<f64> = dets.iter().map(|d| d.score()).collect();
        write_kitti_labels(&dir.join("pred").join(&name), &labels, Some(&scores), &calib).data()?;
    }
    Ok(())
}

pub fn run(a: TrainArgs) -> Result<(), Failure> {
    let mut file = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::data(format!("{}: {e}", p.display())))?;
            toml::from_str::<ConfigFile>(&text).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?
        }
        None => ConfigFile::default(),
    };
    let cfg = &mut file.train;
    if let Some(e) = a.epochs {
        match a.mode {
            Mode::Pretrain => cfg.pretrain_epochs = e,
            Mode::Sessd => cfg.epochs = e,
        }
    }
    if let Some(e) = a.pretrain_epochs {
        cfg.pretrain_epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.ema_decay {
        cfg.ema_decay = d;
    }
    if let Some(lr) = a.lr {
        cfg.lr_max = lr;
        cfg.lr_min = cfg.lr_min.min(lr);
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    cfg.use_consistency &= !a.no_consistency;
    cfg.use_sada &= !a.no_sada;
    cfg.use_global_aug &= !a.no_global_aug;
    if a.no_odiou {
        cfg.box_loss = BoxLossKind::SmoothL1;
    }
    a.aug.apply(&mut cfg.aug);
    a.matching.apply(&mut cfg.matching);
    a.loss.apply(&mut cfg.weights, &mut cfg.mu_override);
    a.eval.apply(&mut file.eval);
    let sweep = a.gamma_sweep.as_deref().map(parse_sweep).transpose()?;
    file.train.validate().map_err(train_failure)?;
    let cfg = file.train;

    print_resolved(&serde_json::json!({
        "command": "train",
        "mode": a.mode,
        "out": a.out,
        "init": a.init,
        "data_dir": a.data,
        "val_dir": a.val,
        "gamma_sweep": sweep,
        "export": a.export,
        "config": file,
    }));

    let train = match &a.data {
        Some(d) => read_scene_dir(d)?,
        None => synth_dataset(&file.synth, file.data.train_scenes, file.data.train_seed),
    };
    let val = match &a.val {
        Some(d) => read_scene_dir(d)?,
        None => synth_dataset(&file.synth, file.data.val_scenes, file.data.val_seed),
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::data(format!("{}: {e}", a.out.display())))?;
    let ex = exec();

    if let Some(gammas) = sweep {
        let mut csv = String::from("gamma,pretrained_ap,student_ap,teacher_ap\n");
        println!("{:>8} {:>10} {:>10} {:>10}", "gamma", "pretrained", "student", "teacher");
        for g in gammas {
            let mut c = cfg;
            c.weights.gamma = g;
            let r = run_variant(&train, &val, &c, &file.eval, ex).map_err(train_failure)?;
            println!("{g:>8.4} {:>10.6} {:>10.6} {:>10.6}", r.pretrained_ap, r.student_ap, r.teacher_ap);
            csv.push_str(&format!("{g},{},{},{}\n", r.pretrained_ap, r.student_ap, r.teacher_ap));
        }
        return write(&a.out.join("gamma_sweep.csv"), &csv);
    }

    let mut model = match &a.init {
        Some(p) => {
            let params = load_checkpoint(p).data()?;
            let m = ToyDetector { spec: cfg.detector, params };
            if m.params.layout != cfg.detector.layout() {
                return Err(Failure::data(format!("{}: checkpoint layout does not match the detector config", p.display())));
            }
            m
        }
        None => ToyDetector::new(cfg.detector, cfg.seed),
    };
    save_checkpoint(&model.params, &a.out.join("init.ckpt")).data()?;

    let pretrain_needed = a.mode == Mode::Pretrain || a.init.is_none();
    if pretrain_needed {
        let prefix = if a.mode == Mode::Pretrain { "" } else { "pretrain_" };
        let mut saver = EpochSaver { dir: &a.out, prefix, error: None };
        let rep = pretrain_with(&mut model, &train, cfg.pretrain_epochs, &cfg, &mut saver, ex).map_err(train_failure)?;
        if let Some(e) = saver.error {
            return Err(e);
        }
        write_phase(&a.out, &format!("{prefix}metrics.csv"), &rep)?;
        save_checkpoint(&model.params, &a.out.join(format!("{prefix}student.ckpt"))).data()?;
    }

    let report_model = if a.mode == Mode::Sessd {
        let mut saver = EpochSaver { dir: &a.out, prefix: "", error: None };
        let res = train_se_ssd_with(&model, &train, &cfg, &mut saver, ex).map_err(train_failure)?;
        if let Some(e) = saver.error {
            return Err(e);
        }
        write_phase(&a.out, "metrics.csv", &res.report)?;
        save_checkpoint(&res.student.params, &a.out.join("student.ckpt")).data()?;
        save_checkpoint(&res.teacher.params, &a.out.join("teacher.ckpt")).data()?;
        let t_ap = evaluate(&res.teacher, &val, &cfg, &file.eval, ex);
        println!("teacher AP {t_ap:.6}");
        res.student
    } else {
        model
    };
    let ap = evaluate(&report_model, &val, &cfg, &file.eval, ex);
    println!(
        "student AP {ap:.6} ({} {} {} over {} scenes)",
        file.eval.mode.name(),
        file.eval.difficulty.name(),
        file.eval.recall_points.name(),
        val.len()
    );
    if let Some(dir) = &a.export {
        export(dir, &report_model, &val, &cfg)?;
    }
    Ok(())
}
