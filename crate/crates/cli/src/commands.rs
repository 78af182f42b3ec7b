use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use bevmap::bevnet::{rasterize_vector_map, train_toy, Model, ModelConfig, TrainConfig};
use bevmap::dataset::{load_dataset, read_rig, write_dataset};
use bevmap::geometry::{ipm_warp_grid, BevConfig, RigCamera};
use bevmap::io::json::{read_json, write_json};
use bevmap::io::svg::render_svg;
use bevmap::io::{read_grid, read_vector_map, write_bytes, write_grid, write_vector_map};
use bevmap::map::{MapClass, VectorMap};
use bevmap::metrics::{evaluate_scenes, EvalInput};
use bevmap::numerics::Grid2D;
use bevmap::presets;
use bevmap::raster::Thickness;
use bevmap::synth::{ideal_grids, SceneSpec};
use bevmap::vectorize::{vectorize, VectorizeParams};

use crate::{Cli, Command, EvalArgs, InferArgs, IpmArgs, SynthArgs, TrainArgs, VectorizeArgs};

struct Globals {
    bev: Option<PathBuf>,
    rig: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

impl Globals {
    fn out(&self, cmd: &str) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| anyhow!("{cmd} needs --out <dir>"))
    }

    fn seed(&self, cmd: &str) -> Result<u64> {
        self.seed.ok_or_else(|| anyhow!("{cmd} needs --seed <u64>"))
    }

    fn bev(&self) -> Result<BevConfig> {
        match &self.bev {
            Some(p) => {
                let b: BevConfig = read_json(p)?;
                b.validate().with_context(|| p.display().to_string())?;
                Ok(b)
            }
            None => Ok(presets::full_bev()),
        }
    }

    fn rig(&self) -> Result<Vec<RigCamera>> {
        match &self.rig {
            Some(p) => Ok(read_rig(p)?),
            None => Ok(presets::full_rig()),
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let g = Globals {
        bev: cli.bev,
        rig: cli.rig,
        seed: cli.seed,
        out: cli.out,
    };
    match cli.command {
        Command::Synth(a) => synth(&g, a),
        Command::Train(a) => train(&g, a),
        Command::Infer(a) => infer(&g, a),
        Command::Vectorize(a) => vectorize_cmd(&g, a),
        Command::Eval(a) => eval(&g, a),
        Command::Ipm(a) => ipm(&g, a),
    }
}

fn synth(g: &Globals, a: SynthArgs) -> Result<()> {
    let seed = g.seed("synth")?;
    let out = g.out("synth")?;
    let spec: SceneSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => presets::toy_spec(),
    };
    let bev = g.bev()?;
    let rig = g.rig()?;
    let m = write_dataset(out, &spec, &bev, &rig, a.n, seed)?;
    let ds = load_dataset(out)?;
    let mut counts = [0usize; 3];
    for s in &ds.scenes {
        for e in &s.map.elements {
            counts[e.class.label() - 1] += 1;
        }
    }
    println!(
        "wrote {} scenes to {} (seed {}, {}x{} cells, {} cameras)",
        m.scenes.len(),
        out.display(),
        seed,
        bev.rows(),
        bev.cols(),
        rig.len()
    );
    for (c, n) in MapClass::ALL.iter().zip(counts) {
        println!("  {:<13}{n}", c.name());
    }
    Ok(())
}

fn train(g: &Globals, a: TrainArgs) -> Result<()> {
    let seed = g.seed("train")?;
    let out = g.out("train")?;
    let model_cfg: ModelConfig = match &a.model {
        Some(p) => read_json(p)?,
        None => presets::toy_model(),
    };
    let cfg = TrainConfig {
        steps: a.steps,
        lr: a.lr,
        seed,
    };
    let outcome = train_toy(&a.data, &model_cfg, &cfg)?;
    outcome.model.save(
        out,
        serde_json::json!({ "seed": seed, "steps": a.steps, "lr": a.lr }),
    )?;
    let mut csv = String::from("step,scene,seg,emb,dir,total\n");
    for r in &outcome.trace {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.scene, r.loss.seg, r.loss.emb, r.loss.dir, r.loss.total
        ));
    }
    write_bytes(&out.join("loss.csv"), csv.as_bytes())?;
    println!(
        "trained {} parameters for {} steps; bundle in {}",
        outcome.model.parameter_count(),
        a.steps,
        out.display()
    );
    if let (Some(first), Some(last)) = (outcome.trace.first(), bevmap::bevnet::final_loss(&outcome.trace, 20)) {
        println!("loss: step 0 {:.4}, final (mean of last 20) {:.4}", first.loss.total, last);
    }
    Ok(())
}

fn infer(g: &Globals, a: InferArgs) -> Result<()> {
    let out = g.out("infer")?;
    let model = Model::load(&a.model)?;
    let ds = load_dataset(&a.data)?;
    if ds.manifest.bev != model.bev {
        bail!("{}: dataset extent differs from the model's", a.data.display());
    }
    for s in &ds.scenes {
        let input = model.prepare(&s.images, &s.points)?;
        let p = model.predict(&input)?;
        let dir = out.join(&s.name);
        write_grid(&dir.join("seg.bvg"), &p.seg)?;
        write_grid(&dir.join("emb.bvg"), &p.emb)?;
        write_grid(&dir.join("dir.bvg"), &p.dir)?;
        write_grid(&dir.join("masks.bvg"), &p.class_masks())?;
        write_json(&dir.join("bev.json"), &model.bev)?;
    }
    println!("wrote predictions for {} scenes to {}", ds.scenes.len(), out.display());
    Ok(())
}

/// Scene subdirectories (`scene_*`, sorted) or the directory itself.
fn scene_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(path).with_context(|| format!("{}: cannot list directory", path.display()))?;
    let mut dirs = Vec::new();
    for e in entries {
        let e = e.with_context(|| path.display().to_string())?;
        let name = e.file_name().to_string_lossy().into_owned();
        if name.starts_with("scene_") && e.path().is_dir() {
            dirs.push(e.path());
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        dirs.push(path.to_path_buf());
    }
    Ok(dirs)
}

fn scene_name(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into())
}

fn write_vectorized(dir: &Path, vm: &VectorMap, masks: &Grid2D, gt: Option<&VectorMap>) -> Result<()> {
    write_vector_map(&dir.join("map.json"), vm)?;
    write_grid(&dir.join("masks.bvg"), masks)?;
    let mut layers = vec![(vm, false)];
    if let Some(gt) = gt {
        layers.push((gt, true));
    }
    write_bytes(&dir.join("map.svg"), render_svg(&layers, 20.0).as_bytes())?;
    Ok(())
}

fn vectorize_cmd(g: &Globals, a: VectorizeArgs) -> Result<()> {
    let out = g.out("vectorize")?;
    let params: VectorizeParams = match &a.params {
        Some(p) => read_json(p)?,
        None => VectorizeParams::default(),
    };
    let mut total = (0, 0, 0);
    if let Some(data) = &a.ideal {
        let ds = load_dataset(data)?;
        let delta_d = presets::toy_model().loss.delta_d;
        for s in &ds.scenes {
            let ideal = ideal_grids(&s.labels, a.embed_dim, delta_d);
            let v = vectorize(&ideal.seg, &ideal.emb, &ideal.dir, &s.map.bev, &params)?;
            write_vectorized(&out.join(&s.name), &v.map, &s.labels.class_masks(), Some(&s.map))?;
            total = (total.0 + 1, total.1 + v.map.elements.len(), total.2 + v.dropped);
        }
    } else if let Some(pred) = &a.pred {
        for dir in scene_dirs(pred)? {
            let bev: BevConfig = read_json(&dir.join("bev.json"))?;
            let seg = read_grid(&dir.join("seg.bvg"))?;
            let emb = read_grid(&dir.join("emb.bvg"))?;
            let dirg = read_grid(&dir.join("dir.bvg"))?;
            let v = vectorize(&seg, &emb, &dirg, &bev, &params).with_context(|| dir.display().to_string())?;
            let masks_path = dir.join("masks.bvg");
            let masks = if masks_path.is_file() {
                read_grid(&masks_path)?
            } else {
                rasterize_vector_map(&v.map, &bev, &Thickness::default(), 2)?.class_masks()
            };
            write_vectorized(&out.join(scene_name(&dir)), &v.map, &masks, None)?;
            total = (total.0 + 1, total.1 + v.map.elements.len(), total.2 + v.dropped);
        }
    }
    println!(
        "vectorized {} scenes into {} polylines ({} clusters dropped) in {}",
        total.0,
        total.1,
        total.2,
        out.display()
    );
    Ok(())
}

struct EvalScene {
    map: VectorMap,
    masks: Grid2D,
}

fn load_eval_side(path: &Path) -> Result<Vec<(String, EvalScene)>> {
    let from_map = |name: String, map: VectorMap, masks: Option<Grid2D>| -> Result<(String, EvalScene)> {
        let masks = match masks {
            Some(m) => m,
            None => rasterize_vector_map(&map, &map.bev, &Thickness::default(), 2)?.class_masks(),
        };
        Ok((name, EvalScene { map, masks }))
    };
    if path.is_file() {
        return Ok(vec![from_map(scene_name(path), read_vector_map(path)?, None)?]);
    }
    let mut out = Vec::new();
    for dir in scene_dirs(path)? {
        let map = read_vector_map(&dir.join("map.json"))?;
        let mp = dir.join("masks.bvg");
        let masks = if mp.is_file() { Some(read_grid(&mp)?) } else { None };
        out.push(from_map(scene_name(&dir), map, masks)?);
    }
    Ok(out)
}

fn eval(g: &Globals, a: EvalArgs) -> Result<()> {
    let pred = load_eval_side(&a.pred)?;
    let gt = load_eval_side(&a.gt)?;
    if pred.len() != gt.len() {
        bail!("{} prediction scenes but {} ground-truth scenes", pred.len(), gt.len());
    }
    if pred.len() > 1 {
        for ((pn, _), (gn, _)) in pred.iter().zip(&gt) {
            if pn != gn {
                bail!("scene {pn} has no ground truth (next ground-truth scene is {gn})");
            }
        }
    }
    let pairs: Vec<(EvalInput, EvalInput)> = pred
        .iter()
        .zip(&gt)
        .map(|((_, p), (_, t))| {
            (
                EvalInput {
                    map: &p.map,
                    masks: &p.masks,
                },
                EvalInput {
                    map: &t.map,
                    masks: &t.masks,
                },
            )
        })
        .collect();
    let report = evaluate_scenes(&pairs, &a.thresholds)?;
    print!("{}", report.to_table());
    if let Some(out) = &g.out {
        write_bytes(&out.join("report.json"), report.to_json().as_bytes())?;
    }
    Ok(())
}

fn ipm(g: &Globals, a: IpmArgs) -> Result<()> {
    let out = g.out("ipm")?;
    let rig = g.rig()?;
    let bev = g.bev()?;
    let cam = rig
        .iter()
        .find(|c| c.name == a.camera)
        .ok_or_else(|| anyhow!("no camera named {:?} in the rig", a.camera))?;
    let img = read_grid(&a.image)?;
    let warped = ipm_warp_grid(&cam.model, &img, &bev)?;
    let mask = Grid2D::from_vec(
        bev.rows(),
        bev.cols(),
        1,
        warped.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    )?;
    write_grid(&out.join("ipm.bvg"), &warped.grid)?;
    write_grid(&out.join("ipm_mask.bvg"), &mask)?;
    println!(
        "projected {} onto {}x{} cells ({} visible) in {}",
        a.image.display(),
        bev.rows(),
        bev.cols(),
        warped.valid_count(),
        out.display()
    );
    Ok(())
}
