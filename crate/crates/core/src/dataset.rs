//! On-disk synthetic datasets.
//!
//! ```text
//! <root>/manifest.json
//! <root>/rig.json
//! <root>/scene_00000/{map.json, labels.bvg, cam_<name>.bvg, points.bvp, meta.json}
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bevnet::LabelPack;
use crate::error::{Error, Result};
use crate::geometry::{parse_rig, rig_to_json, BevConfig, RigCamera};
use crate::io::json::{read_json, write_json};
use crate::io::{read_grid, read_points, read_text, read_vector_map, write_bytes, write_grid, write_points, write_vector_map};
use crate::map::VectorMap;
use crate::numerics::Grid2D;
use crate::pillars::PointCloud;
use crate::synth::{gen_scene, scene_seed, Scene, SceneMeta, SceneSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub bev: BevConfig,
    pub spec: SceneSpec,
    pub cameras: Vec<String>,
    pub scenes: Vec<String>,
}

pub fn scene_dir_name(index: usize) -> String {
    format!("scene_{index:05}")
}

pub fn write_scene(dir: &Path, scene: &Scene, rig: &[RigCamera]) -> Result<()> {
    write_vector_map(&dir.join("map.json"), &scene.map)?;
    write_grid(&dir.join("labels.bvg"), &scene.labels.to_grid())?;
    for (cam, img) in rig.iter().zip(&scene.images) {
        write_grid(&dir.join(format!("cam_{}.bvg", cam.name)), img)?;
    }
    write_points(&dir.join("points.bvp"), &scene.points)?;
    write_json(&dir.join("meta.json"), &scene.meta)
}

/// Generates `n` scenes; scene `i` uses `scene_seed(seed, i)`.
pub fn write_dataset(root: &Path, spec: &SceneSpec, bev: &BevConfig, rig: &[RigCamera], n: usize, seed: u64) -> Result<DatasetManifest> {
    spec.validate()?;
    bev.validate()?;
    let mut scenes = Vec::with_capacity(n);
    for i in 0..n {
        let s = SceneSpec {
            seed: scene_seed(seed, i),
            ..spec.clone()
        };
        let scene = gen_scene(&s, bev, rig)?;
        let name = scene_dir_name(i);
        write_scene(&root.join(&name), &scene, rig)?;
        scenes.push(name);
    }
    let manifest = DatasetManifest {
        seed,
        bev: *bev,
        spec: spec.clone(),
        cameras: rig.iter().map(|c| c.name.clone()).collect(),
        scenes,
    };
    write_bytes(&root.join("rig.json"), rig_to_json(rig).as_bytes())?;
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneData {
    pub name: String,
    pub map: VectorMap,
    pub labels: LabelPack,
    pub images: Vec<Grid2D>,
    pub points: PointCloud,
    pub meta: SceneMeta,
}

pub fn read_scene(dir: &Path, rig: &[RigCamera], n_dir: usize) -> Result<SceneData> {
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let map = read_vector_map(&dir.join("map.json"))?;
    let lpath = dir.join("labels.bvg");
    let labels = LabelPack::from_grid(&read_grid(&lpath)?, n_dir).map_err(|e| annotate(e, &lpath))?;
    if (labels.rows(), labels.cols()) != (map.bev.rows(), map.bev.cols()) {
        return Err(Error::Shape(format!("{}: labels do not match the map extent", lpath.display())));
    }
    let mut images = Vec::with_capacity(rig.len());
    for cam in rig {
        let p = dir.join(format!("cam_{}.bvg", cam.name));
        let g = read_grid(&p)?;
        if (g.height(), g.width()) != (cam.height, cam.width) {
            return Err(Error::Shape(format!(
                "{}: image is {}x{}, rig says {}x{}",
                p.display(),
                g.height(),
                g.width(),
                cam.height,
                cam.width
            )));
        }
        images.push(g);
    }
    let points = read_points(&dir.join("points.bvp"))?;
    let meta = read_json(&dir.join("meta.json"))?;
    Ok(SceneData {
        name,
        map,
        labels,
        images,
        points,
        meta,
    })
}

fn annotate(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { .. } => e.with_path(path),
        Error::Shape(m) => Error::Shape(format!("{}: {m}", path.display())),
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{}: {m}", path.display())),
        other => other,
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub rig: Vec<RigCamera>,
    pub scenes: Vec<SceneData>,
}

pub fn read_rig(path: &Path) -> Result<Vec<RigCamera>> {
    parse_rig(&read_text(path)?).map_err(|e| annotate(e, path))
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = read_json(&root.join("manifest.json"))?;
    let rig = read_rig(&root.join("rig.json"))?;
    let names: Vec<&String> = rig.iter().map(|c| &c.name).collect();
    if names.iter().zip(&manifest.cameras).any(|(a, b)| *a != b) || names.len() != manifest.cameras.len() {
        return Err(Error::InvalidArgument(format!(
            "{}: camera list differs from rig.json",
            root.join("manifest.json").display()
        )));
    }
    let scenes = manifest
        .scenes
        .iter()
        .map(|s| read_scene(&root.join(s), &rig, manifest.spec.n_dir))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        root: root.to_path_buf(),
        manifest,
        rig,
        scenes,
    })
}
