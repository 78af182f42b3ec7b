//! VectorMap JSON:
//! `{"bev":{x_min,x_max,y_min,y_max,pitch},"elements":[{class,confidence,points:[[x,y],...]}]}`
//! with every number written to 6 decimal places.

use std::fmt::Write as _;
use std::path::Path;

use serde::{de, Deserialize, Deserializer};

use crate::error::Result;
use crate::geometry::BevConfig;
use crate::map::{MapClass, Polyline, VectorMap};

fn num(out: &mut String, v: f64) {
    let s = format!("{v:.6}");
    // Avoid emitting "-0.000000" so equal maps always encode to equal bytes.
    if s.trim_start_matches('-').bytes().all(|b| b == b'0' || b == b'.') {
        out.push_str("0.000000");
    } else {
        out.push_str(&s);
    }
}

pub fn encode_vector_map(vm: &VectorMap) -> String {
    let mut out = String::new();
    let b = &vm.bev;
    out.push_str("{\"bev\":{");
    for (i, (k, v)) in [
        ("x_min", b.x_min),
        ("x_max", b.x_max),
        ("y_min", b.y_min),
        ("y_max", b.y_max),
        ("pitch", b.pitch),
    ]
    .into_iter()
    .enumerate()
    {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "\"{k}\":");
        num(&mut out, v);
    }
    out.push_str("},\"elements\":[");
    for (i, e) in vm.elements.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{{\"class\":\"{}\",\"confidence\":", e.class.name());
        num(&mut out, e.confidence);
        out.push_str(",\"points\":[");
        for (j, p) in e.points.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push('[');
            num(&mut out, p[0]);
            out.push(',');
            num(&mut out, p[1]);
            out.push(']');
        }
        out.push_str("]}");
    }
    out.push_str("]}");
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    #[serde(deserialize_with = "bev_field")]
    bev: BevConfig,
    elements: Vec<Element>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Element {
    #[serde(deserialize_with = "class_field")]
    class: MapClass,
    confidence: f64,
    #[serde(deserialize_with = "points_field")]
    points: Vec<[f64; 2]>,
}

fn bev_field<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BevConfig, D::Error> {
    let b = BevConfig::deserialize(d)?;
    b.validate().map_err(de::Error::custom)?;
    Ok(b)
}

fn class_field<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<MapClass, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(de::Error::custom)
}

fn points_field<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<[f64; 2]>, D::Error> {
    let pts = Vec::<[f64; 2]>::deserialize(d)?;
    if pts.len() < 2 {
        return Err(de::Error::custom(format!(
            "polyline needs at least 2 points, has {}",
            pts.len()
        )));
    }
    Ok(pts)
}

pub fn decode_vector_map(text: &str) -> Result<VectorMap> {
    let doc: Doc = super::json::from_str(text)?;
    Ok(VectorMap {
        bev: doc.bev,
        elements: doc
            .elements
            .into_iter()
            .map(|e| Polyline {
                class: e.class,
                points: e.points,
                confidence: e.confidence,
            })
            .collect(),
    })
}

pub fn read_vector_map(path: &Path) -> Result<VectorMap> {
    decode_vector_map(&super::read_text(path)?).map_err(|e| e.with_path(path))
}

pub fn write_vector_map(path: &Path, vm: &VectorMap) -> Result<()> {
    super::write_bytes(path, encode_vector_map(vm).as_bytes())
}
