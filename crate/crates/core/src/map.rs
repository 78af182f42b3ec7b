//! Vectorized map elements in ego-frame meters.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::BevConfig;

/// Static map element classes, in label-index order (0 is background).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MapClass {
    Divider,
    PedCrossing,
    Boundary,
}

impl MapClass {
    pub const ALL: [MapClass; 3] = [MapClass::Divider, MapClass::PedCrossing, MapClass::Boundary];

    pub fn name(self) -> &'static str {
        match self {
            MapClass::Divider => "divider",
            MapClass::PedCrossing => "ped_crossing",
            MapClass::Boundary => "boundary",
        }
    }

    /// Semantic label index; background is 0.
    pub fn label(self) -> usize {
        self as usize + 1
    }

    pub fn from_label(label: usize) -> Option<MapClass> {
        label.checked_sub(1).and_then(|i| Self::ALL.get(i).copied())
    }
}

impl fmt::Display for MapClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MapClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown class {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub class: MapClass,
    pub points: Vec<[f64; 2]>,
    pub confidence: f64,
}

impl Polyline {
    pub fn new(class: MapClass, points: Vec<[f64; 2]>, confidence: f64) -> Result<Self> {
        let p = Self {
            class,
            points,
            confidence,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "polyline needs at least 2 points, has {}",
                self.points.len()
            )));
        }
        if !self.confidence.is_finite() || self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("polyline".into()));
        }
        Ok(())
    }

    /// Euclidean distance from `q` to the nearest point on the polyline.
    pub fn distance_to(&self, q: [f64; 2]) -> f64 {
        self.points
            .windows(2)
            .map(|w| segment_distance(w[0], w[1], q))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum()
    }
}

pub fn segment_distance(a: [f64; 2], b: [f64; 2], q: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((q[0] - a[0]) * dx + (q[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a[0] + t * dx - q[0]).hypot(a[1] + t * dy - q[1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorMap {
    pub bev: BevConfig,
    pub elements: Vec<Polyline>,
}

impl VectorMap {
    pub fn new(bev: BevConfig) -> Self {
        Self {
            bev,
            elements: Vec::new(),
        }
    }

    pub fn of_class(&self, class: MapClass) -> impl Iterator<Item = &Polyline> {
        self.elements.iter().filter(move |e| e.class == class)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_names_and_labels() {
        for c in MapClass::ALL {
            assert_eq!(c.name().parse::<MapClass>().unwrap(), c);
            assert_eq!(MapClass::from_label(c.label()), Some(c));
        }
        assert_eq!(MapClass::from_label(0), None);
        assert!("lane".parse::<MapClass>().is_err());
    }

    #[test]
    fn short_polyline_rejected() {
        assert!(Polyline::new(MapClass::Divider, vec![[0.0, 0.0]], 1.0).is_err());
        let p = Polyline::new(MapClass::Divider, vec![[0.0, 0.0], [3.0, 4.0]], 1.0).unwrap();
        assert_eq!(p.length(), 5.0);
    }
}
