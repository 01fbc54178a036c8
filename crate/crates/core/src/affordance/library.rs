//! Procedural part library and its line-delimited persistence.
//!
//! One part per line, space separated, UTF-8:
//!
//! ```text
//! <category> <archetype> <N> x1 y1 z1 ... xN yN zN l1 ... lN
//! ```
//!
//! Coordinates are decimal floats with 9 significant digits, labels are `0`/`1`.

use super::features::{extract_features_with, FeatureConfig, FeatureRow};
use super::{annotate_part, AffordanceError, FrameTag, PartPointCloud, SurfaceSpec, DEFAULT_FACE_TOLERANCE, DEFAULT_RADIUS_FACTOR};
use crate::geometry::{Face, PartShape, Primitive, Pt3, Vec3};
use crate::parallel::{map_range, Execution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    Cap,
    HandleBar,
    Knob,
    Button,
    Lever,
}

impl Archetype {
    pub const ALL: [Archetype; 5] = [Archetype::Cap, Archetype::HandleBar, Archetype::Knob, Archetype::Button, Archetype::Lever];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::Cap => "cap",
            Archetype::HandleBar => "handle-bar",
            Archetype::Knob => "knob",
            Archetype::Button => "button",
            Archetype::Lever => "lever",
        }
    }

    /// Object categories this archetype is tagged with.
    pub fn categories(self) -> &'static [&'static str] {
        match self {
            Archetype::Cap => &["bottle", "pen"],
            Archetype::HandleBar => &["window", "pressure_cooker", "coffee_machine"],
            Archetype::Knob => &["pressure_cooker", "lamp"],
            Archetype::Button => &["coffee_machine", "lamp"],
            Archetype::Lever => &["door", "window"],
        }
    }

    /// Face carrying the affordance in the part frame.
    pub fn surface(self) -> SurfaceSpec {
        SurfaceSpec::with_default_tolerance(Face::PosZ)
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Archetype {
    type Err = AffordanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['_', ' '], "-").as_str() {
            "cap" => Ok(Archetype::Cap),
            "handle-bar" | "handlebar" => Ok(Archetype::HandleBar),
            "knob" => Ok(Archetype::Knob),
            "button" => Ok(Archetype::Button),
            "lever" => Ok(Archetype::Lever),
            _ => Err(AffordanceError::UnknownArchetype(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub cloud: PartPointCloud,
    pub labels: Vec<bool>,
    pub category: String,
    pub archetype: Archetype,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffordanceDataset {
    pub entries: Vec<DatasetEntry>,
}

impl AffordanceDataset {
    pub fn new(entries: Vec<DatasetEntry>) -> Result<Self, AffordanceError> {
        for e in &entries {
            if e.labels.len() != e.cloud.len() {
                return Err(AffordanceError::LengthMismatch(e.cloud.len(), e.labels.len()));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.entries.iter().map(|e| e.labels.len()).sum()
    }

    /// Part count per archetype, in archetype order.
    pub fn stats(&self) -> Vec<(Archetype, usize)> {
        Archetype::ALL.iter().map(|&a| (a, self.entries.iter().filter(|e| e.archetype == a).count())).filter(|&(_, n)| n > 0).collect()
    }

    /// One `archetype: count` line per archetype present.
    pub fn stats_lines(&self) -> Vec<String> {
        self.stats().into_iter().map(|(a, n)| format!("{a}: {n}")).collect()
    }

    /// Feature rows and labels of every point, concatenated in entry order.
    pub fn feature_table(&self, cfg: &FeatureConfig, exec: Execution) -> Result<(Vec<FeatureRow>, Vec<bool>), AffordanceError> {
        let mut rows = Vec::with_capacity(self.point_count());
        let mut labels = Vec::with_capacity(self.point_count());
        for e in &self.entries {
            let (r, _) = extract_features_with(&e.cloud, cfg, exec)?;
            rows.extend(r);
            labels.extend_from_slice(&e.labels);
        }
        Ok((rows, labels))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LibraryConfig {
    pub points_per_part: usize,
    pub radius_factor: f64,
    pub face_tolerance: f64,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self { points_per_part: 512, radius_factor: DEFAULT_RADIUS_FACTOR, face_tolerance: DEFAULT_FACE_TOLERANCE }
    }
}

pub fn generate_part_library(archetypes: &[Archetype], count: usize, seed: u64) -> Result<AffordanceDataset, AffordanceError> {
    generate_part_library_with(&LibraryConfig::default(), archetypes, count, seed, Execution::default())
}

pub fn generate_part_library_with(
    cfg: &LibraryConfig,
    archetypes: &[Archetype],
    count: usize,
    seed: u64,
    exec: Execution,
) -> Result<AffordanceDataset, AffordanceError> {
    if count == 0 {
        return Err(AffordanceError::InvalidParameter("count per archetype must be at least 1".into()));
    }
    if cfg.points_per_part < super::MIN_POINTS {
        return Err(AffordanceError::InvalidParameter(format!("points per part {} < {}", cfg.points_per_part, super::MIN_POINTS)));
    }
    let jobs: Vec<(Archetype, usize)> = archetypes.iter().flat_map(|&a| (0..count).map(move |i| (a, i))).collect();
    let entries = map_range(exec, jobs.len(), |j| {
        let (a, i) = jobs[j];
        let part_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add((a as u64 + 1) << 32).wrapping_add(i as u64);
        generate_entry(cfg, a, part_seed)
    });
    AffordanceDataset::new(entries.into_iter().collect::<Result<_, _>>()?)
}

const MAX_RESAMPLES: usize = 32;

/// Rounds to the 9 significant digits used on disk so that written data reads back identically.
fn quantize(x: f64) -> f64 {
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn shapes(a: Archetype, rng: &mut ChaCha8Rng) -> Vec<PartShape> {
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..=hi);
    let place = |p: Primitive, z: f64| PartShape::at(p, Vec3::new(0.0, 0.0, z)).expect("positive dims");
    let place_xy = |p: Primitive, x: f64, z: f64| PartShape::at(p, Vec3::new(x, 0.0, z)).expect("positive dims");
    match a {
        Archetype::Cap => {
            let (r, l) = (u(0.012, 0.03), u(0.015, 0.04));
            vec![place(Primitive::Cylinder { radius: r, length: l }, 0.0)]
        }
        Archetype::Knob => {
            let (r, t) = (u(0.015, 0.03), u(0.006, 0.012));
            let (rs, ls) = (r * u(0.3, 0.5), u(0.01, 0.025));
            vec![place(Primitive::Cylinder { radius: r, length: t }, 0.0), place(Primitive::Cylinder { radius: rs, length: ls }, -(t + ls) * 0.5)]
        }
        Archetype::Button => {
            let sx = u(0.012, 0.03);
            let sy = sx * u(0.95, 1.0);
            vec![place(Primitive::Box { size: [sx, sy, u(0.004, 0.01)] }, 0.0)]
        }
        Archetype::Lever => {
            let sx = u(0.02, 0.045);
            let sy = sx * u(0.95, 1.0);
            let t = u(0.004, 0.008);
            let (rs, ls) = (u(0.003, 0.005), u(0.02, 0.05));
            vec![place(Primitive::Box { size: [sx, sy, t] }, 0.0), place(Primitive::Cylinder { radius: rs, length: ls }, -(t + ls) * 0.5)]
        }
        Archetype::HandleBar => {
            let (len, w, t) = (u(0.08, 0.16), u(0.015, 0.025), u(0.01, 0.02));
            let post = u(0.02, 0.04);
            let px = len * 0.5 - w * 0.5;
            vec![
                place(Primitive::Box { size: [len, w, t] }, 0.0),
                place_xy(Primitive::Box { size: [w * 0.8, w * 0.8, post] }, -px, -(t + post) * 0.5),
                place_xy(Primitive::Box { size: [w * 0.8, w * 0.8, post] }, px, -(t + post) * 0.5),
            ]
        }
    }
}

fn generate_entry(cfg: &LibraryConfig, a: Archetype, seed: u64) -> Result<DatasetEntry, AffordanceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let category = a.categories()[rng.random_range(0..a.categories().len())].to_string();
    let parts = shapes(a, &mut rng);
    let areas: Vec<f64> = parts.iter().map(|s| s.primitive().surface_area()).collect();
    let total: f64 = areas.iter().sum();
    let surface = SurfaceSpec::new(a.surface().face, cfg.face_tolerance)?;
    // a sparse cloud can miss the labelled disc entirely; redraw the points of the same shape
    let mut attempt = 0;
    let (cloud, labels) = loop {
        let mut points = Vec::with_capacity(cfg.points_per_part);
        for _ in 0..cfg.points_per_part {
            let mut t = rng.random_range(0.0..total);
            let mut k = parts.len() - 1;
            for (i, area) in areas.iter().enumerate() {
                if t < *area {
                    k = i;
                    break;
                }
                t -= area;
            }
            let p = parts[k].pose() * parts[k].primitive().sample_point(&mut rng);
            points.push(Pt3::new(quantize(p.x), quantize(p.y), quantize(p.z)));
        }
        let cloud = PartPointCloud::new(points, FrameTag::Part);
        match annotate_part(&cloud, &surface, cfg.radius_factor) {
            Ok(labels) => break (cloud, labels),
            Err(AffordanceError::EmptySurface(_)) if attempt < MAX_RESAMPLES => attempt += 1,
            Err(e) => return Err(e),
        }
    };
    Ok(DatasetEntry { cloud, labels, category, archetype: a })
}

pub fn write_dataset<W: Write>(data: &AffordanceDataset, mut out: W) -> Result<(), AffordanceError> {
    for e in &data.entries {
        let mut line = format!("{} {} {}", e.category, e.archetype, e.cloud.len());
        for p in &e.cloud.points {
            for c in p.iter() {
                line.push_str(&format!(" {c:.8e}"));
            }
        }
        for &l in &e.labels {
            line.push_str(if l { " 1" } else { " 0" });
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<AffordanceDataset, AffordanceError> {
    let mut entries = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| AffordanceError::MalformedLine { line: lineno, reason };
        let fields: Vec<&str> = line.split_ascii_whitespace().collect();
        if fields.len() < 3 {
            return Err(bad("expected category, archetype and point count".into()));
        }
        let archetype: Archetype = fields[1].parse().map_err(|e: AffordanceError| bad(e.to_string()))?;
        let n: usize = fields[2].parse().map_err(|_| bad(format!("bad point count `{}`", fields[2])))?;
        if fields.len() != 3 + 4 * n {
            return Err(bad(format!("expected {} fields for {n} points, got {}", 3 + 4 * n, fields.len())));
        }
        let coords: Vec<f64> = fields[3..3 + 3 * n]
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(format!("bad coordinate `{f}`"))))
            .collect::<Result<_, _>>()?;
        let labels: Vec<bool> = fields[3 + 3 * n..]
            .iter()
            .map(|f| match *f {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(bad(format!("bad label `{f}`"))),
            })
            .collect::<Result<_, _>>()?;
        let points = coords.chunks_exact(3).map(|c| Pt3::new(c[0], c[1], c[2])).collect();
        entries.push(DatasetEntry { cloud: PartPointCloud::new(points, FrameTag::Part), labels, category: fields[0].to_string(), archetype });
    }
    AffordanceDataset::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affordance::AffordanceRegion;
    use std::collections::HashSet;

    #[test]
    fn four_caps_with_positives() {
        let d = generate_part_library(&[Archetype::Cap], 4, 0).unwrap();
        assert_eq!(d.len(), 4);
        for e in &d.entries {
            assert_eq!(e.archetype, Archetype::Cap);
            assert!(e.labels.iter().any(|&l| l));
            assert!(Archetype::Cap.categories().contains(&e.category.as_str()));
        }
        assert_eq!(d.stats_lines(), vec!["cap: 4".to_string()]);
    }

    #[test]
    fn positives_lie_on_affordance_face() {
        let d = generate_part_library(&Archetype::ALL, 3, 5).unwrap();
        for e in &d.entries {
            let region = AffordanceRegion::fit(&e.cloud, &e.archetype.surface(), DEFAULT_RADIUS_FACTOR).unwrap();
            for (p, &l) in e.cloud.points.iter().zip(&e.labels) {
                if l {
                    assert!(region.on_face(p));
                }
            }
        }
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let a = generate_part_library(&[Archetype::Knob, Archetype::Lever], 3, 11).unwrap();
        let b = generate_part_library(&[Archetype::Knob, Archetype::Lever], 3, 11).unwrap();
        assert_eq!(a, b);
        let seq = generate_part_library_with(&LibraryConfig::default(), &[Archetype::Knob, Archetype::Lever], 3, 11, Execution::Sequential).unwrap();
        assert_eq!(a, seq);
    }

    #[test]
    fn seeds_give_disjoint_dimensions() {
        let dims = |seed: u64| -> HashSet<[u64; 3]> {
            let d = generate_part_library(&[Archetype::Button], 100, seed).unwrap();
            d.entries
                .iter()
                .map(|e| {
                    let ext = e.cloud.aabb().unwrap().extent();
                    [ext.x.to_bits(), ext.y.to_bits(), ext.z.to_bits()]
                })
                .collect()
        };
        let (a, b) = (dims(1), dims(2));
        assert_eq!(a.len(), 100);
        assert!(a.is_disjoint(&b));
    }

    #[test]
    fn unknown_archetype() {
        let err = "spout".parse::<Archetype>().unwrap_err();
        assert!(err.to_string().contains("unknown archetype"));
        assert_eq!("handle_bar".parse::<Archetype>().unwrap(), Archetype::HandleBar);
        assert!(generate_part_library(&[Archetype::Cap], 0, 0).is_err());
    }

    #[test]
    fn round_trip() {
        let d = generate_part_library(&Archetype::ALL, 2, 3).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), d);
        let mut empty = Vec::new();
        write_dataset(&AffordanceDataset::default(), &mut empty).unwrap();
        assert!(empty.is_empty());
        assert!(read_dataset(empty.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let text = "bottle cap 1 0 0 0 1\nbottle cap 2 0 0 0 1\n";
        match read_dataset(text.as_bytes()) {
            Err(AffordanceError::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(read_dataset("bottle cap 1 0 0 x 1\n".as_bytes()).is_err());
        assert!(read_dataset("bottle cap 1 0 0 0 2\n".as_bytes()).is_err());
        assert!(read_dataset("bottle spout 1 0 0 0 1\n".as_bytes()).is_err());
    }
}
