//! ASCII PLY for point clouds and splat checkpoints.
//!
//! Only the `vertex` element is read; other elements are skipped. Values are
//! written with 17 significant digits so text round trips are exact.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};

use super::splat::SplatPrimitive;

use crate::fsutil::{fmt_f64, read_to_string, write_atomic};
use crate::{Error, Result};

/// The vertex element of a PLY file as named columns of f64.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlyTable {
    pub properties: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Informational `comment` lines from the header.
    pub comments: Vec<String>,
}

impl PlyTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p == name)
    }

    pub fn require(&self, name: &str, path: &Path) -> Result<usize> {
        self.column(name)
            .ok_or_else(|| Error::parse(path, 0, format!("missing vertex property {name:?}")))
    }
}

#[derive(Clone, Debug)]
enum PropKind {
    Scalar,
    List,
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(PropKind, String)>,
}

const SCALAR_TYPES: &[&str] = &[
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double", "int8", "uint8", "int16",
    "uint16", "int32", "uint32", "float32", "float64",
];

pub fn parse_ply_table(text: &str, path: &Path) -> Result<PlyTable> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (ln, first) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    if first.trim() != "ply" {
        return Err(Error::parse(path, ln, "missing 'ply' magic"));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut comments = Vec::new();
    let mut saw_format = false;
    let mut header_done = false;
    for (ln, line) in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            None => continue,
            Some("format") => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(Error::parse(path, ln, "only 'format ascii 1.0' is supported"));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") => {
                comments.push(line.trim_start()[toks[0].len()..].trim().to_string());
            }
            Some("element") => {
                if toks.len() != 3 {
                    return Err(Error::parse(path, ln, "malformed element line"));
                }
                let count = toks[2]
                    .parse()
                    .map_err(|_| Error::parse(path, ln, format!("invalid element count {:?}", toks[2])))?;
                elements.push(Element {
                    name: toks[1].to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, ln, "property before any element"))?;
                if toks.get(1) == Some(&"list") {
                    if toks.len() != 5 {
                        return Err(Error::parse(path, ln, "malformed list property"));
                    }
                    el.props.push((PropKind::List, toks[4].to_string()));
                } else {
                    if toks.len() != 3 || !SCALAR_TYPES.contains(&toks[1]) {
                        return Err(Error::parse(path, ln, "malformed property line"));
                    }
                    el.props
                        .push((PropKind::Scalar, toks[2].to_string()));
                }
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            Some(other) => {
                return Err(Error::parse(path, ln, format!("unexpected header keyword {other:?}")));
            }
        }
    }
    if !header_done {
        return Err(Error::parse(path, 0, "missing end_header"));
    }
    if !saw_format {
        return Err(Error::parse(path, 0, "missing format line"));
    }

    let mut table = PlyTable {
        comments,
        ..Default::default()
    };
    let mut found_vertex = false;
    for el in &elements {
        let is_vertex = el.name == "vertex";
        if is_vertex {
            found_vertex = true;
            for (kind, name) in &el.props {
                if matches!(kind, PropKind::List) {
                    return Err(Error::parse(path, 0, "list properties on vertices are unsupported"));
                }
                table.properties.push(name.clone());
            }
            table.rows.reserve(el.count);
        }
        let mut read = 0;
        while read < el.count {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, 0, format!("unexpected end of file in element {}", el.name)))?;
            if line.trim().is_empty() {
                continue;
            }
            read += 1;
            if !is_vertex {
                continue;
            }
            let mut row = Vec::with_capacity(el.props.len());
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(path, ln, format!("invalid number {tok:?}")))?;
                if !v.is_finite() {
                    return Err(Error::parse(path, ln, format!("non-finite value {tok:?}")));
                }
                row.push(v);
            }
            if row.len() != el.props.len() {
                return Err(Error::parse(
                    path,
                    ln,
                    format!("expected {} values, found {}", el.props.len(), row.len()),
                ));
            }
            table.rows.push(row);
        }
    }
    if !found_vertex {
        return Err(Error::parse(path, 0, "no vertex element"));
    }
    Ok(table)
}

pub fn encode_ply_table(table: &PlyTable) -> String {
    let mut s = String::from("ply\nformat ascii 1.0\n");
    for c in &table.comments {
        let _ = writeln!(s, "comment {c}");
    }
    let _ = writeln!(s, "element vertex {}", table.rows.len());
    for p in &table.properties {
        let _ = writeln!(s, "property double {p}");
    }
    s.push_str("end_header\n");
    for row in &table.rows {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_ply_table(path: &Path) -> Result<PlyTable> {
    parse_ply_table(&read_to_string(path)?, path)
}

pub fn write_ply_table(table: &PlyTable, path: &Path) -> Result<()> {
    write_atomic(path, encode_ply_table(table).as_bytes())
}

/// Sparse point cloud with optional per-point RGB in [0, 1].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points, colors: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps the points whose index satisfies `keep`, preserving order.
    pub fn select(&self, mut keep: impl FnMut(usize) -> bool) -> PointCloud {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            colors: self.colors.as_ref().map(|c| idx.iter().map(|&i| c[i]).collect()),
        }
    }

    pub fn to_table(&self) -> PlyTable {
        let mut properties: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        if self.colors.is_some() {
            properties.extend(["red", "green", "blue"].iter().map(|s| s.to_string()));
        }
        let rows = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut r = vec![p.x, p.y, p.z];
                if let Some(c) = &self.colors {
                    r.extend_from_slice(c[i].as_slice());
                }
                r
            })
            .collect();
        PlyTable {
            properties,
            rows,
            comments: Vec::new(),
        }
    }

    pub fn from_table(table: &PlyTable, path: &Path) -> Result<PointCloud> {
        let xs = [table.require("x", path)?, table.require("y", path)?, table.require("z", path)?];
        let color_cols = match (table.column("red"), table.column("green"), table.column("blue")) {
            (Some(r), Some(g), Some(b)) => Some([r, g, b]),
            _ => None,
        };
        // integer-valued colors above 1 are 8-bit channels
        let eight_bit = color_cols.is_some_and(|cols| {
            table.rows.iter().any(|r| cols.iter().any(|&c| r[c] > 1.0))
        });
        let points = table
            .rows
            .iter()
            .map(|r| Vector3::new(r[xs[0]], r[xs[1]], r[xs[2]]))
            .collect();
        let colors = color_cols.map(|cols| {
            table
                .rows
                .iter()
                .map(|r| {
                    let c = Vector3::new(r[cols[0]], r[cols[1]], r[cols[2]]);
                    if eight_bit {
                        c / 255.0
                    } else {
                        c
                    }
                })
                .collect()
        });
        Ok(PointCloud { points, colors })
    }
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    PointCloud::from_table(&read_ply_table(path)?, path)
}

pub fn write_point_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    write_ply_table(&cloud.to_table(), path)
}

/// Column order of splat checkpoints.
pub const SPLAT_PROPERTIES: [&str; 14] = [
    "x", "y", "z", "rot_w", "rot_x", "rot_y", "rot_z", "log_scale_u", "log_scale_v", "opacity_logit", "red", "green",
    "blue", "prob_logit",
];

pub fn splats_to_table(splats: &[SplatPrimitive]) -> PlyTable {
    let rows = splats
        .iter()
        .map(|s| {
            let q = s.rotation.quaternion();
            vec![
                s.center.x, s.center.y, s.center.z, q.w, q.i, q.j, q.k, s.log_scales.x, s.log_scales.y,
                s.opacity_logit, s.color.x, s.color.y, s.color.z, s.prob_logit,
            ]
        })
        .collect();
    PlyTable {
        properties: SPLAT_PROPERTIES.iter().map(|s| s.to_string()).collect(),
        rows,
        comments: Vec::new(),
    }
}

/// Rotations are stored as written; they are renormalized only if they drift
/// beyond rounding.
pub fn splats_from_table(table: &PlyTable, path: &Path) -> Result<Vec<SplatPrimitive>> {
    let mut cols = [0usize; 14];
    for (c, name) in cols.iter_mut().zip(SPLAT_PROPERTIES) {
        *c = table.require(name, path)?;
    }
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let v: Vec<f64> = cols.iter().map(|&c| r[c]).collect();
            let q = Quaternion::new(v[3], v[4], v[5], v[6]);
            let norm = q.norm();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(Error::parse(path, 0, format!("splat {i} has a degenerate rotation")));
            }
            let rotation = if (norm - 1.0).abs() <= 1e-12 {
                UnitQuaternion::new_unchecked(q)
            } else {
                UnitQuaternion::from_quaternion(q)
            };
            Ok(SplatPrimitive {
                center: Vector3::new(v[0], v[1], v[2]),
                rotation,
                log_scales: Vector2::new(v[7], v[8]),
                opacity_logit: v[9],
                color: Vector3::new(v[10], v[11], v[12]),
                prob_logit: v[13],
            })
        })
        .collect()
}

pub fn read_splats(path: &Path) -> Result<Vec<SplatPrimitive>> {
    splats_from_table(&read_ply_table(path)?, path)
}

pub fn write_splats(splats: &[SplatPrimitive], path: &Path) -> Result<()> {
    write_ply_table(&splats_to_table(splats), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<PointCloud> {
        let p = Path::new("test.ply");
        PointCloud::from_table(&parse_ply_table(text, p)?, p)
    }

    const HEADER: &str = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n";

    #[test]
    fn single_origin_point() {
        let pc = parse(&format!("{HEADER}0 0 0\n")).unwrap();
        assert_eq!(pc.points, vec![Vector3::zeros()]);
        assert!(pc.colors.is_none());
    }

    #[test]
    fn nan_rejected_with_line_number() {
        let err = parse(&format!("{HEADER}nan 0 0\n")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 8),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_headers() {
        assert!(parse("plx\n").is_err());
        assert!(parse("ply\nformat binary_little_endian 1.0\nend_header\n").is_err());
        assert!(parse("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n").is_err());
        let short = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert!(parse(short).is_err());
        let missing_z = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n";
        assert!(parse(missing_z).is_err());
    }

    #[test]
    fn uchar_colors_and_face_elements() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 255 0 0\n1 1 1 0 255 51\n3 0 1 1\n";
        let pc = parse(text).unwrap();
        assert_eq!(pc.len(), 2);
        let c = pc.colors.unwrap();
        assert_eq!(c[0], Vector3::new(1.0, 0.0, 0.0));
        assert!((c[1].z - 0.2).abs() < 1e-15);
    }

    #[test]
    fn splats_round_trip_exactly() {
        let mut s = SplatPrimitive::new(Vector3::new(0.1, -2.0, 1.0 / 3.0), 0.37, Vector3::new(0.2, 0.4, 0.6));
        s.rotation = UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0);
        s.prob_logit = -7.25;
        s.opacity_logit = 1.0 / 7.0;
        let table = splats_to_table(&[s.clone(), SplatPrimitive::new(Vector3::zeros(), 1.0, Vector3::zeros())]);
        let back = splats_from_table(&parse_ply_table(&encode_ply_table(&table), Path::new("t")).unwrap(), Path::new("t")).unwrap();
        assert_eq!(back[0], s);
        assert_eq!(back.len(), 2);
    }

    #[test]
    fn thousand_random_points_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let points: Vec<_> = (0..1000)
            .map(|_| Vector3::new(rng.random_range(-1e3..1e3), rng.random::<f64>(), -rng.random::<f64>() * 1e-7))
            .collect();
        let colors: Vec<_> = (0..1000).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())).collect();
        let pc = PointCloud { points, colors: Some(colors) };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pc.ply");
        write_point_cloud(&pc, &path).unwrap();
        assert_eq!(read_point_cloud(&path).unwrap(), pc);
    }

    proptest! {
        #[test]
        fn text_round_trip_is_exact(vals in proptest::collection::vec(-1e12f64..1e12, 3..60)) {
            let n = vals.len() / 3;
            let pc = PointCloud::new((0..n).map(|i| Vector3::new(vals[3*i], vals[3*i+1], vals[3*i+2])).collect());
            let text = encode_ply_table(&pc.to_table());
            prop_assert_eq!(parse(&text).unwrap(), pc);
        }
    }
}
