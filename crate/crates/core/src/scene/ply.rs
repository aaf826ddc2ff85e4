//! Binary little-endian splat PLY reader and writer.
//!
//! The standard 3DGS vertex layout stores the position, spherical-harmonic
//! colour (`f_dc_*`, `f_rest_*`), the opacity as a pre-sigmoid logit, the
//! natural log of each semi-axis and an unnormalised scalar-first quaternion.
//! Colour and any unknown properties are skipped.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::json;

use super::{Ellipsoid, GaussianScene, SceneError};

const REQUIRED: [&str; 11] = [
    "x", "y", "z", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
];

/// One raw splat record as stored in the file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlySplat {
    pub position: [f32; 3],
    /// Pre-sigmoid opacity.
    pub opacity_logit: f32,
    /// Natural log of the 1σ semi-axes.
    pub log_scales: [f32; 3],
    /// Scalar-first, not necessarily unit length.
    pub rotation: [f32; 4],
}

impl PlySplat {
    /// Record whose sigmoid opacity is `opacity` and whose semi-axes are `scales`.
    pub fn from_geometry(position: [f32; 3], scales: [f32; 3], rotation: [f32; 4], opacity: f32) -> Self {
        let o = opacity.clamp(1e-6, 1.0 - 1e-6);
        Self {
            position,
            opacity_logit: (o / (1.0 - o)).ln(),
            log_scales: scales.map(f32::ln),
            rotation,
        }
    }
}

/// Result of reading a splat PLY: the filtered scene plus ingest counts.
#[derive(Debug, Clone)]
pub struct PlyIngest {
    pub scene: GaussianScene,
    pub total: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, Copy)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct ElementDecl {
    name: String,
    count: usize,
    props: Vec<(String, ScalarType)>,
    has_list: bool,
}

struct Header {
    elements: Vec<ElementDecl>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, SceneError> {
    let err = |m: &str| SceneError::Header(m.to_string());
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| err("no end_header line"))?;
    let mut body_offset = end + END.len();
    if bytes.get(body_offset) == Some(&b'\r') {
        body_offset += 1;
    }
    if bytes.get(body_offset) != Some(&b'\n') {
        return Err(err("end_header not followed by newline"));
    }
    body_offset += 1;

    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| err("header is not UTF-8"))?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some("ply") {
        return Err(err("missing `ply` magic"));
    }
    let mut format_seen = false;
    let mut elements: Vec<ElementDecl> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok[0] {
            "format" => {
                if tok.get(1) != Some(&"binary_little_endian") {
                    return Err(SceneError::Header(format!("unsupported format `{line}`")));
                }
                format_seen = true;
            }
            "comment" | "obj_info" => {}
            "element" => {
                if tok.len() != 3 {
                    return Err(SceneError::Header(format!("bad element line `{line}`")));
                }
                let count = tok[2]
                    .parse()
                    .map_err(|_| SceneError::Header(format!("bad element count `{line}`")))?;
                elements.push(ElementDecl {
                    name: tok[1].to_string(),
                    count,
                    props: Vec::new(),
                    has_list: false,
                });
            }
            "property" => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| err("property before any element"))?;
                if tok.get(1) == Some(&"list") {
                    el.has_list = true;
                    continue;
                }
                if tok.len() != 3 {
                    return Err(SceneError::Header(format!("bad property line `{line}`")));
                }
                let ty = ScalarType::parse(tok[1])
                    .ok_or_else(|| SceneError::Header(format!("unknown property type `{}`", tok[1])))?;
                el.props.push((tok[2].to_string(), ty));
            }
            other => return Err(SceneError::Header(format!("unexpected header keyword `{other}`"))),
        }
    }
    if !format_seen {
        return Err(err("missing format line"));
    }
    Ok(Header { elements, body_offset })
}

/// Reads a splat PLY, keeping primitives whose sigmoid opacity is at least
/// `opacity_threshold`, and returns the scene with ingest counts.
pub fn read_gsplat_ply(path: &Path, opacity_threshold: f64, scale_multiplier: f64) -> Result<PlyIngest, SceneError> {
    if !(0.0..=1.0).contains(&opacity_threshold) {
        return Err(SceneError::InvalidParameter(format!(
            "opacity threshold {opacity_threshold} outside [0, 1]"
        )));
    }
    let bytes = fs::read(path).map_err(|source| SceneError::Io { path: path.to_path_buf(), source })?;
    let header = parse_header(&bytes)?;

    let mut offset = header.body_offset;
    let mut vertex = None;
    for el in &header.elements {
        if el.name == "vertex" {
            vertex = Some(el);
            break;
        }
        if el.has_list {
            return Err(SceneError::Header(format!(
                "cannot skip list-valued element `{}` preceding vertex",
                el.name
            )));
        }
        offset += el.count * el.props.iter().map(|(_, t)| t.size()).sum::<usize>();
    }
    let vertex = vertex.ok_or_else(|| SceneError::Header("no vertex element".into()))?;
    if vertex.has_list {
        return Err(SceneError::Header("list properties in vertex element are not supported".into()));
    }

    let mut layout = Vec::with_capacity(vertex.props.len());
    let mut stride = 0;
    for (name, ty) in &vertex.props {
        layout.push((name.as_str(), *ty, stride));
        stride += ty.size();
    }
    let field = |name: &str| -> Result<(ScalarType, usize), SceneError> {
        layout
            .iter()
            .find(|(n, _, _)| *n == name)
            .map(|&(_, t, o)| (t, o))
            .ok_or_else(|| SceneError::MissingProperty(name.to_string()))
    };
    let fields: Vec<(ScalarType, usize)> = REQUIRED.iter().map(|n| field(n)).collect::<Result<_, _>>()?;

    let needed = offset + vertex.count * stride;
    if bytes.len() < needed {
        return Err(SceneError::Element {
            index: (bytes.len().saturating_sub(offset)) / stride.max(1),
            reason: format!("file truncated: {} bytes, expected at least {needed}", bytes.len()),
        });
    }

    let mut ellipsoids = Vec::new();
    for i in 0..vertex.count {
        let rec = &bytes[offset + i * stride..offset + (i + 1) * stride];
        let mut v = [0.0f64; 11];
        for (k, (ty, off)) in fields.iter().enumerate() {
            v[k] = ty.read(&rec[*off..]);
            if !v[k].is_finite() {
                return Err(SceneError::Element {
                    index: i,
                    reason: format!("non-finite `{}`", REQUIRED[k]),
                });
            }
        }
        let opacity = 1.0 / (1.0 + (-v[3]).exp());
        if opacity < opacity_threshold {
            continue;
        }
        let scales = [v[4].exp(), v[5].exp(), v[6].exp()];
        if scales.iter().any(|s| !s.is_finite()) {
            return Err(SceneError::Element { index: i, reason: "scale overflows".into() });
        }
        let e = Ellipsoid::new(ellipsoids.len(), [v[0], v[1], v[2]], [v[7], v[8], v[9], v[10]], scales, opacity)
            .map_err(|e| SceneError::Element { index: i, reason: e.to_string() })?;
        ellipsoids.push(e);
    }

    let kept = ellipsoids.len();
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut scene = GaussianScene::new(name, scale_multiplier, ellipsoids)?;
    scene.provenance.source = Some(path.display().to_string());
    scene.provenance.parameters.insert("opacity_threshold".into(), json!(opacity_threshold));
    scene.provenance.parameters.insert("format".into(), json!("gsplat_ply"));
    Ok(PlyIngest { scene, total: vertex.count, kept })
}

pub fn load_gsplat_ply(path: &Path, opacity_threshold: f64, scale_multiplier: f64) -> Result<GaussianScene, SceneError> {
    read_gsplat_ply(path, opacity_threshold, scale_multiplier).map(|r| r.scene)
}

/// Writes splats in the standard layout with zeroed colour coefficients
/// (`f_dc_0..2` and `sh_rest` entries of `f_rest_*`).
pub fn write_gsplat_ply(path: &Path, splats: &[PlySplat], sh_rest: usize) -> Result<(), SceneError> {
    let io = |source| SceneError::Io { path: path.to_path_buf(), source };
    let mut out = Vec::new();
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", splats.len());
    for name in ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"] {
        header.push_str(&format!("property float {name}\n"));
    }
    for k in 0..sh_rest {
        header.push_str(&format!("property float f_rest_{k}\n"));
    }
    for name in ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"] {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());
    for s in splats {
        let mut rec: Vec<f32> = Vec::with_capacity(17 + sh_rest);
        rec.extend_from_slice(&s.position);
        rec.extend_from_slice(&[0.0; 6]);
        rec.extend(std::iter::repeat_n(0.0, sh_rest));
        rec.push(s.opacity_logit);
        rec.extend_from_slice(&s.log_scales);
        rec.extend_from_slice(&s.rotation);
        for v in rec {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&out).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{load_scene_json, save_scene_json};

    fn splat(opacity: f32) -> PlySplat {
        PlySplat::from_geometry([1.0, 2.0, 3.0], [1.0, 1.0, 1.0], [1.0, 0.0, 0.0, 0.0], opacity)
    }

    #[test]
    fn threshold_filters_by_sigmoid_opacity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("three.ply");
        write_gsplat_ply(&path, &[splat(0.9), splat(0.4), splat(0.7)], 45).unwrap();
        let r = read_gsplat_ply(&path, 0.5, 1.0).unwrap();
        assert_eq!((r.total, r.kept), (3, 2));
        let ids: Vec<_> = r.scene.ellipsoids.iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![0, 1]);
        assert!((r.scene.ellipsoids[1].opacity - 0.7).abs() < 1e-6);
    }

    #[test]
    fn zero_log_scale_is_unit_axes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.ply");
        let s = PlySplat {
            position: [0.0; 3],
            opacity_logit: 3.0,
            log_scales: [0.0; 3],
            rotation: [2.0, 0.0, 0.0, 0.0],
        };
        write_gsplat_ply(&path, &[s], 0).unwrap();
        let scene = load_gsplat_ply(&path, 0.5, 1.0).unwrap();
        let e = &scene.ellipsoids[0];
        assert_eq!(e.scales, nalgebra::Vector3::new(1.0, 1.0, 1.0));
        assert!((e.rotation.quaternion().norm() - 1.0).abs() < 1e-12);
        assert_eq!(e.rotation.quaternion().w, 1.0);
    }

    #[test]
    fn json_round_trip_preserves_ply_scene() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.ply");
        let splats: Vec<_> = (0..20)
            .map(|i| {
                let f = i as f32;
                PlySplat::from_geometry([f, -f, 0.5 * f], [0.1 + 0.01 * f, 0.2, 0.05], [0.3, f, 0.2, -0.1], 0.9)
            })
            .collect();
        write_gsplat_ply(&path, &splats, 3).unwrap();
        let a = load_gsplat_ply(&path, 0.5, 1.5).unwrap();
        let json = dir.path().join("rt.json");
        save_scene_json(&a, &json).unwrap();
        let b = load_scene_json(&json).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.ellipsoids.iter().zip(&b.ellipsoids) {
            assert!((x.mean - y.mean).norm() <= 1e-9);
            assert!((x.scales - y.scales).norm() <= 1e-9);
            assert!(x.rotation.angle_to(&y.rotation) <= 1e-9);
            assert!((x.opacity - y.opacity).abs() <= 1e-9);
        }
        assert_eq!(a.scale_multiplier, b.scale_multiplier);
    }

    #[test]
    fn ingest_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ply");
        write_gsplat_ply(&path, &[splat(0.8), splat(0.6)], 0).unwrap();
        assert_eq!(load_gsplat_ply(&path, 0.5, 1.0).unwrap(), load_gsplat_ply(&path, 0.5, 1.0).unwrap());
    }

    #[test]
    fn malformed_inputs_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ply");

        fs::write(&p, b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n").unwrap();
        assert!(matches!(read_gsplat_ply(&p, 0.5, 1.0), Err(SceneError::Header(_))));

        fs::write(&p, b"not a ply").unwrap();
        assert!(matches!(read_gsplat_ply(&p, 0.5, 1.0), Err(SceneError::Header(_))));

        fs::write(
            &p,
            b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nend_header\n\0\0\0\0",
        )
        .unwrap();
        assert!(matches!(read_gsplat_ply(&p, 0.5, 1.0), Err(SceneError::MissingProperty(_))));

        let mut s = splat(0.9);
        let mut bad = splat(0.9);
        bad.position[1] = f32::NAN;
        s.position[0] = 4.0;
        write_gsplat_ply(&p, &[s, s, bad], 0).unwrap();
        match read_gsplat_ply(&p, 0.5, 1.0) {
            Err(SceneError::Element { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected element error, got {other:?}"),
        }

        assert!(matches!(
            read_gsplat_ply(&dir.path().join("missing.ply"), 0.5, 1.0),
            Err(SceneError::Io { .. })
        ));
    }

    #[test]
    fn unknown_properties_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("extra.ply");
        let mut bytes = b"ply\nformat binary_little_endian 1.0\ncomment test\nelement vertex 1\n".to_vec();
        let props = [
            ("uchar", "red"),
            ("float", "x"),
            ("float", "y"),
            ("float", "z"),
            ("double", "weird"),
            ("float", "opacity"),
            ("float", "scale_0"),
            ("float", "scale_1"),
            ("float", "scale_2"),
            ("float", "rot_0"),
            ("float", "rot_1"),
            ("float", "rot_2"),
            ("float", "rot_3"),
        ];
        for (t, n) in props {
            bytes.extend_from_slice(format!("property {t} {n}\n").as_bytes());
        }
        bytes.extend_from_slice(b"end_header\n");
        bytes.push(200);
        for v in [1.0f32, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&7.5f64.to_le_bytes());
        for v in [5.0f32, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&p, bytes).unwrap();
        let scene = load_gsplat_ply(&p, 0.5, 1.0).unwrap();
        assert_eq!(scene.ellipsoids[0].mean, nalgebra::Vector3::new(1.0, 2.0, 3.0));
    }
}
