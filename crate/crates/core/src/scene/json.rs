use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Ellipsoid, GaussianScene, Provenance, SceneError};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    name: String,
    scale_multiplier: f64,
    ellipsoids: Vec<EllipsoidDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<ProvenanceDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EllipsoidDoc {
    mean: [f64; 3],
    rotation: [f64; 4],
    scales: [f64; 3],
    opacity: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProvenanceDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    #[serde(default)]
    parameters: BTreeMap<String, serde_json::Value>,
}

pub fn scene_to_json_string(scene: &GaussianScene) -> String {
    let provenance = (scene.provenance != Provenance::default()).then(|| ProvenanceDoc {
        source: scene.provenance.source.clone(),
        parameters: scene.provenance.parameters.clone(),
    });
    let doc = SceneDoc {
        name: scene.name.clone(),
        scale_multiplier: scene.scale_multiplier,
        ellipsoids: scene
            .ellipsoids
            .iter()
            .map(|e| {
                let q = e.rotation.quaternion();
                EllipsoidDoc {
                    mean: e.mean.into(),
                    rotation: [q.w, q.i, q.j, q.k],
                    scales: e.scales.into(),
                    opacity: e.opacity,
                }
            })
            .collect(),
        provenance,
    };
    serde_json::to_string(&doc).expect("scene serialises")
}

pub fn scene_from_json_str(text: &str) -> Result<GaussianScene, SceneError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: SceneDoc = serde_path_to_error::deserialize(de).map_err(|e| SceneError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let ellipsoids = doc
        .ellipsoids
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            Ellipsoid::new(i, d.mean, d.rotation, d.scales, d.opacity).map_err(|e| SceneError::Schema {
                path: format!("ellipsoids[{i}]"),
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut scene = GaussianScene::new(doc.name, doc.scale_multiplier, ellipsoids).map_err(|e| SceneError::Schema {
        path: "scale_multiplier".into(),
        message: e.to_string(),
    })?;
    if let Some(p) = doc.provenance {
        scene.provenance = Provenance { source: p.source, parameters: p.parameters };
    }
    Ok(scene)
}

pub fn load_scene_json(path: &Path) -> Result<GaussianScene, SceneError> {
    let text = fs::read_to_string(path).map_err(|source| SceneError::Io { path: path.to_path_buf(), source })?;
    scene_from_json_str(&text)
}

pub fn save_scene_json(scene: &GaussianScene, path: &Path) -> Result<(), SceneError> {
    fs::write(path, scene_to_json_string(scene)).map_err(|source| SceneError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn empty_scene_is_valid() {
        let s = scene_from_json_str(r#"{"name":"e","scale_multiplier":1.0,"ellipsoids":[]}"#).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn unit_sphere_document() {
        let s = scene_from_json_str(
            r#"{"name":"u","scale_multiplier":1,"ellipsoids":[{"mean":[0,0,0],"rotation":[1,0,0,0],"scales":[1,1,1],"opacity":1}]}"#,
        )
        .unwrap();
        assert_eq!(s.ellipsoids[0].scales, Vector3::new(1.0, 1.0, 1.0));
    }

    #[test]
    fn schema_errors_carry_field_path() {
        let err = scene_from_json_str(
            r#"{"name":"u","scale_multiplier":1,"ellipsoids":[{"mean":[0,0,0],"rotation":[1,0,0,0],"scales":[1,1],"opacity":1}]}"#,
        )
        .unwrap_err();
        match err {
            SceneError::Schema { path, .. } => assert!(path.starts_with("ellipsoids[0].scales"), "{path}"),
            e => panic!("{e}"),
        }
        let err = scene_from_json_str(r#"{"name":"u","scale_multiplier":1,"ellipsoids":[],"colour":3}"#).unwrap_err();
        assert!(matches!(err, SceneError::Schema { .. }));
        let err = scene_from_json_str(
            r#"{"name":"u","scale_multiplier":1,"ellipsoids":[{"mean":[0,0,0],"rotation":[1,0,0,0],"scales":[1,-1,1],"opacity":1}]}"#,
        )
        .unwrap_err();
        match err {
            SceneError::Schema { path, .. } => assert_eq!(path, "ellipsoids[0]"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn large_scene_keeps_file_order() {
        let ellipsoids: Vec<_> = (0..100_000)
            .map(|i| Ellipsoid::sphere(0, [i as f64 * 0.5, (i % 7) as f64, 0.1 / 3.0], 0.1))
            .collect();
        let s = GaussianScene::new("big", 1.0, ellipsoids).unwrap();
        let back = scene_from_json_str(&scene_to_json_string(&s)).unwrap();
        assert_eq!(back, s);
        assert!(back.ellipsoids.iter().enumerate().all(|(i, e)| e.id == i));
    }
}
