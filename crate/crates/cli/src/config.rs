//! Run configuration: one JSON document, overridden field by field from the
//! command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use gsplat_cbf::filter::{CBFConfig, Method};
use gsplat_cbf::scene::roster::{roster_spec, ROSTER};
use gsplat_cbf::scene::{generate_synthetic, read_gsplat_ply, scene_from_json_str, GaussianScene, SyntheticSpec};
use gsplat_cbf::sim::{CampaignConfig, SimConfig};
use gsplat_cbf_teleop::SessionConfig;
use serde::{Deserialize, Serialize};

use crate::bench::BenchConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Roster names, scene JSON files, synthetic spec files or splat PLYs.
    pub scenes: Vec<String>,
    /// Master seed. Campaign sampling, episode noise, bench states and the
    /// teleop noise all derive from it; `sim.seed` and `session.seed` are
    /// overwritten.
    pub seed: u64,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
    pub methods: Vec<Method>,
    pub trajectories: usize,
    pub sampler_padding: f64,
    /// Wall-clock latency columns in campaign outputs. Off keeps reruns
    /// byte-identical.
    pub include_timing: bool,
    pub opacity_threshold: f64,
    pub scale_multiplier: f64,
    pub cbf: CBFConfig,
    pub sim: SimConfig,
    pub session: SessionConfig,
    pub bench: BenchConfig,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenes: Vec::new(),
            seed: 0,
            threads: None,
            methods: Method::ALL.to_vec(),
            trajectories: 100,
            sampler_padding: 1.0,
            include_timing: false,
            opacity_threshold: gsplat_cbf::scene::DEFAULT_OPACITY_THRESHOLD,
            scale_multiplier: 1.0,
            cbf: CBFConfig::default(),
            sim: SimConfig::default(),
            session: SessionConfig::default(),
            bench: BenchConfig::default(),
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.cbf.validate()?;
        self.sim.validate().map_err(anyhow::Error::msg).context("sim")?;
        self.session.validate().map_err(anyhow::Error::msg).context("session")?;
        self.bench.validate().context("bench")?;
        if self.methods.is_empty() {
            bail!("methods must not be empty");
        }
        if self.trajectories == 0 {
            bail!("trajectories must be at least 1");
        }
        if !(self.sampler_padding >= 0.0 && self.sampler_padding.is_finite()) {
            bail!("sampler_padding must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.opacity_threshold) {
            bail!("opacity_threshold must lie in [0, 1], got {}", self.opacity_threshold);
        }
        if !(self.scale_multiplier > 0.0 && self.scale_multiplier.is_finite()) {
            bail!("scale_multiplier must be positive");
        }
        if self.threads == Some(0) {
            bail!("threads must be at least 1");
        }
        Ok(())
    }

    pub fn campaign(&self) -> CampaignConfig {
        CampaignConfig {
            trajectories: self.trajectories,
            methods: self.methods.clone(),
            seed: self.seed,
            sim: SimConfig { seed: self.seed, ..self.sim },
            sampler_padding: self.sampler_padding,
            include_timing: self.include_timing,
            keep_logs: false,
        }
    }

    pub fn session_config(&self) -> SessionConfig {
        SessionConfig { seed: self.seed, ..self.session }
    }

    /// Loads one scene source.
    pub fn load_scene(&self, source: &str) -> anyhow::Result<GaussianScene> {
        let path = Path::new(source);
        if !path.exists() {
            if let Some(spec) = roster_spec(source) {
                return Ok(generate_synthetic(&spec)?);
            }
            bail!("no scene file '{source}' and no roster scene of that name (roster: {})", ROSTER.join(", "));
        }
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")) {
            let ingest = read_gsplat_ply(path, self.opacity_threshold, self.scale_multiplier)?;
            return Ok(ingest.scene);
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {source}"))?;
        let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("{source} is not JSON"))?;
        if value.get("ellipsoids").is_some() {
            Ok(scene_from_json_str(&text)?)
        } else if value.get("scene").is_some() {
            Ok(generate_synthetic(&SyntheticSpec::from_json(&value)?)?)
        } else {
            bail!("{source} is neither a scene document nor a synthetic scene spec")
        }
    }

    pub fn single_scene(&self) -> anyhow::Result<GaussianScene> {
        match self.scenes.as_slice() {
            [one] => self.load_scene(one),
            [] => bail!("no scene given; pass --scene"),
            _ => bail!("this command takes exactly one scene, got {}", self.scenes.len()),
        }
    }
}

/// Parses `x,y,z`.
pub fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got '{s}'"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.parse::<f64>().map_err(|_| format!("'{p}' is not a number"))?;
        if !o.is_finite() {
            return Err(format!("'{p}' is not finite"));
        }
    }
    Ok(out)
}
