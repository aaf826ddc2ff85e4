use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use gsplat_cbf::distance::distance_full;
use gsplat_cbf::filter::{filter, Method, RobotState};
use gsplat_cbf::rng::{substream, Substream};
use gsplat_cbf::scene::roster::roster_spec;
use gsplat_cbf::scene::{generate_synthetic, read_gsplat_ply, save_scene_json, PreparedScene, SyntheticSpec};
use gsplat_cbf::sim::{
    compute_metrics, run_campaign, run_episode, sample_start_goal, write_campaign_csv, write_summary_json,
    CampaignScene, SimConfig,
};
use gsplat_cbf::Vector3;
use gsplat_cbf_cli::bench::{bench_scene, pillar_scene, print_table, summarize};
use gsplat_cbf_cli::{parse_vec3, PruningMode, RunConfig};
use gsplat_cbf_teleop::{hall_streams, replay, InputScript, TeleopSession, HALL_START};

#[derive(Parser)]
#[command(name = "gsplat-cbf", version, about = "Safety filtering over Gaussian-splat ellipsoid maps")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

/// Overrides for the run configuration; flags beat the `--config` file,
/// which beats the defaults.
#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Roster name, scene JSON, synthetic spec or splat PLY. Repeatable.
    #[arg(long = "scene", global = true)]
    scenes: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// exact, sphere-variant, point-variant or unfiltered; comma separated.
    #[arg(long = "method", global = true, value_delimiter = ',', value_parser = parse_method)]
    methods: Vec<Method>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// on, off, or both (bench only).
    #[arg(long, global = true, value_parser = parse_pruning)]
    pruning: Option<PruningMode>,
    /// Standard deviation of the acceleration noise, m/s².
    #[arg(long, global = true)]
    noise_std: Option<f64>,
    #[arg(long, global = true)]
    opacity_threshold: Option<f64>,
    #[arg(long, global = true)]
    scale_multiplier: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Convert a splat PLY into a scene JSON file.
    Ingest { ply: PathBuf },
    /// Generate a roster scene or a synthetic spec into a scene JSON file.
    Generate { source: String },
    /// Barrier value and derivatives of the nearest ellipsoid (or `--id`).
    Distance {
        #[arg(long, allow_hyphen_values = true, value_parser = parse_vec3)]
        point: [f64; 3],
        #[arg(long)]
        id: Option<usize>,
        #[arg(long)]
        robot_radius: Option<f64>,
        #[arg(long)]
        buffer: Option<f64>,
    },
    /// One filter solve.
    FilterStep {
        #[arg(long, allow_hyphen_values = true, value_parser = parse_vec3)]
        position: [f64; 3],
        #[arg(long, allow_hyphen_values = true, value_parser = parse_vec3, default_value = "0,0,0")]
        velocity: [f64; 3],
        #[arg(long, allow_hyphen_values = true, value_parser = parse_vec3)]
        u_des: [f64; 3],
    },
    /// One closed-loop episode; `--out` receives the JSON-lines log.
    Simulate {
        #[arg(long, allow_hyphen_values = true, value_parser = parse_vec3)]
        start: Option<[f64; 3]>,
        #[arg(long, allow_hyphen_values = true, value_parser = parse_vec3)]
        goal: Option<[f64; 3]>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Paired multi-trajectory campaign; `--out` is the output directory.
    Campaign {
        #[arg(long)]
        trajectories: Option<usize>,
        /// Record wall-clock latency columns (outputs then differ per run).
        #[arg(long)]
        timing: bool,
    },
    /// Filter-step latency table; `--out` receives the JSON report.
    Bench {
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long)]
        states: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        point_cloud_sizes: Option<Vec<usize>>,
    },
    /// Serve a teleop session over WebSocket.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: SocketAddr,
        #[arg(long)]
        filter_hz: Option<f64>,
        #[arg(long, allow_hyphen_values = true, value_parser = parse_vec3)]
        start: Option<[f64; 3]>,
        /// Seconds before the filter engages.
        #[arg(long)]
        warmup: Option<f64>,
    },
    /// Replay pilot input streams headlessly and report the safety margin.
    Replay {
        /// Built-in stream name; all of them when omitted.
        #[arg(long)]
        stream: Option<String>,
        /// JSON-lines recording of `{"t":…, "accel":[…]}` inputs.
        #[arg(long, conflicts_with = "stream")]
        recording: Option<PathBuf>,
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        #[arg(long, default_value_t = 30.0)]
        send_hz: f64,
        #[arg(long, allow_hyphen_values = true, value_parser = parse_vec3)]
        start: Option<[f64; 3]>,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method '{s}'"))
}

fn parse_pruning(s: &str) -> Result<PruningMode, String> {
    match s {
        "on" => Ok(PruningMode::On),
        "off" => Ok(PruningMode::Off),
        "both" => Ok(PruningMode::Both),
        _ => Err(format!("expected on, off or both, got '{s}'")),
    }
}

fn merged(c: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if !c.scenes.is_empty() {
        cfg.scenes = c.scenes.clone();
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if !c.methods.is_empty() {
        cfg.methods = c.methods.clone();
    }
    if c.out.is_some() {
        cfg.out = c.out.clone();
    }
    if c.threads.is_some() {
        cfg.threads = c.threads;
    }
    match c.pruning {
        Some(PruningMode::On) => cfg.cbf.pruning_enabled = true,
        Some(PruningMode::Off) => cfg.cbf.pruning_enabled = false,
        _ => {}
    }
    if let Some(p) = c.pruning {
        cfg.bench.pruning = p;
    }
    if let Some(n) = c.noise_std {
        cfg.sim.accel_noise_std = n;
        cfg.session.accel_noise_std = n;
    }
    if let Some(t) = c.opacity_threshold {
        cfg.opacity_threshold = t;
    }
    if let Some(m) = c.scale_multiplier {
        cfg.scale_multiplier = m;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Some errors already quote their source; print each cause once.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

/// Prints to stdout, ignoring a closed pipe.
fn say(text: impl std::fmt::Display) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn out_path(cfg: &RunConfig) -> anyhow::Result<&PathBuf> {
    cfg.out.as_ref().context("this command needs --out")
}

fn print_json(value: &impl serde::Serialize, cfg: &RunConfig) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    say(&text);
    if let Some(p) = &cfg.out {
        std::fs::write(p, text + "\n").with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = merged(&cli.common)?;
    // Subcommand flags are applied before validation so that nothing
    // invalid reaches the numerics.
    match &cli.cmd {
        Cmd::Distance { robot_radius, buffer, .. } => {
            cfg.cbf.robot_radius = robot_radius.unwrap_or(cfg.cbf.robot_radius);
            cfg.cbf.buffer = buffer.unwrap_or(cfg.cbf.buffer);
        }
        Cmd::Simulate { steps: Some(n), .. } => cfg.sim.steps = *n,
        Cmd::Campaign { trajectories, timing } => {
            cfg.trajectories = trajectories.unwrap_or(cfg.trajectories);
            cfg.include_timing |= *timing;
        }
        Cmd::Bench { sizes, states, point_cloud_sizes } => {
            if !sizes.is_empty() {
                cfg.bench.sizes = sizes.clone();
            }
            cfg.bench.states = states.unwrap_or(cfg.bench.states);
            if let Some(p) = point_cloud_sizes {
                cfg.bench.point_cloud_sizes = p.clone();
            }
        }
        Cmd::Serve { filter_hz, start, warmup, .. } => {
            cfg.session.filter_hz = filter_hz.unwrap_or(cfg.session.filter_hz);
            cfg.session.warmup = warmup.unwrap_or(cfg.session.warmup);
            if let Some(s) = start {
                cfg.session.start = Vector3::from(*s);
            }
        }
        _ => {}
    }
    cfg.validate()?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }

    match cli.cmd {
        Cmd::Ingest { ply } => {
            let out = out_path(&cfg)?;
            let ingest = read_gsplat_ply(&ply, cfg.opacity_threshold, cfg.scale_multiplier)?;
            if ingest.kept == 0 {
                eprintln!(
                    "warning: no splat reaches opacity threshold {}; writing an empty scene",
                    cfg.opacity_threshold
                );
            }
            save_scene_json(&ingest.scene, out)?;
            say(format_args!("K={} kept={}", ingest.total, ingest.kept));
        }
        Cmd::Generate { source } => {
            let out = out_path(&cfg)?;
            let mut spec = match roster_spec(&source) {
                Some(s) => s,
                None => {
                    let text = std::fs::read_to_string(&source).with_context(|| format!("cannot read {source}"))?;
                    SyntheticSpec::from_json(&serde_json::from_str(&text)?)?
                }
            };
            if let Some(s) = cli.common.seed {
                spec.seed = s;
            }
            let scene = generate_synthetic(&spec)?;
            save_scene_json(&scene, out)?;
            say(format_args!("K={} name={}", scene.len(), scene.name));
        }
        Cmd::Distance { point, id, .. } => {
            let scene = cfg.single_scene()?;
            let p = Vector3::from(point);
            let m = scene.scale_multiplier;
            let eval = |i: usize| distance_full(&scene.ellipsoids[i].obstacle(m), &p, cfg.cbf.robot_radius, cfg.cbf.buffer, &cfg.cbf.bisection);
            let (i, r) = match id {
                Some(i) if i >= scene.len() => bail!("id {i} out of range; scene has {} ellipsoids", scene.len()),
                Some(i) => (i, eval(i)?),
                None => {
                    use rayon::prelude::*;
                    let best = (0..scene.len())
                        .into_par_iter()
                        .map(|i| eval(i).map(|r| (i, r)))
                        .collect::<Result<Vec<_>, _>>()?
                        .into_iter()
                        .min_by(|a, b| a.1.h.total_cmp(&b.1.h).then(a.0.cmp(&b.0)));
                    best.context("scene is empty")?
                }
            };
            print_json(&serde_json::json!({ "id": scene.ellipsoids[i].id, "result": r }), &cfg)?;
        }
        Cmd::FilterStep { position, velocity, u_des } => {
            let scene = PreparedScene::new(cfg.single_scene()?, None);
            let method = cli.common.methods.first().copied().unwrap_or(Method::Exact);
            let state = RobotState::new(position.into(), velocity.into());
            let r = filter(&scene, &state, &Vector3::from(u_des), &cfg.cbf, method)?;
            print_json(&r, &cfg)?;
        }
        Cmd::Simulate { start, goal, .. } => {
            let scene = PreparedScene::new(cfg.single_scene()?, None);
            let method = cli.common.methods.first().copied().unwrap_or(Method::Exact);
            let (s, g) = match (start, goal) {
                (Some(s), Some(g)) => (Vector3::from(s), Vector3::from(g)),
                (None, None) => {
                    let mut rng = substream(cfg.seed, Substream::Campaign, 0);
                    sample_start_goal(&scene, &cfg.cbf, cfg.sampler_padding, &mut rng)?
                }
                _ => bail!("give both --start and --goal, or neither"),
            };
            let sim = SimConfig { start: s, goal: g, seed: cfg.seed, ..cfg.sim };
            let mut log = run_episode(&scene, &sim, &cfg.cbf, method);
            if !cfg.include_timing {
                log.strip_timing();
            }
            if let Some(p) = &cfg.out {
                let mut w = BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?);
                log.write_jsonl(&mut w)?;
                w.flush()?;
            }
            let metrics = compute_metrics(&log, &scene, &cfg.cbf)?;
            let doc = serde_json::json!({
                "method": method.name(), "start": s, "goal": g, "error": log.error, "metrics": metrics,
            });
            say(serde_json::to_string_pretty(&doc)?);
            if let Some(e) = log.error {
                bail!("episode aborted: {e}");
            }
        }
        Cmd::Campaign { .. } => {
            let dir = out_path(&cfg)?.clone();
            if cfg.scenes.is_empty() {
                bail!("no scene given; pass --scene or list scenes in the config");
            }
            let scenes = cfg
                .scenes
                .iter()
                .map(|s| Ok(CampaignScene::new(s.clone(), Arc::new(PreparedScene::new(cfg.load_scene(s)?, None)))))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let result = run_campaign(&scenes, &cfg.campaign(), &cfg.cbf)?;
            std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
            let mut csv = BufWriter::new(File::create(dir.join("campaign.csv"))?);
            write_campaign_csv(&result.rows, &mut csv)?;
            csv.flush()?;
            let mut summary = BufWriter::new(File::create(dir.join("summary.json"))?);
            write_summary_json(&result.summary, &mut summary)?;
            summary.write_all(b"\n")?;
            summary.flush()?;
            say(format_args!("{:<20} {:<15} {:>5} {:>13} {:>7} {:>12} {:>9}", "scene", "method", "n", "min_h", "unsafe", "ctrl_diff", "progress"));
            for s in &result.summary {
                say(format_args!(
                    "{:<20} {:<15} {:>5} {:>13.4e} {:>7} {:>12.4e} {:>9.3}",
                    s.scene,
                    s.method,
                    s.trajectories,
                    s.min_h.unwrap_or(f64::NAN),
                    s.unsafe_trajectories,
                    s.mean_control_diff,
                    s.mean_progress
                ));
            }
            let failed = result.rows.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                bail!("{failed} trajectories aborted; see the error column");
            }
        }
        Cmd::Bench { .. } => {
            let mut rows = Vec::new();
            if cfg.scenes.is_empty() {
                for &k in &cfg.bench.sizes {
                    let scene = pillar_scene(k, cfg.seed)?;
                    eprintln!("bench: {} ({} ellipsoids)", scene.name, scene.len());
                    rows.extend(bench_scene(&scene, &cfg.cbf, &cfg.bench, cfg.seed, cfg.bench.point_cloud_sizes.contains(&k))?);
                }
            } else {
                for s in &cfg.scenes {
                    let scene = cfg.load_scene(s)?;
                    eprintln!("bench: {} ({} ellipsoids)", scene.name, scene.len());
                    let pc = cfg.bench.point_cloud_sizes.contains(&scene.len());
                    rows.extend(bench_scene(&scene, &cfg.cbf, &cfg.bench, cfg.seed, pc)?);
                }
            }
            let report = summarize(rows);
            let _ = print_table(&report, std::io::stdout().lock());
            if let Some(p) = &cfg.out {
                std::fs::write(p, serde_json::to_string_pretty(&report)? + "\n").with_context(|| format!("cannot write {}", p.display()))?;
            }
        }
        Cmd::Serve { bind, .. } => {
            let scene = Arc::new(PreparedScene::new(cfg.single_scene()?, None));
            let session = TeleopSession::new(scene, cfg.cbf, cfg.session_config()).map_err(anyhow::Error::msg)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let handle = gsplat_cbf_teleop::spawn(session, bind).await.with_context(|| format!("cannot bind {bind}"))?;
                eprintln!("serving ws://{}/session (session {}); Ctrl-C to stop", handle.addr, handle.session_id);
                tokio::signal::ctrl_c().await?;
                let session = handle.shutdown().await;
                eprintln!("stopped at tick {}", session.tick());
                anyhow::Ok(())
            })?;
        }
        Cmd::Replay { stream, recording, duration, send_hz, start } => {
            if cfg.scenes.is_empty() {
                cfg.scenes = vec!["hall-300k".into()];
            }
            let scene = Arc::new(PreparedScene::new(cfg.single_scene()?, None));
            let mut session = cfg.session_config();
            // The built-in streams are laid out for the hall start.
            let default_start = if session.start == Vector3::zeros() { Vector3::from(HALL_START) } else { session.start };
            session.start = start.map(Vector3::from).unwrap_or(default_start);
            let scripts: Vec<(String, InputScript)> = match (recording, stream) {
                (Some(p), _) => {
                    let f = File::open(&p).with_context(|| format!("cannot open {}", p.display()))?;
                    vec![(p.display().to_string(), InputScript::read_recording(BufReader::new(f))?)]
                }
                (None, Some(name)) => {
                    let s = hall_streams(cfg.cbf.a_max).into_iter().find(|(n, _)| *n == name);
                    let (n, s) = s.with_context(|| format!("unknown stream '{name}'"))?;
                    vec![(n.to_string(), s)]
                }
                (None, None) => hall_streams(cfg.cbf.a_max).into_iter().map(|(n, s)| (n.to_string(), s)).collect(),
            };
            for (name, script) in scripts {
                let report = replay(scene.clone(), cfg.cbf, session, &script, duration, send_hz)?;
                say(serde_json::json!({ "stream": name, "report": report }));
            }
        }
    }
    Ok(())
}
