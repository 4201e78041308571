//! Trajectory tables, scene windowing, normalization and the synthetic
//! multimodal scene generator.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackSample {
    pub frame: i64,
    pub x: f64,
    pub y: f64,
}

/// All samples of one agent, ordered by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrack {
    pub agent_id: i64,
    pub samples: Vec<TrackSample>,
}

/// One prediction case: the ego agent's past, its neighbors' pasts over the
/// same frames, and (when known) the ego future.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: u64,
    pub ego_past: Vec<Point>,
    pub neighbor_pasts: Vec<Vec<Point>>,
    pub ego_future: Option<Vec<Point>>,
    /// Ground-truth mode index for synthetic scenes.
    pub mode: Option<usize>,
}

impl Scene {
    pub fn validate(&self, t_p: usize, t_f: usize) -> Result<()> {
        if self.ego_past.len() != t_p {
            return Err(Error::invalid(format!(
                "scene {}: ego past has {} rows, expected {t_p}",
                self.id,
                self.ego_past.len()
            )));
        }
        if let Some(n) = self.neighbor_pasts.iter().position(|p| p.len() != t_p) {
            return Err(Error::invalid(format!(
                "scene {}: neighbor {n} past has {} rows, expected {t_p}",
                self.id,
                self.neighbor_pasts[n].len()
            )));
        }
        if let Some(f) = &self.ego_future {
            if f.len() != t_f {
                return Err(Error::invalid(format!(
                    "scene {}: future has {} rows, expected {t_f}",
                    self.id,
                    f.len()
                )));
            }
        }
        let finite = |p: &Point| p[0].is_finite() && p[1].is_finite();
        let all_finite = self.ego_past.iter().all(finite)
            && self.neighbor_pasts.iter().flatten().all(finite)
            && self.ego_future.iter().flatten().all(finite);
        if !all_finite {
            return Err(Error::Numeric(format!("scene {}: non-finite coordinate", self.id)));
        }
        Ok(())
    }

    pub fn t_p(&self) -> usize {
        self.ego_past.len()
    }

    /// Last observed ego position.
    pub fn last_observed(&self) -> Point {
        *self.ego_past.last().expect("scene has a non-empty past")
    }

    /// First observed ego position.
    pub fn start_pos(&self) -> Point {
        self.ego_past[0]
    }

    pub fn future(&self) -> Result<&[Point]> {
        self.ego_future
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("scene {} has no ground-truth future", self.id)))
    }

    /// Final future position.
    pub fn destination(&self) -> Result<Point> {
        self.future()?
            .last()
            .copied()
            .ok_or_else(|| Error::invalid(format!("scene {} has an empty future", self.id)))
    }
}

pub fn flatten(points: &[Point]) -> Vec<f64> {
    points.iter().flat_map(|p| p.iter().copied()).collect()
}

pub fn unflatten(values: &[f64]) -> Vec<Point> {
    values.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

// ---------------------------------------------------------------------------
// TSV tables

/// Parses whitespace-separated `frame agent_id x y` lines.
pub fn parse_tsv(text: &str) -> Result<Vec<RawTrack>> {
    let mut by_agent: BTreeMap<i64, Vec<TrackSample>> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 fields `frame agent_id x y`, found {}", fields.len()),
            });
        }
        let frame = parse_int(fields[0], line_no, "frame")?;
        let agent = parse_int(fields[1], line_no, "agent_id")?;
        let x = parse_real(fields[2], line_no, "x")?;
        let y = parse_real(fields[3], line_no, "y")?;
        by_agent
            .entry(agent)
            .or_default()
            .push(TrackSample { frame, x, y });
    }
    let mut tracks = Vec::with_capacity(by_agent.len());
    for (agent_id, mut samples) in by_agent {
        samples.sort_by_key(|s| s.frame);
        if let Some(w) = samples.windows(2).find(|w| w[0].frame == w[1].frame) {
            return Err(Error::Parse {
                line: 0,
                msg: format!("agent {agent_id} has two samples at frame {}", w[0].frame),
            });
        }
        tracks.push(RawTrack { agent_id, samples });
    }
    Ok(tracks)
}

pub fn load_tsv(path: &Path) -> Result<Vec<RawTrack>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text)
}

/// Renders tracks as TSV rows ordered by frame, then agent. Values use the
/// shortest round-tripping decimal form.
pub fn format_tsv(tracks: &[RawTrack]) -> String {
    let mut rows: Vec<(i64, i64, f64, f64)> = tracks
        .iter()
        .flat_map(|t| t.samples.iter().map(move |s| (s.frame, t.agent_id, s.x, s.y)))
        .collect();
    rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut out = String::new();
    for (frame, agent, x, y) in rows {
        let _ = writeln!(out, "{frame}\t{agent}\t{x}\t{y}");
    }
    out
}

pub fn save_tsv(tracks: &[RawTrack], path: &Path) -> Result<()> {
    std::fs::write(path, format_tsv(tracks)).map_err(|e| Error::io(path, e))
}

fn parse_int(s: &str, line: usize, what: &str) -> Result<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    // Some public tables print integer ids as floats ("12.0").
    match s.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.abs() < 9.0e15 => Ok(v as i64),
        _ => Err(Error::Parse {
            line,
            msg: format!("{what} `{s}` is not an integer"),
        }),
    }
}

fn parse_real(s: &str, line: usize, what: &str) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            line,
            msg: format!("{what} `{s}` is not a finite number"),
        }),
    }
}

// ---------------------------------------------------------------------------
// Windowing

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub t_p: usize,
    pub t_f: usize,
    /// Window-start advance, in samples.
    pub stride: usize,
    pub max_neighbors: usize,
}

impl WindowSpec {
    pub fn new(t_p: usize, t_f: usize, stride: usize) -> Self {
        Self {
            t_p,
            t_f,
            stride,
            max_neighbors: 8,
        }
    }
}

/// Cuts tracks into past/future scenes. Every agent with `t_p + t_f`
/// consecutive frames becomes the ego of one scene per window start; its
/// neighbors are the other agents present at every past frame, capped at
/// `max_neighbors` nearest by last-observed distance. With `t_f == 0` the
/// scenes are past-only (no ground-truth future), for inference inputs.
pub fn build_scenes(tracks: &[RawTrack], spec: WindowSpec) -> Result<Vec<Scene>> {
    if spec.t_p == 0 || spec.stride == 0 {
        return Err(Error::invalid("t_p and stride must both be >= 1"));
    }
    let mut sorted: Vec<&RawTrack> = tracks.iter().collect();
    sorted.sort_by_key(|t| t.agent_id);

    let frame_step = sorted
        .iter()
        .flat_map(|t| t.samples.windows(2).map(|w| w[1].frame - w[0].frame))
        .filter(|&d| d > 0)
        .min()
        .unwrap_or(1);

    let positions: Vec<HashMap<i64, Point>> = sorted
        .iter()
        .map(|t| t.samples.iter().map(|s| (s.frame, [s.x, s.y])).collect())
        .collect();

    let window = spec.t_p + spec.t_f;
    let mut scenes = Vec::new();
    for (ego_idx, track) in sorted.iter().enumerate() {
        let s = &track.samples;
        if s.len() < window {
            continue;
        }
        let mut start = 0;
        while start + window <= s.len() {
            let contiguous = s[start..start + window]
                .windows(2)
                .all(|w| w[1].frame - w[0].frame == frame_step);
            if !contiguous {
                start += 1;
                continue;
            }
            let past_frames: Vec<i64> = s[start..start + spec.t_p].iter().map(|x| x.frame).collect();
            let ego_past: Vec<Point> = s[start..start + spec.t_p].iter().map(|x| [x.x, x.y]).collect();
            let ego_future: Vec<Point> = s[start + spec.t_p..start + window]
                .iter()
                .map(|x| [x.x, x.y])
                .collect();
            let last = *ego_past.last().unwrap();

            let mut neighbors: Vec<(f64, i64, Vec<Point>)> = Vec::new();
            for (other_idx, other) in sorted.iter().enumerate() {
                if other_idx == ego_idx {
                    continue;
                }
                let pos = &positions[other_idx];
                let past: Option<Vec<Point>> = past_frames.iter().map(|f| pos.get(f).copied()).collect();
                if let Some(past) = past {
                    let d = dist(*past.last().unwrap(), last);
                    neighbors.push((d, other.agent_id, past));
                }
            }
            neighbors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            neighbors.truncate(spec.max_neighbors);

            scenes.push(Scene {
                id: scenes.len() as u64,
                ego_past,
                neighbor_pasts: neighbors.into_iter().map(|n| n.2).collect(),
                ego_future: (spec.t_f > 0).then_some(ego_future),
                mode: None,
            });
            start += spec.stride;
        }
    }
    Ok(scenes)
}

// ---------------------------------------------------------------------------
// Normalization

/// Pure translation taking the ego's last observed position to the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormTransform {
    pub translation: Point,
}

impl NormTransform {
    pub fn to_local(&self, p: Point) -> Point {
        [p[0] - self.translation[0], p[1] - self.translation[1]]
    }

    pub fn to_world(&self, p: Point) -> Point {
        [p[0] + self.translation[0], p[1] + self.translation[1]]
    }

    pub fn points_to_world(&self, ps: &[Point]) -> Vec<Point> {
        ps.iter().map(|&p| self.to_world(p)).collect()
    }
}

pub fn normalize_scene(scene: &Scene) -> (Scene, NormTransform) {
    let tf = NormTransform {
        translation: scene.last_observed(),
    };
    let map = |ps: &[Point]| ps.iter().map(|&p| tf.to_local(p)).collect::<Vec<_>>();
    let out = Scene {
        id: scene.id,
        ego_past: map(&scene.ego_past),
        neighbor_pasts: scene.neighbor_pasts.iter().map(|n| map(n)).collect(),
        ego_future: scene.ego_future.as_deref().map(map),
        mode: scene.mode,
    };
    (out, tf)
}

// ---------------------------------------------------------------------------
// Synthetic scenes

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthMode {
    /// Heading change applied at the last observed step, radians (left positive).
    pub turn: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub t_p: usize,
    pub t_f: usize,
    pub modes: Vec<SynthMode>,
    /// Per-point Gaussian jitter.
    pub sigma: f64,
    pub speed: (f64, f64),
    /// Initial heading range, radians.
    pub heading: (f64, f64),
    /// World-frame start positions are drawn from `[-extent, extent]²`.
    pub extent: f64,
    /// Parallel walkers per scene are drawn from `0..=max_walkers`.
    pub max_walkers: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        use std::f64::consts::FRAC_PI_2;
        let third = 1.0 / 3.0;
        Self {
            t_p: 8,
            t_f: 12,
            modes: vec![
                SynthMode { turn: 0.0, probability: third },
                SynthMode { turn: FRAC_PI_2, probability: third },
                SynthMode { turn: -FRAC_PI_2, probability: third },
            ],
            sigma: 0.02,
            speed: (0.3, 0.5),
            heading: (-std::f64::consts::PI, std::f64::consts::PI),
            extent: 10.0,
            max_walkers: 2,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modes.len() < 2 {
            return Err(Error::invalid("synthetic generator needs at least 2 modes"));
        }
        let total: f64 = self.modes.iter().map(|m| m.probability).sum();
        if (total - 1.0).abs() > 1e-9 || self.modes.iter().any(|m| m.probability < 0.0) {
            return Err(Error::invalid(format!(
                "mode probabilities must be non-negative and sum to 1, got {total}"
            )));
        }
        if self.t_p < 2 || self.t_f < 1 {
            return Err(Error::invalid("synthetic scenes need t_p >= 2 and t_f >= 1"));
        }
        if !(self.sigma >= 0.0) || self.speed.0 > self.speed.1 || self.heading.0 > self.heading.1 {
            return Err(Error::invalid("bad sigma, speed or heading range"));
        }
        Ok(())
    }
}

/// A synthetic scene together with its generator ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub scene: Scene,
    pub mode: usize,
    /// Noise-free endpoint every mode would have reached, world frame.
    pub mode_endpoints: Vec<Point>,
}

pub fn synth_generate(seed: u64, n_scenes: usize, spec: &SynthSpec) -> Result<Vec<Scene>> {
    Ok(synth_generate_labeled(seed, n_scenes, spec)?
        .into_iter()
        .map(|s| s.scene)
        .collect())
}

/// Agents walk straight at constant speed through the past window, then
/// take a sampled heading change and keep walking through the future.
pub fn synth_generate_labeled(seed: u64, n_scenes: usize, spec: &SynthSpec) -> Result<Vec<SynthScene>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, spec.sigma.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let noise = |rng: &mut ChaCha8Rng| -> Point {
        if spec.sigma == 0.0 {
            [0.0, 0.0]
        } else {
            [jitter.sample(rng), jitter.sample(rng)]
        }
    };

    let mut out = Vec::with_capacity(n_scenes);
    for id in 0..n_scenes {
        let origin = [
            rng.random_range(-spec.extent..=spec.extent),
            rng.random_range(-spec.extent..=spec.extent),
        ];
        let heading = rng.random_range(spec.heading.0..=spec.heading.1);
        let speed = rng.random_range(spec.speed.0..=spec.speed.1);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut mode = spec.modes.len() - 1;
        for (m, sm) in spec.modes.iter().enumerate() {
            acc += sm.probability;
            if u < acc {
                mode = m;
                break;
            }
        }

        let dir = [heading.cos(), heading.sin()];
        let clean_past: Vec<Point> = (0..spec.t_p)
            .map(|t| {
                let s = speed * t as f64;
                [origin[0] + s * dir[0], origin[1] + s * dir[1]]
            })
            .collect();
        let last = *clean_past.last().unwrap();
        let along = |turn: f64, t: usize| -> Point {
            let h = heading + turn;
            let s = speed * t as f64;
            [last[0] + s * h.cos(), last[1] + s * h.sin()]
        };
        let mode_endpoints: Vec<Point> = spec.modes.iter().map(|m| along(m.turn, spec.t_f)).collect();

        let ego_past: Vec<Point> = clean_past
            .iter()
            .map(|p| {
                let n = noise(&mut rng);
                [p[0] + n[0], p[1] + n[1]]
            })
            .collect();
        let ego_future: Vec<Point> = (1..=spec.t_f)
            .map(|t| {
                let p = along(spec.modes[mode].turn, t);
                let n = noise(&mut rng);
                [p[0] + n[0], p[1] + n[1]]
            })
            .collect();

        let walkers = rng.random_range(0..=spec.max_walkers);
        let normal = [-dir[1], dir[0]];
        let mut neighbor_pasts = Vec::with_capacity(walkers);
        for _ in 0..walkers {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let offset = side * rng.random_range(1.0..=3.0);
            let lag = rng.random_range(-1.0..=1.0);
            let past = clean_past
                .iter()
                .map(|p| {
                    let n = noise(&mut rng);
                    [
                        p[0] + offset * normal[0] + lag * dir[0] + n[0],
                        p[1] + offset * normal[1] + lag * dir[1] + n[1],
                    ]
                })
                .collect();
            neighbor_pasts.push(past);
        }

        out.push(SynthScene {
            scene: Scene {
                id: id as u64,
                ego_past,
                neighbor_pasts,
                ego_future: Some(ego_future),
                mode: Some(mode),
            },
            mode,
            mode_endpoints,
        });
    }
    Ok(out)
}

/// Lays scenes out as disjoint frame blocks so that `build_scenes` over the
/// result yields exactly one scene per input scene (egos carry the full
/// window, neighbors only the past).
pub fn scenes_to_tracks(scenes: &[Scene]) -> Vec<RawTrack> {
    let mut tracks = Vec::new();
    let mut next_agent = 0i64;
    let mut block_start = 0i64;
    for scene in scenes {
        let mut ego: Vec<Point> = scene.ego_past.clone();
        ego.extend(scene.ego_future.iter().flatten().copied());
        let to_samples = |ps: &[Point]| -> Vec<TrackSample> {
            ps.iter()
                .enumerate()
                .map(|(i, p)| TrackSample {
                    frame: block_start + i as i64,
                    x: p[0],
                    y: p[1],
                })
                .collect()
        };
        tracks.push(RawTrack {
            agent_id: next_agent,
            samples: to_samples(&ego),
        });
        next_agent += 1;
        for n in &scene.neighbor_pasts {
            tracks.push(RawTrack {
                agent_id: next_agent,
                samples: to_samples(n),
            });
            next_agent += 1;
        }
        block_start += ego.len() as i64;
    }
    tracks
}
