//! Stage orchestration: configuration, artifact layout, dependency and
//! staleness tracking, prediction and evaluation outputs.
//!
//! Layout under `out_dir`:
//!
//! ```text
//! features/      feature-learning nets
//! memory/        bank.mtbk
//! addresser/     f_q, f_k
//! fulfillment/   fulfillment nets
//! run_manifest.json
//! predictions.csv  intentions.csv  trace.csv
//! metrics_<split>.csv  metrics_<split>.txt
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::addresser::{train_addresser, Addresser, AddresserNets, AddresserTrainConfig};
use crate::datasets::{
    build_scenes, load_tsv, normalize_scene, save_tsv, scenes_to_tracks, synth_generate, Scene, SynthSpec,
    WindowSpec,
};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, MetricReport};
use crate::features::{train_features, FeatureDims, FeatureNets, FeatureTrainConfig};
use crate::fulfillment::{train_fulfillment, FulfillDims, FulfillNets, FulfillTrainConfig};
use crate::intention::{DecodeMode, IntentionParams};
use crate::kv::KvFile;
use crate::membank::{bank_filter, bank_init, MemoryBankPair};
use crate::model::{PredictParams, TrajectoryModel};
use crate::numkit::{derive_seed, Activation, SgdConfig};

// ---------------------------------------------------------------------------
// Config

/// Every tunable of the pipeline. Loaded from a flat `key = value` file;
/// absent keys keep their defaults, unknown keys are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Dataset manifest: lines of `split path`.
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,

    pub t_p: usize,
    pub t_f: usize,
    pub stride: usize,
    pub max_neighbors: usize,

    pub d_past: usize,
    pub d_int: usize,
    pub d_addr: usize,
    pub embed: usize,
    pub hidden: usize,
    pub activation: Activation,

    pub alpha: f64,
    pub beta: f64,
    pub theta_past: f64,
    pub theta_int: f64,
    /// Pseudo-label distance threshold; `5 * theta_int` when unset.
    pub d_t: Option<f64>,
    pub l: usize,
    pub k: usize,
    pub kmeans_max_iters: usize,
    pub decode_mode: DecodeMode,
    pub snap_destination: bool,

    pub lr_features: f64,
    pub epochs_features: usize,
    pub batch_features: usize,
    pub lr_addresser: f64,
    pub epochs_addresser: usize,
    pub batch_addresser: usize,
    pub max_candidates: usize,
    pub lr_fulfillment: f64,
    pub epochs_fulfillment: usize,
    pub batch_fulfillment: usize,

    pub finetune: bool,
    pub finetune_lr: f64,
    pub finetune_epochs: usize,

    pub units: String,

    pub synth_train: usize,
    pub synth_val: usize,
    pub synth_test: usize,
    pub synth_sigma: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            manifest: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            t_p: 8,
            t_f: 12,
            stride: 1,
            max_neighbors: 8,
            d_past: 128,
            d_int: 64,
            d_addr: 128,
            embed: 64,
            hidden: 128,
            activation: Activation::ReLU,
            alpha: 1.0,
            beta: 1.0,
            theta_past: 0.02,
            theta_int: 0.02,
            d_t: None,
            l: 120,
            k: 20,
            kmeans_max_iters: 100,
            decode_mode: DecodeMode::Query,
            snap_destination: false,
            lr_features: 1e-3,
            epochs_features: 100,
            batch_features: 16,
            lr_addresser: 1e-4,
            epochs_addresser: 20,
            batch_addresser: 64,
            max_candidates: 2048,
            lr_fulfillment: 1e-3,
            epochs_fulfillment: 100,
            batch_fulfillment: 16,
            finetune: false,
            finetune_lr: 1e-6,
            finetune_epochs: 5,
            units: "m".to_string(),
            synth_train: 3000,
            synth_val: 300,
            synth_test: 300,
            synth_sigma: 0.02,
        }
    }
}

fn parse_activation(s: &str) -> Result<Activation> {
    match s {
        "relu" => Ok(Activation::ReLU),
        "tanh" => Ok(Activation::Tanh),
        _ => Err(Error::Config(format!("activation must be `relu` or `tanh`, got `{s}`"))),
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::ReLU => "relu",
        Activation::Tanh => "tanh",
    }
}

macro_rules! config_keys {
    ($($key:ident),* $(,)?) => {
        const PLAIN_KEYS: &[&str] = &[$(stringify!($key)),*];

        fn read_plain(cfg: &mut Config, kv: &KvFile) -> Result<()> {
            $(
                if let Some(v) = kv.get(stringify!($key))? {
                    cfg.$key = v;
                }
            )*
            Ok(())
        }

        fn write_plain(cfg: &Config, kv: &mut KvFile) {
            $( kv.set(stringify!($key), &cfg.$key); )*
        }
    };
}

config_keys!(
    seed, t_p, t_f, stride, max_neighbors, d_past, d_int, d_addr, embed, hidden, alpha, beta, theta_past,
    theta_int, l, k, kmeans_max_iters, snap_destination, lr_features, epochs_features, batch_features,
    lr_addresser, epochs_addresser, batch_addresser, max_candidates, lr_fulfillment, epochs_fulfillment,
    batch_fulfillment, finetune, finetune_lr, finetune_epochs, units, synth_train, synth_val, synth_test,
    synth_sigma,
);

const SPECIAL_KEYS: &[&str] = &["manifest", "out_dir", "activation", "decode_mode", "d_t"];

impl Config {
    /// All recognised keys.
    pub fn keys() -> Vec<&'static str> {
        let mut keys: Vec<&str> = PLAIN_KEYS.iter().chain(SPECIAL_KEYS).copied().collect();
        keys.sort_unstable();
        keys
    }

    /// Relative `manifest` and `out_dir` paths resolve against `base`.
    pub fn from_kv(kv: &KvFile, base: &Path) -> Result<Self> {
        let known = Self::keys();
        if let Some(bad) = kv.keys().find(|k| !known.contains(k)) {
            return Err(Error::Config(format!("unknown config key `{bad}`")));
        }
        let mut cfg = Config::default();
        read_plain(&mut cfg, kv).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(p) = kv.get_str("manifest") {
            cfg.manifest = Some(base.join(p));
        }
        if let Some(p) = kv.get_str("out_dir") {
            cfg.out_dir = base.join(p);
        }
        cfg.d_t = kv.get("d_t")?;
        if let Some(a) = kv.get_str("activation") {
            cfg.activation = parse_activation(a)?;
        }
        if let Some(m) = kv.get_str("decode_mode") {
            cfg.decode_mode = m.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let kv = KvFile::load(path)?;
        Self::from_kv(&kv, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        write_plain(self, &mut kv);
        if let Some(m) = &self.manifest {
            kv.set("manifest", m.display());
        }
        kv.set("out_dir", self.out_dir.display());
        kv.set("activation", activation_name(self.activation));
        kv.set("decode_mode", self.decode_mode);
        if let Some(d) = self.d_t {
            kv.set("d_t", d);
        }
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("t_p", self.t_p),
            ("t_f", self.t_f),
            ("stride", self.stride),
            ("d_past", self.d_past),
            ("d_int", self.d_int),
            ("d_addr", self.d_addr),
            ("embed", self.embed),
            ("hidden", self.hidden),
            ("l", self.l),
            ("k", self.k),
            ("kmeans_max_iters", self.kmeans_max_iters),
            ("batch_features", self.batch_features),
            ("batch_addresser", self.batch_addresser),
            ("batch_fulfillment", self.batch_fulfillment),
            ("max_candidates", self.max_candidates),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be >= 1")));
        }
        let reals = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("theta_past", self.theta_past),
            ("theta_int", self.theta_int),
            ("lr_features", self.lr_features),
            ("lr_addresser", self.lr_addresser),
            ("lr_fulfillment", self.lr_fulfillment),
            ("finetune_lr", self.finetune_lr),
            ("synth_sigma", self.synth_sigma),
        ];
        if let Some((name, v)) = reals.iter().find(|(_, v)| v.is_nan() || *v < 0.0) {
            return Err(Error::Config(format!("`{name}` must be >= 0, got {v}")));
        }
        let d_t = self.d_t();
        if !(d_t > 0.0 && d_t.is_finite()) {
            return Err(Error::Config(format!(
                "`d_t` must be positive, got {d_t} (set it explicitly when theta_int is 0)"
            )));
        }
        if self.t_p < 2 {
            return Err(Error::Config("`t_p` must be >= 2".into()));
        }
        if self.k > self.l {
            return Err(Error::Config(format!("`k`={} exceeds `l`={}", self.k, self.l)));
        }
        Ok(())
    }

    pub fn d_t(&self) -> f64 {
        self.d_t.unwrap_or(5.0 * self.theta_int)
    }

    pub fn window(&self) -> WindowSpec {
        WindowSpec {
            t_p: self.t_p,
            t_f: self.t_f,
            stride: self.stride,
            max_neighbors: self.max_neighbors,
        }
    }

    pub fn feature_dims(&self) -> FeatureDims {
        FeatureDims {
            t_p: self.t_p,
            d_past: self.d_past,
            d_int: self.d_int,
            embed: self.embed,
            hidden: self.hidden,
            activation: self.activation,
        }
    }

    pub fn fulfill_dims(&self) -> FulfillDims {
        FulfillDims {
            t_p: self.t_p,
            t_f: self.t_f,
            embed: self.embed,
            hidden: self.hidden,
            d_traj: self.d_past,
            d_dest: self.d_int,
            activation: self.activation,
        }
    }

    fn finetune_epochs_or_zero(&self) -> usize {
        if self.finetune {
            self.finetune_epochs
        } else {
            0
        }
    }

    pub fn feature_train(&self) -> FeatureTrainConfig {
        FeatureTrainConfig {
            sgd: SgdConfig {
                learning_rate: self.lr_features,
                batch_size: self.batch_features,
                epochs: self.epochs_features,
                seed: derive_seed(self.seed, 1),
            },
            alpha: self.alpha,
            finetune_epochs: self.finetune_epochs_or_zero(),
            finetune_lr: self.finetune_lr,
        }
    }

    pub fn addresser_train(&self) -> AddresserTrainConfig {
        AddresserTrainConfig {
            sgd: SgdConfig {
                learning_rate: self.lr_addresser,
                batch_size: self.batch_addresser,
                epochs: self.epochs_addresser,
                seed: derive_seed(self.seed, 3),
            },
            d_t: self.d_t(),
            max_candidates: self.max_candidates,
            finetune_epochs: self.finetune_epochs_or_zero(),
            finetune_lr: self.finetune_lr,
        }
    }

    pub fn fulfill_train(&self) -> FulfillTrainConfig {
        FulfillTrainConfig {
            sgd: SgdConfig {
                learning_rate: self.lr_fulfillment,
                batch_size: self.batch_fulfillment,
                epochs: self.epochs_fulfillment,
                seed: derive_seed(self.seed, 4),
            },
            beta: self.beta,
            finetune_epochs: self.finetune_epochs_or_zero(),
            finetune_lr: self.finetune_lr,
        }
    }

    pub fn predict_params(&self) -> PredictParams {
        PredictParams {
            intention: IntentionParams {
                l: self.l,
                k: self.k,
                seed: derive_seed(self.seed, 5),
                max_iters: self.kmeans_max_iters,
                decode_mode: self.decode_mode,
            },
            snap_destination: self.snap_destination,
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            t_p: self.t_p,
            t_f: self.t_f,
            sigma: self.synth_sigma,
            ..SynthSpec::default()
        }
    }

    /// Hash of the given keys' rendered values.
    fn hash_keys(&self, keys: &[&str]) -> String {
        let kv = self.to_kv();
        let mut h = Sha256::new();
        for k in keys {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(kv.get_str(k).unwrap_or("").as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_kv().render().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

// ---------------------------------------------------------------------------
// Datasets

/// Reads a dataset manifest of `split path` lines (`#` comments allowed);
/// relative paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(split), Some(p), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected `split path`, got `{raw}`"),
            });
        };
        if out.insert(split.to_string(), base.join(p)).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("duplicate split `{split}`"),
            });
        }
    }
    Ok(out)
}

fn split_path(cfg: &Config, split: &str) -> Result<PathBuf> {
    let manifest = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("missing required key `manifest`".into()))?;
    if !manifest.exists() {
        return Err(Error::Config(format!(
            "`manifest` points to {}, which does not exist",
            manifest.display()
        )));
    }
    read_manifest(manifest)?
        .remove(split)
        .ok_or_else(|| Error::Config(format!("manifest {} has no `{split}` split", manifest.display())))
}

/// World-frame scenes of one split, with futures.
pub fn load_split(cfg: &Config, split: &str) -> Result<Vec<Scene>> {
    let path = split_path(cfg, split)?;
    let scenes = build_scenes(&load_tsv(&path)?, cfg.window())?;
    if scenes.is_empty() {
        return Err(Error::Config(format!(
            "split `{split}` ({}) yields no complete {}+{} windows",
            path.display(),
            cfg.t_p,
            cfg.t_f
        )));
    }
    Ok(scenes)
}

fn normalized(scenes: &[Scene]) -> Vec<Scene> {
    scenes.iter().map(|s| normalize_scene(s).0).collect()
}

// ---------------------------------------------------------------------------
// Run manifest

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Features,
    Memory,
    Addresser,
    Fulfillment,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Features, Stage::Memory, Stage::Addresser, Stage::Fulfillment];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Features => "features",
            Stage::Memory => "memory",
            Stage::Addresser => "addresser",
            Stage::Fulfillment => "fulfillment",
        }
    }

    fn command(self) -> &'static str {
        match self {
            Stage::Features => "train-features",
            Stage::Memory => "build-memory",
            Stage::Addresser => "train-addresser",
            Stage::Fulfillment => "train-fulfillment",
        }
    }

    fn upstream(self) -> Option<Stage> {
        match self {
            Stage::Features => None,
            Stage::Memory => Some(Stage::Features),
            Stage::Addresser => Some(Stage::Memory),
            Stage::Fulfillment => Some(Stage::Addresser),
        }
    }

    fn own_keys(self) -> &'static [&'static str] {
        match self {
            Stage::Features => &[
                "seed", "t_p", "t_f", "stride", "max_neighbors", "d_past", "d_int", "embed", "hidden",
                "activation", "alpha", "lr_features", "epochs_features", "batch_features", "finetune",
                "finetune_lr", "finetune_epochs",
            ],
            Stage::Memory => &["theta_past", "theta_int"],
            Stage::Addresser => &[
                "d_addr", "d_t", "theta_int", "lr_addresser", "epochs_addresser", "batch_addresser", "max_candidates",
            ],
            Stage::Fulfillment => &["beta", "lr_fulfillment", "epochs_fulfillment", "batch_fulfillment"],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash of this stage's config keys, the training data and every
    /// upstream fingerprint.
    pub fingerprint: String,
    /// Artifact path (relative to `out_dir`) → sha256.
    pub artifacts: BTreeMap<String, String>,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

pub const RUN_MANIFEST: &str = "run_manifest.json";

impl RunManifest {
    pub fn load(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join(RUN_MANIFEST);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            offset: e.column() as u64,
            msg: format!("{}: {e}", path.display()),
        })
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join(RUN_MANIFEST);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn now_unix() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Files under `dir`, relative to `out_dir`, sorted.
fn artifact_hashes(out_dir: &Path, dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = entry.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(out_dir).unwrap_or(&p).to_string_lossy().replace('\\', "/");
                out.insert(rel, file_sha256(&p)?);
            }
        }
    }
    Ok(out)
}

/// Runs stages against one output directory.
pub struct Pipeline {
    pub cfg: Config,
}

impl Pipeline {
    pub fn new(cfg: Config) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.out_dir
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.cfg.out_dir.join(stage.name())
    }

    pub fn bank_path(&self) -> PathBuf {
        self.stage_dir(Stage::Memory).join("bank.mtbk")
    }

    /// Expected fingerprint of `stage` under the current config and data.
    pub fn fingerprint(&self, stage: Stage) -> Result<String> {
        let mut h = Sha256::new();
        h.update(stage.name().as_bytes());
        h.update(self.cfg.hash_keys(stage.own_keys()).as_bytes());
        match stage.upstream() {
            Some(up) => h.update(self.fingerprint(up)?.as_bytes()),
            None => h.update(file_sha256(&split_path(&self.cfg, "train")?)?.as_bytes()),
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Fails unless `stage` has a record matching the current config whose
    /// artifacts are unchanged on disk.
    pub fn require(&self, stage: Stage) -> Result<()> {
        let manifest = RunManifest::load(self.out_dir())?;
        let rec = manifest.stages.get(stage.name()).ok_or_else(|| {
            Error::Dependency(format!(
                "stage `{}` has not been run in {}; run `{}` first",
                stage.name(),
                self.out_dir().display(),
                stage.command()
            ))
        })?;
        if rec.fingerprint != self.fingerprint(stage)? {
            return Err(Error::Dependency(format!(
                "stage `{}` is stale (config or data changed); rerun `{}`",
                stage.name(),
                stage.command()
            )));
        }
        for (rel, hash) in &rec.artifacts {
            let p = self.out_dir().join(rel);
            if !p.exists() {
                return Err(Error::Dependency(format!("artifact {} is missing", p.display())));
            }
            if &file_sha256(&p)? != hash {
                return Err(Error::Dependency(format!(
                    "artifact {} changed since `{}` wrote it",
                    p.display(),
                    stage.command()
                )));
            }
        }
        Ok(())
    }

    fn require_upstream(&self, stage: Stage) -> Result<()> {
        let mut s = stage.upstream();
        let mut chain = Vec::new();
        while let Some(u) = s {
            chain.push(u);
            s = u.upstream();
        }
        for u in chain.into_iter().rev() {
            self.require(u)?;
        }
        Ok(())
    }

    /// Records `stage` and drops every downstream record.
    fn record(&self, stage: Stage) -> Result<PathBuf> {
        let dir = self.stage_dir(stage);
        let mut manifest = RunManifest::load(self.out_dir())?;
        manifest.config_hash = self.cfg.hash();
        manifest.stages.retain(|name, _| {
            Stage::ALL
                .iter()
                .find(|s| s.name() == name)
                .is_none_or(|s| *s < stage)
        });
        manifest.stages.insert(
            stage.name().to_string(),
            StageRecord {
                fingerprint: self.fingerprint(stage)?,
                artifacts: artifact_hashes(self.out_dir(), &dir)?,
                finished_unix: now_unix(),
            },
        );
        manifest.save(self.out_dir())?;
        Ok(dir)
    }

    fn fresh_dir(&self, stage: Stage) -> Result<PathBuf> {
        let dir = self.stage_dir(stage);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn train_scenes(&self) -> Result<Vec<Scene>> {
        Ok(normalized(&load_split(&self.cfg, "train")?))
    }

    pub fn load_features(&self) -> Result<FeatureNets> {
        FeatureNets::load(&self.stage_dir(Stage::Features))
    }

    pub fn load_bank(&self) -> Result<MemoryBankPair> {
        MemoryBankPair::load_expecting(&self.bank_path(), self.cfg.d_past, self.cfg.d_int)
    }

    pub fn stage1_train_features(&self) -> Result<PathBuf> {
        let scenes = self.train_scenes()?;
        log::info!("train-features: {} training scenes", scenes.len());
        let nets = FeatureNets::init(derive_seed(self.cfg.seed, 10), &self.cfg.feature_dims())?;
        let (nets, log) = train_features(nets, &scenes, &self.cfg.feature_train())?;
        if let Some(last) = log.epoch_losses.last() {
            log::info!("train-features: final mean loss {last:.6}");
        }
        let dir = self.fresh_dir(Stage::Features)?;
        nets.save(&dir)?;
        self.record(Stage::Features)
    }

    pub fn stage2_build_memory(&self) -> Result<PathBuf> {
        self.require_upstream(Stage::Memory)?;
        let nets = self.load_features()?;
        let scenes = self.train_scenes()?;
        let mut initial = bank_init(&nets, &scenes)?;
        let fp = self.fingerprint(Stage::Features)?;
        initial.meta.source_hash = u64::from_str_radix(&fp[..16], 16).expect("hex fingerprint");
        let filtered = bank_filter(
            &initial,
            self.cfg.theta_past,
            self.cfg.theta_int,
            derive_seed(self.cfg.seed, 2),
        )?;
        log::info!(
            "build-memory: M {} -> {} (kept {:.2}%)",
            initial.len(),
            filtered.len(),
            kept_percent(initial.len(), filtered.len())
        );
        let dir = self.fresh_dir(Stage::Memory)?;
        filtered.save(&self.bank_path())?;
        self.record(Stage::Memory)?;
        Ok(dir)
    }

    pub fn stage3_train_addresser(&self) -> Result<PathBuf> {
        self.require_upstream(Stage::Addresser)?;
        let fnets = self.load_features()?;
        let bank = self.load_bank()?;
        let scenes = self.train_scenes()?;
        let mut nets = AddresserNets::init(
            derive_seed(self.cfg.seed, 30),
            self.cfg.d_past,
            self.cfg.hidden,
            self.cfg.d_addr,
            self.cfg.activation,
        )?;
        let keys: Vec<_> = bank.entries.iter().map(|e| e.k.clone()).collect();
        nets.standardize_on(&keys)?;
        let (nets, losses) = train_addresser(nets, &bank, &fnets, &scenes, &self.cfg.addresser_train())?;
        if let Some(last) = losses.last() {
            log::info!("train-addresser: final mean loss {last:.6}");
        }
        let dir = self.fresh_dir(Stage::Addresser)?;
        nets.save(&dir, &bank.content_hash())?;
        self.record(Stage::Addresser)
    }

    pub fn stage4_train_fulfillment(&self) -> Result<PathBuf> {
        self.require_upstream(Stage::Fulfillment)?;
        let scenes = self.train_scenes()?;
        let nets = FulfillNets::init(derive_seed(self.cfg.seed, 40), &self.cfg.fulfill_dims())?;
        let (nets, log) = train_fulfillment(nets, &scenes, &self.cfg.fulfill_train())?;
        if let Some(last) = log.epoch_losses.last() {
            log::info!("train-fulfillment: final mean loss {last:.6}");
        }
        let dir = self.fresh_dir(Stage::Fulfillment)?;
        nets.save(&dir)?;
        self.record(Stage::Fulfillment)
    }

    /// Frozen model from all four stage artifacts.
    pub fn load_model(&self, fixed_cosine: bool) -> Result<TrajectoryModel> {
        for s in Stage::ALL {
            self.require(s)?;
        }
        let bank = self.load_bank()?;
        let addresser = if fixed_cosine {
            Addresser::FixedCosine
        } else {
            let hash = bank.content_hash();
            Addresser::Learned(AddresserNets::load(&self.stage_dir(Stage::Addresser), Some(&hash))?)
        };
        TrajectoryModel::new(
            self.load_features()?,
            bank,
            addresser,
            FulfillNets::load(&self.stage_dir(Stage::Fulfillment))?,
        )
    }

    /// Writes `predictions.csv` (`scene_id,k,t,x,y`), `intentions.csv`
    /// (`scene_id,k,x,y,members`) and, with `trace`, `trace.csv`
    /// (`scene_id,rank,bank_index,sample_id,score`). `input` is a track TSV
    /// read as past-only windows; without it the `test` split is used.
    pub fn predict(&self, input: Option<&Path>, trace: bool, fixed_cosine: bool) -> Result<PathBuf> {
        let model = self.load_model(fixed_cosine)?;
        let scenes = match input {
            Some(p) => {
                let spec = WindowSpec {
                    t_f: 0,
                    ..self.cfg.window()
                };
                build_scenes(&load_tsv(p)?, spec)?
            }
            None => load_split(&self.cfg, "test")?,
        };
        let preds = model.predict_many(&scenes, &self.cfg.predict_params())?;

        let mut traj = String::from("scene_id,k,t,x,y\n");
        let mut ints = String::from("scene_id,k,x,y,members\n");
        let mut tr = String::from("scene_id,rank,bank_index,sample_id,score\n");
        for p in &preds {
            let counts = p.intentions.member_counts();
            for (k, (t, d)) in p.trajectories.iter().zip(&p.destinations).enumerate() {
                for (i, pt) in t.iter().enumerate() {
                    let _ = writeln!(traj, "{},{k},{},{:?},{:?}", p.scene_id, i + 1, pt[0], pt[1]);
                }
                let _ = writeln!(ints, "{},{k},{:?},{:?},{}", p.scene_id, d[0], d[1], counts[k]);
            }
            for (rank, a) in p.anchors.iter().enumerate() {
                let id = model.bank.entries[a.source_address].sample_id;
                let _ = writeln!(tr, "{},{rank},{},{id},{:?}", p.scene_id, a.source_address, a.score);
            }
        }
        let out = self.out_dir().join("predictions.csv");
        write(&out, &traj)?;
        write(&self.out_dir().join("intentions.csv"), &ints)?;
        if trace {
            write(&self.out_dir().join("trace.csv"), &tr)?;
        }
        log::info!("predict: {} scenes -> {}", preds.len(), out.display());
        Ok(out)
    }

    /// Evaluates one split; writes `metrics_<split>.csv` and `.txt`.
    pub fn eval(&self, split: &str, fixed_cosine: bool) -> Result<MetricReport> {
        let model = self.load_model(fixed_cosine)?;
        let scenes = load_split(&self.cfg, split)?;
        let report = evaluate(&model, &scenes, &self.cfg.predict_params(), &self.cfg.units)?;
        write(&self.out_dir().join(format!("metrics_{split}.csv")), &report.to_csv())?;
        write(&self.out_dir().join(format!("metrics_{split}.txt")), &report.summary())?;
        Ok(report)
    }

    pub fn run_all(&self) -> Result<()> {
        self.stage1_train_features()?;
        self.stage2_build_memory()?;
        self.stage3_train_addresser()?;
        self.stage4_train_fulfillment()?;
        Ok(())
    }
}

pub fn kept_percent(before: usize, after: usize) -> f64 {
    if before == 0 {
        100.0
    } else {
        100.0 * after as f64 / before as f64
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Generates synthetic multi-modal train/val/test splits as track TSVs
/// under `dir` and returns the path of the manifest listing them.
pub fn synth(cfg: &Config, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let spec = cfg.synth_spec();
    let mut manifest = String::new();
    for (i, (split, n)) in [("train", cfg.synth_train), ("val", cfg.synth_val), ("test", cfg.synth_test)]
        .into_iter()
        .enumerate()
    {
        if n == 0 {
            continue;
        }
        let scenes = synth_generate(derive_seed(cfg.seed, 100 + i as u64), n, &spec)?;
        let file = format!("{split}.tsv");
        save_tsv(&scenes_to_tracks(&scenes), &dir.join(&file))?;
        let _ = writeln!(manifest, "{split} {file}");
    }
    let path = dir.join("manifest.txt");
    write(&path, &manifest)?;
    Ok(path)
}
