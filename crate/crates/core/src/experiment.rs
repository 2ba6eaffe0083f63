//! Experiment directory, configuration and the online refinement loop.
//!
//! Layout of an experiment directory:
//!
//! ```text
//! config.json  scene.json  state.json
//! trajectories.jsonl  pairs.jsonl  preferences.jsonl  skipped.jsonl
//! checkpoints/  reconstructions/  frames/  reports/  logs/
//! ```
//!
//! One orchestrator owns a directory at a time (`.lock`). Every random
//! stream is drawn from [`crate::seed`] keyed by role and iteration, so a
//! directory replays identically.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::env::ViewpointEnv;
use crate::image_io::write_frame;
use crate::labels::{append_jsonl, now_millis, read_jsonl, FrameManifest, LabelStore, PairTicket, SharedLabels, TicketState, ViewpointStop};
use crate::metrics::{Db, MetricReport, PoseMetrics};
use crate::oracle::{Oracle, OracleConfig};
use crate::ppo::{run_episode, train_policy, ActionMode, PolicyModel, PpoConfig, UpdateLog};
use crate::pref::{
    train_reward_model, Labeler, PreferenceDataset, RewardModel, RewardTrainConfig, Step, TrajectorySegment,
};
use crate::recon::{fuse, render_voxels, VoxelReconstruction};
use crate::sim::{build_scene, CameraIntrinsics, FeatureShape, Frame, SceneConfig, SceneModel, Vec3, ViewSphere};
use crate::{seed, Error, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const SCENE_FILE: &str = "scene.json";
pub const STATE_FILE: &str = "state.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const LOCK_FILE: &str = ".lock";
pub const SEED_ENV: &str = "PREFVIEW_SEED";

/// Writes via a temporary sibling and rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelerMode {
    Oracle,
    Human,
    /// Pairs alternate between the oracle (even) and the human (odd).
    Mixed,
}

impl std::str::FromStr for LabelerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "human" => Ok(Self::Human),
            "mixed" => Ok(Self::Mixed),
            other => Err(Error::Config(format!("unknown labeler mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SphereConfig {
    pub center: Vec3,
    pub radius: f64,
    pub azimuth_count: usize,
    pub elevations_deg: Vec<f64>,
}

impl Default for SphereConfig {
    fn default() -> Self {
        Self {
            center: Vec3::new(0.0, 0.0, 0.05),
            radius: 1.25,
            azimuth_count: 12,
            elevations_deg: vec![20.0, 40.0, 60.0],
        }
    }
}

impl SphereConfig {
    pub fn to_sphere(&self) -> ViewSphere {
        ViewSphere::from_degrees(self.center, self.radius, self.azimuth_count, &self.elevations_deg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Scene layout seed; derived from `seed` when absent.
    pub scene_seed: Option<u64>,
    pub scene: SceneConfig,
    pub view_sphere: SphereConfig,
    pub intrinsics: CameraIntrinsics,
    pub features: FeatureShape,
    pub captures_per_reconstruction: usize,
    pub reconstructions_per_round: usize,
    pub iterations: usize,
    pub labeler: LabelerMode,
    /// Exploration rate of trajectory collection at iteration 0.
    pub epsilon: f64,
    /// Multiplicative decay of the exploration rate per iteration.
    pub epsilon_decay: f64,
    pub ppo: PpoConfig,
    pub ppo_updates_per_iteration: usize,
    pub reward: RewardTrainConfig,
    /// Uniform-random episodes the learned reward is standardized against, so every
    /// reward model puts the random policy at zero. 0 standardizes over the dataset.
    pub norm_reference_episodes: usize,
    pub oracle: OracleConfig,
    pub voxel_resolution: usize,
    pub eval_episodes: usize,
    /// Extra episode pairs the oracle may draw per round to replace skipped pairs.
    pub max_extra_pairs: usize,
    pub turntable_frames: usize,
    pub turntable_elevation_deg: f64,
    /// Side length of frames served to the labeling UI.
    pub preview_size: usize,
    pub human_timeout_secs: u64,
    pub human_poll_ms: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 3,
            scene_seed: None,
            scene: SceneConfig::default(),
            view_sphere: SphereConfig::default(),
            intrinsics: CameraIntrinsics::default(),
            features: FeatureShape::default(),
            captures_per_reconstruction: 10,
            reconstructions_per_round: 40,
            iterations: 5,
            labeler: LabelerMode::Oracle,
            epsilon: 0.2,
            epsilon_decay: 0.8,
            ppo: PpoConfig::default(),
            ppo_updates_per_iteration: 100,
            reward: RewardTrainConfig::default(),
            norm_reference_episodes: 256,
            oracle: OracleConfig::default(),
            voxel_resolution: 48,
            eval_episodes: 20,
            max_extra_pairs: 20,
            turntable_frames: 12,
            turntable_elevation_deg: 30.0,
            preview_size: 256,
            human_timeout_secs: 3600,
            human_poll_ms: 500,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.captures_per_reconstruction == 0 {
            return bad("captures per reconstruction must be at least 1".into());
        }
        if self.reconstructions_per_round == 0 || self.reconstructions_per_round % 2 != 0 {
            return bad("reconstructions per round must be a positive even number".into());
        }
        if self.ppo.episode_len != self.captures_per_reconstruction {
            return bad(format!(
                "PPO episode length {} differs from captures per reconstruction {}",
                self.ppo.episode_len, self.captures_per_reconstruction
            ));
        }
        if !(0.0..=1.0).contains(&self.epsilon) || !(0.0..=1.0).contains(&self.epsilon_decay) {
            return bad("exploration rate and decay must lie in [0, 1]".into());
        }
        if self.voxel_resolution < 8 {
            return bad("voxel resolution must be at least 8".into());
        }
        if self.eval_episodes == 0 || self.turntable_frames == 0 || self.preview_size < 11 {
            return bad("eval episodes, turntable frames and preview size must be positive".into());
        }
        self.scene.validate()?;
        self.intrinsics.validate()?;
        self.ppo.validate()?;
        self.reward.validate()?;
        self.oracle.validate()?;
        let sphere = self.view_sphere.to_sphere();
        sphere.validate(None)?;
        if !self.ppo.allow_repeats && self.captures_per_reconstruction > sphere.len() {
            return bad("more distinct captures per reconstruction than viewpoints".into());
        }
        Ok(())
    }

    /// Applies `PREFVIEW_SEED` when set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(self)
    }

    pub fn scene_seed(&self) -> u64 {
        self.scene_seed.unwrap_or_else(|| seed::derive(self.seed, "scene", 0))
    }

    pub fn epsilon_at(&self, iteration: usize) -> f64 {
        self.epsilon * self.epsilon_decay.powi(iteration as i32)
    }

    pub fn pairs_per_round(&self) -> usize {
        self.reconstructions_per_round / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Collecting,
    Labeling,
    TrainingReward,
    TrainingPolicy,
    /// Waiting for human labels timed out; the next run resumes the round.
    Suspended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingRound {
    pub iteration: usize,
    pub pair_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub episodes: usize,
    pub pairs: usize,
    pub labeled: usize,
    pub skipped: usize,
    pub epsilon: f64,
    pub mean_episode_path_length: f64,
    pub mean_oracle_score: Option<f64>,
    pub dataset_size: usize,
    pub reward_final_loss: f64,
    pub updates: usize,
    pub final_mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentState {
    /// Completed iterations.
    pub iteration: usize,
    pub phase: Phase,
    /// 0 means no checkpoint yet.
    pub reward_version: u64,
    pub policy_version: u64,
    pub total_updates: usize,
    pub pending: Option<PendingRound>,
    pub history: Vec<IterationSummary>,
}

impl Default for ExperimentState {
    fn default() -> Self {
        Self {
            iteration: 0,
            phase: Phase::Idle,
            reward_version: 0,
            policy_version: 0,
            total_updates: 0,
            pending: None,
            history: Vec::new(),
        }
    }
}

/// One line of `trajectories.jsonl`. Observations are re-derived from the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: String,
    pub iteration: usize,
    pub start: usize,
    pub actions: Vec<usize>,
    pub path_length: f64,
    pub epsilon: f64,
}

/// One line of `logs/updates.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub iteration: usize,
    pub global_update: usize,
    #[serde(flatten)]
    pub log: UpdateLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTrainingRecord {
    pub iteration: usize,
    pub records: usize,
    pub version: u64,
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IterationOutcome {
    Completed(IterationSummary),
    Suspended { iteration: usize, open_pairs: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEval {
    pub start: usize,
    pub actions: Vec<usize>,
    pub oracle_score: f64,
    pub report: MetricReport,
}

/// Means over episodes of one arm (learned policy or random).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub psnr: Db,
    pub ssim: f64,
    pub masked_psnr: Db,
    pub masked_ssim: f64,
    pub path_length: f64,
    pub oracle_score: f64,
    pub episodes: Vec<EpisodeEval>,
}

impl ArmReport {
    fn from_episodes(episodes: Vec<EpisodeEval>) -> Self {
        let n = episodes.len().max(1) as f64;
        let mean = |f: &dyn Fn(&EpisodeEval) -> f64| episodes.iter().map(f).sum::<f64>() / n;
        Self {
            psnr: Db(mean(&|e| e.report.psnr.0)),
            ssim: mean(&|e| e.report.ssim),
            masked_psnr: Db(mean(&|e| e.report.masked_psnr.map_or(0.0, |d| d.0))),
            masked_ssim: mean(&|e| e.report.masked_ssim.unwrap_or(0.0)),
            path_length: mean(&|e| e.report.path_length),
            oracle_score: mean(&|e| e.oracle_score),
            episodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub policy_version: u64,
    pub policy: ArmReport,
    pub random: ArmReport,
}

/// Counts and progress served by the status endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusSnapshot {
    pub iteration: usize,
    pub training_phase: Phase,
    pub open_pairs: usize,
    pub human_open_pairs: usize,
    pub labeled_total: usize,
    pub skipped_total: usize,
    pub issued_total: usize,
    /// Labels received so far for the current round, out of `round_quota`.
    pub round_labeled: usize,
    pub round_quota: usize,
    pub reward_curve_tail: Vec<f64>,
}

/// Reads a consistent snapshot from the directory's files.
pub fn status_snapshot(dir: &Path, labels: &SharedLabels) -> Result<StatusSnapshot> {
    let config: ExperimentConfig = read_json(&dir.join(CONFIG_FILE))?;
    let state: ExperimentState = read_json(&dir.join(STATE_FILE))?;
    let mut store = labels.lock();
    store.refresh()?;
    let c = store.counts();
    let human_open_pairs = store
        .tickets()
        .iter()
        .filter(|t| t.state == TicketState::Open && t.labeler == Labeler::Human)
        .count();
    let round = store.iteration_counts(state.iteration);
    drop(store);
    let updates: Vec<UpdateRecord> = read_jsonl(&dir.join("logs").join("updates.jsonl"))?;
    let tail = updates.iter().rev().take(20).rev().map(|u| u.log.mean_reward).collect();
    Ok(StatusSnapshot {
        iteration: state.iteration,
        training_phase: state.phase,
        open_pairs: c.open,
        human_open_pairs,
        labeled_total: c.labeled,
        skipped_total: c.skipped,
        issued_total: c.issued,
        round_labeled: round.labeled,
        round_quota: config.pairs_per_round(),
        reward_curve_tail: tail,
    })
}

/// Exclusive ownership of an experiment directory; released on drop.
#[derive(Debug)]
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

pub fn load_config(dir: &Path) -> Result<ExperimentConfig> {
    let c: ExperimentConfig = read_json(&dir.join(CONFIG_FILE))?;
    c.validate()?;
    Ok(c)
}

pub fn load_scene(dir: &Path) -> Result<SceneModel> {
    let p = dir.join(SCENE_FILE);
    SceneModel::from_json(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)
}

pub fn reconstruction_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("reconstructions").join(format!("{id}.pvrx"))
}

/// Ids are generated internally; anything else is rejected before touching the filesystem.
pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

pub fn load_reconstruction(dir: &Path, id: &str) -> Result<VoxelReconstruction> {
    if !is_valid_id(id) {
        return Err(Error::NotFound(format!("reconstruction {id:?}")));
    }
    let p = reconstruction_path(dir, id);
    let f = match fs::File::open(&p) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::NotFound(format!("reconstruction {id}")))
        }
        Err(e) => return Err(Error::io(&p, e)),
    };
    VoxelReconstruction::read_from(std::io::BufReader::new(f))
}

pub const ZOOM_MIN: f64 = 0.25;
pub const ZOOM_MAX: f64 = 8.0;

/// Orbit render of a reconstruction for the labeling UI.
///
/// Zoom divides the view-sphere radius; the radius never drops below the
/// distance that keeps the camera outside the reconstruction bounds.
pub fn render_orbit(
    recon: &VoxelReconstruction,
    config: &ExperimentConfig,
    scene: &SceneModel,
    azimuth_deg: f64,
    elevation_deg: f64,
    zoom: f64,
) -> Result<Frame> {
    if !(azimuth_deg.is_finite() && elevation_deg.is_finite() && zoom.is_finite()) {
        return Err(Error::Validation("orbit parameters must be finite".into()));
    }
    let sphere = config.view_sphere.to_sphere();
    let zoom = zoom.clamp(ZOOM_MIN, ZOOM_MAX);
    let floor = orbit_radius_floor(&sphere, &recon.bounds);
    let radius = (sphere.radius / zoom).max(floor);
    let el = elevation_deg.clamp(-89.0, 89.0).to_radians();
    let pose = sphere.orbit_pose(azimuth_deg.rem_euclid(360.0).to_radians(), el, radius);
    let intr = CameraIntrinsics {
        width: config.preview_size,
        height: config.preview_size,
        fov_y: config.intrinsics.fov_y,
    };
    render_voxels(recon, &pose, &intr, &scene.light)
}

/// Smallest orbit radius at which no camera position lies inside `bounds`.
pub fn orbit_radius_floor(sphere: &ViewSphere, bounds: &crate::sim::Aabb) -> f64 {
    let mut far: f64 = 0.0;
    for &x in &[bounds.min.x, bounds.max.x] {
        for &y in &[bounds.min.y, bounds.max.y] {
            for &z in &[bounds.min.z, bounds.max.z] {
                far = far.max(Vec3::new(x, y, z).distance(sphere.center));
            }
        }
    }
    far * 1.01
}

/// An experiment directory opened for work.
pub struct Experiment {
    dir: PathBuf,
    config: ExperimentConfig,
    scene: SceneModel,
    sphere: ViewSphere,
    env: ViewpointEnv,
    state: ExperimentState,
    labels: Arc<SharedLabels>,
    trajectories: Vec<TrajectoryRecord>,
    oracle: OnceLock<Oracle>,
    _lock: Option<DirLock>,
}

impl std::fmt::Debug for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Experiment")
            .field("dir", &self.dir)
            .field("iteration", &self.state.iteration)
            .finish_non_exhaustive()
    }
}

const SUBDIRS: [&str; 5] = ["checkpoints", "reconstructions", "frames", "reports", "logs"];

impl Experiment {
    /// Creates a new experiment in `dir`, which must be absent or empty.
    pub fn init(config: ExperimentConfig, dir: &Path) -> Result<Self> {
        config.validate()?;
        if dir.exists() {
            let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
            if entries.next().is_some() {
                return Err(Error::Conflict(format!("{} is not empty", dir.display())));
            }
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for s in SUBDIRS {
            let p = dir.join(s);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let scene = build_scene(config.scene_seed(), &config.scene)?;
        write_json(&dir.join(CONFIG_FILE), &config)?;
        write_atomic(&dir.join(SCENE_FILE), scene.to_json()?.as_bytes())?;
        write_json(&dir.join(STATE_FILE), &ExperimentState::default())?;
        for f in [TRAJECTORIES_FILE, crate::labels::PAIRS_FILE, crate::labels::PREFERENCES_FILE] {
            let p = dir.join(f);
            fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        }
        Self::open(dir)
    }

    /// Opens with the orchestrator lock held.
    pub fn open(dir: &Path) -> Result<Self> {
        let lock = DirLock::acquire(dir)?;
        let mut e = Self::load(dir)?;
        e._lock = Some(lock);
        Ok(e)
    }

    /// Opens without the lock, for evaluation, export and serving.
    pub fn open_shared(dir: &Path) -> Result<Self> {
        Self::load(dir)
    }

    fn load(dir: &Path) -> Result<Self> {
        if !dir.join(CONFIG_FILE).exists() {
            return Err(Error::NotFound(format!("no experiment at {}", dir.display())));
        }
        let config = load_config(dir)?;
        let scene = load_scene(dir)?;
        let state: ExperimentState = read_json(&dir.join(STATE_FILE))?;
        let sphere = config.view_sphere.to_sphere();
        let env = ViewpointEnv::from_scene(
            &scene,
            &sphere,
            &config.intrinsics,
            config.features,
            config.captures_per_reconstruction,
            config.ppo.allow_repeats,
        )?;
        let labels = LabelStore::open(dir)?;
        let trajectories: Vec<TrajectoryRecord> = read_jsonl(&dir.join(TRAJECTORIES_FILE))?;
        let e = Self {
            dir: dir.to_path_buf(),
            config,
            scene,
            sphere,
            env,
            state,
            labels: Arc::new(SharedLabels::new(labels)),
            trajectories,
            oracle: OnceLock::new(),
            _lock: None,
        };
        e.check_integrity()?;
        Ok(e)
    }

    /// Every label and ticket must resolve to stored trajectories and reconstructions.
    fn check_integrity(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for t in &self.trajectories {
            if !ids.insert(t.id.as_str()) {
                return Err(Error::Data(format!("trajectory {} recorded twice", t.id)));
            }
            if t.actions.iter().any(|&a| a == 0 || a > self.env.action_count()) || t.actions.is_empty() {
                return Err(Error::Data(format!("trajectory {} has invalid actions", t.id)));
            }
            if !reconstruction_path(&self.dir, &t.id).exists() {
                return Err(Error::Data(format!("reconstruction of {} is missing", t.id)));
            }
        }
        let store = self.labels.lock();
        for t in store.tickets() {
            for id in [&t.left, &t.right] {
                if !ids.contains(id.as_str()) {
                    return Err(Error::Data(format!("pair {} references unknown segment {id}", t.pair_id)));
                }
            }
        }
        for r in store.records() {
            for id in [&r.left, &r.right] {
                if !ids.contains(id.as_str()) {
                    return Err(Error::Data(format!("label {} references unknown segment {id}", r.pair_id)));
                }
            }
        }
        for v in 1..=self.state.reward_version {
            self.require(&self.reward_checkpoint_path(v))?;
        }
        for v in 1..=self.state.policy_version {
            self.require(&self.policy_checkpoint_path(v))?;
        }
        Ok(())
    }

    fn require(&self, p: &Path) -> Result<()> {
        if p.exists() {
            Ok(())
        } else {
            Err(Error::Data(format!("{} is missing", p.display())))
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn scene(&self) -> &SceneModel {
        &self.scene
    }

    pub fn env(&self) -> &ViewpointEnv {
        &self.env
    }

    pub fn state(&self) -> &ExperimentState {
        &self.state
    }

    pub fn labels(&self) -> Arc<SharedLabels> {
        self.labels.clone()
    }

    pub fn trajectories(&self) -> &[TrajectoryRecord] {
        &self.trajectories
    }

    /// Overrides the labeler for subsequent rounds of this session (not persisted).
    pub fn set_labeler(&mut self, mode: LabelerMode) {
        self.config.labeler = mode;
    }

    pub fn oracle(&self) -> Result<&Oracle> {
        if self.oracle.get().is_none() {
            let o = Oracle::new(
                &self.scene,
                &self.sphere,
                &self.config.intrinsics,
                self.config.voxel_resolution,
                &self.config.oracle,
            )?;
            let _ = self.oracle.set(o);
        }
        Ok(self.oracle.get().expect("oracle initialized"))
    }

    fn save_state(&self) -> Result<()> {
        write_json(&self.dir.join(STATE_FILE), &self.state)
    }

    fn reward_checkpoint_path(&self, v: u64) -> PathBuf {
        self.dir.join("checkpoints").join(format!("reward-{v:04}.ckpt"))
    }

    fn policy_checkpoint_path(&self, v: u64) -> PathBuf {
        self.dir.join("checkpoints").join(format!("policy-{v:04}.ckpt"))
    }

    /// Latest policy, or the untrained uniform initialization.
    pub fn policy(&self) -> Result<PolicyModel> {
        match self.state.policy_version {
            0 => Ok(self.initial_policy()),
            v => PolicyModel::from_checkpoint(&Checkpoint::load(&self.policy_checkpoint_path(v))?),
        }
    }

    fn initial_policy(&self) -> PolicyModel {
        PolicyModel::new(
            self.config.features.len(),
            self.env.action_count(),
            &self.config.ppo,
            seed::derive(self.config.seed, "policy-init", 0),
        )
    }

    pub fn reward_model(&self) -> Result<Option<RewardModel>> {
        match self.state.reward_version {
            0 => Ok(None),
            v => RewardModel::from_checkpoint(&Checkpoint::load(&self.reward_checkpoint_path(v))?).map(Some),
        }
    }

    pub fn segment(&self, record: &TrajectoryRecord) -> TrajectorySegment {
        TrajectorySegment {
            id: record.id.clone(),
            recon_id: record.id.clone(),
            steps: record
                .actions
                .iter()
                .map(|&a| Step {
                    observation: self.env.observation(a).clone(),
                    action: a,
                })
                .collect(),
        }
    }

    /// All labeled pairs with their segments.
    pub fn dataset(&self) -> Result<PreferenceDataset> {
        let mut d = PreferenceDataset::new();
        for t in &self.trajectories {
            d.insert_segment(self.segment(t));
        }
        let store = self.labels.lock();
        for r in store.records() {
            d.push(r.clone())?;
        }
        Ok(d)
    }

    fn episode_id(iteration: usize, k: usize) -> String {
        format!("it{iteration:02}-ep{k:03}")
    }

    fn pair_id(iteration: usize, k: usize) -> String {
        format!("it{iteration:02}-pair{k:03}")
    }

    /// Runs collection episode `k` of `iteration`, fuses and stores it.
    /// Fixed uniform-random segments; identical for every iteration of a run.
    fn norm_reference(&self) -> Vec<TrajectorySegment> {
        let zero = PolicyModel::zeros(self.config.features.len(), self.env.action_count(), &self.config.ppo);
        let mut rng = seed::rng(self.config.seed, "norm-reference", 0);
        (0..self.config.norm_reference_episodes)
            .map(|k| {
                let start = self.env.sample_start(&mut rng);
                let actions = run_episode(&self.env, &zero, start, ActionMode::Uniform, &mut rng);
                self.segment(&TrajectoryRecord {
                    id: format!("reference-{k:03}"),
                    iteration: 0,
                    start,
                    actions,
                    path_length: 0.0,
                    epsilon: 1.0,
                })
            })
            .collect()
    }

    fn collect_episode(&mut self, policy: &PolicyModel, iteration: usize, k: usize) -> Result<TrajectoryRecord> {
        let id = Self::episode_id(iteration, k);
        if let Some(t) = self.trajectories.iter().find(|t| t.id == id) {
            return Ok(t.clone());
        }
        let eps = self.config.epsilon_at(iteration);
        let mut rng = seed::rng(self.config.seed, &format!("collect/{iteration}"), k as u64);
        let start = self.env.sample_start(&mut rng);
        let actions = run_episode(&self.env, policy, start, ActionMode::Explore(eps), &mut rng);
        let recon = fuse(
            &self.env.captures_for(&actions)?,
            self.scene.bounds,
            self.config.voxel_resolution,
        )?;
        write_atomic(&reconstruction_path(&self.dir, &id), &recon.to_bytes())?;
        let rec = TrajectoryRecord {
            path_length: self.env.path_length(start, &actions),
            id,
            iteration,
            start,
            actions,
            epsilon: eps,
        };
        append_jsonl(&self.dir.join(TRAJECTORIES_FILE), &rec)?;
        self.trajectories.push(rec.clone());
        Ok(rec)
    }

    fn assigned_labeler(&self, pair_index: usize) -> Labeler {
        match self.config.labeler {
            LabelerMode::Oracle => Labeler::Oracle,
            LabelerMode::Human => Labeler::Human,
            LabelerMode::Mixed if pair_index % 2 == 0 => Labeler::Oracle,
            LabelerMode::Mixed => Labeler::Human,
        }
    }

    fn capture_order(&self, record: &TrajectoryRecord) -> Result<Vec<ViewpointStop>> {
        let sphere = self.config.view_sphere.to_sphere();
        record
            .actions
            .iter()
            .map(|&a| {
                let (az, el) = sphere.angles(a)?;
                Ok(ViewpointStop {
                    action: a,
                    azimuth: az.to_degrees(),
                    elevation: el.to_degrees(),
                })
            })
            .collect()
    }

    fn issue_pair(
        &mut self,
        iteration: usize,
        index: usize,
        l: &TrajectoryRecord,
        r: &TrajectoryRecord,
        labeler: Labeler,
    ) -> Result<String> {
        let pair_id = Self::pair_id(iteration, index);
        let (left, right) = (l.id.as_str(), r.id.as_str());
        let ticket = PairTicket {
            pair_id: pair_id.clone(),
            iteration,
            left: left.to_string(),
            right: right.to_string(),
            labeler,
            manifest: FrameManifest::turntable(
                left,
                right,
                self.config.turntable_frames,
                self.config.turntable_elevation_deg,
            )
            .with_order(self.capture_order(l)?, self.capture_order(r)?),
            issued_at: now_millis(),
            state: TicketState::Open,
        };
        self.labels.lock().issue(ticket)?;
        self.labels.notify();
        Ok(pair_id)
    }

    /// Labels every open oracle-assigned ticket of `iteration`; returns (labeled, skipped).
    fn oracle_label_round(&mut self, iteration: usize, scores: &mut HashMap<String, f64>) -> Result<(usize, usize)> {
        let open: Vec<(String, String, String)> = {
            let s = self.labels.lock();
            s.tickets()
                .iter()
                .filter(|t| t.iteration == iteration && t.state == TicketState::Open && t.labeler == Labeler::Oracle)
                .map(|t| (t.pair_id.clone(), t.left.clone(), t.right.clone()))
                .collect()
        };
        let (mut labeled, mut skipped) = (0, 0);
        for (pair_id, left, right) in open {
            let sl = self.score_of(&left, scores)?;
            let sr = self.score_of(&right, scores)?;
            match crate::oracle::oracle_label(sl, sr, self.config.oracle.delta) {
                Some(mu) => {
                    self.labels.label(&pair_id, u8::from(mu) as i64, Labeler::Oracle)?;
                    labeled += 1;
                }
                None => {
                    self.labels.lock().skip(&pair_id)?;
                    self.labels.notify();
                    skipped += 1;
                }
            }
        }
        Ok((labeled, skipped))
    }

    fn score_of(&self, id: &str, cache: &mut HashMap<String, f64>) -> Result<f64> {
        if let Some(s) = cache.get(id) {
            return Ok(*s);
        }
        let s = self.oracle()?.score(&load_reconstruction(&self.dir, id)?)?;
        cache.insert(id.to_string(), s);
        Ok(s)
    }

    /// One pass of collect, label, refit reward, train policy.
    pub fn run_iteration(&mut self) -> Result<IterationOutcome> {
        let it = self.state.iteration;
        let policy = self.policy()?;
        let quota = self.config.pairs_per_round();
        let mut scores = HashMap::new();

        let resuming = self.state.pending.as_ref().is_some_and(|p| p.iteration == it);
        if !resuming {
            self.state.phase = Phase::Collecting;
            self.save_state()?;
            let mut pair_ids = Vec::with_capacity(quota);
            for p in 0..quota {
                let l = self.collect_episode(&policy, it, 2 * p)?;
                let r = self.collect_episode(&policy, it, 2 * p + 1)?;
                let labeler = self.assigned_labeler(p);
                pair_ids.push(self.issue_pair(it, p, &l, &r, labeler)?);
            }
            self.state.pending = Some(PendingRound { iteration: it, pair_ids });
        }
        self.state.phase = Phase::Labeling;
        self.save_state()?;

        // the oracle replaces its skipped pairs with fresh ones, up to a cap
        self.oracle_label_round(it, &mut scores)?;
        let oracle_involved = self.config.labeler != LabelerMode::Human;
        if oracle_involved {
            loop {
                let c = self.labels.lock().iteration_counts(it);
                let extra = c.issued.saturating_sub(quota);
                if c.labeled + c.open >= quota || extra >= self.config.max_extra_pairs {
                    break;
                }
                let p = c.issued;
                let l = self.collect_episode(&policy, it, 2 * p)?;
                let r = self.collect_episode(&policy, it, 2 * p + 1)?;
                let id = self.issue_pair(it, p, &l, &r, Labeler::Oracle)?;
                if let Some(pending) = self.state.pending.as_mut() {
                    pending.pair_ids.push(id);
                }
                self.save_state()?;
                self.oracle_label_round(it, &mut scores)?;
            }
        }

        let timeout = Duration::from_secs(self.config.human_timeout_secs);
        let poll = Duration::from_millis(self.config.human_poll_ms.max(1));
        let done = self
            .labels
            .wait_until(timeout, poll, |s| s.iteration_counts(it).open == 0)?;
        if !done {
            self.state.phase = Phase::Suspended;
            self.save_state()?;
            let open_pairs = self.labels.lock().iteration_counts(it).open;
            return Ok(IterationOutcome::Suspended { iteration: it, open_pairs });
        }

        // reward model on all of D
        self.state.phase = Phase::TrainingReward;
        self.save_state()?;
        let dataset = self.dataset()?;
        let previous = self.reward_model()?;
        let mut training = train_reward_model(
            &dataset,
            &self.config.reward,
            self.config.features,
            self.env.action_count(),
            seed::derive(self.config.seed, "reward", it as u64),
            previous.as_ref(),
        )?;
        if self.config.norm_reference_episodes > 0 {
            let reference = self.norm_reference();
            training.model.fit_norm(&reference);
        }
        let reward_version = self.state.reward_version + 1;
        training
            .model
            .to_checkpoint(reward_version)
            .save(&self.reward_checkpoint_path(reward_version))?;
        append_jsonl(
            &self.dir.join("logs").join("reward_training.jsonl"),
            &RewardTrainingRecord {
                iteration: it,
                records: dataset.len(),
                version: reward_version,
                loss_curve: training.loss_curve.clone(),
            },
        )?;
        self.state.reward_version = reward_version;

        self.state.phase = Phase::TrainingPolicy;
        self.save_state()?;
        let trained = train_policy(
            &self.env,
            &training.model,
            &self.config.ppo,
            seed::derive(self.config.seed, "ppo", it as u64),
            self.config.ppo_updates_per_iteration,
            Some(policy),
        )?;
        let policy_version = self.state.policy_version + 1;
        trained
            .model
            .to_checkpoint(policy_version)
            .save(&self.policy_checkpoint_path(policy_version))?;
        let updates_path = self.dir.join("logs").join("updates.jsonl");
        for log in &trained.curve {
            append_jsonl(
                &updates_path,
                &UpdateRecord {
                    iteration: it,
                    global_update: self.state.total_updates + log.update,
                    log: log.clone(),
                },
            )?;
        }

        let round: Vec<&TrajectoryRecord> = self.trajectories.iter().filter(|t| t.iteration == it).collect();
        let mut score_sum = 0.0;
        for t in &round {
            score_sum += self.score_of(&t.id, &mut scores)?;
        }
        let c = self.labels.lock().iteration_counts(it);
        let summary = IterationSummary {
            iteration: it,
            episodes: round.len(),
            pairs: c.issued,
            labeled: c.labeled,
            skipped: c.skipped,
            epsilon: self.config.epsilon_at(it),
            mean_episode_path_length: round.iter().map(|t| t.path_length).sum::<f64>() / round.len().max(1) as f64,
            mean_oracle_score: (!round.is_empty()).then(|| score_sum / round.len() as f64),
            dataset_size: dataset.len(),
            reward_final_loss: training.loss_curve.last().copied().unwrap_or(f64::NAN),
            updates: trained.curve.len(),
            final_mean_reward: trained.curve.last().map_or(0.0, |l| l.mean_reward),
        };
        append_jsonl(&self.dir.join("logs").join("iterations.jsonl"), &summary)?;
        self.state.policy_version = policy_version;
        self.state.total_updates += trained.curve.len();
        self.state.iteration += 1;
        self.state.pending = None;
        self.state.phase = Phase::Idle;
        self.state.history.push(summary.clone());
        self.save_state()?;
        Ok(IterationOutcome::Completed(summary))
    }

    /// Runs `iterations` more iterations (default: up to the configured total).
    pub fn run(&mut self, iterations: Option<usize>) -> Result<Vec<IterationOutcome>> {
        let n = iterations.unwrap_or(self.config.iterations.saturating_sub(self.state.iteration));
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let o = self.run_iteration()?;
            let stop = matches!(o, IterationOutcome::Suspended { .. });
            out.push(o);
            if stop {
                break;
            }
        }
        Ok(out)
    }

    fn evaluate_actions(&self, start: usize, actions: &[usize]) -> Result<EpisodeEval> {
        let oracle = self.oracle()?;
        let recon = fuse(
            &self.env.captures_for(actions)?,
            self.scene.bounds,
            self.config.voxel_resolution,
        )?;
        let mut per_pose = Vec::with_capacity(oracle.eval_poses().len());
        for (k, ((pose, reference), mask)) in oracle
            .eval_poses()
            .iter()
            .zip(oracle.references())
            .zip(oracle.masks())
            .enumerate()
        {
            let img = render_voxels(&recon, pose, &self.config.intrinsics, &self.scene.light)?;
            per_pose.push(PoseMetrics::compute(k, reference, &img, mask)?);
        }
        Ok(EpisodeEval {
            start,
            actions: actions.to_vec(),
            oracle_score: oracle.score(&recon)?,
            report: MetricReport::from_poses(per_pose, self.env.path_length(start, actions)),
        })
    }

    /// Greedy episodes of the current policy against uniform-random episodes from the same starts.
    ///
    /// Before any training the policy arm replays the random arm exactly.
    pub fn evaluate(&self, episodes: usize) -> Result<EvaluationReport> {
        let trained = self.state.policy_version > 0;
        let policy = self.policy()?;
        let mut learned = Vec::with_capacity(episodes);
        let mut random = Vec::with_capacity(episodes);
        for e in 0..episodes as u64 {
            let start = self.env.sample_start(&mut seed::rng(self.config.seed, "eval-start", e));
            let mut rng = seed::rng(self.config.seed, "eval-random", e);
            let rand_actions = run_episode(&self.env, &policy, start, ActionMode::Uniform, &mut rng);
            let rand_eval = self.evaluate_actions(start, &rand_actions)?;
            if trained {
                let mut unused = seed::rng(self.config.seed, "eval-policy", e);
                let actions = run_episode(&self.env, &policy, start, ActionMode::Greedy, &mut unused);
                learned.push(self.evaluate_actions(start, &actions)?);
            } else {
                learned.push(rand_eval.clone());
            }
            random.push(rand_eval);
        }
        Ok(EvaluationReport {
            policy_version: self.state.policy_version,
            policy: ArmReport::from_episodes(learned),
            random: ArmReport::from_episodes(random),
        })
    }

    /// Evaluates and writes `reports/evaluation.json`.
    pub fn evaluate_and_save(&self) -> Result<EvaluationReport> {
        let report = self.evaluate(self.config.eval_episodes)?;
        write_json(&self.dir.join("reports").join("evaluation.json"), &report)?;
        Ok(report)
    }

    pub fn update_log(&self) -> Result<Vec<UpdateRecord>> {
        read_jsonl(&self.dir.join("logs").join("updates.jsonl"))
    }

    /// Writes CSV and JSON reports plus eval-pose frames; re-exporting gives identical bytes.
    pub fn export_report(&self) -> Result<Vec<PathBuf>> {
        if self.state.iteration == 0 {
            return Err(Error::State("no completed iteration to report".into()));
        }
        let reports = self.dir.join("reports");
        let mut written = Vec::new();
        let csv_err = |e: csv::Error| Error::Data(format!("csv: {e}"));

        let updates = self.update_log()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "iteration",
            "update",
            "global_update",
            "mean_reward",
            "mean_path_length",
            "episodes",
            "policy_loss",
            "value_loss",
            "entropy",
            "clip_fraction",
        ])
        .map_err(csv_err)?;
        for u in &updates {
            let s = &u.log.stats;
            w.write_record([
                u.iteration.to_string(),
                u.log.update.to_string(),
                u.global_update.to_string(),
                u.log.mean_reward.to_string(),
                u.log.mean_path_length.to_string(),
                u.log.episodes.to_string(),
                s.policy_loss.to_string(),
                s.value_loss.to_string(),
                s.entropy.to_string(),
                s.clip_fraction.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let p = reports.join("reward_curve.csv");
        write_atomic(&p, &w.into_inner().map_err(|e| Error::Data(e.to_string()))?)?;
        written.push(p);

        let eval = self.evaluate_and_save()?;
        written.push(reports.join("evaluation.json"));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["episode", "start", "policy_path_length", "random_path_length"])
            .map_err(csv_err)?;
        for (k, (a, b)) in eval.policy.episodes.iter().zip(&eval.random.episodes).enumerate() {
            w.write_record([
                k.to_string(),
                a.start.to_string(),
                a.report.path_length.to_string(),
                b.report.path_length.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let p = reports.join("path_length.csv");
        write_atomic(&p, &w.into_inner().map_err(|e| Error::Data(e.to_string()))?)?;
        written.push(p);

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "psnr",
            "ssim",
            "masked_psnr",
            "masked_ssim",
            "lpips",
            "path_length",
            "oracle_score",
        ])
        .map_err(csv_err)?;
        for (name, arm) in [("learned", &eval.policy), ("random", &eval.random)] {
            w.write_record([
                name.to_string(),
                arm.psnr.0.to_string(),
                arm.ssim.to_string(),
                arm.masked_psnr.0.to_string(),
                arm.masked_ssim.to_string(),
                String::new(),
                arm.path_length.to_string(),
                arm.oracle_score.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let p = reports.join("metrics.csv");
        write_atomic(&p, &w.into_inner().map_err(|e| Error::Data(e.to_string()))?)?;
        written.push(p);

        #[derive(Serialize)]
        struct IterationCounts {
            iteration: usize,
            trajectories: usize,
            pairs: usize,
            records: usize,
            skipped: usize,
            updates: usize,
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            seed: u64,
            iterations_completed: usize,
            preference_lines: usize,
            pair_lines: usize,
            trajectory_lines: usize,
            update_lines: usize,
            per_iteration: Vec<IterationCounts>,
            policy: &'a ArmReportSummary,
            random: &'a ArmReportSummary,
        }
        let store = self.labels.lock();
        let mut per_iteration: BTreeMap<usize, IterationCounts> = BTreeMap::new();
        for i in 0..self.state.iteration {
            let c = store.iteration_counts(i);
            per_iteration.insert(
                i,
                IterationCounts {
                    iteration: i,
                    trajectories: self.trajectories.iter().filter(|t| t.iteration == i).count(),
                    pairs: c.issued,
                    records: c.labeled,
                    skipped: c.skipped,
                    updates: updates.iter().filter(|u| u.iteration == i).count(),
                },
            );
        }
        let summary = Summary {
            seed: self.config.seed,
            iterations_completed: self.state.iteration,
            preference_lines: store.records().len(),
            pair_lines: store.tickets().len(),
            trajectory_lines: self.trajectories.len(),
            update_lines: updates.len(),
            per_iteration: per_iteration.into_values().collect(),
            policy: &ArmReportSummary::of(&eval.policy),
            random: &ArmReportSummary::of(&eval.random),
        };
        drop(store);
        let p = reports.join("summary.json");
        write_json(&p, &summary)?;
        written.push(p);

        // reference and reconstructed views at the eval poses for the first episode
        let oracle = self.oracle()?;
        let frames = self.dir.join("frames");
        for (arm, name) in [(&eval.policy, "policy"), (&eval.random, "random")] {
            let Some(ep) = arm.episodes.first() else { continue };
            let recon = fuse(
                &self.env.captures_for(&ep.actions)?,
                self.scene.bounds,
                self.config.voxel_resolution,
            )?;
            for (k, pose) in oracle.eval_poses().iter().enumerate() {
                let img = render_voxels(&recon, pose, &self.config.intrinsics, &self.scene.light)?;
                let p = frames.join(format!("eval-{name}-{k:02}.png"));
                write_frame(&p, &img)?;
                written.push(p);
            }
        }
        for (k, reference) in oracle.references().iter().enumerate() {
            let p = frames.join(format!("eval-reference-{k:02}.png"));
            write_frame(&p, reference)?;
            written.push(p);
        }
        Ok(written)
    }
}

#[derive(Debug, Clone, Serialize)]
struct ArmReportSummary {
    psnr: Db,
    ssim: f64,
    masked_psnr: Db,
    masked_ssim: f64,
    path_length: f64,
    oracle_score: f64,
}

impl ArmReportSummary {
    fn of(a: &ArmReport) -> Self {
        Self {
            psnr: a.psnr,
            ssim: a.ssim,
            masked_psnr: a.masked_psnr,
            masked_ssim: a.masked_ssim,
            path_length: a.path_length,
            oracle_score: a.oracle_score,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_roundtrips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seed": 11, "iterations": 2}"#).unwrap();
        assert_eq!(partial.seed, 11);
        assert_eq!(partial.reconstructions_per_round, 40);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sead": 1}"#).is_err());
    }

    #[test]
    fn config_invariants() {
        let odd = ExperimentConfig {
            reconstructions_per_round: 7,
            ..Default::default()
        };
        assert!(matches!(odd.validate(), Err(Error::Config(_))));
        let zero = ExperimentConfig {
            captures_per_reconstruction: 0,
            ..Default::default()
        };
        assert!(zero.validate().is_err());
        let mismatch = ExperimentConfig {
            captures_per_reconstruction: 5,
            ..Default::default()
        };
        assert!(mismatch.validate().is_err());
    }

    #[test]
    fn epsilon_decays_geometrically() {
        let c = ExperimentConfig::default();
        assert_eq!(c.epsilon_at(0), 0.2);
        assert!((c.epsilon_at(2) - 0.2 * 0.64).abs() < 1e-15);
    }

    #[test]
    fn ids_are_checked() {
        assert!(is_valid_id("it00-ep001"));
        assert!(!is_valid_id("../config"));
        assert!(!is_valid_id(""));
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let a = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(DirLock::acquire(dir.path()), Err(Error::Locked(_))));
        drop(a);
        DirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn orbit_floor_keeps_camera_outside() {
        let sphere = ViewSphere::default();
        let scene = build_scene(1, &SceneConfig::default()).unwrap();
        let r = orbit_radius_floor(&sphere, &scene.bounds);
        for k in 0..16 {
            let pose = sphere.orbit_pose(k as f64 * 0.4, (k as f64 * 0.37).sin(), r);
            assert!(!scene.bounds.contains(pose.position));
        }
    }
}
