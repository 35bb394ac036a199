//! Run configuration, run directories and the command implementations
//! behind the `saliq` binary.
//!
//! A training run lives in `<out>/<run-id>/` and holds `manifest.json`,
//! `config.json`, `checkpoint.saq`, `history.csv`, `curves/` and
//! `saliency/`. The manifest is written last and atomically, so a directory
//! without one is an unfinished run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, Source, Split, IMAGE_SIDE};
use crate::error::{CheckpointError, Error, Result};
use crate::model::checkpoint::Checkpoint;
use crate::model::flops::count_flops;
use crate::model::{Architecture, BitConfig, CnnModel};
use crate::rng;
use crate::saliency::{self, DegradationCurve, DegradeOptions};
use crate::train::{self, EpochRecord, RankMode, SaliencyTarget, SgtConfig, TrainHistory, TrainMode};

/// Environment variable consulted when no data directory is given.
pub const DATA_DIR_ENV: &str = "SALIQ_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data";
pub const DEFAULT_OUT_DIR: &str = "out";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.saq";
pub const HISTORY_FILE: &str = "history.csv";

/// Exit status for each error class.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) | Error::Config(_) | Error::Json { .. } | Error::Checkpoint(_) => 2,
        Error::Idx(_) => 3,
        Error::NonFiniteLoss { .. } => 4,
        _ => 1,
    }
}

mod bits_text {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::model::BitConfig;

    pub fn serialize<S: Serializer>(bits: &BitConfig, s: S) -> Result<S::Ok, S::Error> {
        match (bits.layer1, bits.layer2) {
            (Some(a), Some(b)) => s.serialize_str(&format!("{},{}", a.get(), b.get())),
            _ => s.serialize_str("regular"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BitConfig, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }

    pub mod opt {
        use super::*;

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<BitConfig>, D::Error> {
            Option::<String>::deserialize(d)?
                .map(|t| t.parse().map_err(serde::de::Error::custom))
                .transpose()
        }
    }
}

/// Fully resolved training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Source,
    #[serde(with = "bits_text")]
    pub bits: BitConfig,
    pub k: usize,
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub target: SaliencyTarget,
    pub rank: RankMode,
    pub mode: TrainMode,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub deterministic: bool,
    /// Keep only the first `n` training images.
    pub train_limit: Option<usize>,
    /// Keep only the first `n` test images.
    pub test_limit: Option<usize>,
    pub run_id: Option<String>,
}

/// Partial configuration as read from a JSON file or assembled from flags.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub dataset: Option<Source>,
    #[serde(default, deserialize_with = "bits_text::opt::deserialize")]
    pub bits: Option<BitConfig>,
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub target: Option<SaliencyTarget>,
    pub rank: Option<RankMode>,
    pub mode: Option<TrainMode>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub deterministic: Option<bool>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub run_id: Option<String>,
}

impl ConfigOverrides {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json {
            context: format!("parsing run config {origin}"),
            source,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Fields set in `self` win over those in `base`.
    pub fn over(self, base: Self) -> Self {
        Self {
            dataset: self.dataset.or(base.dataset),
            bits: self.bits.or(base.bits),
            k: self.k.or(base.k),
            lambda: self.lambda.or(base.lambda),
            lr: self.lr.or(base.lr),
            batch_size: self.batch_size.or(base.batch_size),
            epochs: self.epochs.or(base.epochs),
            seed: self.seed.or(base.seed),
            target: self.target.or(base.target),
            rank: self.rank.or(base.rank),
            mode: self.mode.or(base.mode),
            data_dir: self.data_dir.or(base.data_dir),
            out_dir: self.out_dir.or(base.out_dir),
            deterministic: self.deterministic.or(base.deterministic),
            train_limit: self.train_limit.or(base.train_limit),
            test_limit: self.test_limit.or(base.test_limit),
            run_id: self.run_id.or(base.run_id),
        }
    }

    /// Fills the gaps: dataset-specific training defaults, then the data
    /// directory from [`DATA_DIR_ENV`], then built-in paths.
    pub fn resolve(self) -> Result<RunConfig> {
        let dataset = self.dataset.unwrap_or(Source::Mnist);
        let bits = self.bits.unwrap_or(BitConfig::REGULAR);
        let d = SgtConfig::defaults_for(dataset, bits);
        let data_dir = self
            .data_dir
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR));
        let cfg = RunConfig {
            dataset,
            bits,
            k: self.k.unwrap_or(d.k),
            lambda: self.lambda.unwrap_or(d.lambda),
            lr: self.lr.unwrap_or(d.lr),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            seed: self.seed.unwrap_or(d.seed),
            target: self.target.unwrap_or(d.target),
            rank: self.rank.unwrap_or(d.rank),
            mode: self.mode.unwrap_or(d.mode),
            data_dir,
            out_dir: self.out_dir.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
            deterministic: self.deterministic.unwrap_or(false),
            train_limit: self.train_limit,
            test_limit: self.test_limit,
            run_id: self.run_id,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn sgt(&self) -> SgtConfig {
        SgtConfig {
            k: self.k,
            lambda: self.lambda,
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            bits: self.bits,
            target: self.target,
            rank: self.rank,
            mode: self.mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sgt().validate()?;
        if let Some(id) = &self.run_id {
            if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
                return Err(Error::Config(format!("run id {id:?} is not a plain directory name")));
            }
        }
        if self.train_limit == Some(0) || self.test_limit == Some(0) {
            return Err(Error::Config("limits must be positive".into()));
        }
        Ok(())
    }

    /// `<dataset>-<bits>-s<seed>`, with `-plain` for cross-entropy-only runs.
    pub fn run_id(&self) -> String {
        if let Some(id) = &self.run_id {
            return id.clone();
        }
        let mut id = format!("{}-{}-s{}", self.dataset, self.bits.slug(), self.seed);
        if self.mode == TrainMode::Plain {
            id.push_str("-plain");
        }
        id
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(self.run_id())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn load_split(&self, split: Split) -> Result<Dataset> {
        let ds = Dataset::load(&self.data_dir, self.dataset, split)?;
        Ok(match (split, self.train_limit, self.test_limit) {
            (Split::Train, Some(n), _) | (Split::Test, _, Some(n)) => ds.truncate(n),
            _ => ds,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub epochs: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub ce_loss: f64,
    pub kl_loss: f64,
    pub first_epoch_kl: f64,
    pub train_images: usize,
    pub test_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub run_id: String,
    pub config: RunConfig,
    /// File name relative to the run directory → SHA-256 hex digest.
    pub artifacts: BTreeMap<String, String>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub epoch_seconds: Vec<f64>,
    pub metrics: FinalMetrics,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            context: format!("parsing {}", path.display()),
            source,
        })
    }

    /// Recomputes every artifact digest and reports the first mismatch.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        for (name, digest) in &self.artifacts {
            let actual = sha256_file(&run_dir.join(name))?;
            if &actual != digest {
                return Err(Error::Input(format!("{name}: checksum mismatch")));
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(sha256_hex(&bytes))
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming onto {}", path.display()), e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

/// What `cmd_train` produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub history: TrainHistory,
    pub manifest: RunManifest,
    pub model: CnnModel<f32>,
}

/// Trains one configuration and writes its run directory. Any existing
/// manifest is removed first, so an interrupted rerun never looks complete.
pub fn cmd_train(cfg: &RunConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let train_set = cfg.load_split(Split::Train)?;
    let test_set = cfg.load_split(Split::Test)?;

    let run_dir = cfg.run_dir();
    create_dir(&run_dir)?;
    let manifest_path = run_dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path).map_err(|e| Error::io(format!("removing {}", manifest_path.display()), e))?;
    }
    for sub in ["curves", "saliency"] {
        create_dir(&run_dir.join(sub))?;
    }
    fs::write(run_dir.join(CONFIG_FILE), cfg.to_json()).map_err(|e| Error::io("writing config.json", e))?;

    let sgt = cfg.sgt();
    let mut model = CnnModel::new(Architecture::STANDARD, cfg.bits, &mut rng::stream(cfg.seed, rng::INIT));
    let history = train::train(&mut model, &train_set, &test_set, &sgt, on_epoch)?;

    let checkpoint = Checkpoint {
        model: model.clone(),
        seed: cfg.seed,
        epochs: cfg.epochs as u32,
    };
    checkpoint.save(&run_dir.join(CHECKPOINT_FILE))?;
    write_atomic(&run_dir.join(HISTORY_FILE), history.to_csv(cfg.deterministic).as_bytes())?;

    let mut artifacts = BTreeMap::new();
    for name in [CONFIG_FILE, CHECKPOINT_FILE, HISTORY_FILE] {
        artifacts.insert(name.to_string(), sha256_file(&run_dir.join(name))?);
    }
    let last = history.last().cloned().unwrap_or(EpochRecord {
        epoch: 0,
        ce_loss: 0.0,
        kl_loss: 0.0,
        combined_loss: 0.0,
        train_acc: 0.0,
        test_acc: train::evaluate(&model, &test_set)?,
        seconds: 0.0,
    });
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        run_id: cfg.run_id(),
        config: cfg.clone(),
        artifacts,
        started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        epoch_seconds: history.records.iter().map(|r| r.seconds).collect(),
        metrics: FinalMetrics {
            epochs: history.records.len(),
            train_acc: last.train_acc,
            test_acc: last.test_acc,
            ce_loss: last.ce_loss,
            kl_loss: last.kl_loss,
            first_epoch_kl: history.records.first().map_or(0.0, |r| r.kl_loss),
            train_images: train_set.len(),
            test_images: test_set.len(),
        },
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_atomic(&manifest_path, json.as_bytes())?;
    Ok(TrainOutcome {
        run_dir,
        history,
        manifest,
        model,
    })
}

/// Loads a checkpoint, mapping a missing file to the checkpoint error class.
pub fn load_model(path: &Path) -> Result<CnnModel<f32>> {
    Ok(Checkpoint::load(path)?.model)
}

/// Dataset recorded next to a checkpoint inside a run directory, if any.
pub fn sibling_dataset(checkpoint: &Path) -> Option<Source> {
    let cfg = checkpoint.parent()?.join(CONFIG_FILE);
    let text = fs::read_to_string(cfg).ok()?;
    serde_json::from_str::<RunConfig>(&text).ok().map(|c| c.dataset)
}

/// Options shared by the evaluation-side commands.
#[derive(Debug, Clone)]
pub struct EvalSource {
    pub data_dir: PathBuf,
    pub dataset: Source,
    pub limit: Option<usize>,
}

impl EvalSource {
    pub fn test_set(&self) -> Result<Dataset> {
        let ds = Dataset::load(&self.data_dir, self.dataset, Split::Test)?;
        Ok(match self.limit {
            Some(n) => ds.truncate(n),
            None => ds,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub images: usize,
    pub bits: String,
}

pub fn cmd_eval(checkpoint: &Path, source: &EvalSource) -> Result<EvalReport> {
    let model = load_model(checkpoint)?;
    let test = source.test_set()?;
    Ok(EvalReport {
        accuracy: train::evaluate(&model, &test)?,
        images: test.len(),
        bits: model.bits().to_string(),
    })
}

/// Writes `image-<i>.pgm`, `saliency-<i>.pgm` and `masked-<i>.pgm` for each
/// test index, with saliency taken for the true label.
pub fn cmd_saliency(
    checkpoint: &Path,
    source: &EvalSource,
    indices: &[usize],
    threshold: f64,
    out_dir: &Path,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Usage(format!("threshold {threshold} outside [0, 1]")));
    }
    let model = load_model(checkpoint)?;
    let test = source.test_set()?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= test.len()) {
        return Err(Error::Usage(format!("image index {bad} out of range for {} test images", test.len())));
    }
    create_dir(out_dir)?;
    let mut written = Vec::with_capacity(3 * indices.len());
    for &i in indices {
        let x = test.image(i);
        let target = test.labels[i] as usize;
        let map = saliency::saliency_map(&model, &x, target, i)?;
        let masked = saliency::visualize_masked(x.data(), &map, threshold, &mut rng::stream(seed, rng::VISUALIZE + i as u64))?;
        for (name, values) in [("image", x.data()), ("saliency", &map.values[..]), ("masked", &masked[..])] {
            let path = out_dir.join(format!("{name}-{i}.pgm"));
            saliency::write_pgm(&path, values, IMAGE_SIDE, IMAGE_SIDE)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Model id for a checkpoint: its run directory name, else its file stem.
pub fn model_id(checkpoint: &Path) -> String {
    let from_dir = checkpoint
        .file_name()
        .filter(|n| *n == CHECKPOINT_FILE)
        .and(checkpoint.parent())
        .and_then(|p| p.file_name());
    from_dir
        .or_else(|| checkpoint.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

#[derive(Debug, Clone)]
pub struct DegradeOutcome {
    pub curves: Vec<DegradationCurve>,
    pub files: Vec<PathBuf>,
}

/// One curve CSV per checkpoint plus `combined.csv`, all under `out_dir`.
pub fn cmd_degrade(
    checkpoints: &[PathBuf],
    source: &EvalSource,
    fractions: &[f64],
    seed: u64,
    out_dir: &Path,
) -> Result<DegradeOutcome> {
    if checkpoints.is_empty() {
        return Err(Error::Usage("degrade needs at least one checkpoint".into()));
    }
    let models = checkpoints.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
    let test = source.test_set()?;
    create_dir(out_dir)?;
    let mut ids: Vec<String> = Vec::new();
    for p in checkpoints {
        let base = model_id(p);
        let mut id = base.clone();
        let mut n = 2;
        while ids.contains(&id) {
            id = format!("{base}-{n}");
            n += 1;
        }
        ids.push(id);
    }
    let mut curves = Vec::new();
    let mut files = Vec::new();
    for (model, id) in models.iter().zip(ids) {
        let opts = DegradeOptions {
            seed,
            target: SaliencyTarget::True,
            model_id: id.clone(),
        };
        let curve = saliency::degradation_curve(model, &test, fractions, &opts)?;
        let path = out_dir.join(format!("{id}.csv"));
        write_atomic(&path, curve.to_csv().as_bytes())?;
        files.push(path);
        curves.push(curve);
    }
    let path = out_dir.join("combined.csv");
    write_atomic(&path, saliency::combined_csv(&curves)?.as_bytes())?;
    files.push(path);
    Ok(DegradeOutcome { curves, files })
}

/// Per-layer FLOPs table, one row per configuration.
pub fn flops_csv(configs: &[BitConfig]) -> String {
    let arch = Architecture::STANDARD;
    let mut out = String::from("config,conv1,conv2,fc1,fc2,total\n");
    for &bits in configs {
        let r = count_flops(&arch, bits);
        let cell = |name: &str| format_flops(r.layer(name).map_or(0.0, |l| l.scaled));
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            bits.slug(),
            cell("conv1"),
            cell("conv2"),
            cell("fc1"),
            cell("fc2"),
            format_flops(r.total)
        ));
    }
    out
}

/// Integers print without a fraction; scaled counts keep full precision.
fn format_flops(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

/// `total(regular) / total(2,2)` for the standard network.
pub fn regular_to_lowest_ratio() -> f64 {
    let arch = Architecture::STANDARD;
    count_flops(&arch, BitConfig::REGULAR).total / count_flops(&arch, BitConfig::quantized(2, 2).unwrap()).total
}

/// Distinguishes a missing checkpoint from other load failures in messages.
pub fn describe(err: &Error) -> String {
    match err {
        Error::Checkpoint(CheckpointError::Io { path, source }) if source.kind() == std::io::ErrorKind::NotFound => {
            format!("checkpoint not found: {}", path.display())
        }
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file = ConfigOverrides::from_json(r#"{"dataset":"fashion","epochs":3,"bits":"4,2","data_dir":"/d"}"#, "test").unwrap();
        let flags = ConfigOverrides {
            epochs: Some(1),
            ..Default::default()
        };
        let cfg = flags.over(file).resolve().unwrap();
        assert_eq!(cfg.epochs, 1);
        assert_eq!(cfg.dataset, Source::Fashion);
        assert_eq!(cfg.batch_size, 128);
        assert_eq!(cfg.bits, BitConfig::quantized(4, 2).unwrap());
        assert_eq!(cfg.data_dir, PathBuf::from("/d"));
        assert_eq!(cfg.run_id(), "fashion-q4x2-s0");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ConfigOverrides::from_json(r#"{"epoch":3}"#, "test").unwrap_err();
        assert_eq!(exit_code(&err), 2);
        assert!(ConfigOverrides::from_json(r#"{"bits":"3x"}"#, "test").is_err());
    }

    #[test]
    fn resolved_config_reloads_identically() {
        let cfg = ConfigOverrides {
            bits: Some(BitConfig::quantized(2, 2).unwrap()),
            seed: Some(5),
            data_dir: Some("x".into()),
            ..Default::default()
        }
        .resolve()
        .unwrap();
        let again = ConfigOverrides::from_json(&cfg.to_json(), "snapshot").unwrap().resolve().unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn invalid_values_fail_validation() {
        for json in [r#"{"k":900}"#, r#"{"lr":-1}"#, r#"{"run_id":"../x"}"#, r#"{"train_limit":0}"#] {
            let err = ConfigOverrides::from_json(json, "t").unwrap().resolve().unwrap_err();
            assert_eq!(exit_code(&err), 2, "{json}");
        }
    }

    #[test]
    fn flops_table_rows() {
        let csv = flops_csv(&BitConfig::all_presets());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "regular,225792,14450688,6422528,1280,21100288");
        assert!(lines.iter().any(|l| l.starts_with("q2x2,14112,903168,")));
    }

    #[test]
    fn model_ids() {
        assert_eq!(model_id(Path::new("out/mnist-q4x4-s1/checkpoint.saq")), "mnist-q4x4-s1");
        assert_eq!(model_id(Path::new("models/best.saq")), "best");
    }

    #[test]
    fn digest_is_hex_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
