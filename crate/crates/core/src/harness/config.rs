use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dense::SgmConfig;
use crate::error::{Error, Result};
use crate::matching::{DetectorConfig, MatchConfig, BASELINE_METHOD};
use crate::orientation::{LsmConfig, OrientationConfig};
use crate::pairs::SelectionConfig;

/// Suffix of the method label of LSM-refined runs.
pub const LSM_SUFFIX: &str = "+lsm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LsmMode {
    #[default]
    Off,
    On,
    /// Run every method with and without refinement.
    Both,
}

impl LsmMode {
    pub fn variants(self) -> &'static [bool] {
        match self {
            LsmMode::Off => &[false],
            LsmMode::On => &[true],
            LsmMode::Both => &[false, true],
        }
    }
}

pub fn method_label(method: &str, lsm: bool) -> String {
    if lsm {
        format!("{method}{LSM_SUFFIX}")
    } else {
        method.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Tile manifest.
    pub manifest: PathBuf,
    /// `sift` runs the built-in matcher; any other name is read from
    /// `<matches_dir>/<method>/<pair_id>.csv`.
    pub methods: Vec<String>,
    pub matches_dir: Option<PathBuf>,
    pub selection: SelectionConfig,
    pub detector: DetectorConfig,
    pub matching: MatchConfig,
    pub orientation: OrientationConfig,
    pub lsm: LsmMode,
    pub lsm_config: LsmConfig,
    pub dense: bool,
    pub sgm: SgmConfig,
    /// Height range of the dense search; defaults to the reference DSM's
    /// range, or the RPC validity range without one.
    pub height_range: Option<[f64; 2]>,
    /// DSM cell size when no reference DSM fixes the grid; defaults to the
    /// first image's GSD.
    pub cell_size: Option<f64>,
    pub output: PathBuf,
    pub run_id: String,
    pub workers: usize,
    pub seed: u64,
    /// Recompute tasks whose outputs already exist.
    #[serde(skip)]
    pub force: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.json"),
            methods: vec![BASELINE_METHOD.to_string()],
            matches_dir: None,
            selection: SelectionConfig::default(),
            detector: DetectorConfig::default(),
            matching: MatchConfig::default(),
            orientation: OrientationConfig::default(),
            lsm: LsmMode::Off,
            lsm_config: LsmConfig::default(),
            dense: true,
            sgm: SgmConfig::default(),
            height_range: None,
            cell_size: None,
            output: PathBuf::from("runs"),
            run_id: "default".into(),
            workers: 1,
            seed: 0,
            force: false,
        }
    }
}

impl RunConfig {
    /// Reads JSON or TOML (by extension). Relative paths are resolved
    /// against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let mut cfg: RunConfig = if is_toml {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.manifest);
        resolve(&mut cfg.output);
        if let Some(p) = cfg.matches_dir.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        for m in &self.methods {
            let bad = m.is_empty()
                || m.ends_with(LSM_SUFFIX)
                || m.contains(['/', '\\'])
                || m.starts_with('.');
            if bad {
                return Err(Error::Config(format!("invalid method name {m:?}")));
            }
            if m != BASELINE_METHOD && self.matches_dir.is_none() {
                return Err(Error::Config(format!(
                    "method {m:?} needs imported matches but no matches_dir is set"
                )));
            }
        }
        if self.workers < 1 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid run id {:?}", self.run_id)));
        }
        if let Some([lo, hi]) = self.height_range {
            if !(lo < hi) {
                return Err(Error::Config(format!("height range [{lo}, {hi}] is empty")));
            }
        }
        if let Some(c) = self.cell_size {
            if !(c > 0.0) {
                return Err(Error::Config(format!("cell size {c} must be positive")));
            }
        }
        self.selection.validate()?;
        self.orientation.validate()?;
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output.join(&self.run_id)
    }

    /// Short digest of the settings that affect outputs.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.workers = 1;
        c.output = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes())[..8])
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed of one stage of one task: the first eight bytes (little endian) of
/// `sha256(run_seed_le || stage || 0x00 || key)`.
pub fn stage_seed(run_seed: u64, stage: &str, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(stage.as_bytes());
    h.update([0u8]);
    h.update(key.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}
