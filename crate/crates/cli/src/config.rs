//! TOML run configuration with command-line overrides.

use std::path::{Path, PathBuf};

use flamesense_core::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub image_size: usize,
    pub duration_s: f64,
    pub frame_rate_hz: f64,
    pub lambda_rate_hz: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub noise_sigma: f64,
    pub reference_frames: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let rig = flamesense_core::synth::RigConfig::default();
        Self {
            image_size: rig.image_size,
            duration_s: rig.duration_s,
            frame_rate_hz: rig.frame_rate_hz,
            lambda_rate_hz: rig.lambda_rate_hz,
            lambda_min: rig.lambda_range.0,
            lambda_max: rig.lambda_range.1,
            noise_sigma: rig.noise_sigma,
            reference_frames: 22,
        }
    }
}

/// Every key is optional. Relative paths are resolved against the directory
/// of the configuration file (the working directory when there is none).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Session directory written by `synth` and read by `sync` and `fit-model`.
    pub session_dir: PathBuf,
    /// Defaults to `<session_dir>/frame_index.csv`.
    pub frame_index: Option<PathBuf>,
    /// Defaults to `<session_dir>/lambda_log.csv`.
    pub lambda_log: Option<PathBuf>,
    /// Defaults to `<session_dir>/reference.csv`.
    pub reference_index: Option<PathBuf>,
    /// Defaults to `<session_dir>/manifest.csv`.
    pub manifest: Option<PathBuf>,
    pub ideal_model: PathBuf,
    pub features: PathBuf,
    pub model: PathBuf,
    pub predictions: PathBuf,
    pub results_dir: PathBuf,
    pub method: String,
    pub channels: String,
    pub grid: [usize; 2],
    /// Mixture weight grid point as `<swept channel><b>`, e.g. `G5`.
    pub gmm_weights: Option<String>,
    pub trainer: String,
    pub runs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Method list for `evaluate`, entries like `sumsim:R-G-B` or `cooc64`.
    pub methods: Vec<String>,
    pub trainers: Vec<String>,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            session_dir: "session".into(),
            frame_index: None,
            lambda_log: None,
            reference_index: None,
            manifest: None,
            ideal_model: "ideal_model.txt".into(),
            features: "features.tsv".into(),
            model: "model.txt".into(),
            predictions: "predictions.tsv".into(),
            results_dir: "results".into(),
            method: "sumsim".into(),
            channels: "R-G-B".into(),
            grid: [16, 16],
            gmm_weights: None,
            trainer: "scg".into(),
            runs: 10,
            max_epochs: 1000,
            patience: 6,
            methods: Vec::new(),
            trainers: Vec::new(),
            synth: SynthSection::default(),
        }
    }
}

/// Flag values that override configuration keys.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<String>,
    pub channels: Option<String>,
    pub trainer: Option<String>,
    pub runs: Option<usize>,
    /// Generic `key=value` overrides; dotted keys address sections.
    pub set: Vec<String>,
}

/// A configuration together with the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub cfg: RunConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn session_file(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        match explicit {
            Some(p) => self.path(p),
            None => self.path(&self.cfg.session_dir).join(name),
        }
    }

    pub fn frame_index(&self) -> PathBuf {
        self.session_file(&self.cfg.frame_index, flamesense_core::synth::layout::FRAME_INDEX)
    }

    pub fn lambda_log(&self) -> PathBuf {
        self.session_file(&self.cfg.lambda_log, flamesense_core::synth::layout::LAMBDA_LOG)
    }

    pub fn reference_index(&self) -> PathBuf {
        self.session_file(
            &self.cfg.reference_index,
            flamesense_core::synth::layout::REFERENCE_INDEX,
        )
    }

    pub fn manifest(&self) -> PathBuf {
        self.session_file(&self.cfg.manifest, "manifest.csv")
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| Error::ConfigInvalid(format!("empty key in {key:?}")))?;
    let mut t = table;
    for p in parts {
        t = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::ConfigInvalid(format!("{p} is not a section")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

/// Parses a `--set` value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub fn load(config: Option<&Path>, o: &Overrides) -> Result<Loaded> {
    let (mut table, base) = match config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
            let table: toml::Table = text
                .parse()
                .map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (table, base)
        }
        None => (toml::Table::new(), PathBuf::new()),
    };
    for item in &o.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::ConfigInvalid(format!("--set expects KEY=VALUE, got {item:?}")))?;
        set_dotted(&mut table, k.trim(), parse_value(v.trim()))?;
    }
    if let Some(seed) = o.seed {
        let seed = i64::try_from(seed).map_err(|_| Error::ConfigInvalid("seed must fit in 63 bits".into()))?;
        table.insert("seed".into(), toml::Value::Integer(seed));
    }
    for (key, v) in [
        ("method", &o.method),
        ("channels", &o.channels),
        ("trainer", &o.trainer),
    ] {
        if let Some(v) = v {
            table.insert(key.into(), toml::Value::String(v.clone()));
        }
    }
    if let Some(runs) = o.runs {
        table.insert("runs".into(), toml::Value::Integer(runs as i64));
    }
    let cfg: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::ConfigInvalid(e.message().to_string()))?;
    Ok(Loaded { cfg, base })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_without_a_file() {
        let l = load(None, &Overrides::default()).unwrap();
        assert_eq!(l.cfg, RunConfig::default());
        assert_eq!(l.manifest(), PathBuf::from("session/manifest.csv"));
    }

    #[test]
    fn file_keys_flags_and_set_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 4\nmethod = \"mvn\"\n[synth]\nimage_size = 64\n").unwrap();
        let o = Overrides {
            seed: Some(9),
            set: vec!["synth.noise_sigma=0".into(), "features=f.tsv".into(), "runs=3".into()],
            ..Overrides::default()
        };
        let l = load(Some(&path), &o).unwrap();
        assert_eq!(l.cfg.seed, 9);
        assert_eq!(l.cfg.method, "mvn");
        assert_eq!(l.cfg.synth.image_size, 64);
        assert_eq!(l.cfg.synth.noise_sigma, 0.0);
        assert_eq!(l.cfg.runs, 3);
        assert_eq!(l.path(&l.cfg.features), dir.path().join("f.tsv"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "sede = 4\n").unwrap();
        assert!(matches!(
            load(Some(&path), &Overrides::default()),
            Err(Error::ConfigInvalid(_))
        ));
        let o = Overrides {
            set: vec!["synth.size=3".into()],
            ..Overrides::default()
        };
        assert!(matches!(load(None, &o), Err(Error::ConfigInvalid(_))));
    }
}
