//! Flat `key = value` configuration with `#` comments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::cvae::{LatentMode, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::Measure;

/// Every accepted key with its default value.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset", "synthetic-mixture"),
    ("data_path", ""),
    ("n_samples", "4096"),
    ("data_dim", "16"),
    ("mixture_components", "2"),
    ("mixture_spread", "0.05"),
    ("heavytail_kappa", "1"),
    ("split_train", "0.7"),
    ("split_val", "0.15"),
    ("split_test", "0.15"),
    ("learning_rate", "0.0005"),
    ("batch_size", "64"),
    ("latent_dim", "10"),
    ("hidden", "128,128"),
    ("grad_clip_norm", "10"),
    ("epochs", "5"),
    ("kappa", "0"),
    ("mc_samples", "1"),
    ("seed", "0"),
    ("sigma_xz", "1"),
    ("a_xz_override", "0"),
    ("sampling", "Q"),
    ("outlier_fraction", "0"),
    ("outlier_scale", "1"),
    ("checkpoint", ""),
    ("frechet_pca", "0"),
    ("sample_count", "16"),
    ("geometry_model", "gpd"),
    ("geometry_kappas", "1e-8,0.1,0.5,1"),
    ("geometry_thetas", "0.5,1,2"),
    ("geometry_measure", "escort"),
    ("geometry_mc_samples", "0"),
    ("robustness_kappas", "0,1"),
    ("check_mc_samples", "1000000"),
    ("record_wall_time", "false"),
];

/// Raw key/value pairs merged from defaults, file and overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown key '{key}'")))
    }
}

impl Default for RawConfig {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }
}

impl RawConfig {
    /// Parses `key = value` lines; blank lines and `#` comments are ignored.
    pub fn parse_str(text: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let k = k.trim();
            check_key(k)?;
            out.push((k.to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    /// Defaults, then the file (if any), then overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            for (k, v) in Self::parse_str(&text)? {
                cfg.values.insert(k, v);
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        check_key(key)?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// Canonical `key = value` text, one line per key in sorted order.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`Self::to_text`].
    pub fn run_id(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key).parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{}'", self.get(key))))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let s = self.get(key);
        if s.trim().is_empty() {
            return Ok(Vec::new());
        }
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{p}'"))))
            .collect()
    }

    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let dataset = match self.get("dataset") {
            "synthetic-mixture" => DatasetKind::Mixture,
            "synthetic-heavytail" => DatasetKind::HeavyTail,
            "idx-images" => DatasetKind::Idx,
            "csv-vectors" => DatasetKind::Csv,
            other => return Err(Error::Config(format!("dataset: unknown kind '{other}'"))),
        };
        let data_path = match self.get("data_path") {
            "" => None,
            p => Some(PathBuf::from(p)),
        };
        if matches!(dataset, DatasetKind::Idx | DatasetKind::Csv) {
            match &data_path {
                None => return Err(Error::Config("data_path is required for file datasets".into())),
                Some(p) if !p.is_file() => {
                    return Err(Error::Config(format!("data_path {} does not exist", p.display())))
                }
                _ => {}
            }
        }
        let split: [f64; 3] = [self.parse("split_train")?, self.parse("split_val")?, self.parse("split_test")?];
        if split.iter().any(|f| !(*f >= 0.0)) || (split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {split:?} must be non-negative and sum to 1")));
        }
        let a_xz_override = match self.get("a_xz_override") {
            "none" => None,
            _ => Some(self.parse("a_xz_override")?),
        };
        let train = TrainConfig {
            learning_rate: self.parse("learning_rate")?,
            batch_size: self.parse("batch_size")?,
            latent_dim: self.parse("latent_dim")?,
            hidden: self.list("hidden")?,
            grad_clip_norm: self.parse("grad_clip_norm")?,
            epochs: self.parse("epochs")?,
            kappa: self.parse("kappa")?,
            mc_samples: self.parse("mc_samples")?,
            seed: self.parse("seed")?,
            sigma_xz: self.parse("sigma_xz")?,
            a_xz_override,
        };
        train.validate()?;
        let sampling = match self.get("sampling") {
            "q" => LatentMode::Posterior,
            "Q" => LatentMode::Escort,
            other => return Err(Error::Config(format!("sampling must be q or Q, got '{other}'"))),
        };
        let outlier_fraction: f64 = self.parse("outlier_fraction")?;
        if !(0.0..=1.0).contains(&outlier_fraction) {
            return Err(Error::Config(format!("outlier_fraction {outlier_fraction} outside [0, 1]")));
        }
        let geometry_measure = match self.get("geometry_measure") {
            "escort" => Measure::Escort,
            "density" => Measure::Density,
            other => return Err(Error::Config(format!("geometry_measure must be escort or density, got '{other}'"))),
        };
        let geometry_model = match self.get("geometry_model") {
            "gpd" => GeometryModelKind::Gpd,
            "gaussian" => GeometryModelKind::Gaussian,
            other => return Err(Error::Config(format!("geometry_model must be gpd or gaussian, got '{other}'"))),
        };
        let geometry_thetas = self
            .get("geometry_thetas")
            .split(',')
            .map(|p| {
                p.split(':')
                    .map(|v| v.trim().parse().map_err(|_| Error::Config(format!("geometry_thetas: cannot parse '{p}'"))))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let n_samples: usize = self.parse("n_samples")?;
        let data_dim: usize = self.parse("data_dim")?;
        if n_samples == 0 || data_dim == 0 {
            return Err(Error::Config("n_samples and data_dim must be positive".into()));
        }
        Ok(ExperimentConfig {
            dataset,
            data_path,
            n_samples,
            data_dim,
            mixture_components: self.parse("mixture_components")?,
            mixture_spread: self.parse("mixture_spread")?,
            heavytail_kappa: self.parse("heavytail_kappa")?,
            split,
            train,
            sampling,
            outlier_fraction,
            outlier_scale: self.parse("outlier_scale")?,
            checkpoint: match self.get("checkpoint") {
                "" => None,
                p => Some(PathBuf::from(p)),
            },
            frechet_pca: self.parse("frechet_pca")?,
            sample_count: self.parse("sample_count")?,
            geometry_model,
            geometry_kappas: self.list("geometry_kappas")?,
            geometry_thetas,
            geometry_measure,
            geometry_mc_samples: self.parse("geometry_mc_samples")?,
            robustness_kappas: self.list("robustness_kappas")?,
            check_mc_samples: self.parse("check_mc_samples")?,
            record_wall_time: self.parse("record_wall_time")?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mixture,
    HeavyTail,
    Idx,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryModelKind {
    Gpd,
    Gaussian,
}

/// Typed view of a resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub data_path: Option<PathBuf>,
    pub n_samples: usize,
    pub data_dim: usize,
    pub mixture_components: usize,
    pub mixture_spread: f64,
    pub heavytail_kappa: f64,
    pub split: [f64; 3],
    pub train: TrainConfig,
    pub sampling: LatentMode,
    pub outlier_fraction: f64,
    pub outlier_scale: f64,
    pub checkpoint: Option<PathBuf>,
    pub frechet_pca: usize,
    pub sample_count: usize,
    pub geometry_model: GeometryModelKind,
    pub geometry_kappas: Vec<f64>,
    pub geometry_thetas: Vec<Vec<f64>>,
    pub geometry_measure: Measure,
    pub geometry_mc_samples: usize,
    pub robustness_kappas: Vec<f64>,
    pub check_mc_samples: usize,
    pub record_wall_time: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c = RawConfig::default().resolve().unwrap();
        assert_eq!(c.train, TrainConfig { seed: 0, ..TrainConfig::default() });
        assert_eq!(c.split, [0.7, 0.15, 0.15]);
        assert_eq!(c.sampling, LatentMode::Escort);
    }

    #[test]
    fn file_then_overrides() {
        let text = "# comment\nkappa = 1 # trailing\n\nseed=7\n";
        let pairs = RawConfig::parse_str(text).unwrap();
        assert_eq!(pairs, vec![("kappa".into(), "1".into()), ("seed".into(), "7".into())]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, text).unwrap();
        let c = RawConfig::load(Some(&p), &[("seed".into(), "9".into())]).unwrap().resolve().unwrap();
        assert_eq!(c.train.kappa, 1.0);
        assert_eq!(c.train.seed, 9);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RawConfig::parse_str("colour = red"), Err(Error::Config(_))));
        assert!(matches!(RawConfig::parse_str("kappa"), Err(Error::Config(_))));
        let mut c = RawConfig::default();
        c.set("split_train", "0.8").unwrap();
        assert!(matches!(c.resolve(), Err(Error::Config(_))));
        let mut c = RawConfig::default();
        c.set("dataset", "csv-vectors").unwrap();
        c.set("data_path", "/nonexistent/file.csv").unwrap();
        assert!(matches!(c.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn text_round_trips_and_hashes_stably() {
        let mut c = RawConfig::default();
        c.set("kappa", "0.5").unwrap();
        let back = RawConfig::load(None, &RawConfig::parse_str(&c.to_text()).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.run_id(), c.run_id());
        assert_eq!(c.run_id().len(), 16);
    }
}
