//! Run configuration: a flat key=value text file with bracketed section
//! headers, mapped onto the typed configs of each subsystem.

use crate::adapter::AdapterConfig;
use crate::backbone::BackboneConfig;
use crate::data::{ShapeKind, SynthConfig};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Optional cap on total optimizer steps (overrides the epoch count).
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 0.05,
            epochs: 13,
            batch: 2,
            seed: 7,
            max_steps: None,
        }
    }
}

/// Where samples come from: a directory with train/ and test/ splits, or an
/// in-process synthetic dataset.
#[derive(Clone, Debug)]
pub enum DataSource {
    Root(PathBuf),
    Synth(SynthConfig),
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub backbone: BackboneConfig,
    pub adapter: AdapterConfig,
    pub train: TrainConfig,
    pub data: DataSource,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backbone: BackboneConfig::default(),
            adapter: AdapterConfig::default(),
            train: TrainConfig::default(),
            data: DataSource::Synth(SynthConfig::default()),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {}", path.display(), e)))?;
        RunConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let sections = parse_sections(text)?;
        for name in sections.keys() {
            if !matches!(
                name.as_str(),
                "backbone" | "adapter" | "train" | "data" | "out"
            ) {
                return Err(Error::Config(format!("unknown section [{name}]")));
            }
        }
        let mut cfg = RunConfig::default();

        if let Some(map) = sections.get("backbone") {
            let b = &mut cfg.backbone;
            for (key, value) in map {
                match key.as_str() {
                    "image_size" => b.image_size = parse_num(key, value)?,
                    "patch_size" => b.patch_size = parse_num(key, value)?,
                    "embed_dim" => b.embed_dim = parse_num(key, value)?,
                    "depth" => b.depth = parse_num(key, value)?,
                    "heads" => b.heads = parse_num(key, value)?,
                    "group_count" => b.group_count = parse_num(key, value)?,
                    "layers_per_group" => b.layers_per_group = parse_num(key, value)?,
                    _ => return Err(unknown_key("backbone", key)),
                }
            }
        }
        if let Some(map) = sections.get("adapter") {
            let a = &mut cfg.adapter;
            for (key, value) in map {
                match key.as_str() {
                    "dim" => a.dim = parse_num(key, value)?,
                    "ring_width" | "d" => a.ring_width = parse_num(key, value)?,
                    "heads" => a.heads = parse_num(key, value)?,
                    "ffn_mult" => a.ffn_mult = parse_num(key, value)?,
                    _ => return Err(unknown_key("adapter", key)),
                }
            }
        }
        if let Some(map) = sections.get("train") {
            let t = &mut cfg.train;
            for (key, value) in map {
                match key.as_str() {
                    "lr" => t.lr = parse_num(key, value)?,
                    "weight_decay" => t.weight_decay = parse_num(key, value)?,
                    "epochs" => t.epochs = parse_num(key, value)?,
                    "batch" => t.batch = parse_num(key, value)?,
                    "seed" => t.seed = parse_num(key, value)?,
                    "max_steps" => t.max_steps = Some(parse_num(key, value)?),
                    _ => return Err(unknown_key("train", key)),
                }
            }
        }
        if let Some(map) = sections.get("data") {
            if let Some(root) = map.get("root") {
                if map.len() > 1 {
                    return Err(Error::Config(
                        "[data] root cannot be combined with synthetic keys".into(),
                    ));
                }
                cfg.data = DataSource::Root(PathBuf::from(root));
            } else {
                let mut synth = SynthConfig::default();
                for (key, value) in map {
                    match key.as_str() {
                        "size" => synth.size = parse_num(key, value)?,
                        "n_train" => synth.n_train = parse_num(key, value)?,
                        "n_test" => synth.n_test = parse_num(key, value)?,
                        "octaves" => synth.texture_octaves = parse_num(key, value)?,
                        "shape" => synth.shape = value.parse::<ShapeKind>()?,
                        "contrast" => synth.contrast_delta = parse_num(key, value)?,
                        "seed" => synth.seed = parse_num(key, value)?,
                        _ => return Err(unknown_key("data", key)),
                    }
                }
                cfg.data = DataSource::Synth(synth);
            }
        }
        if let Some(map) = sections.get("out") {
            for (key, value) in map {
                match key.as_str() {
                    "dir" => cfg.out_dir = PathBuf::from(value),
                    _ => return Err(unknown_key("out", key)),
                }
            }
        }

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.adapter.validate()?;
        if self.adapter.dim != self.backbone.embed_dim {
            return Err(Error::Config(format!(
                "adapter dim {} must equal backbone embed_dim {}",
                self.adapter.dim, self.backbone.embed_dim
            )));
        }
        if self.train.batch == 0 || self.train.epochs == 0 {
            return Err(Error::Config("batch and epochs must be positive".into()));
        }
        match &self.data {
            DataSource::Root(root) => {
                if !root.exists() {
                    return Err(Error::Config(format!(
                        "data root {} does not exist",
                        root.display()
                    )));
                }
            }
            DataSource::Synth(synth) => {
                synth.validate()?;
                if synth.size != self.backbone.image_size {
                    return Err(Error::Config(format!(
                        "synthetic sample size {} must match backbone image_size {}",
                        synth.size, self.backbone.image_size
                    )));
                }
            }
        }
        Ok(())
    }
}

fn unknown_key(section: &str, key: &str) -> Error {
    Error::Config(format!("unknown key `{key}` in [{section}]"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for key `{key}`")))
}

type Sections = BTreeMap<String, BTreeMap<String, String>>;

fn parse_sections(text: &str) -> Result<Sections> {
    let mut sections: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find(['#', ';']) {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {}: unterminated section", lineno + 1)))?
                .trim()
                .to_string();
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let section = current.clone().ok_or_else(|| {
            Error::Config(format!("line {}: key outside any section", lineno + 1))
        })?;
        sections
            .get_mut(&section)
            .expect("section inserted above")
            .insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(sections)
}
