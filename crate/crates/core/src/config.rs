//! Run configuration: a sectioned `key = value` file (TOML syntax), with
//! `DIPGNN_<SECTION>_<KEY>` environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{GraphFiles, GraphOptions, SbmParams};
use crate::tensor::AdamW;

pub const ENV_PREFIX: &str = "DIPGNN_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub run: RunSection,
    pub graph: GraphSection,
    pub sbm: SbmSection,
    pub sampler: SamplerSection,
    pub model: ModelSection,
    pub mask: MaskSection,
    pub gen: GenSection,
    pub disc: DiscSection,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Every random stream of a run is derived from this value.
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphSource {
    Sbm,
    Files,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub source: GraphSource,
    /// Edge list, features and labels when `source = "files"`; empty means
    /// absent. Relative paths resolve against the config file's directory.
    pub edges: String,
    pub features: String,
    pub labels: String,
    pub directed: bool,
    pub allow_self_loops: bool,
    pub pretrain_frac: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmSection {
    pub n_nodes: usize,
    pub n_blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub noise_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub depth: usize,
    pub width: usize,
    /// Seed nodes drawn per step.
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    /// Half-width of the uniform noise added to the identity cosine matrix.
    pub cos_init_noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSection {
    pub edge_ratio: f64,
    pub feature_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    /// Negatives per masked edge; the candidate set has `n_neg + 1` nodes.
    pub n_neg: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscSection {
    /// Original edges scored per generated edge.
    pub alpha: f64,
    /// Original-feature nodes scored per generated-feature node.
    pub beta: f64,
    /// Score every node in the feature loss instead of a balanced subsample.
    pub all_nodes: bool,
    /// Swap the edge labels so that a high score means "original".
    pub flip_labels: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "edges+features")]
    EdgesFeatures,
    #[serde(rename = "edges")]
    Edges,
    #[serde(rename = "features")]
    Features,
    #[serde(rename = "random-edges")]
    RandomEdges,
    #[serde(rename = "generator-only")]
    GeneratorOnly,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::EdgesFeatures,
        Variant::Edges,
        Variant::Features,
        Variant::RandomEdges,
        Variant::GeneratorOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::EdgesFeatures => "edges+features",
            Variant::Edges => "edges",
            Variant::Features => "features",
            Variant::RandomEdges => "random-edges",
            Variant::GeneratorOnly => "generator-only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?} (expected one of {})",
                    Self::ALL.map(Variant::as_str).join(", ")
                ))
            })
    }

    pub fn uses_edges(self) -> bool {
        !matches!(self, Variant::Features)
    }

    pub fn uses_features(self) -> bool {
        !matches!(self, Variant::Edges)
    }

    pub fn uses_discriminator(self) -> bool {
        !matches!(self, Variant::GeneratorOnly)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub steps: usize,
    pub lambda: f64,
    pub variant: Variant,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip: f64,
    /// Prepare the next batch on a second thread while the current one trains.
    pub prefetch: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Node,
    Link,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backbone {
    /// The generator when the checkpoint was trained with `lambda = 0`,
    /// the discriminator otherwise.
    Auto,
    Disc,
    Gen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub task: Task,
    pub backbone: Backbone,
    pub steps: usize,
    pub eval_every: usize,
    pub lr: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip: f64,
    pub dropout: f64,
    /// Fraction of the training nodes whose labels are used.
    pub train_frac: f64,
    /// Share of each valid/test node's edges held out for link prediction.
    pub link_holdout: f64,
    pub link_n_neg: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0 }
    }
}

impl Default for GraphSection {
    fn default() -> Self {
        Self {
            source: GraphSource::Sbm,
            edges: String::new(),
            features: String::new(),
            labels: String::new(),
            directed: false,
            allow_self_loops: false,
            pretrain_frac: 0.7,
        }
    }
}

impl Default for SbmSection {
    fn default() -> Self {
        Self {
            n_nodes: 2000,
            n_blocks: 4,
            p_in: 0.015,
            p_out: 0.002,
            feature_dim: 4,
            noise_scale: 1.0,
        }
    }
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            depth: 3,
            width: 64,
            batch_size: 256,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 3,
            dropout: 0.2,
            cos_init_noise: 0.01,
        }
    }
}

impl Default for MaskSection {
    fn default() -> Self {
        Self {
            edge_ratio: 0.2,
            feature_ratio: 0.2,
        }
    }
}

impl Default for GenSection {
    fn default() -> Self {
        Self { n_neg: 255 }
    }
}

impl Default for DiscSection {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            all_nodes: false,
            flip_labels: false,
        }
    }
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            steps: 500,
            lambda: 20.0,
            variant: Variant::EdgesFeatures,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip: 0.5,
            prefetch: false,
        }
    }
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            task: Task::Node,
            backbone: Backbone::Auto,
            steps: 200,
            eval_every: 5,
            lr: 0.0015,
            eps: 1e-6,
            weight_decay: 0.0,
            clip: 0.5,
            dropout: 0.3,
            train_frac: 1.0,
            link_holdout: 0.2,
            link_n_neg: 255,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            graph: GraphSection::default(),
            sbm: SbmSection::default(),
            sampler: SamplerSection::default(),
            model: ModelSection::default(),
            mask: MaskSection::default(),
            gen: GenSection::default(),
            disc: DiscSection::default(),
            pretrain: PretrainSection::default(),
            finetune: FinetuneSection::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; `from_toml(to_toml())` is the identity.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Reads `path`, applies environment overrides and resolves relative
    /// graph paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Config(format!("config file {} not found", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        let mut cfg = Self::from_toml(&text)?;
        cfg = cfg.with_overrides(std::env::vars())?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.graph.edges, &mut cfg.graph.features, &mut cfg.graph.labels] {
            if !p.is_empty() && Path::new(p.as_str()).is_relative() {
                *p = base.join(p.as_str()).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    /// Applies `DIPGNN_<SECTION>_<KEY>` values from `vars` to known keys.
    /// Each value is parsed as the type the key already has.
    pub fn with_overrides(&self, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let vars: std::collections::HashMap<String, String> = vars
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        if vars.is_empty() {
            return Ok(self.clone());
        }
        let mut table: toml::Table =
            toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for (section, entries) in table.iter_mut() {
            let Some(entries) = entries.as_table_mut() else { continue };
            for (key, value) in entries.iter_mut() {
                let var = format!("{ENV_PREFIX}{}_{}", section, key).to_uppercase();
                let Some(raw) = vars.get(&var) else { continue };
                let bad = || Error::Config(format!("{var}={raw:?} does not parse as {}", value.type_str()));
                *value = match value {
                    toml::Value::Integer(_) => toml::Value::Integer(raw.trim().parse().map_err(|_| bad())?),
                    toml::Value::Float(_) => toml::Value::Float(raw.trim().parse().map_err(|_| bad())?),
                    toml::Value::Boolean(_) => toml::Value::Boolean(raw.trim().parse().map_err(|_| bad())?),
                    _ => toml::Value::String(raw.clone()),
                };
            }
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Short hash of the canonical text form.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&hash[..8])
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64, hi_open: bool| {
            let ok = v >= 0.0 && if hi_open { v < 1.0 } else { v <= 1.0 };
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} out of range")))
            }
        };
        let positive = |name: &str, v: usize| {
            if v > 0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be >= 1")))
            }
        };
        let g = &self.graph;
        if !(g.pretrain_frac > 0.0 && g.pretrain_frac < 1.0) {
            return Err(Error::Config(format!("graph.pretrain_frac = {} not in (0, 1)", g.pretrain_frac)));
        }
        if g.source == GraphSource::Files && g.edges.is_empty() {
            return Err(Error::Config("graph.source = \"files\" needs graph.edges".into()));
        }
        self.sbm_params().validate()?;
        positive("sampler.width", self.sampler.width)?;
        positive("sampler.batch_size", self.sampler.batch_size)?;
        positive("model.hidden", self.model.hidden)?;
        positive("model.layers", self.model.layers)?;
        unit("model.dropout", self.model.dropout, true)?;
        unit("mask.edge_ratio", self.mask.edge_ratio, true)?;
        unit("mask.feature_ratio", self.mask.feature_ratio, false)?;
        if self.disc.alpha <= 0.0 || self.disc.beta <= 0.0 {
            return Err(Error::Config("disc.alpha and disc.beta must be > 0".into()));
        }
        let p = &self.pretrain;
        if p.lambda < 0.0 || !p.lambda.is_finite() {
            return Err(Error::Config(format!("pretrain.lambda = {} must be >= 0", p.lambda)));
        }
        let f = &self.finetune;
        for (name, lr) in [("pretrain.lr", p.lr), ("finetune.lr", f.lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} = {lr} must be > 0")));
            }
        }
        unit("pretrain.beta1", p.beta1, true)?;
        unit("pretrain.beta2", p.beta2, true)?;
        positive("finetune.eval_every", f.eval_every)?;
        unit("finetune.dropout", f.dropout, true)?;
        unit("finetune.link_holdout", f.link_holdout, true)?;
        if !(f.train_frac > 0.0 && f.train_frac <= 1.0) {
            return Err(Error::Config(format!("finetune.train_frac = {} not in (0, 1]", f.train_frac)));
        }
        for (name, v) in [
            ("pretrain.clip", p.clip),
            ("finetune.clip", f.clip),
            ("pretrain.weight_decay", p.weight_decay),
            ("finetune.weight_decay", f.weight_decay),
            ("pretrain.eps", p.eps),
            ("finetune.eps", f.eps),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn sbm_params(&self) -> SbmParams {
        let s = &self.sbm;
        SbmParams {
            n_nodes: s.n_nodes,
            n_blocks: s.n_blocks,
            p_in: s.p_in,
            p_out: s.p_out,
            feature_dim: s.feature_dim,
            noise_scale: s.noise_scale,
        }
    }

    pub fn graph_options(&self) -> GraphOptions {
        GraphOptions {
            directed: self.graph.directed,
            allow_self_loops: self.graph.allow_self_loops,
        }
    }

    pub fn graph_files(&self) -> GraphFiles {
        let opt = |s: &str| (!s.is_empty()).then(|| PathBuf::from(s));
        GraphFiles {
            edges: PathBuf::from(&self.graph.edges),
            features: opt(&self.graph.features),
            labels: opt(&self.graph.labels),
        }
    }

    pub fn pretrain_optimizer(&self) -> AdamW {
        let p = &self.pretrain;
        AdamW {
            lr: p.lr,
            beta1: p.beta1,
            beta2: p.beta2,
            eps: p.eps,
            weight_decay: p.weight_decay,
            clip: (p.clip > 0.0).then_some(p.clip),
        }
    }

    pub fn finetune_optimizer(&self) -> AdamW {
        let f = &self.finetune;
        AdamW {
            lr: f.lr,
            beta1: self.pretrain.beta1,
            beta2: self.pretrain.beta2,
            eps: f.eps,
            weight_decay: f.weight_decay,
            clip: (f.clip > 0.0).then_some(f.clip),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_losslessly() {
        let cfg = TrainConfig::default();
        let back = TrainConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn odd_floats_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.pretrain.lr = 0.1 + 0.2;
        cfg.sbm.p_in = 1.0 / 3.0;
        let back = TrainConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back.pretrain.lr.to_bits(), cfg.pretrain.lr.to_bits());
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = TrainConfig::from_toml("[mask]\nedge_ratio = 0.5\n\n[pretrain]\nvariant = \"edges\"\n").unwrap();
        assert_eq!(cfg.mask.edge_ratio, 0.5);
        assert_eq!(cfg.mask.feature_ratio, 0.2);
        assert_eq!(cfg.pretrain.variant, Variant::Edges);
        assert_eq!(cfg.gen.n_neg, 255);
        assert_eq!(cfg.pretrain.lambda, 20.0);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(TrainConfig::from_toml("[mask]\nedge_ratio = 1.0\n").is_err());
        assert!(TrainConfig::from_toml("[mask]\nbogus = 1\n").is_err());
        assert!(TrainConfig::from_toml("[pretrain]\nvariant = \"nope\"\n").is_err());
        assert!(TrainConfig::from_toml("[sbm]\np_in = 0.1\np_out = 0.5\n").is_err());
    }

    #[test]
    fn environment_overrides_known_keys() {
        let cfg = TrainConfig::default();
        let vars = vec![
            ("DIPGNN_MASK_EDGE_RATIO".to_string(), "0.8".to_string()),
            ("DIPGNN_RUN_SEED".to_string(), "7".to_string()),
            ("DIPGNN_PRETRAIN_VARIANT".to_string(), "features".to_string()),
            ("DIPGNN_DISC_FLIP_LABELS".to_string(), "true".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ];
        let o = cfg.with_overrides(vars).unwrap();
        assert_eq!(o.mask.edge_ratio, 0.8);
        assert_eq!(o.run.seed, 7);
        assert_eq!(o.pretrain.variant, Variant::Features);
        assert!(o.disc.flip_labels);
        assert_ne!(o.digest(), cfg.digest());

        let bad = vec![("DIPGNN_RUN_SEED".to_string(), "abc".to_string())];
        assert!(cfg.with_overrides(bad).is_err());
    }

    #[test]
    fn variants_parse() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.as_str()).unwrap(), v);
        }
        assert!(Variant::parse("everything").is_err());
    }
}
