//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Unknown and repeated keys are
//! errors, so a typo in a grid file cannot silently fall back to a default.

use std::path::Path;
use std::str::FromStr;

use crate::decode::DecodeMethod;
use crate::error::{NocError, Result};
use crate::pipeline::{standard_rows, AblationRow, AuxMode, PipelineConfig, VisualMode};
use crate::synth::{ObjectSpec, WorldSpec, DEFAULT_HELDOUT};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| NocError::Format { line: n + 1, message: format!("expected `key = value`, found `{line}`") })?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(NocError::Format { line: n + 1, message: "empty key".into() });
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(NocError::Config(format!("line {}: `{key}` already set on line {}", n + 1, prev.line)));
        }
        out.push(Entry { line: n + 1, key, value: v.trim().to_string() });
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<Vec<Entry>> {
    let text = std::fs::read_to_string(path).map_err(|e| NocError::io(path, e))?;
    parse_entries(&text)
}

fn value<V: FromStr>(e: &Entry) -> Result<V> {
    e.value
        .parse()
        .map_err(|_| NocError::Config(format!("line {}: bad value `{}` for `{}`", e.line, e.value, e.key)))
}

fn flag(e: &Entry) -> Result<bool> {
    match e.value.as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(NocError::Config(format!("line {}: `{}` expects true or false, got `{}`", e.line, e.key, e.value))),
    }
}

fn list(e: &Entry) -> Vec<String> {
    e.value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn unknown(e: &Entry, valid: &[&str]) -> NocError {
    NocError::Config(format!("line {}: unknown key `{}`; valid keys: {}", e.line, e.key, valid.join(", ")))
}

pub const PIPELINE_KEYS: [&str; 22] = [
    "hidden",
    "visual_hidden",
    "use_glove",
    "tune_embeddings",
    "lm_pretrain",
    "vision_pretrain",
    "visual",
    "lm_pretrain_steps",
    "vision_pretrain_steps",
    "pretrain_batch",
    "pretrain_lr",
    "alpha",
    "beta",
    "lr",
    "batch_paired",
    "batch_image",
    "batch_text",
    "steps",
    "clip_norm",
    "decode",
    "max_len",
    "seed",
];

/// Applies one pipeline key; returns false when the key is not a pipeline key.
fn set_pipeline(cfg: &mut PipelineConfig, e: &Entry) -> Result<bool> {
    match e.key.as_str() {
        "hidden" => cfg.hidden = value(e)?,
        "visual_hidden" => cfg.visual_hidden = value(e)?,
        "use_glove" => cfg.use_glove = flag(e)?,
        "tune_embeddings" => cfg.tune_embeddings = flag(e)?,
        "lm_pretrain" => cfg.lm_pretrain = flag(e)?,
        "vision_pretrain" => cfg.vision_pretrain = flag(e)?,
        "visual" => cfg.visual = e.value.parse::<VisualMode>()?,
        "lm_pretrain_steps" => cfg.lm_pretrain_steps = value(e)?,
        "vision_pretrain_steps" => cfg.vision_pretrain_steps = value(e)?,
        "pretrain_batch" => cfg.pretrain_batch = value(e)?,
        "pretrain_lr" => cfg.pretrain_lr = value(e)?,
        "alpha" => cfg.train.alpha = value(e)?,
        "beta" => cfg.train.beta = value(e)?,
        "lr" => cfg.train.lr = value(e)?,
        "batch_paired" => cfg.train.batch_paired = value(e)?,
        "batch_image" => cfg.train.batch_image = value(e)?,
        "batch_text" => cfg.train.batch_text = value(e)?,
        "steps" => cfg.train.steps = value(e)?,
        "clip_norm" => cfg.train.clip_norm = value(e)?,
        "decode" => cfg.decode = e.value.parse::<DecodeMethod>().map_err(|err| NocError::Config(format!("line {}: {err}", e.line)))?,
        "max_len" => cfg.max_len = value(e)?,
        "seed" => {
            cfg.seed = value(e)?;
            cfg.train.seed = cfg.seed;
        }
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn pipeline_config(entries: &[Entry], mut cfg: PipelineConfig) -> Result<PipelineConfig> {
    for e in entries {
        if !set_pipeline(&mut cfg, e)? {
            return Err(unknown(e, &PIPELINE_KEYS));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Dataset generation settings: the world plus the held-out objects.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerateConfig {
    pub spec: WorldSpec,
    pub heldout: Vec<String>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig { spec: WorldSpec::default(), heldout: DEFAULT_HELDOUT.map(String::from).to_vec() }
    }
}

pub const WORLD_KEYS: [&str; 14] = [
    "objects",
    "contexts",
    "templates",
    "features",
    "noise_sigma",
    "pair_rate",
    "n_paired",
    "n_image_only",
    "n_text_only",
    "n_test",
    "embedding_dim",
    "embedding_spread",
    "seed",
    "heldout",
];

/// Objects are `token:category` pairs; templates are separated by `|`.
pub fn generate_config(entries: &[Entry], mut cfg: GenerateConfig) -> Result<GenerateConfig> {
    for e in entries {
        let s = &mut cfg.spec;
        match e.key.as_str() {
            "objects" => {
                s.objects = list(e)
                    .into_iter()
                    .map(|o| match o.split_once(':') {
                        Some((t, c)) => Ok(ObjectSpec { token: t.trim().into(), category: c.trim().into() }),
                        None => Err(NocError::Config(format!("line {}: object `{o}` needs the form token:category", e.line))),
                    })
                    .collect::<Result<_>>()?
            }
            "contexts" => s.contexts = list(e),
            "templates" => s.templates = e.value.split('|').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect(),
            "features" => s.features = value(e)?,
            "noise_sigma" => s.noise_sigma = value(e)?,
            "pair_rate" => s.pair_rate = value(e)?,
            "n_paired" => s.n_paired = value(e)?,
            "n_image_only" => s.n_image_only = value(e)?,
            "n_text_only" => s.n_text_only = value(e)?,
            "n_test" => s.n_test = value(e)?,
            "embedding_dim" => s.embedding_dim = value(e)?,
            "embedding_spread" => s.embedding_spread = value(e)?,
            "seed" => s.seed = value(e)?,
            "heldout" => cfg.heldout = list(e),
            _ => return Err(unknown(e, &WORLD_KEYS)),
        }
    }
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    pub pipeline: PipelineConfig,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { pipeline: PipelineConfig::default(), seeds: vec![1, 2, 3], rows: standard_rows() }
    }
}

pub const ABLATION_KEYS: [&str; 3] = ["seeds", "rows", "custom_rows"];

/// A custom row is `name:glove:lm_pretrain:visual:aux`, e.g.
/// `frozen-aux:yes:no:fixed:both`; several are separated by `;`.
fn parse_custom(e: &Entry, spec: &str) -> Result<AblationRow> {
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let bad = || NocError::Config(format!("line {}: custom row `{spec}` must be name:glove:lm_pretrain:visual:aux", e.line));
    if parts.len() != 5 || parts[0].is_empty() {
        return Err(bad());
    }
    let sub = |v: &str| Entry { line: e.line, key: e.key.clone(), value: v.to_string() };
    Ok(AblationRow {
        name: parts[0].to_string(),
        use_glove: flag(&sub(parts[1]))?,
        lm_pretrain: flag(&sub(parts[2]))?,
        visual: parts[3].parse::<VisualMode>()?,
        aux: parts[4].parse::<AuxMode>()?,
    })
}

pub fn ablation_config(entries: &[Entry], mut cfg: AblationConfig) -> Result<AblationConfig> {
    let mut custom = Vec::new();
    for e in entries {
        match e.key.as_str() {
            "seeds" => cfg.seeds = list(e).iter().map(|s| value(&Entry { value: s.clone(), ..e.clone() })).collect::<Result<_>>()?,
            "rows" => {
                let standard = standard_rows();
                cfg.rows = list(e)
                    .iter()
                    .map(|name| {
                        standard.iter().find(|r| r.name.eq_ignore_ascii_case(name)).cloned().ok_or_else(|| {
                            let names: Vec<_> = standard.iter().map(|r| r.name.as_str()).collect();
                            NocError::Config(format!("line {}: unknown row `{name}`; standard rows: {}", e.line, names.join(", ")))
                        })
                    })
                    .collect::<Result<_>>()?;
            }
            "custom_rows" => {
                for spec in e.value.split(';').map(str::trim).filter(|s| !s.is_empty()) {
                    custom.push(parse_custom(e, spec)?);
                }
            }
            _ => {
                if !set_pipeline(&mut cfg.pipeline, e)? {
                    let valid: Vec<&str> = ABLATION_KEYS.iter().chain(PIPELINE_KEYS.iter()).copied().collect();
                    return Err(unknown(e, &valid));
                }
            }
        }
    }
    cfg.rows.extend(custom);
    if cfg.seeds.is_empty() || cfg.rows.is_empty() {
        return Err(NocError::Config("an ablation needs at least one seed and one row".into()));
    }
    let mut names = std::collections::HashSet::new();
    if let Some(r) = cfg.rows.iter().find(|r| !names.insert(r.name.clone())) {
        return Err(NocError::Config(format!("duplicate row name `{}`", r.name)));
    }
    cfg.pipeline.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_values() {
        let text = "# training\nsteps = 40\nalpha=0 # no image term\n\nvisual = fixed\ndecode = beam:3\nuse_glove = no\n";
        let cfg = pipeline_config(&parse_entries(text).unwrap(), PipelineConfig::default()).unwrap();
        assert_eq!(cfg.train.steps, 40);
        assert_eq!(cfg.train.alpha, 0.0);
        assert_eq!(cfg.visual, VisualMode::Fixed);
        assert_eq!(cfg.decode, DecodeMethod::Beam(3));
        assert!(!cfg.use_glove);
    }

    #[test]
    fn unknown_keys_list_the_valid_ones() {
        let err = pipeline_config(&parse_entries("stpes = 4").unwrap(), PipelineConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("stpes") && msg.contains("steps") && msg.contains("alpha"), "{msg}");
        assert!(matches!(err, NocError::Config(_)));
    }

    #[test]
    fn malformed_and_repeated_lines_fail() {
        assert!(matches!(parse_entries("a = 1\njust words"), Err(NocError::Format { line: 2, .. })));
        assert!(parse_entries("a = 1\na = 2").is_err());
        assert!(pipeline_config(&parse_entries("steps = many").unwrap(), PipelineConfig::default()).is_err());
        assert!(pipeline_config(&parse_entries("alpha = -1").unwrap(), PipelineConfig::default()).is_err());
    }

    #[test]
    fn world_and_grid_settings() {
        let g = generate_config(&parse_entries("n_paired = 10\nheldout = zebra, bus\nseed = 4").unwrap(), GenerateConfig::default()).unwrap();
        assert_eq!(g.spec.n_paired, 10);
        assert_eq!(g.spec.seed, 4);
        assert_eq!(g.heldout, vec!["zebra", "bus"]);
        let a = ablation_config(
            &parse_entries("seeds = 5\nrows = All, tuned vision\ncustom_rows = mine:yes:no:fixed:image\nsteps = 3").unwrap(),
            AblationConfig::default(),
        )
        .unwrap();
        assert_eq!(a.seeds, vec![5]);
        assert_eq!(a.rows.iter().map(|r| r.name.as_str()).collect::<Vec<_>>(), ["All", "Tuned Vision", "mine"]);
        assert_eq!(a.rows[2].aux, AuxMode::Image);
        assert_eq!(a.pipeline.train.steps, 3);
        assert!(ablation_config(&parse_entries("rows = Nope").unwrap(), AblationConfig::default()).is_err());
    }
}
