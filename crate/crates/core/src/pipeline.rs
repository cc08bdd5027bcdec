//! End-to-end runs: pre-training phases, joint training, captioning and
//! evaluation, plus the component ablation grid and the forgetting probe.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{CaptionRecord, Sources};
use crate::decode::{decode, DecodeMethod};
use crate::embedding::EmbeddingTable;
use crate::error::{NocError, Result};
use crate::fusion::{LossBreakdown, TrainConfig, Trainer};
use crate::lm::lm_pretrain;
use crate::metrics::{lm_perplexity, Captions, MentionReport, Truth};
use crate::model::{ModelConfig, NocModel};
use crate::optim::AdamConfig;
use crate::scalar::Real;
use crate::synth::{HeldoutSplit, SynthExample};
use crate::training::{PretrainConfig, TrainingLog};
use crate::vision::{image_activations, vision_pretrain, ImageFeatures};
use crate::vocab::Vocabulary;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum VisualMode {
    /// The visual head keeps training with the caption model.
    #[default]
    Tuned,
    /// The visual head is frozen after its pre-training phase.
    Fixed,
}

impl fmt::Display for VisualMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VisualMode::Tuned => "tuned",
            VisualMode::Fixed => "fixed",
        })
    }
}

impl FromStr for VisualMode {
    type Err = NocError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tuned" => Ok(VisualMode::Tuned),
            "fixed" => Ok(VisualMode::Fixed),
            _ => Err(NocError::Config(format!("visual mode must be `tuned` or `fixed`, got `{s}`"))),
        }
    }
}

/// Which auxiliary objectives join the caption loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuxMode {
    None,
    /// Image objective only.
    Image,
    #[default]
    Both,
}

impl AuxMode {
    /// Loss weights (alpha, beta) for unit-weighted auxiliaries.
    pub fn weights(self) -> (f64, f64) {
        match self {
            AuxMode::None => (0.0, 0.0),
            AuxMode::Image => (1.0, 0.0),
            AuxMode::Both => (1.0, 1.0),
        }
    }
}

impl fmt::Display for AuxMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuxMode::None => "none",
            AuxMode::Image => "image",
            AuxMode::Both => "both",
        })
    }
}

impl FromStr for AuxMode {
    type Err = NocError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AuxMode::None),
            "image" => Ok(AuxMode::Image),
            "both" => Ok(AuxMode::Both),
            _ => Err(NocError::Config(format!("aux mode must be `none`, `image` or `both`, got `{s}`"))),
        }
    }
}

/// Everything needed to train and caption one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub hidden: usize,
    pub visual_hidden: usize,
    /// Pre-computed embeddings (frozen) versus seeded random ones (trained).
    pub use_glove: bool,
    /// Fine-tune the pre-computed embeddings during training.
    pub tune_embeddings: bool,
    pub lm_pretrain: bool,
    pub vision_pretrain: bool,
    pub visual: VisualMode,
    pub lm_pretrain_steps: usize,
    pub vision_pretrain_steps: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub train: TrainConfig,
    pub decode: DecodeMethod,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            hidden: 32,
            visual_hidden: 16,
            use_glove: true,
            tune_embeddings: false,
            lm_pretrain: true,
            vision_pretrain: true,
            visual: VisualMode::Tuned,
            lm_pretrain_steps: 2500,
            vision_pretrain_steps: 300,
            pretrain_batch: 16,
            pretrain_lr: 3e-3,
            train: TrainConfig { lr: 5e-4, steps: 300, batch_paired: 16, batch_image: 32, batch_text: 16, ..TrainConfig::default() },
            decode: DecodeMethod::Greedy,
            max_len: 12,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.visual_hidden == 0 {
            return Err(NocError::Config("hidden sizes must be positive".into()));
        }
        if self.max_len == 0 {
            return Err(NocError::Config("max_len must be at least 1".into()));
        }
        if self.pretrain_lr.is_nan() || self.pretrain_lr <= 0.0 {
            return Err(NocError::Config("pretrain_lr must be positive".into()));
        }
        self.train.validate()
    }

    pub fn aux(&self) -> AuxMode {
        match (self.train.alpha > 0.0, self.train.beta > 0.0) {
            (false, false) => AuxMode::None,
            (true, false) => AuxMode::Image,
            _ => AuxMode::Both,
        }
    }

    fn pretrain(&self, steps: usize) -> PretrainConfig {
        PretrainConfig {
            steps,
            batch: self.pretrain_batch,
            seed: self.seed,
            adam: AdamConfig { lr: self.pretrain_lr, clip_norm: self.train.clip_norm, ..AdamConfig::default() },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainLogs {
    pub lm: Option<TrainingLog>,
    pub vision: Option<TrainingLog>,
}

/// Builds a model and runs the enabled pre-training phases.
pub fn prepare_model<T: Real>(
    vocab: &Vocabulary,
    glove: &EmbeddingTable<T>,
    sources: &Sources<T>,
    cfg: &PipelineConfig,
) -> Result<(NocModel<T>, PretrainLogs)> {
    cfg.validate()?;
    let features = sources
        .images
        .first()
        .map(|l| l.image.dim())
        .or_else(|| sources.paired.first().map(|p| p.image.dim()))
        .ok_or_else(|| NocError::Argument("no images to size the visual head".into()))?;
    let mut embeddings = if cfg.use_glove { glove.clone() } else { EmbeddingTable::random(vocab.len(), glove.dim(), cfg.seed) };
    embeddings.frozen = cfg.use_glove && !cfg.tune_embeddings;
    let mc = ModelConfig { hidden: cfg.hidden, visual_hidden: cfg.visual_hidden, features, seed: cfg.seed };
    let mut model = NocModel::new(vocab.clone(), embeddings, mc)?;
    let mut logs = PretrainLogs::default();
    if cfg.lm_pretrain && cfg.lm_pretrain_steps > 0 {
        logs.lm = Some(lm_pretrain(&mut model.params, &model.lm, &sources.texts, &cfg.pretrain(cfg.lm_pretrain_steps))?);
    }
    if cfg.vision_pretrain && cfg.vision_pretrain_steps > 0 {
        let data: Vec<_> = sources.images.iter().map(|l| (l.image.clone(), l.labels.clone())).collect();
        logs.vision = Some(vision_pretrain(&mut model.params, &model.vision, &data, &cfg.pretrain(cfg.vision_pretrain_steps))?);
    }
    if cfg.visual == VisualMode::Fixed {
        model.set_vision_frozen(true);
    }
    Ok((model, logs))
}

/// Pre-training phases followed by joint training.
pub fn train_pipeline<T: Real>(
    vocab: &Vocabulary,
    glove: &EmbeddingTable<T>,
    sources: &Sources<T>,
    cfg: &PipelineConfig,
) -> Result<(NocModel<T>, Trainer<T>, Vec<LossBreakdown>)> {
    let (mut model, _) = prepare_model(vocab, glove, sources, cfg)?;
    let mut trainer = Trainer::new(TrainConfig { seed: cfg.seed, ..cfg.train.clone() }, &model)?;
    let log = trainer.run(&mut model, sources, cfg.train.steps)?;
    Ok((model, trainer, log))
}

pub fn caption_images<T: Real>(
    model: &NocModel<T>,
    images: &[ImageFeatures<T>],
    method: DecodeMethod,
    max_len: usize,
    seed: u64,
) -> Result<Vec<CaptionRecord>> {
    images
        .iter()
        .map(|img| {
            let r = decode(model, img, method, max_len, seed)?;
            Ok(CaptionRecord { id: img.id.clone(), tokens: r.text(&model.vocab), log_prob: r.log_prob })
        })
        .collect()
}

pub fn captions_map(records: &[CaptionRecord]) -> Captions {
    records.iter().map(|r| (r.id.clone(), r.tokens.clone())).collect()
}

pub fn truth_map<T>(vocab: &Vocabulary, examples: &[SynthExample<T>]) -> Truth {
    examples
        .iter()
        .map(|e| {
            let objs: BTreeSet<String> = e.objects.ids().filter_map(|i| vocab.token(i)).map(String::from).collect();
            (e.image.id.clone(), objs)
        })
        .collect()
}

/// Captions the test images and scores mentions of the held-out objects.
pub fn evaluate_heldout<T: Real>(model: &NocModel<T>, split: &HeldoutSplit<T>, cfg: &PipelineConfig) -> Result<MentionReport> {
    let images: Vec<_> = split.test_paired.iter().map(|e| e.image.clone()).collect();
    let records = caption_images(model, &images, cfg.decode, cfg.max_len, cfg.seed)?;
    let truth = truth_map(&model.vocab, &split.test_paired);
    let objects: Vec<&str> = split.heldout.ids().filter_map(|i| model.vocab.token(i)).collect();
    let mut report = MentionReport::build(&captions_map(&records), &truth, &objects)?;
    let test_text: Vec<Vec<usize>> = split.test_paired.iter().map(|e| e.caption.clone()).collect();
    report.perplexity = Some(lm_perplexity(&model.params, &model.lm, &test_text)?);
    Ok(report)
}

/// Share of (image, target object) pairs where the object ranks within the
/// visual head's top `k` among `candidates`.
pub fn topk_label_recall<T: Real>(
    model: &NocModel<T>,
    examples: &[SynthExample<T>],
    targets: &[usize],
    candidates: &[usize],
    k: usize,
) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for e in examples {
        let present: Vec<usize> = targets.iter().copied().filter(|&t| e.objects.contains(t)).collect();
        if present.is_empty() {
            continue;
        }
        let a = image_activations(&model.params, &model.vision, &e.image)?;
        let mut ranked: Vec<usize> = candidates.to_vec();
        ranked.sort_by(|&x, &y| a.data()[y].partial_cmp(&a.data()[x]).unwrap_or(std::cmp::Ordering::Equal).then(x.cmp(&y)));
        ranked.truncate(k);
        for t in present {
            total += 1;
            hits += ranked.contains(&t) as usize;
        }
    }
    if total == 0 {
        return Err(NocError::Argument("no example contains a target object".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// One configuration of the ablation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub use_glove: bool,
    pub lm_pretrain: bool,
    pub visual: VisualMode,
    pub aux: AuxMode,
}

impl AblationRow {
    pub fn new(name: &str, use_glove: bool, lm_pretrain: bool, visual: VisualMode, aux: AuxMode) -> Self {
        AblationRow { name: name.to_string(), use_glove, lm_pretrain, visual, aux }
    }

    pub fn apply(&self, base: &PipelineConfig) -> PipelineConfig {
        let (alpha, beta) = self.aux.weights();
        PipelineConfig {
            use_glove: self.use_glove,
            lm_pretrain: self.lm_pretrain,
            visual: self.visual,
            train: TrainConfig { alpha, beta, ..base.train.clone() },
            ..base.clone()
        }
    }
}

pub const TUNED_VISION: &str = "Tuned Vision";
pub const LM_EMBEDDING: &str = "LM & Embedding";
pub const LM_PRETRAINED_VISION: &str = "LM & Pre-trained Vision";
pub const AUXILIARY: &str = "Auxiliary Objective";
pub const ALL: &str = "All";

/// The five standard component ablations.
pub fn standard_rows() -> Vec<AblationRow> {
    use AuxMode::*;
    use VisualMode::*;
    vec![
        AblationRow::new(TUNED_VISION, false, false, Tuned, Image),
        AblationRow::new(LM_EMBEDDING, true, true, Tuned, None),
        AblationRow::new(LM_PRETRAINED_VISION, true, true, Fixed, None),
        AblationRow::new(AUXILIARY, true, false, Tuned, Both),
        AblationRow::new(ALL, true, true, Tuned, Both),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: AblationRow,
    pub seed: u64,
    pub report: MentionReport,
}

pub fn run_ablation<T: Real>(
    vocab: &Vocabulary,
    glove: &EmbeddingTable<T>,
    split: &HeldoutSplit<T>,
    rows: &[AblationRow],
    base: &PipelineConfig,
) -> Result<Vec<AblationResult>> {
    let sources = split.sources();
    rows.iter()
        .map(|row| {
            let cfg = row.apply(base);
            let (model, _, _) = train_pipeline(vocab, glove, &sources, &cfg)?;
            Ok(AblationResult { row: row.clone(), seed: base.seed, report: evaluate_heldout(&model, split, &cfg)? })
        })
        .collect()
}

/// Text table of held-out F1 per row, one column per seed.
pub fn ablation_table(results: &[AblationResult]) -> String {
    let seeds: BTreeSet<u64> = results.iter().map(|r| r.seed).collect();
    let mut rows: Vec<&AblationRow> = Vec::new();
    for r in results {
        if !rows.contains(&&r.row) {
            rows.push(&r.row);
        }
    }
    let cell: BTreeMap<(&str, u64), f64> = results.iter().map(|r| ((r.row.name.as_str(), r.seed), r.report.average_f1)).collect();
    let w = rows.iter().map(|r| r.name.len()).max().unwrap_or(3).max(3);
    let mut out = format!("{:<w$}  glove  lm-pre  visual  aux  ", "row");
    for s in &seeds {
        out.push_str(&format!("  seed {s:<3}"));
    }
    out.push_str("     mean\n");
    let mark = |b: bool| if b { "yes" } else { "-" };
    for row in rows {
        out.push_str(&format!("{:<w$}  {:<5}  {:<6}  {:<6}  {:<5}", row.name, mark(row.use_glove), mark(row.lm_pretrain), row.visual, row.aux));
        let vals: Vec<f64> = seeds.iter().filter_map(|&s| cell.get(&(row.name.as_str(), s)).copied()).collect();
        for v in &vals {
            out.push_str(&format!("  {:>8.4}", v));
        }
        out.push_str(&format!("  {:>8.4}\n", vals.iter().sum::<f64>() / vals.len().max(1) as f64));
    }
    out
}

/// Held-out top-k recall of the visual head before and after caption training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgettingProbe {
    pub before: f64,
    pub after_caption_only: f64,
    pub after_joint: f64,
}

impl ForgettingProbe {
    pub fn drop_caption_only(&self) -> f64 {
        self.before - self.after_caption_only
    }

    pub fn drop_joint(&self) -> f64 {
        self.before - self.after_joint
    }
}

/// Pre-trains once, then fine-tunes copies with alpha = beta = 0 and with
/// alpha = beta = 1 and measures held-out label recall on the test images.
pub fn forgetting_probe<T: Real>(
    vocab: &Vocabulary,
    glove: &EmbeddingTable<T>,
    split: &HeldoutSplit<T>,
    objects: &[usize],
    base: &PipelineConfig,
    k: usize,
) -> Result<ForgettingProbe> {
    let sources = split.sources();
    let cfg = PipelineConfig { visual: VisualMode::Tuned, ..base.clone() };
    let (pretrained, _) = prepare_model(vocab, glove, &sources, &cfg)?;
    let targets: Vec<usize> = split.heldout.ids().collect();
    let recall = |m: &NocModel<T>| topk_label_recall(m, &split.test_paired, &targets, objects, k);
    let before = recall(&pretrained)?;
    let mut after = [0.0; 2];
    for (slot, w) in [0.0, 1.0].into_iter().enumerate() {
        let mut model = pretrained.clone();
        let tc = TrainConfig { alpha: w, beta: w, seed: cfg.seed, ..cfg.train.clone() };
        let mut trainer = Trainer::new(tc, &model)?;
        trainer.run(&mut model, &sources, cfg.train.steps)?;
        after[slot] = recall(&model)?;
    }
    Ok(ForgettingProbe { before, after_caption_only: after[0], after_joint: after[1] })
}

/// Per-step loss log as CSV with a header row.
pub fn format_loss_log(log: &[LossBreakdown]) -> String {
    let mut out = String::from("step,l_cm,l_im,l_lm,total\n");
    for b in log {
        out.push_str(&format!("{},{},{},{},{}\n", b.step, b.l_cm, b.l_im, b.l_lm, b.total));
    }
    out
}
