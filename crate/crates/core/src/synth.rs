//! Synthetic three-source world: paired captions, labelled images and
//! text-only sentences over a small object vocabulary, plus the held-out
//! object split.
//!
//! Object `i` has the unit feature signature `e_i`; context `c` adds a unit
//! offset on dimension `objects + c`. Every source assigns primary objects
//! round-robin so each object is covered evenly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    read_corpus, read_labeled, read_paired, write_corpus, write_labeled, write_paired, LabeledImage, PairedExample, Sources,
};
use crate::embedding::{embeddings_from_text, EmbeddingTable};
use crate::error::{NocError, Result};
use crate::scalar::Real;
use crate::vision::{ImageFeatures, LabelVector};
use crate::vocab::Vocabulary;

pub const OBJECT_SLOT: &str = "OBJ";
pub const SECOND_OBJECT_SLOT: &str = "OBJ2";
pub const CONTEXT_SLOT: &str = "CTX";

/// Minimum number of test images per held-out object.
pub const MIN_TEST_IMAGES: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub token: String,
    pub category: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub objects: Vec<ObjectSpec>,
    pub contexts: Vec<String>,
    /// Caption templates with `OBJ`, `OBJ2` and `CTX` slots.
    pub templates: Vec<String>,
    pub features: usize,
    pub noise_sigma: f64,
    /// Probability that an image holds a second object.
    pub pair_rate: f64,
    pub n_paired: usize,
    pub n_image_only: usize,
    pub n_text_only: usize,
    pub n_test: usize,
    pub embedding_dim: usize,
    /// Spread of object vectors around their category centre.
    pub embedding_spread: f64,
    pub seed: u64,
}

const DEFAULT_OBJECTS: [(&str, [&str; 5]); 6] = [
    ("animal", ["dog", "cat", "horse", "zebra", "sheep"]),
    ("vehicle", ["car", "bus", "truck", "bicycle", "train"]),
    ("furniture", ["chair", "couch", "table", "bed", "bench"]),
    ("food", ["pizza", "cake", "sandwich", "banana", "apple"]),
    ("kitchen", ["microwave", "oven", "bottle", "cup", "bowl"]),
    ("sports", ["racket", "ball", "kite", "skateboard", "surfboard"]),
];

pub const DEFAULT_HELDOUT: [&str; 4] = ["zebra", "bus", "couch", "pizza"];

impl Default for WorldSpec {
    fn default() -> Self {
        let objects = DEFAULT_OBJECTS
            .iter()
            .flat_map(|(cat, toks)| toks.iter().map(move |t| ObjectSpec { token: t.to_string(), category: cat.to_string() }))
            .collect();
        WorldSpec {
            objects,
            contexts: ["field", "street", "kitchen", "room"].map(String::from).to_vec(),
            templates: [
                "a OBJ in the CTX",
                "a OBJ on the CTX",
                "there is a OBJ near the CTX",
                "a photo of a OBJ",
                "a OBJ and a OBJ2 in the CTX",
                "the OBJ is next to a OBJ2",
            ]
            .map(String::from)
            .to_vec(),
            features: 40,
            noise_sigma: 0.15,
            pair_rate: 0.1,
            n_paired: 1200,
            n_image_only: 2400,
            n_text_only: 1200,
            n_test: 800,
            embedding_dim: 16,
            embedding_spread: 0.1,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let arg = |m: String| Err(NocError::Argument(m));
        if self.objects.len() < 12 {
            return arg(format!("need at least 12 objects, got {}", self.objects.len()));
        }
        if self.contexts.len() < 2 {
            return arg(format!("need at least 2 contexts, got {}", self.contexts.len()));
        }
        if self.templates.len() < 2 {
            return arg(format!("need at least 2 templates, got {}", self.templates.len()));
        }
        if self.features < self.objects.len() + self.contexts.len() {
            return arg(format!(
                "{} feature dimensions cannot hold {} object and {} context signatures",
                self.features,
                self.objects.len(),
                self.contexts.len()
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return arg("noise_sigma must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.pair_rate) {
            return arg("pair_rate must lie in [0, 1]".into());
        }
        if self.embedding_dim == 0 {
            return arg("embedding_dim must be positive".into());
        }
        let mut seen = std::collections::HashSet::new();
        for t in self.objects.iter().map(|o| &o.token).chain(&self.contexts) {
            if t.is_empty() || t.chars().any(|c| c.is_whitespace() || c.is_uppercase()) {
                return arg(format!("`{t}` is not a lowercase single token"));
            }
            if !seen.insert(t.as_str()) {
                return arg(format!("duplicate token `{t}`"));
            }
        }
        let singles = self.templates.iter().filter(|t| slots(t).1 == 1).count();
        if singles == 0 {
            return arg("at least one template must name exactly one object".into());
        }
        if self.pair_rate > 0.0 && self.templates.iter().all(|t| slots(t).1 != 2) {
            return arg("pair_rate > 0 needs a template naming two objects".into());
        }
        for t in &self.templates {
            if slots(t).1 == 0 {
                return arg(format!("template `{t}` names no object"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn object_tokens(&self) -> Vec<&str> {
        self.objects.iter().map(|o| o.token.as_str()).collect()
    }
}

/// (mentions context, number of object slots)
fn slots(template: &str) -> (bool, usize) {
    let words: Vec<&str> = template.split_whitespace().collect();
    let ctx = words.contains(&CONTEXT_SLOT);
    let n = words.iter().filter(|&&w| w == OBJECT_SLOT || w == SECOND_OBJECT_SLOT).count();
    (ctx, n)
}

/// One generated image with its caption and generating objects.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthExample<T> {
    pub image: ImageFeatures<T>,
    pub caption: Vec<usize>,
    /// Vocabulary ids of the objects in the image.
    pub objects: LabelVector,
}

impl<T: Clone> SynthExample<T> {
    pub fn paired(&self) -> PairedExample<T> {
        PairedExample { image: self.image.clone(), caption: self.caption.clone() }
    }

    pub fn labeled(&self) -> LabeledImage<T> {
        LabeledImage { image: self.image.clone(), labels: self.objects.clone() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct World<T> {
    pub spec: WorldSpec,
    pub vocab: Vocabulary,
    /// Embedding file text for the vocabulary (reserved tokens omitted).
    pub embedding_text: String,
    pub embeddings: EmbeddingTable<T>,
    pub paired: Vec<SynthExample<T>>,
    pub test: Vec<SynthExample<T>>,
    pub images: Vec<SynthExample<T>>,
    pub texts: Vec<Vec<usize>>,
}

impl<T> World<T> {
    pub fn object_ids(&self) -> Vec<usize> {
        self.spec.objects.iter().map(|o| self.vocab.id(&o.token).expect("object in vocabulary")).collect()
    }
}

fn build_vocab(spec: &WorldSpec) -> Vocabulary {
    let mut vocab = Vocabulary::new();
    for t in &spec.templates {
        for w in t.split_whitespace() {
            if w != OBJECT_SLOT && w != SECOND_OBJECT_SLOT && w != CONTEXT_SLOT {
                vocab.insert(w);
            }
        }
    }
    for c in &spec.contexts {
        vocab.insert(c);
    }
    for o in &spec.objects {
        vocab.insert(&o.token);
    }
    vocab
}

const TAG_PAIRED: u64 = 1;
const TAG_IMAGES: u64 = 2;
const TAG_TEXTS: u64 = 3;
const TAG_TEST: u64 = 4;
const TAG_EMBED: u64 = 5;

/// Independent stream per (source, example) so examples can be generated in any order.
fn example_rng(seed: u64, tag: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 40) | index as u64);
    rng
}

struct Scene {
    objects: Vec<usize>,
    context: usize,
    template: usize,
}

fn draw_scene(spec: &WorldSpec, index: usize, rng: &mut ChaCha8Rng) -> Scene {
    let n = spec.objects.len();
    let primary = index % n;
    let mut objects = vec![primary];
    if rng.gen_bool(spec.pair_rate) {
        let other = (primary + rng.gen_range(1..n)) % n;
        objects.push(other);
    }
    let context = rng.gen_range(0..spec.contexts.len());
    let fitting: Vec<usize> = (0..spec.templates.len()).filter(|&t| slots(&spec.templates[t]).1 == objects.len()).collect();
    let template = *fitting.choose(rng).expect("validated templates");
    Scene { objects, context, template }
}

fn realize(spec: &WorldSpec, vocab: &Vocabulary, scene: &Scene) -> Vec<usize> {
    spec.templates[scene.template]
        .split_whitespace()
        .map(|w| {
            let tok = match w {
                OBJECT_SLOT => spec.objects[scene.objects[0]].token.as_str(),
                SECOND_OBJECT_SLOT => spec.objects[scene.objects[1]].token.as_str(),
                CONTEXT_SLOT => spec.contexts[scene.context].as_str(),
                w => w,
            };
            vocab.id(tok).expect("template words are in the vocabulary")
        })
        .collect()
}

fn render<T: Real>(spec: &WorldSpec, scene: &Scene, id: String, rng: &mut ChaCha8Rng) -> Result<ImageFeatures<T>> {
    let mut x = vec![0.0f64; spec.features];
    for &o in &scene.objects {
        x[o] += 1.0;
    }
    x[spec.objects.len() + scene.context] += 1.0;
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
        for v in &mut x {
            *v += noise.sample(rng);
        }
    }
    ImageFeatures::new(id, x.into_iter().map(T::lit).collect())
}

fn examples<T: Real>(spec: &WorldSpec, vocab: &Vocabulary, tag: u64, prefix: &str, count: usize) -> Result<Vec<SynthExample<T>>> {
    (0..count)
        .map(|i| {
            let mut rng = example_rng(spec.seed, tag, i);
            let scene = draw_scene(spec, i, &mut rng);
            let caption = realize(spec, vocab, &scene);
            let image = render(spec, &scene, format!("{prefix}{i:05}"), &mut rng)?;
            let objects = LabelVector::new(scene.objects.iter().map(|&o| vocab.id(&spec.objects[o].token).expect("object")));
            Ok(SynthExample { image, caption, objects })
        })
        .collect()
}

/// Embedding text in which objects cluster around per-category centres.
pub fn synthetic_embedding_text(spec: &WorldSpec, vocab: &Vocabulary) -> String {
    let d = spec.embedding_dim;
    let mut rng = example_rng(spec.seed, TAG_EMBED, 0);
    let unit = |rng: &mut ChaCha8Rng| {
        let v: Vec<f64> = (0..d).map(|_| rand_distr::StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let mut centres: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for o in &spec.objects {
        if !centres.contains_key(o.category.as_str()) {
            let c = unit(&mut rng);
            centres.insert(o.category.as_str(), c);
        }
    }
    let category: BTreeMap<&str, &str> = spec.objects.iter().map(|o| (o.token.as_str(), o.category.as_str())).collect();
    let mut out = String::new();
    for (id, tok) in vocab.tokens().iter().enumerate() {
        if Vocabulary::is_control(id) {
            continue;
        }
        let offset = unit(&mut rng);
        let v: Vec<f64> = match category.get(tok.as_str()) {
            Some(cat) => centres[cat].iter().zip(&offset).map(|(c, o)| c + spec.embedding_spread * o).collect(),
            None => offset,
        };
        out.push_str(tok);
        for x in v {
            let _ = write!(out, " {x}");
        }
        out.push('\n');
    }
    out
}

/// Generates every source of the world; a pure function of the spec.
pub fn generate_world<T: Real>(spec: &WorldSpec) -> Result<World<T>> {
    spec.validate()?;
    let vocab = build_vocab(spec);
    let embedding_text = synthetic_embedding_text(spec, &vocab);
    let embeddings = embeddings_from_text(&embedding_text, &vocab, spec.seed)?;
    let paired = examples(spec, &vocab, TAG_PAIRED, "p", spec.n_paired)?;
    let images = examples(spec, &vocab, TAG_IMAGES, "i", spec.n_image_only)?;
    let test = examples(spec, &vocab, TAG_TEST, "t", spec.n_test)?;
    let texts = (0..spec.n_text_only)
        .map(|i| {
            let mut rng = example_rng(spec.seed, TAG_TEXTS, i);
            realize(spec, &vocab, &draw_scene(spec, i, &mut rng))
        })
        .collect();
    Ok(World { spec: spec.clone(), vocab, embedding_text, embeddings, paired, test, images, texts })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeldoutSplit<T> {
    pub heldout: LabelVector,
    pub train_paired: Vec<PairedExample<T>>,
    pub test_paired: Vec<SynthExample<T>>,
    pub image_only: Vec<LabeledImage<T>>,
    pub text_only: Vec<Vec<usize>>,
}

impl<T: Clone> HeldoutSplit<T> {
    pub fn sources(&self) -> Sources<T> {
        Sources { paired: self.train_paired.clone(), images: self.image_only.clone(), texts: self.text_only.clone() }
    }

    /// Image id to generating objects for the test set.
    pub fn test_truth(&self) -> BTreeMap<String, LabelVector> {
        self.test_paired.iter().map(|e| (e.image.id.clone(), e.objects.clone())).collect()
    }
}

/// Removes every paired example whose image or caption involves a held-out
/// object; the image-only and text-only sources stay complete.
pub fn make_heldout_split<T: Real>(world: &World<T>, heldout: &[&str]) -> Result<HeldoutSplit<T>> {
    let objects = world.object_ids();
    let mut ids = Vec::new();
    for &h in heldout {
        let id = world.vocab.id(h).filter(|i| objects.contains(i)).ok_or_else(|| NocError::Lookup(format!("`{h}` is not an object")))?;
        ids.push(id);
    }
    let held = LabelVector::new(ids);
    let involves = |e: &SynthExample<T>| held.ids().any(|h| e.objects.contains(h) || e.caption.contains(&h));
    let train_paired: Vec<PairedExample<T>> = world.paired.iter().filter(|e| !involves(e)).map(SynthExample::paired).collect();
    if train_paired.is_empty() {
        return Err(NocError::Argument("held-out set leaves no paired training data".into()));
    }
    for h in held.ids() {
        let found = world.test.iter().filter(|e| e.objects.contains(h)).count();
        if found < MIN_TEST_IMAGES {
            return Err(NocError::Insufficient {
                object: world.vocab.token(h).unwrap_or_default().to_string(),
                found,
                needed: MIN_TEST_IMAGES,
            });
        }
    }
    Ok(HeldoutSplit {
        heldout: held,
        train_paired,
        test_paired: world.test.clone(),
        image_only: world.images.iter().map(SynthExample::labeled).collect(),
        text_only: world.texts.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFiles {
    pub vocab: PathBuf,
    pub embeddings: PathBuf,
    pub corpus: PathBuf,
    pub images: PathBuf,
    pub train_paired: PathBuf,
    pub test_paired: PathBuf,
    pub test_labels: PathBuf,
}

/// Describes a generated dataset directory; paths are relative to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub version: u32,
    pub seed: u64,
    pub spec_hash: String,
    pub vocab_hash: String,
    pub heldout: Vec<String>,
    pub objects: Vec<String>,
    pub features: usize,
    pub files: ManifestFiles,
}

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

impl SplitManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NocError::io(path, e))?;
        let m: SplitManifest = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(NocError::Format { line: 0, message: format!("unsupported manifest version {}", m.version) });
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| NocError::io(path, e))
    }
}

/// Writes the split as plain files plus `manifest.json` into `dir`.
pub fn write_split<T: Real>(dir: &Path, world: &World<T>, split: &HeldoutSplit<T>) -> Result<SplitManifest> {
    std::fs::create_dir_all(dir).map_err(|e| NocError::io(dir, e))?;
    let files = ManifestFiles {
        vocab: "vocab.txt".into(),
        embeddings: "embeddings.txt".into(),
        corpus: "corpus.txt".into(),
        images: "images.tsv".into(),
        train_paired: "train_paired.tsv".into(),
        test_paired: "test_paired.tsv".into(),
        test_labels: "test_labels.tsv".into(),
    };
    let vocab = &world.vocab;
    vocab.save(&dir.join(&files.vocab))?;
    let emb = dir.join(&files.embeddings);
    std::fs::write(&emb, &world.embedding_text).map_err(|e| NocError::io(&emb, e))?;
    write_corpus(&dir.join(&files.corpus), vocab, &split.text_only)?;
    write_labeled(&dir.join(&files.images), vocab, &split.image_only)?;
    write_paired(&dir.join(&files.train_paired), vocab, &split.train_paired)?;
    let test: Vec<_> = split.test_paired.iter().map(SynthExample::paired).collect();
    write_paired(&dir.join(&files.test_paired), vocab, &test)?;
    let labels: Vec<_> = split.test_paired.iter().map(SynthExample::labeled).collect();
    write_labeled(&dir.join(&files.test_labels), vocab, &labels)?;
    let manifest = SplitManifest {
        version: MANIFEST_VERSION,
        seed: world.spec.seed,
        spec_hash: world.spec.hash(),
        vocab_hash: vocab.hash(),
        heldout: split.heldout.ids().map(|i| vocab.token(i).unwrap_or_default().to_string()).collect(),
        objects: world.spec.object_tokens().into_iter().map(String::from).collect(),
        features: world.spec.features,
        files,
    };
    manifest.save(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// A dataset directory read back into memory.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedSplit<T> {
    pub manifest: SplitManifest,
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable<T>,
    pub split: HeldoutSplit<T>,
}

impl<T> LoadedSplit<T> {
    pub fn object_ids(&self) -> Result<Vec<usize>> {
        self.manifest.objects.iter().map(|o| self.vocab.require(o)).collect()
    }
}

pub fn load_split<T: Real>(dir: &Path) -> Result<LoadedSplit<T>> {
    let manifest = SplitManifest::load(&dir.join(MANIFEST_FILE))?;
    let f = &manifest.files;
    let vocab = Vocabulary::load(&dir.join(&f.vocab))?;
    if vocab.hash() != manifest.vocab_hash {
        return Err(NocError::Format { line: 0, message: "vocabulary file does not match the manifest hash".into() });
    }
    let embeddings = crate::embedding::load_embeddings(&dir.join(&f.embeddings), &vocab, manifest.seed)?;
    let text_only = read_corpus(&dir.join(&f.corpus), &vocab)?;
    let image_only = read_labeled(&dir.join(&f.images), &vocab)?;
    let train_paired = read_paired(&dir.join(&f.train_paired), &vocab)?;
    let test = read_paired::<T>(&dir.join(&f.test_paired), &vocab)?;
    let labels = read_labeled::<T>(&dir.join(&f.test_labels), &vocab)?;
    if test.len() != labels.len() || test.iter().zip(&labels).any(|(p, l)| p.image.id != l.image.id) {
        return Err(NocError::Format { line: 0, message: "test captions and test labels list different images".into() });
    }
    let test_paired = test
        .into_iter()
        .zip(labels)
        .map(|(p, l)| SynthExample { image: p.image, caption: p.caption, objects: l.labels })
        .collect();
    let heldout = LabelVector::new(manifest.heldout.iter().map(|h| vocab.require(h)).collect::<Result<Vec<_>>>()?);
    let split = HeldoutSplit { heldout, train_paired, test_paired, image_only, text_only };
    Ok(LoadedSplit { manifest, vocab, embeddings, split })
}
