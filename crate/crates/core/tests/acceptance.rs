//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use noc::autodiff::{log_softmax_slice, softmax_slice, NodeId};
use noc::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use noc::dataset::{format_captions, LabeledImage, PairedExample, Sources};
use noc::decode::{beam_decode, greedy_decode, DecodeMethod};
use noc::embedding::EmbeddingTable;
use noc::fusion::{caption_loss, fused_distribution, joint_objective, JointBatch, TrainConfig, Trainer};
use noc::gradcheck::{max_relative_error, FD_STEP};
use noc::lm::{lm_loss, lm_step, LmState};
use noc::metrics::{category_accuracy, object_f1, percent_described, Captions, Truth};
use noc::model::{ModelConfig, NocModel};
use noc::params::Forward;
use noc::pipeline::{
    caption_images, forgetting_probe, run_ablation, standard_rows, train_pipeline, PipelineConfig, ALL, AUXILIARY,
    LM_EMBEDDING, TUNED_VISION,
};
use noc::synth::{generate_world, make_heldout_split, write_split, WorldSpec, DEFAULT_HELDOUT};
use noc::tensor::Tensor;
use noc::vision::{image_loss_from_activations, image_loss_node, ImageFeatures, LabelVector};
use noc::vocab::{Vocabulary, BOS_ID, EOS_ID, UNK_ID};
use noc::Result;

type Outcome = std::result::Result<String, String>;
type LossFn<'a> = &'a dyn Fn(&mut Forward<f64>, &NocModel<f64>) -> Result<NodeId>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn tiny_model(words: &[&str], dim: usize, hidden: usize, features: usize, seed: u64) -> NocModel<f64> {
    let vocab = Vocabulary::from_tokens(words.iter().copied());
    let mut e = EmbeddingTable::random(vocab.len(), dim, seed);
    e.frozen = false;
    let cfg = ModelConfig { hidden, visual_hidden: 3, features, seed: seed + 100 };
    NocModel::new(vocab, e, cfg).expect("fixture model")
}

fn image(rng: &mut ChaCha8Rng, id: &str, features: usize) -> ImageFeatures<f64> {
    ImageFeatures::new(id, (0..features).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Worst relative error over every parameter of `model` for the scalar built by `build`.
fn model_gradcheck(
    model: &NocModel<f64>,
    build: LossFn<'_>,
) -> Result<f64> {
    let mut f = Forward::new(&model.params);
    let loss = build(&mut f, model)?;
    let grads = f.gradients(loss)?;
    let mut worst = 0.0f64;
    for (id, p) in model.params.iter() {
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape()));
        let err = max_relative_error(&analytic, &p.value, FD_STEP, |probe| {
            let mut m = model.clone();
            *m.params.get_mut(id) = probe.clone();
            let mut f = Forward::new(&m.params);
            let l = build(&mut f, &m).expect("probe loss");
            f.value(l).item()
        });
        worst = worst.max(err);
    }
    Ok(worst)
}

fn criterion_gradients() -> Outcome {
    let words = ["a", "cat", "dog", "on", "mat"];
    let mut worst = [0.0f64; 4];
    for seed in 0..3 {
        let m = tiny_model(&words, 4, 4, 3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = image(&mut rng, "i", 3);
        let img2 = image(&mut rng, "j", 3);
        let caption = vec![3, 4, 6, 3, 7];
        let text = vec![3, 5, 6, 7];
        let labels = LabelVector::new([4, 5]);
        let paired = PairedExample { image: img.clone(), caption: caption.clone() };
        let labeled = LabeledImage { image: img2.clone(), labels: labels.clone() };

        let losses: [LossFn<'_>; 4] = [
            &|f, m| m.lm.sentence_nll(f, &text, None),
            &|f, m| {
                let a = m.vision.activations(f, &img2)?;
                image_loss_node(f, a, &labels)
            },
            &|f, m| m.caption_nll(f, &img, &caption),
            &|f, m| {
                let batch = JointBatch { paired: vec![&paired], images: vec![&labeled], texts: vec![&text] };
                Ok(joint_objective(f, m, &batch, 1.0, 1.0)?.0)
            },
        ];
        for (w, build) in worst.iter_mut().zip(losses) {
            *w = w.max(ok(model_gradcheck(&m, build))?);
        }
    }
    let names = ["L_LM", "L_IM", "L_CM", "joint"];
    let detail = names.iter().zip(worst).map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", ");
    ensure(worst.iter().all(|&w| w < 1e-4), || format!("relative error too large: {detail}"))?;
    Ok(detail)
}

fn criterion_closed_form() -> Outcome {
    let vocab = Vocabulary::from_tokens(["a", "cat", "dog", "sat", "mat"]);
    let v = vocab.len() as f64;
    let e = EmbeddingTable::random(vocab.len(), 4, 3);
    let m = ok(NocModel::zeros(vocab, e, ModelConfig { hidden: 4, visual_hidden: 3, features: 2, seed: 0 }))?;
    let img = ImageFeatures::new("i", vec![0.7, -1.3]).unwrap();
    let mut worst = 0.0f64;
    for sentence in [vec![3], vec![3, 4], vec![3, 4, 5, 6, 7]] {
        let expected = (sentence.len() as f64 + 1.0) * v.ln();
        let lm = ok(lm_loss(&m.params, &m.lm, &sentence))?;
        let cm = ok(caption_loss(&m, &img, &sentence))?;
        worst = worst.max((lm - expected).abs()).max((cm - expected).abs());
    }
    let im = ok(image_loss_from_activations(&Tensor::vector(vec![0.0, 0.0]), &LabelVector::new([1])))?;
    let im_err = (im - 2.0 * std::f64::consts::LN_2).abs();
    ensure(worst <= 1e-9 && im_err <= 1e-9, || format!("uniform error {worst:.2e}, image fixture error {im_err:.2e}"))?;
    Ok(format!("(len+1)·ln V within {worst:.1e}, 2·ln 2 within {im_err:.1e}"))
}

fn lm_only_greedy(m: &NocModel<f64>, max_len: usize) -> Vec<usize> {
    let mut state = LmState::zeros(m.config.hidden);
    let mut prev = BOS_ID;
    let mut out = Vec::new();
    while out.len() < max_len {
        let (next, logits) = lm_step(&m.params, &m.lm, &state, prev).unwrap();
        let mut best = None;
        for (i, &x) in logits.data().iter().enumerate() {
            if i == BOS_ID || i == UNK_ID {
                continue;
            }
            if best.is_none_or(|(_, b)| x > b) {
                best = Some((i, x));
            }
        }
        let tok = best.unwrap().0;
        out.push(tok);
        if tok == EOS_ID {
            break;
        }
        state = next;
        prev = tok;
    }
    out
}

fn criterion_fusion_identity() -> Outcome {
    let words = ["a", "cat", "dog", "on", "mat", "the"];
    let mut steps = 0;
    for seed in 0..5 {
        let mut m = tiny_model(&words, 4, 6, 3, seed);
        m.set_vision_zero();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = image(&mut rng, "i", 3);
        let f_im = {
            let mut f = Forward::new(&m.params);
            let a = ok(m.vision.activations(&mut f, &img))?;
            f.value(a).clone()
        };
        ensure(f_im.data().iter().all(|&x| x == 0.0), || "zeroed visual head still emits activations".into())?;
        let decoded = ok(greedy_decode(&m, &img, 8))?;
        let reference = lm_only_greedy(&m, 8);
        ensure(decoded.tokens == reference, || format!("seed {seed}: fused {:?} vs language model {reference:?}", decoded.tokens))?;
        let mut fused_state = LmState::zeros(m.config.hidden);
        let mut lm_state = LmState::zeros(m.config.hidden);
        let mut prev = BOS_ID;
        for &tok in &decoded.tokens {
            let (fs, p) = ok(fused_distribution(&m, &fused_state, prev, &f_im))?;
            let (ls, logits) = ok(lm_step(&m.params, &m.lm, &lm_state, prev))?;
            ensure(p.data() == softmax_slice(logits.data()).as_slice(), || format!("seed {seed}: distributions differ"))?;
            (fused_state, lm_state, prev) = (fs, ls, tok);
            steps += 1;
        }
    }
    Ok(format!("{steps} decoded steps bit-identical over 5 models"))
}

fn criterion_tied_embedding() -> Outcome {
    let words = ["a", "cat", "dog", "on", "mat"];
    let mut m = tiny_model(&words, 4, 4, 3, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sources = Sources {
        paired: (0..6).map(|i| PairedExample { image: image(&mut rng, &format!("p{i}"), 3), caption: vec![3, 4 + i % 2, 6, 3, 7] }).collect(),
        images: (0..6).map(|i| LabeledImage { image: image(&mut rng, &format!("l{i}"), 3), labels: LabelVector::new([4 + i % 3]) }).collect(),
        texts: vec![vec![3, 5, 6, 7], vec![3, 4, 6, 3, 7]],
    };
    let before = m.params.get(m.lm.embedding).clone();
    let mut trainer = ok(Trainer::new(TrainConfig { lr: 1e-2, steps: 20, batch_paired: 2, batch_image: 2, batch_text: 2, ..TrainConfig::default() }, &m))?;
    ok(trainer.run(&mut m, &sources, 20))?;

    let e = m.lm.embedding;
    let table = m.params.get(e);
    let (v, d) = (m.vocab_size(), m.lm.dim);
    let shaped: Vec<_> = m.params.iter().filter(|(_, p)| p.value.shape() == [v, d]).map(|(id, _)| id).collect();
    ensure(shaped == vec![e], || format!("expected one shared [{v}, {d}] table, found {}", shaped.len()))?;
    ensure(table != &before, || "embedding did not move during training".into())?;

    // input lookup of token k feeds row k; output logit k is row k against the projected state
    let mut worst = 0.0f64;
    for k in 0..v {
        let (state, logits) = ok(lm_step(&m.params, &m.lm, &LmState::zeros(4), k))?;
        let mut f = Forward::new(&m.params);
        let w_out = f.bind(m.lm.w_out);
        let b_out = f.bind(m.lm.b_out);
        let h = f.input(state.hidden.clone());
        let u = ok(f.graph.matvec(w_out, h))?;
        let u = ok(f.graph.add(u, b_out))?;
        let u = f.value(u).clone();
        for j in 0..v {
            let manual: f64 = table.row(j).iter().zip(u.data()).map(|(a, b)| a * b).sum();
            worst = worst.max((manual - logits.data()[j]).abs());
        }
        let mut bumped = m.clone();
        bumped.params.get_mut(e).row_mut(k)[0] += 0.5;
        let (moved, _) = ok(lm_step(&bumped.params, &bumped.lm, &LmState::zeros(4), k))?;
        ensure(moved.hidden != state.hidden, || format!("row {k} is not the input lookup"))?;
    }
    ensure(worst < 1e-12, || format!("output projection disagrees with the shared rows by {worst:.2e}"))?;
    Ok(format!("one [{v}, {d}] table after 20 joint steps; projection residual {worst:.1e}"))
}

fn f1_of(results: &[noc::pipeline::AblationResult], row: &str) -> f64 {
    results.iter().find(|r| r.row.name == row).map_or(f64::NAN, |r| r.report.average_f1)
}

fn criterion_ablation_order() -> Outcome {
    let rows: Vec<_> = standard_rows().into_iter().filter(|r| [TUNED_VISION, LM_EMBEDDING, AUXILIARY, ALL].contains(&r.name.as_str())).collect();
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for seed in [1u64, 2, 3] {
        let world = ok(generate_world::<f64>(&WorldSpec { seed, ..WorldSpec::default() }))?;
        let split = ok(make_heldout_split(&world, &DEFAULT_HELDOUT))?;
        let base = PipelineConfig { seed, ..PipelineConfig::default() };
        let results = ok(run_ablation(&world.vocab, &world.embeddings, &split, &rows, &base))?;
        let [tv, lm, aux, all] = [TUNED_VISION, LM_EMBEDDING, AUXILIARY, ALL].map(|r| f1_of(&results, r));
        let holds = all > aux && aux > lm && lm > tv && all - lm >= 0.15;
        lines.push(format!("seed {seed}: all {all:.3} aux {aux:.3} lm&emb {lm:.3} tv {tv:.3}"));
        if !holds {
            failed.push(seed);
        }
    }
    let detail = lines.join("; ");
    ensure(failed.is_empty(), || format!("ordering broken for seeds {failed:?}: {detail}"))?;
    Ok(detail)
}

fn criterion_forgetting() -> Outcome {
    let mut lines = Vec::new();
    for seed in [1u64, 2, 3] {
        let world = ok(generate_world::<f64>(&WorldSpec { seed, ..WorldSpec::default() }))?;
        let split = ok(make_heldout_split(&world, &DEFAULT_HELDOUT))?;
        let base = PipelineConfig { seed, ..PipelineConfig::default() };
        let p = ok(forgetting_probe(&world.vocab, &world.embeddings, &split, &world.object_ids(), &base, 3))?;
        let line = format!("seed {seed}: drop caption-only {:.3}, joint {:.3}", p.drop_caption_only(), p.drop_joint());
        ensure(p.drop_joint() < p.drop_caption_only(), || line.clone())?;
        lines.push(line);
    }
    Ok(lines.join("; "))
}

/// Every sequence over the unmasked tokens, ending at EOS or cut at `max_len`.
fn enumerate(alphabet: &[usize], max_len: usize) -> Vec<Vec<usize>> {
    let mut done = Vec::new();
    let mut open = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for prefix in open {
            for &t in alphabet {
                let mut s = prefix.clone();
                s.push(t);
                if t == EOS_ID {
                    done.push(s);
                } else {
                    next.push(s);
                }
            }
        }
        open = next;
    }
    done.extend(open);
    done
}

fn brute_score(m: &NocModel<f64>, f_im: &Tensor<f64>, seq: &[usize]) -> f64 {
    let mut state = LmState::zeros(m.config.hidden);
    let mut prev = BOS_ID;
    let mut total = 0.0;
    for &t in seq {
        let (next, p) = fused_distribution(m, &state, prev, f_im).unwrap();
        let mut logits: Vec<f64> = p.data().iter().map(|x| x.ln()).collect();
        logits[BOS_ID] = f64::NEG_INFINITY;
        logits[UNK_ID] = f64::NEG_INFINITY;
        total += log_softmax_slice(&logits)[t];
        state = next;
        prev = t;
    }
    total
}

fn criterion_decoder() -> Outcome {
    let alphabet = [EOS_ID, 3, 4];
    let mut checked = 0;
    for seed in 0..20 {
        let m = tiny_model(&["x", "y"], 3, 4, 2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = image(&mut rng, "i", 2);
        let f_im = {
            let mut f = Forward::new(&m.params);
            let a = ok(m.vision.activations(&mut f, &img))?;
            f.value(a).clone()
        };
        let (best, best_lp) = enumerate(&alphabet, 3)
            .into_iter()
            .map(|s| {
                let lp = brute_score(&m, &f_im, &s);
                (s, lp)
            })
            .fold((Vec::new(), f64::NEG_INFINITY), |acc, (s, lp)| if lp > acc.1 { (s, lp) } else { acc });
        let beam = ok(beam_decode(&m, &img, 125, 3))?;
        ensure(beam.tokens == best && (beam.log_prob - best_lp).abs() < 1e-10, || {
            format!("seed {seed}: beam {:?} ({}) vs enumeration {best:?} ({best_lp})", beam.tokens, beam.log_prob)
        })?;
        let g = ok(greedy_decode(&m, &img, 3))?;
        let b1 = ok(beam_decode(&m, &img, 1, 3))?;
        ensure(g.tokens == b1.tokens && g.log_prob.to_bits() == b1.log_prob.to_bits(), || format!("seed {seed}: beam:1 differs from greedy"))?;
        checked += 1;
    }
    let world = ok(generate_world::<f64>(&WorldSpec { n_test: 200, ..WorldSpec::default() }))?;
    let m = tiny_model(&world.vocab.tokens()[3..].iter().map(String::as_str).collect::<Vec<_>>(), 4, 8, world.spec.features, 5);
    let imgs: Vec<_> = world.test.iter().map(|e| e.image.clone()).collect();
    let greedy = format_captions(&ok(caption_images(&m, &imgs, DecodeMethod::Greedy, 12, 0))?);
    let beam1 = format_captions(&ok(caption_images(&m, &imgs, DecodeMethod::Beam(1), 12, 0))?);
    ensure(greedy == beam1, || "greedy and beam:1 caption files differ".into())?;
    Ok(format!("{checked} V=5 fixtures match enumeration; {} captions byte-identical under beam:1", imgs.len()))
}

fn brute_counts(captions: &Captions, truth: &Truth, object: &str) -> (usize, usize, usize) {
    let mut tp = 0;
    let mut said = 0;
    let mut present = 0;
    for (id, objs) in truth {
        let mut m = false;
        if let Some(c) = captions.get(id) {
            for w in c {
                if w.to_lowercase() == object {
                    m = true;
                }
            }
        }
        let p = objs.contains(object);
        if m {
            said += 1;
        }
        if p {
            present += 1;
        }
        if m && p {
            tp += 1;
        }
    }
    (tp, said, present)
}

fn criterion_metrics() -> Outcome {
    let pool = ["cat", "dog", "zebra", "bus", "cup"];
    let filler = ["a", "the", "on", "Cat", "ZEBRA", "field"];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut evaluations = 0;
    for fixture in 0..100 {
        let n = rng.gen_range(1..25);
        let mut truth = Truth::new();
        let mut captions = Captions::new();
        for i in 0..n {
            let id = format!("img{i}");
            let objs: BTreeSet<String> = pool.iter().filter(|_| rng.gen_bool(0.35)).map(|s| s.to_string()).collect();
            if rng.gen_bool(0.85) {
                let len = rng.gen_range(0..7);
                let words = (0..len)
                    .map(|_| if rng.gen_bool(0.5) { pool[rng.gen_range(0..pool.len())] } else { filler[rng.gen_range(0..filler.len())] })
                    .map(str::to_string)
                    .collect();
                captions.insert(id.clone(), words);
            }
            truth.insert(id, objs);
        }
        let present: Vec<&str> = pool.iter().copied().filter(|o| truth.values().any(|s| s.contains(*o))).collect();
        for &o in &present {
            let (tp, said, pres) = brute_counts(&captions, &truth, o);
            let p = if said == 0 { 0.0 } else { tp as f64 / said as f64 };
            let r = tp as f64 / pres as f64;
            let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            let got = ok(object_f1(&captions, &truth, o))?;
            let acc = ok(category_accuracy(&captions, &truth, o))?;
            ensure((got.precision - p).abs() < 1e-12 && (got.recall - r).abs() < 1e-12 && (got.f1 - f1).abs() < 1e-12, || {
                format!("fixture {fixture}, `{o}`: {got:?} vs p {p} r {r} f1 {f1}")
            })?;
            ensure((acc - r).abs() < 1e-12, || format!("fixture {fixture}, `{o}`: accuracy {acc} vs {r}"))?;
            evaluations += 1;
        }
        if !present.is_empty() {
            let described = present.iter().filter(|o| brute_counts(&captions, &truth, o).0 > 0).count();
            let want = described as f64 / present.len() as f64;
            let got = ok(percent_described(&captions, &truth, &present))?;
            ensure((got - want).abs() < 1e-12, || format!("fixture {fixture}: described {got} vs {want}"))?;
        }
    }

    let truth: Truth = [("1", true), ("2", true), ("3", true), ("4", false)]
        .into_iter()
        .map(|(id, has)| (id.to_string(), if has { BTreeSet::from(["dog".to_string()]) } else { BTreeSet::new() }))
        .collect();
    let captions: Captions = [("1", "a dog"), ("2", "a dog"), ("3", "a cat"), ("4", "a dog")]
        .into_iter()
        .map(|(id, c)| (id.to_string(), c.split(' ').map(str::to_string).collect()))
        .collect();
    let w = ok(object_f1(&captions, &truth, "dog"))?;
    let third = 2.0 / 3.0;
    ensure([w.precision, w.recall, w.f1].iter().all(|x| (x - third).abs() < 1e-12), || format!("worked example gave {w:?}"))?;
    Ok(format!("{evaluations} object scores over 100 fixtures; worked example 2/3"))
}

fn small_pipeline(seed: u64, steps: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig { seed, lm_pretrain_steps: 100, vision_pretrain_steps: 100, ..PipelineConfig::default() };
    cfg.train.steps = steps;
    cfg
}

fn dir_bytes(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn criterion_hygiene() -> Outcome {
    let world = ok(generate_world::<f64>(&WorldSpec { seed: 4, ..WorldSpec::default() }))?;
    let split = ok(make_heldout_split(&world, &DEFAULT_HELDOUT))?;
    let held: BTreeSet<usize> = split.heldout.ids().collect();
    let leaks = split.train_paired.iter().filter(|p| p.caption.iter().any(|t| held.contains(t))).count();
    let by_id: BTreeMap<&str, &LabelVector> = world.paired.iter().map(|e| (e.image.id.as_str(), &e.objects)).collect();
    let label_leaks = split
        .train_paired
        .iter()
        .filter(|p| by_id.get(p.image.id.as_str()).is_none_or(|objs| objs.ids().any(|o| held.contains(&o))))
        .count();
    let clean = world.paired.iter().filter(|e| !e.objects.ids().any(|o| held.contains(&o))).count();
    ensure(leaks == 0 && label_leaks == 0 && clean == split.train_paired.len(), || {
        format!("{leaks} caption leaks, {label_leaks} label leaks, {clean} clean vs {} kept", split.train_paired.len())
    })?;

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    ok(write_split(&tmp.path().join("data"), &world, &split))?;
    let text = std::fs::read_to_string(tmp.path().join("data/train_paired.tsv")).map_err(|e| e.to_string())?;
    let file_leaks = text.split(|c: char| c.is_whitespace()).filter(|w| DEFAULT_HELDOUT.contains(w)).count();
    ensure(file_leaks == 0, || format!("{file_leaks} held-out words in train_paired.tsv"))?;

    let sources = split.sources();
    let cfg = small_pipeline(4, 50);
    let (model, trainer, log) = ok(train_pipeline(&world.vocab, &world.embeddings, &sources, &cfg))?;
    let (model2, _, log2) = ok(train_pipeline(&world.vocab, &world.embeddings, &sources, &cfg))?;
    let bits = |l: &[noc::fusion::LossBreakdown]| l.iter().map(|b| [b.l_cm, b.l_im, b.l_lm, b.total].map(f64::to_bits)).collect::<Vec<_>>();
    ensure(bits(&log) == bits(&log2) && model == model2, || "two seeded 50-step runs differ".into())?;

    let ck = Checkpoint { model, trainer: Some(trainer), pipeline: cfg.clone() };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(save_checkpoint(&a, &ck))?;
    let loaded = ok(load_checkpoint::<f64>(&a, Some(&world.vocab.hash())))?;
    ok(save_checkpoint(&b, &loaded))?;
    ensure(dir_bytes(&a) == dir_bytes(&b), || "re-saved checkpoint is not byte-identical".into())?;
    ensure(loaded.model == ck.model, || "loaded model differs".into())?;

    // 25 steps, save, load, 25 more == 50 uninterrupted
    let half = small_pipeline(4, 25);
    let (m, t, mut first) = ok(train_pipeline(&world.vocab, &world.embeddings, &sources, &half))?;
    let c = tmp.path().join("half");
    ok(save_checkpoint(&c, &Checkpoint { model: m, trainer: Some(t), pipeline: half }))?;
    let mut resumed = ok(load_checkpoint::<f64>(&c, None))?;
    let mut t = resumed.trainer.take().ok_or("no trainer state")?;
    first.extend(ok(t.run(&mut resumed.model, &sources, 25))?);
    ensure(bits(&first) == bits(&log) && resumed.model == ck.model, || "resumed run diverges from the uninterrupted one".into())?;
    Ok(format!("0 leaks in {} training pairs; checkpoint and 50-step logs bit-identical", split.train_paired.len()))
}

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "gradient correctness", limit: Some(Duration::from_secs(30)), run: criterion_gradients },
        Criterion { id: 2, name: "closed-form losses", limit: None, run: criterion_closed_form },
        Criterion { id: 3, name: "fusion identity", limit: None, run: criterion_fusion_identity },
        Criterion { id: 4, name: "tied embedding", limit: None, run: criterion_tied_embedding },
        Criterion { id: 5, name: "zero-shot ablation ordering", limit: Some(Duration::from_secs(600)), run: criterion_ablation_order },
        Criterion { id: 6, name: "forgetting", limit: None, run: criterion_forgetting },
        Criterion { id: 7, name: "decoder optimality", limit: None, run: criterion_decoder },
        Criterion { id: 8, name: "metric oracle", limit: None, run: criterion_metrics },
        Criterion { id: 9, name: "split hygiene and reproducibility", limit: None, run: criterion_hygiene },
    ];
    let only: Option<Vec<u8>> = std::env::var("NOC_CRITERIA").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failures = 0;
    for c in criteria.iter().filter(|c| only.as_ref().is_none_or(|o| o.contains(&c.id))) {
        let start = Instant::now();
        let mut outcome = (c.run)();
        let took = start.elapsed();
        if let (Ok(detail), Some(limit)) = (&outcome, c.limit) {
            if took > limit {
                outcome = Err(format!("took {:.1}s, limit {}s ({detail})", took.as_secs_f64(), limit.as_secs()));
            }
        }
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {} {:<34} {:>7.1}s  {detail}", c.id, c.name, took.as_secs_f64());
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criterion(s) failed");
        ExitCode::FAILURE
    }
}
