//! Object-mention metrics over generated captions.
//!
//! A caption mentions an object when the object token occurs in it after
//! lowercasing. Mention is boolean per image, so word order and repeats
//! do not matter.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NocError, Result};
use crate::lm::{lm_loss, LmParams};
use crate::params::ParamSet;
use crate::scalar::Real;

/// Image id to caption tokens.
pub type Captions = BTreeMap<String, Vec<String>>;
/// Image id to the objects it contains.
pub type Truth = BTreeMap<String, BTreeSet<String>>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn mentions(caption: Option<&Vec<String>>, object: &str) -> bool {
    caption.is_some_and(|c| c.iter().any(|w| w.to_lowercase() == object))
}

fn check_ids(captions: &Captions, truth: &Truth) -> Result<()> {
    match captions.keys().find(|id| !truth.contains_key(*id)) {
        Some(id) => Err(NocError::Argument(format!("caption for unknown image `{id}`"))),
        None => Ok(()),
    }
}

/// (mentioned and present, mentioned, present)
fn counts(captions: &Captions, truth: &Truth, object: &str) -> (usize, usize, usize) {
    let (mut hit, mut said, mut present) = (0, 0, 0);
    for (id, objs) in truth {
        let m = mentions(captions.get(id), object);
        let p = objs.contains(object);
        hit += (m && p) as usize;
        said += m as usize;
        present += p as usize;
    }
    (hit, said, present)
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Mention precision, recall and F1 for one object. Precision is zero when
/// the object is never mentioned.
pub fn object_f1(captions: &Captions, truth: &Truth, object: &str) -> Result<Prf> {
    check_ids(captions, truth)?;
    let object = object.to_lowercase();
    if !truth.values().any(|o| o.contains(&object)) {
        return Err(NocError::Lookup(format!("object `{object}` does not occur in the ground truth")));
    }
    let (hit, said, present) = counts(captions, truth, &object);
    let (p, r) = (ratio(hit, said), ratio(hit, present));
    Ok(Prf { precision: p, recall: r, f1: harmonic(p, r) })
}

/// Fraction of `objects` mentioned in at least one caption of an image containing them.
pub fn percent_described(captions: &Captions, truth: &Truth, objects: &[&str]) -> Result<f64> {
    check_ids(captions, truth)?;
    if objects.is_empty() {
        return Err(NocError::Argument("no objects to describe".into()));
    }
    let described = objects
        .iter()
        .filter(|o| {
            let o = o.to_lowercase();
            truth.iter().any(|(id, objs)| objs.contains(&o) && mentions(captions.get(id), &o))
        })
        .count();
    Ok(described as f64 / objects.len() as f64)
}

/// Share of images containing `object` whose caption mentions it.
pub fn category_accuracy(captions: &Captions, truth: &Truth, object: &str) -> Result<f64> {
    check_ids(captions, truth)?;
    let object = object.to_lowercase();
    let (hit, _, present) = counts(captions, truth, &object);
    if present == 0 {
        return Err(NocError::Argument(format!("no image contains `{object}`")));
    }
    Ok(ratio(hit, present))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectScore {
    pub object: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_images: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MentionReport {
    pub objects: Vec<ObjectScore>,
    pub average_f1: f64,
    pub percent_described: f64,
    pub average_accuracy: f64,
    /// Held-out language-model perplexity, when measured.
    pub perplexity: Option<f64>,
}

impl MentionReport {
    pub fn build(captions: &Captions, truth: &Truth, objects: &[&str]) -> Result<Self> {
        let mut rows = Vec::with_capacity(objects.len());
        for &o in objects {
            let prf = object_f1(captions, truth, o)?;
            let n_images = truth.values().filter(|s| s.contains(&o.to_lowercase())).count();
            rows.push(ObjectScore { object: o.to_lowercase(), precision: prf.precision, recall: prf.recall, f1: prf.f1, n_images });
        }
        let n = rows.len() as f64;
        Ok(MentionReport {
            average_f1: rows.iter().map(|r| r.f1).sum::<f64>() / n,
            average_accuracy: rows.iter().map(|r| r.recall).sum::<f64>() / n,
            percent_described: percent_described(captions, truth, objects)?,
            objects: rows,
            perplexity: None,
        })
    }

    pub fn table(&self) -> String {
        let w = self.objects.iter().map(|r| r.object.len()).chain(["average accuracy".len()]).max().unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(out, "{:<w$}  {:>6}  {:>6}  {:>6}  {:>5}", "object", "P", "R", "F1", "N");
        for r in &self.objects {
            let _ = writeln!(out, "{:<w$}  {:>6.4}  {:>6.4}  {:>6.4}  {:>5}", r.object, r.precision, r.recall, r.f1, r.n_images);
        }
        let _ = writeln!(out, "{:<w$}  {:>6}  {:>6}  {:>6.4}", "average f1", "", "", self.average_f1);
        let _ = writeln!(out, "{:<w$}  {:>6}  {:>6}  {:>6.4}", "percent described", "", "", self.percent_described);
        let _ = writeln!(out, "{:<w$}  {:>6}  {:>6}  {:>6.4}", "average accuracy", "", "", self.average_accuracy);
        if let Some(p) = self.perplexity {
            let _ = writeln!(out, "{:<w$}  {:>6}  {:>6}  {:>6.3}", "perplexity", "", "", p);
        }
        out
    }
}

/// Number of aggregate rows `table` prints after the per-object rows.
pub fn aggregate_rows(report: &MentionReport) -> usize {
    3 + report.perplexity.is_some() as usize
}

/// Writes `path` as JSON and the aligned table next to it with a `.txt` extension.
pub fn emit_report(report: &MentionReport, path: &Path) -> Result<PathBuf> {
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(path, json).map_err(|e| NocError::io(path, e))?;
    let table = path.with_extension("txt");
    std::fs::write(&table, report.table()).map_err(|e| NocError::io(&table, e))?;
    Ok(table)
}

pub fn load_report(path: &Path) -> Result<MentionReport> {
    let text = std::fs::read_to_string(path).map_err(|e| NocError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Per-token perplexity of the language model on `sentences`, counting EOS.
pub fn lm_perplexity<T: Real>(params: &ParamSet<T>, lm: &LmParams, sentences: &[Vec<usize>]) -> Result<f64> {
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for s in sentences.iter().filter(|s| !s.is_empty()) {
        nll += lm_loss(params, lm, s)?.as_f64();
        tokens += s.len() + 1;
    }
    if tokens == 0 {
        return Err(NocError::Argument("no sentences to score".into()));
    }
    Ok((nll / tokens as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn caps(rows: &[(&str, &str)]) -> Captions {
        rows.iter().map(|(i, c)| (i.to_string(), c.split_whitespace().map(String::from).collect())).collect()
    }

    fn truth(rows: &[(&str, &[&str])]) -> Truth {
        rows.iter().map(|(i, o)| (i.to_string(), o.iter().map(|s| s.to_string()).collect())).collect()
    }

    fn worked() -> (Captions, Truth) {
        let t = truth(&[("1", &["zebra"]), ("2", &["zebra"]), ("3", &["zebra"]), ("4", &["dog"]), ("5", &["dog"])]);
        let c = caps(&[("1", "a zebra in the field"), ("2", "a Zebra"), ("3", "a horse"), ("4", "a zebra and a dog"), ("5", "a dog")]);
        (c, t)
    }

    #[test]
    fn worked_example() {
        let (c, t) = worked();
        let prf = object_f1(&c, &t, "zebra").unwrap();
        assert!((prf.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((prf.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((prf.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((category_accuracy(&c, &t, "zebra").unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn one_in_three() {
        let t = truth(&[("1", &["zebra"]), ("2", &["zebra"]), ("3", &["zebra"])]);
        let c = caps(&[("1", "a zebra"), ("2", "a horse"), ("3", "")]);
        assert!((category_accuracy(&c, &t, "zebra").unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cases() {
        let t = truth(&[("1", &["zebra"]), ("2", &["dog"])]);
        let perfect = caps(&[("1", "a zebra"), ("2", "a dog")]);
        assert_eq!(object_f1(&perfect, &t, "zebra").unwrap(), Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(percent_described(&perfect, &t, &["zebra", "dog"]).unwrap(), 1.0);
        let silent = caps(&[("1", "a cat"), ("2", "a cat")]);
        assert_eq!(object_f1(&silent, &t, "zebra").unwrap(), Prf::default());
        assert_eq!(percent_described(&silent, &t, &["zebra", "dog"]).unwrap(), 0.0);
        assert_eq!(category_accuracy(&Captions::new(), &t, "zebra").unwrap(), 0.0);
        assert!(matches!(object_f1(&silent, &t, "unicorn"), Err(NocError::Lookup(_))));
        assert!(category_accuracy(&silent, &t, "unicorn").is_err());
        assert!(percent_described(&silent, &t, &[]).is_err());
        assert!(object_f1(&caps(&[("9", "a zebra")]), &t, "zebra").is_err());
    }

    #[test]
    fn percent_described_582_of_638() {
        let names: Vec<String> = (0..638).map(|i| format!("o{i}")).collect();
        let t: Truth = names.iter().map(|n| (n.clone(), BTreeSet::from([n.clone()]))).collect();
        let c: Captions = names.iter().take(582).map(|n| (n.clone(), vec![n.clone()])).collect();
        let objs: Vec<&str> = names.iter().map(String::as_str).collect();
        let got = percent_described(&c, &t, &objs).unwrap();
        assert_eq!(got, 582.0 / 638.0);
        // 582 of 638 rounds to 91.22%, not 91.27%
        assert!((got - 0.9122).abs() < 5e-5);
    }

    #[test]
    fn report_round_trips_and_recomputes() {
        let (c, t) = worked();
        let mut r = MentionReport::build(&c, &t, &["zebra", "dog"]).unwrap();
        r.perplexity = Some(3.25);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let table = emit_report(&r, &path).unwrap();
        assert_eq!(load_report(&path).unwrap(), r);
        let text = std::fs::read_to_string(table).unwrap();
        assert_eq!(text.lines().count(), 1 + r.objects.len() + aggregate_rows(&r));
        let mean = r.objects.iter().map(|o| o.f1).sum::<f64>() / 2.0;
        assert!((mean - r.average_f1).abs() < 1e-15);
    }

    fn brute(c: &Captions, t: &Truth, o: &str) -> (f64, f64, f64) {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fneg = 0.0;
        for (id, objs) in t {
            let said = c.get(id).map(|ws| ws.iter().any(|w| w.to_lowercase() == o)).unwrap_or(false);
            match (said, objs.contains(o)) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fneg += 1.0,
                _ => {}
            }
        }
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        (p, r, if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
    }

    proptest! {
        #[test]
        fn agrees_with_brute_force(
            rows in prop::collection::vec((prop::collection::btree_set(0usize..10, 0..3), prop::collection::vec(0usize..14, 0..6)), 1..50),
        ) {
            let words = |i: usize| if i < 10 { format!("o{i}") } else { ["a", "the", "in", "of"][i - 10].to_string() };
            let t: Truth = rows.iter().enumerate().map(|(k, (objs, _))| (k.to_string(), objs.iter().map(|&o| words(o)).collect())).collect();
            let mut c: Captions = rows.iter().enumerate().map(|(k, (_, ws))| (k.to_string(), ws.iter().map(|&w| words(w)).collect())).collect();
            for o in (0..10).map(words) {
                if !t.values().any(|s| s.contains(&o)) {
                    prop_assert!(object_f1(&c, &t, &o).is_err());
                    continue;
                }
                let (p, r, f) = brute(&c, &t, &o);
                let got = object_f1(&c, &t, &o).unwrap();
                prop_assert!((got.precision - p).abs() < 1e-12 && (got.recall - r).abs() < 1e-12 && (got.f1 - f).abs() < 1e-12);
                prop_assert_eq!(category_accuracy(&c, &t, &o).unwrap(), got.recall);
                prop_assert!((0.0..=1.0).contains(&got.f1));
            }
            // reversed word order and doubled mentions leave every score unchanged
            let before: Vec<_> = (0..10).map(words).filter_map(|o| object_f1(&c, &t, &o).ok()).collect();
            for ws in c.values_mut() {
                ws.reverse();
                let dup = ws.clone();
                ws.extend(dup);
            }
            let after: Vec<_> = (0..10).map(words).filter_map(|o| object_f1(&c, &t, &o).ok()).collect();
            prop_assert_eq!(before, after);
        }
    }
}
