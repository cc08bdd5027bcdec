//! In-memory examples for the three training sources and their text formats.
//!
//! * corpus: one lowercase, whitespace-tokenised sentence per line
//! * labelled images: `id<TAB>label1,label2,...<TAB>f1 f2 ... fF`
//! * paired captions: `id<TAB>caption tokens<TAB>f1 f2 ... fF`
//! * generated captions: `id<TAB>caption tokens<TAB>log_prob`

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{NocError, Result};
use crate::scalar::Real;
use crate::vision::{ImageFeatures, LabelVector};
use crate::vocab::Vocabulary;

#[derive(Clone, Debug, PartialEq)]
pub struct PairedExample<T> {
    pub image: ImageFeatures<T>,
    pub caption: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage<T> {
    pub image: ImageFeatures<T>,
    pub labels: LabelVector,
}

/// The three independent training sources.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sources<T> {
    pub paired: Vec<PairedExample<T>>,
    pub images: Vec<LabeledImage<T>>,
    pub texts: Vec<Vec<usize>>,
}

/// One generated caption.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub log_prob: f64,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| NocError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| NocError::io(path, e))
}

fn fmt_features<T: Real>(out: &mut String, img: &ImageFeatures<T>) {
    for (i, v) in img.vector.data().iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        // shortest round-trip representation
        let _ = write!(out, "{}", v.as_f64());
    }
}

fn parse_features<T: Real>(id: &str, field: &str, line: usize) -> Result<ImageFeatures<T>> {
    let values = field
        .split_whitespace()
        .map(|p| {
            p.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(T::lit)
                .ok_or_else(|| NocError::Format { line, message: format!("bad feature value `{p}`") })
        })
        .collect::<Result<Vec<T>>>()?;
    ImageFeatures::new(id, values).map_err(|e| NocError::Format { line, message: e.to_string() })
}

fn split3(line: &str, lineno: usize) -> Result<(&str, &str, &str)> {
    let mut parts = line.split('\t');
    match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), Some(c), None) => Ok((a, b, c)),
        _ => Err(NocError::Format { line: lineno, message: "expected three tab-separated fields".into() }),
    }
}

pub fn write_corpus(path: &Path, vocab: &Vocabulary, sentences: &[Vec<usize>]) -> Result<()> {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&vocab.decode(s));
        out.push('\n');
    }
    write(path, &out)
}

/// Reads a corpus; out-of-vocabulary words map to UNK, blank lines are skipped.
pub fn read_corpus(path: &Path, vocab: &Vocabulary) -> Result<Vec<Vec<usize>>> {
    Ok(read(path)?.lines().filter(|l| !l.trim().is_empty()).map(|l| vocab.encode(l)).collect())
}

pub fn write_labeled<T: Real>(path: &Path, vocab: &Vocabulary, data: &[LabeledImage<T>]) -> Result<()> {
    let mut out = String::new();
    for ex in data {
        out.push_str(&ex.image.id);
        out.push('\t');
        let labels: Vec<&str> = ex.labels.ids().filter_map(|i| vocab.token(i)).collect();
        out.push_str(&labels.join(","));
        out.push('\t');
        fmt_features(&mut out, &ex.image);
        out.push('\n');
    }
    write(path, &out)
}

pub fn read_labeled<T: Real>(path: &Path, vocab: &Vocabulary) -> Result<Vec<LabeledImage<T>>> {
    let mut out = Vec::new();
    for (n, line) in read(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, labels, feats) = split3(line, n + 1)?;
        let ids = labels
            .split(',')
            .filter(|l| !l.is_empty())
            .map(|l| vocab.require(l))
            .collect::<Result<Vec<_>>>()?;
        out.push(LabeledImage { image: parse_features(id, feats, n + 1)?, labels: LabelVector::new(ids) });
    }
    Ok(out)
}

pub fn write_paired<T: Real>(path: &Path, vocab: &Vocabulary, data: &[PairedExample<T>]) -> Result<()> {
    let mut out = String::new();
    for ex in data {
        out.push_str(&ex.image.id);
        out.push('\t');
        out.push_str(&vocab.decode(&ex.caption));
        out.push('\t');
        fmt_features(&mut out, &ex.image);
        out.push('\n');
    }
    write(path, &out)
}

pub fn read_paired<T: Real>(path: &Path, vocab: &Vocabulary) -> Result<Vec<PairedExample<T>>> {
    let mut out = Vec::new();
    for (n, line) in read(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, caption, feats) = split3(line, n + 1)?;
        out.push(PairedExample { image: parse_features(id, feats, n + 1)?, caption: vocab.encode(caption) });
    }
    Ok(out)
}

/// Image features from either a labelled-image or a paired-caption file.
pub fn read_images<T: Real>(path: &Path) -> Result<Vec<ImageFeatures<T>>> {
    let mut out = Vec::new();
    for (n, line) in read(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, _, feats) = split3(line, n + 1)?;
        out.push(parse_features(id, feats, n + 1)?);
    }
    Ok(out)
}

pub fn format_captions(records: &[CaptionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{}\t{}\t{}", r.id, r.tokens.join(" "), r.log_prob);
    }
    out
}

pub fn write_captions(path: &Path, records: &[CaptionRecord]) -> Result<()> {
    write(path, &format_captions(records))
}

pub fn read_captions(path: &Path) -> Result<Vec<CaptionRecord>> {
    let mut out = Vec::new();
    for (n, line) in read(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, caption, lp) = split3(line, n + 1)?;
        let log_prob = lp
            .trim()
            .parse::<f64>()
            .map_err(|_| NocError::Format { line: n + 1, message: format!("bad log probability `{lp}`") })?;
        out.push(CaptionRecord {
            id: id.to_string(),
            tokens: caption.split_whitespace().map(str::to_string).collect(),
            log_prob,
        });
    }
    Ok(out)
}
