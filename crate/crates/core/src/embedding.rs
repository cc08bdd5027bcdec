//! Distributional word embeddings, used both as the input lookup and,
//! transposed, as the output projection onto the vocabulary.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NocError, Result};
use crate::scalar::Real;
use crate::tensor::{dot, Tensor};
use crate::vocab::Vocabulary;

/// Half-width of the uniform range used for reserved-token rows.
pub const RESERVED_INIT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<T> {
    matrix: Tensor<T>,
    pub frozen: bool,
}

impl<T: Real> EmbeddingTable<T> {
    pub fn new(matrix: Tensor<T>) -> Result<Self> {
        if matrix.shape().len() != 2 {
            return Err(NocError::Dimension(format!(
                "embedding matrix must be 2-d, got {:?}",
                matrix.shape()
            )));
        }
        if !matrix.is_finite() {
            return Err(NocError::Argument("embedding matrix has non-finite entries".into()));
        }
        Ok(EmbeddingTable { matrix, frozen: true })
    }

    /// Seeded Gaussian rows with per-coordinate deviation `1/sqrt(dim)`.
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid deviation");
        let data = (0..vocab_size * dim).map(|_| T::lit(normal.sample(&mut rng))).collect();
        let matrix = Tensor::new(vec![vocab_size, dim], data).expect("consistent shape");
        EmbeddingTable { matrix, frozen: true }
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Tensor<T> {
        self.matrix
    }

    pub fn embed(&self, id: usize) -> Result<Tensor<T>> {
        embed(&self.matrix, id)
    }

    pub fn project_to_vocab(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        project_to_vocab(&self.matrix, h)
    }

    /// The `k` tokens most cosine-similar to `token`, best first.
    pub fn nearest_neighbors(&self, vocab: &Vocabulary, token: &str, k: usize) -> Result<Vec<(String, T)>> {
        let q = vocab.require(token)?;
        if k >= vocab.len() {
            return Err(NocError::Argument(format!("k = {k} must be below vocabulary size {}", vocab.len())));
        }
        let norm = |r: &[T]| dot(r, r).sqrt();
        let qrow = self.matrix.row(q);
        let qn = norm(qrow);
        let mut scored: Vec<(usize, T)> = (0..self.vocab_size())
            .filter(|&i| i != q)
            .map(|i| {
                let r = self.matrix.row(i);
                let denom = qn * norm(r);
                let sim = if denom > T::zero() { dot(qrow, r) / denom } else { T::zero() };
                (i, sim)
            })
            .collect();
        // descending similarity, ascending id on ties
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(i, s)| (vocab.token(i).unwrap_or_default().to_string(), s))
            .collect())
    }
}

pub fn embed<T: Real>(matrix: &Tensor<T>, id: usize) -> Result<Tensor<T>> {
    if id >= matrix.rows() {
        return Err(NocError::Index { index: id, size: matrix.rows() });
    }
    Ok(Tensor::vector(matrix.row(id).to_vec()))
}

/// `logits[v] = <row v, h>`; no bias.
pub fn project_to_vocab<T: Real>(matrix: &Tensor<T>, h: &Tensor<T>) -> Result<Tensor<T>> {
    if h.shape() != [matrix.cols()] {
        return Err(NocError::Dimension(format!(
            "projection expects a vector of length {}, got {:?}",
            matrix.cols(),
            h.shape()
        )));
    }
    Ok(Tensor::vector((0..matrix.rows()).map(|v| dot(matrix.row(v), h.data())).collect()))
}

/// Parses a `token v1 ... vd` file.
pub fn parse_embedding_file(text: &str) -> Result<(usize, HashMap<String, Vec<f64>>)> {
    let mut dim = None;
    let mut rows = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let token = parts.next().unwrap_or_default().to_string();
        let values = parts
            .map(|p| {
                p.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| NocError::Format { line: lineno, message: format!("bad float `{p}`") })
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(NocError::Format { line: lineno, message: "no vector values".into() });
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(NocError::Format {
                    line: lineno,
                    message: format!("expected {d} values, found {}", values.len()),
                })
            }
            _ => {}
        }
        if rows.insert(token.clone(), values).is_some() {
            return Err(NocError::Format { line: lineno, message: format!("duplicate token `{token}`") });
        }
    }
    let dim = dim.ok_or(NocError::Format { line: 0, message: "embedding file is empty".into() })?;
    Ok((dim, rows))
}

/// Builds a table for `vocab` from embedding-file text. Reserved tokens
/// missing from the file get seeded uniform rows in `[-0.1, 0.1]`.
pub fn embeddings_from_text<T: Real>(text: &str, vocab: &Vocabulary, seed: u64) -> Result<EmbeddingTable<T>> {
    let (dim, rows) = parse_embedding_file(text)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(vocab.len() * dim);
    for (id, tok) in vocab.tokens().iter().enumerate() {
        match rows.get(tok) {
            Some(v) => data.extend(v.iter().map(|&x| T::lit(x))),
            None if Vocabulary::is_control(id) => {
                data.extend((0..dim).map(|_| T::lit(rng.gen_range(-RESERVED_INIT..=RESERVED_INIT))))
            }
            None => return Err(NocError::MissingEmbedding(tok.clone())),
        }
    }
    EmbeddingTable::new(Tensor::new(vec![vocab.len(), dim], data)?)
}

pub fn load_embeddings<T: Real>(path: &Path, vocab: &Vocabulary, seed: u64) -> Result<EmbeddingTable<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| NocError::io(path, e))?;
    embeddings_from_text(&text, vocab, seed)
}

/// Writes `token v1 ... vd` lines in vocabulary order.
pub fn write_embeddings<T: Real>(path: &Path, vocab: &Vocabulary, table: &EmbeddingTable<T>) -> Result<()> {
    let mut out = String::new();
    for (id, tok) in vocab.tokens().iter().enumerate() {
        out.push_str(tok);
        for v in table.matrix().row(id) {
            out.push(' ');
            out.push_str(&format!("{}", v.as_f64()));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| NocError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::softmax_slice;
    use proptest::prelude::*;

    fn cat_dog() -> (Vocabulary, EmbeddingTable<f64>) {
        let v = Vocabulary::from_tokens(["cat", "dog"]);
        let t = embeddings_from_text("cat 0.1 0.2\ndog 0.3 0.4\n", &v, 7).unwrap();
        (v, t)
    }

    #[test]
    fn loads_rows_by_vocabulary_id() {
        let (_, t) = cat_dog();
        assert_eq!(t.matrix().shape(), &[5, 2]);
        assert_eq!(t.matrix().row(3), &[0.1, 0.2]);
        assert_eq!(t.matrix().row(4), &[0.3, 0.4]);
        for id in 0..3 {
            assert!(t.matrix().row(id).iter().all(|v| v.abs() <= RESERVED_INIT));
        }
        assert_eq!(t.embed(3).unwrap().data(), &[0.1, 0.2]);
        assert_eq!(t.embed(3).unwrap(), t.embed(3).unwrap());
        assert!(matches!(t.embed(5), Err(NocError::Index { index: 5, size: 5 })));
    }

    #[test]
    fn missing_and_malformed_records() {
        let v = Vocabulary::from_tokens(["cat", "zebra"]);
        let err = embeddings_from_text::<f64>("cat 0.1 0.2\n", &v, 0).unwrap_err();
        assert!(matches!(err, NocError::MissingEmbedding(ref t) if t == "zebra"));
        let err = embeddings_from_text::<f64>("cat 0.1 0.2\nzebra 0.3\n", &v, 0).unwrap_err();
        assert!(matches!(err, NocError::Format { line: 2, .. }));
    }

    #[test]
    fn reserved_only_vocabulary_gets_seeded_rows() {
        let v = Vocabulary::new();
        let a = embeddings_from_text::<f64>("cat 0.1 0.2 0.3\n", &v, 11).unwrap();
        let b = embeddings_from_text::<f64>("cat 0.1 0.2 0.3\n", &v, 11).unwrap();
        assert_eq!(a.matrix().shape(), &[3, 3]);
        assert_eq!(a, b);
    }

    #[test]
    fn projection_is_row_dot_products() {
        let (_, t) = cat_dog();
        let logits = t.project_to_vocab(&Tensor::vector(vec![1.0, 1.0])).unwrap();
        assert!((logits.data()[3] - 0.3).abs() < 1e-15);
        assert!((logits.data()[4] - 0.7).abs() < 1e-15);
        let zero = t.project_to_vocab(&Tensor::vector(vec![0.0, 0.0])).unwrap();
        let p = softmax_slice(zero.data());
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));
        assert!(matches!(t.project_to_vocab(&Tensor::vector(vec![1.0])), Err(NocError::Dimension(_))));
    }

    #[test]
    fn orthonormal_rows_project_back_to_themselves() {
        let mut data = vec![0.0; 16];
        for i in 0..4 {
            data[i * 4 + i] = 1.0;
        }
        let t = EmbeddingTable::new(Tensor::new(vec![4, 4], data).unwrap()).unwrap();
        for id in 0..4 {
            let logits = t.project_to_vocab(&t.embed(id).unwrap()).unwrap();
            assert_eq!(logits.argmax(), id);
        }
    }

    #[test]
    fn nearest_neighbors_order_and_ties() {
        let v = Vocabulary::from_tokens(["a", "b", "c", "d"]);
        let text = "a 1 0 0\nb 0 1 0\nc 1 0 0\nd 0.6 0.8 0\n<bos> 0 0 1\n<eos> 0 0 1\n<unk> 0 0 1\n";
        let t = embeddings_from_text::<f64>(text, &v, 0).unwrap();
        let nn = t.nearest_neighbors(&v, "a", 3).unwrap();
        // brute force: cos(a,c)=1, cos(a,d)=0.6, then zeros led by lowest id
        assert_eq!(nn[0].0, "c");
        assert!((nn[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(nn[1].0, "d");
        assert!((nn[1].1 - 0.6).abs() < 1e-12);
        assert_eq!(nn[2].0, "<bos>");
        assert!(matches!(t.nearest_neighbors(&v, "zz", 1), Err(NocError::Lookup(_))));
        assert!(t.nearest_neighbors(&v, "a", 7).is_err());
    }

    proptest! {
        #[test]
        fn loading_is_line_order_independent(seed in 0u64..1000) {
            let v = Vocabulary::from_tokens(["w0", "w1", "w2", "w3", "w4"]);
            let mut lines: Vec<String> = (0..5).map(|i| format!("w{i} {} {}", i as f64 * 0.5, -(i as f64))).collect();
            let base = embeddings_from_text::<f64>(&lines.join("\n"), &v, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::seq::SliceRandom;
            lines.shuffle(&mut rng);
            let shuffled = embeddings_from_text::<f64>(&lines.join("\n"), &v, 3).unwrap();
            prop_assert_eq!(base, shuffled);
        }
    }
}
