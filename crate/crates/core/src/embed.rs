//! Pretrained word vectors and averaged document embeddings.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;

use crate::domain::{AdmissionRecord, FeatureGroup, FeatureMatrix};
use crate::error::{Error, Result};

pub const MAX_TOKEN_CHARS: usize = 64;

/// Token → vector map of fixed dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingTable {
            dimension,
            tokens: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        })
    }

    /// Inserts a vector; returns false (and keeps the existing vector) if
    /// the token is already present.
    pub fn insert(&mut self, token: &str, vector: &[f64]) -> Result<bool> {
        if vector.len() != self.dimension {
            return Err(Error::InvalidConfig(format!(
                "vector for {token:?} has {} components, table dimension is {}",
                vector.len(),
                self.dimension
            )));
        }
        if self.index.contains_key(token) {
            return Ok(false);
        }
        self.index.insert(token.to_string(), self.tokens.len());
        self.tokens.push(token.to_string());
        self.data.extend_from_slice(vector);
        Ok(true)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn vector_at(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.dimension..(idx + 1) * self.dimension]
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index_of(token).map(|i| self.vector_at(i))
    }

    /// Writes the `vocab dim` header format read by [`load_embeddings`].
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.data.len() * 12);
        let _ = writeln!(out, "{} {}", self.vocab_size(), self.dimension);
        for (i, tok) in self.tokens.iter().enumerate() {
            out.push_str(tok);
            for v in self.vector_at(i) {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedEmbeddings {
    pub table: EmbeddingTable,
    /// Duplicate tokens ignored (first occurrence wins).
    pub duplicate_tokens: usize,
}

/// Reads a text word-vector file: a `<vocab_size> <dimension>` header
/// followed by `<token> <v1> ... <vD>` lines.
pub fn load_embeddings(path: &Path) -> Result<LoadedEmbeddings> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let bad_header = |detail: String| Error::BadHeader {
        path: path.to_path_buf(),
        line: 1,
        detail,
    };
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(bad_header("file is empty".into())),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (declared, dimension) = match fields.as_slice() {
        [v, d] => match (v.parse::<usize>(), d.parse::<usize>()) {
            (Ok(v), Ok(d)) if d > 0 => (v, d),
            _ => return Err(bad_header(format!("expected `<vocab_size> <dimension>`, found {header:?}"))),
        },
        _ => return Err(bad_header(format!("expected `<vocab_size> <dimension>`, found {header:?}"))),
    };

    let mut table = EmbeddingTable::new(dimension)?;
    let mut duplicate_tokens = 0;
    let mut rows = 0usize;
    let mut vector = Vec::with_capacity(dimension);
    for (i, line) in lines.enumerate() {
        let line_no = i as u64 + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line");
        vector.clear();
        for p in parts {
            let v: f64 = p.parse().map_err(|_| Error::MalformedRow {
                path: path.to_path_buf(),
                line: line_no,
                detail: format!("unparseable component {p:?}"),
            })?;
            vector.push(v);
        }
        if vector.len() != dimension {
            return Err(Error::DimensionMismatch {
                path: path.to_path_buf(),
                line: line_no,
                expected: dimension + 1,
                found: vector.len() + 1,
            });
        }
        rows += 1;
        if !table.insert(token, &vector)? {
            duplicate_tokens += 1;
            log::warn!("{}:{line_no}: duplicate token {token:?} ignored", path.display());
        }
    }
    if rows == 0 {
        return Err(Error::EmptyVocabulary(path.to_path_buf()));
    }
    if rows != declared {
        return Err(bad_header(format!("header declares {declared} vectors, file has {rows}")));
    }
    Ok(LoadedEmbeddings {
        table,
        duplicate_tokens,
    })
}

/// Lowercases and splits on runs of non-alphanumeric characters; tokens
/// longer than 64 characters are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && t.chars().count() <= MAX_TOKEN_CHARS)
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentEmbedding {
    pub vector: Vec<f64>,
    pub tokens_seen: usize,
    pub tokens_matched: usize,
}

/// Mean of the vectors of in-vocabulary tokens, counting multiplicity.
///
/// Sums are accumulated per vocabulary entry in table order, so the
/// result is bit-identical under any permutation of `tokens`.
pub fn document_embedding<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> DocumentEmbedding {
    let mut counts: Vec<(usize, usize)> = Vec::new();
    {
        let mut by_index: HashMap<usize, usize> = HashMap::new();
        for t in tokens {
            if let Some(idx) = table.index_of(t.as_ref()) {
                *by_index.entry(idx).or_insert(0) += 1;
            }
        }
        counts.extend(by_index);
    }
    counts.sort_unstable();
    let matched: usize = counts.iter().map(|&(_, c)| c).sum();
    let mut vector = vec![0.0; table.dimension()];
    if matched > 0 {
        for &(idx, c) in &counts {
            let w = c as f64;
            for (acc, &v) in vector.iter_mut().zip(table.vector_at(idx)) {
                *acc += w * v;
            }
        }
        let total = matched as f64;
        for acc in &mut vector {
            *acc /= total;
        }
    }
    DocumentEmbedding {
        vector,
        tokens_seen: tokens.len(),
        tokens_matched: matched,
    }
}

pub fn embedding_column_names(dimension: usize) -> Vec<String> {
    (0..dimension).map(|j| format!("emb_{j:03}")).collect()
}

/// One row per record: the embedding of its discharge summary, or zeros
/// when the summary is absent.
pub fn embed_cohort(records: &[AdmissionRecord], table: &EmbeddingTable) -> FeatureMatrix {
    let d = table.dimension();
    let mut values = Array2::zeros((records.len(), d));
    for (i, rec) in records.iter().enumerate() {
        if let Some(text) = &rec.discharge_summary {
            let doc = document_embedding(&tokenize(text), table);
            for (j, v) in doc.vector.into_iter().enumerate() {
                values[[i, j]] = v;
            }
        }
    }
    FeatureMatrix::dense(
        values,
        embedding_column_names(d),
        vec![FeatureGroup::TextEmbedding; d],
    )
    .expect("generated names are unique")
}
