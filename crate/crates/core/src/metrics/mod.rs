//! Embedding-based response similarity (Average, Extrema, Greedy) and
//! Dist-n diversity.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Word vectors of a fixed dimension. Lookups of unknown words return `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: IndexMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be >= 1"));
        }
        Ok(Self {
            dim,
            vectors: IndexMap::new(),
        })
    }

    /// Inserts unless the word is already present (first occurrence wins).
    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "embedding vector",
                expected: self.dim,
                actual: vector.len(),
            });
        }
        let word = word.into();
        if self.vectors.contains_key(&word) {
            return Ok(false);
        }
        self.vectors.insert(word, vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    fn lookup<'a, S: AsRef<str>>(&'a self, tokens: &[S]) -> Vec<&'a [f64]> {
        tokens.iter().filter_map(|t| self.get(t.as_ref())).collect()
    }

    /// Plain-text word-vector format: an optional `count dim` header, then
    /// `word v1 ... vd` per line.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut table: Option<EmbeddingTable> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let fields: Vec<&str> = raw.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                continue;
            }
            let values = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| parse_err(line_no, format!("bad number: {e}")))?;
            if values.is_empty() {
                return Err(parse_err(line_no, format!("word {:?} has no vector", fields[0])));
            }
            let t = match &mut table {
                Some(t) => t,
                None => table.insert(EmbeddingTable::new(values.len())?),
            };
            if values.len() != t.dim {
                return Err(parse_err(
                    line_no,
                    format!("expected {} components, found {}", t.dim, values.len()),
                ));
            }
            t.insert(fields[0], values)?;
        }
        table.ok_or_else(|| parse_err(0, "no embedding vectors found".into()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    EmbeddingTable::load(path)
}

/// Cosine similarity; `None` if either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}

fn mean_vector(vs: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for v in vs {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += x;
        }
    }
    let n = vs.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Per dimension, the maximum if its magnitude is at least that of the
/// minimum, else the minimum.
pub fn extrema_vector(vs: &[&[f64]], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| {
            let max = vs.iter().map(|v| v[j]).fold(f64::NEG_INFINITY, f64::max);
            let min = vs.iter().map(|v| v[j]).fold(f64::INFINITY, f64::min);
            if max.abs() >= min.abs() {
                max
            } else {
                min
            }
        })
        .collect()
}

pub fn embedding_average<S: AsRef<str>, T: AsRef<str>>(response: &[S], reference: &[T], table: &EmbeddingTable) -> Option<f64> {
    let (a, b) = (table.lookup(response), table.lookup(reference));
    if a.is_empty() || b.is_empty() {
        return None;
    }
    cosine(&mean_vector(&a, table.dim), &mean_vector(&b, table.dim))
}

pub fn embedding_extrema<S: AsRef<str>, T: AsRef<str>>(response: &[S], reference: &[T], table: &EmbeddingTable) -> Option<f64> {
    let (a, b) = (table.lookup(response), table.lookup(reference));
    if a.is_empty() || b.is_empty() {
        return None;
    }
    cosine(&extrema_vector(&a, table.dim), &extrema_vector(&b, table.dim))
}

/// Mean over `a` of the best cosine match in `b`; zero-norm vectors score 0.
fn greedy_side(a: &[&[f64]], b: &[&[f64]]) -> f64 {
    let total: f64 = a
        .iter()
        .map(|x| {
            b.iter()
                .map(|y| cosine(x, y).unwrap_or(0.0))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    total / a.len() as f64
}

pub fn embedding_greedy<S: AsRef<str>, T: AsRef<str>>(response: &[S], reference: &[T], table: &EmbeddingTable) -> Option<f64> {
    let (a, b) = (table.lookup(response), table.lookup(reference));
    if a.is_empty() || b.is_empty() {
        return None;
    }
    Some((greedy_side(&a, &b) + greedy_side(&b, &a)) / 2.0)
}

/// Unique n-grams over all n-grams pooled across `responses`; 0 when there
/// are none.
pub fn distinct_n<S: AsRef<str>>(responses: &[Vec<S>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("distinct_n needs n >= 1"));
    }
    let mut unique: HashSet<Vec<&str>> = HashSet::new();
    let mut total = 0usize;
    for r in responses {
        let toks: Vec<&str> = r.iter().map(AsRef::as_ref).collect();
        for gram in toks.windows(n) {
            total += 1;
            unique.insert(gram.to_vec());
        }
    }
    Ok(if total == 0 { 0.0 } else { unique.len() as f64 / total as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub average: Option<f64>,
    pub extrema: Option<f64>,
    pub greedy: Option<f64>,
    pub dist1: f64,
    pub dist2: f64,
    pub response_count: usize,
    pub excluded_average: usize,
    pub excluded_extrema: usize,
    pub excluded_greedy: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"));
        writeln!(f, "{:>8} {:>8} {:>8} {:>8} {:>8}", "Average", "Extrema", "Greedy", "Dist-1", "Dist-2")?;
        writeln!(
            f,
            "{:>8} {:>8} {:>8} {:>8.3} {:>8.3}",
            cell(self.average),
            cell(self.extrema),
            cell(self.greedy),
            self.dist1,
            self.dist2
        )?;
        write!(
            f,
            "responses: {}  excluded (avg/ext/gre): {}/{}/{}",
            self.response_count, self.excluded_average, self.excluded_extrema, self.excluded_greedy
        )
    }
}

fn corpus_mean(scores: &[Option<f64>]) -> (Option<f64>, usize) {
    let defined: Vec<f64> = scores.iter().flatten().copied().collect();
    let excluded = scores.len() - defined.len();
    if defined.is_empty() {
        (None, excluded)
    } else {
        (Some(defined.iter().sum::<f64>() / defined.len() as f64), excluded)
    }
}

/// Scores tokenized responses against line-aligned references.
pub fn evaluate<S: AsRef<str>>(responses: &[Vec<S>], references: &[Vec<S>], table: &EmbeddingTable) -> Result<EvalReport> {
    if responses.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} responses but {} references",
            responses.len(),
            references.len()
        )));
    }
    if responses.is_empty() {
        return Err(Error::invalid("no responses to evaluate"));
    }
    let pairs = responses.iter().zip(references);
    let avg: Vec<_> = pairs.clone().map(|(r, g)| embedding_average(r, g, table)).collect();
    let ext: Vec<_> = pairs.clone().map(|(r, g)| embedding_extrema(r, g, table)).collect();
    let gre: Vec<_> = pairs.map(|(r, g)| embedding_greedy(r, g, table)).collect();
    let (average, excluded_average) = corpus_mean(&avg);
    let (extrema, excluded_extrema) = corpus_mean(&ext);
    let (greedy, excluded_greedy) = corpus_mean(&gre);
    Ok(EvalReport {
        average,
        extrema,
        greedy,
        dist1: distinct_n(responses, 1)?,
        dist2: distinct_n(responses, 2)?,
        response_count: responses.len(),
        excluded_average,
        excluded_extrema,
        excluded_greedy,
    })
}

fn read_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}

/// [`evaluate`] over two whitespace-tokenized, line-aligned files.
pub fn evaluate_files(responses: &Path, references: &Path, table: &EmbeddingTable) -> Result<EvalReport> {
    let (r, g) = (read_lines(responses)?, read_lines(references)?);
    if r.len() != g.len() {
        return Err(Error::invalid(format!(
            "line count mismatch: {} has {} lines, {} has {}",
            responses.display(),
            r.len(),
            references.display(),
            g.len()
        )));
    }
    evaluate(&r, &g, table)
}

#[cfg(test)]
mod tests;
