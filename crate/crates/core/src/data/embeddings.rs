use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{io_err, record_err, Result};

/// Pretrained word vectors in whitespace-separated text form: one word per
/// line followed by its components.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Embeddings {
    words: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl Embeddings {
    pub fn new(words: Vec<String>, vectors: Vec<Vec<f64>>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Embeddings { words, vectors, index }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut words = Vec::new();
        let mut vectors = Vec::new();
        let mut dim = None;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else {
                return Err(record_err(path, i + 1, "blank line"));
            };
            let v: Vec<f64> = parts
                .map(|x| x.parse::<f64>().map_err(|e| record_err(path, i + 1, e)))
                .collect::<Result<_>>()?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(record_err(path, i + 1, "non-finite component"));
            }
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(record_err(path, i + 1, format!("dimension {}, expected {d}", v.len())));
                }
                _ => {}
            }
            words.push(word.to_string());
            vectors.push(v);
        }
        Ok(Embeddings::new(words, vectors))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        for (word, v) in self.words.iter().zip(&self.vectors) {
            write!(w, "{word}").map_err(io_err(path))?;
            for x in v {
                write!(w, " {x}").map_err(io_err(path))?;
            }
            writeln!(w).map_err(io_err(path))?;
        }
        w.flush().map_err(io_err(path))
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|&i| self.vectors[i].as_slice())
    }

    /// Cosine similarity of two words; `None` if either is missing.
    pub fn cosine(&self, a: &str, b: &str) -> Option<f64> {
        Some(cosine(self.get(a)?, self.get(b)?))
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
