//! Frozen word-embedding table shared by the query and narrative paths.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::datamodel::Query;
use crate::error::{Error, Result};

/// Lower-cases and splits on anything that is not alphanumeric or an apostrophe.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|t| t.trim_matches('\'').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable { dim, vectors: HashMap::new() }
    }

    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!("embedding for {word:?} has {} dims, table has {}", vector.len(), self.dim)));
        }
        self.vectors.insert(word.to_lowercase(), vector);
        Ok(())
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

    /// Reads the whitespace-separated `word v1 v2 ...` text format.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table: Option<EmbeddingTable> = None;
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let vector = parts
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse { path: path.to_path_buf(), line: i + 1, message: e.to_string() })?;
            let t = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
            t.insert(word, vector).map_err(|e| Error::Parse { path: path.to_path_buf(), line: i + 1, message: e.to_string() })?;
        }
        table.ok_or_else(|| Error::validation(format!("{} holds no embeddings", path.display())))
    }

    /// Writes the table sorted by word so output is reproducible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut words: Vec<_> = self.vectors.keys().collect();
        words.sort();
        let mut out = Vec::new();
        for w in words {
            write!(out, "{w}").unwrap();
            for v in &self.vectors[w] {
                write!(out, " {v}").unwrap();
            }
            out.push(b'\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Embedding of a token, zero when out of vocabulary.
    pub fn lookup(&self, token: &str) -> Array1<f64> {
        match self.vectors.get(token) {
            Some(v) => Array1::from(v.clone()),
            None => Array1::zeros(self.dim),
        }
    }

    /// Mean of the token embeddings; out-of-vocabulary tokens contribute zero
    /// but still count in the denominator.
    pub fn embed_sentence(&self, text: &str) -> Result<Array1<f64>> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::validation(format!("sentence {text:?} has no tokens")));
        }
        let mut acc = Array1::zeros(self.dim);
        for t in &tokens {
            if let Some(v) = self.vectors.get(t) {
                acc += &ndarray::ArrayView1::from(v.as_slice());
            }
        }
        Ok(acc / tokens.len() as f64)
    }

    pub fn embed_query(&self, query_id: &str, text: &str) -> Result<Query> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::validation(format!("query {query_id} has no tokens")));
        }
        let mut embeddings = Array2::zeros((tokens.len(), self.dim));
        for (i, t) in tokens.iter().enumerate() {
            embeddings.row_mut(i).assign(&self.lookup(t));
        }
        let mask = vec![true; tokens.len()];
        Ok(Query { query_id: query_id.to_string(), tokens, embeddings, mask })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn table() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(2);
        t.insert("door", vec![1.0, 2.0]).unwrap();
        t.insert("opens", vec![3.0, -2.0]).unwrap();
        t
    }

    #[test]
    fn tokenizer_lowercases_and_strips_punctuation() {
        assert_eq!(tokenize("A man opens the door."), vec!["a", "man", "opens", "the", "door"]);
        assert_eq!(tokenize("person's  'shoes'"), vec!["person's", "shoes"]);
        assert!(tokenize(" ,. ").is_empty());
    }

    #[test]
    fn sentence_embedding_rules() {
        let t = table();
        assert_eq!(t.embed_sentence("door").unwrap(), array![1.0, 2.0]);
        assert_eq!(t.embed_sentence("opens door").unwrap(), array![2.0, 0.0]);
        assert_eq!(t.embed_sentence("xyzq").unwrap(), array![0.0, 0.0]);
        assert_eq!(t.embed_sentence("door xyzq").unwrap(), array![0.5, 1.0]);
        assert!(matches!(t.embed_sentence("..."), Err(Error::Validation(_))));
    }

    #[test]
    fn query_rows_follow_tokens() {
        let q = table().embed_query("q", "Opens the DOOR").unwrap();
        assert_eq!(q.tokens, vec!["opens", "the", "door"]);
        assert_eq!(q.embeddings, array![[3.0, -2.0], [0.0, 0.0], [1.0, 2.0]]);
        assert_eq!(q.mask, vec![true; 3]);
    }

    #[test]
    fn text_format_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.txt");
        table().save(&p).unwrap();
        assert_eq!(EmbeddingTable::load(&p).unwrap(), table());
    }
}
