use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::textpipe::{Vocab, UNK_ID};

/// Word vectors in the GloVe text format: a token followed by `dim` reals
/// per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Pretrained {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl Pretrained {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f32>>) -> Result<Self> {
        if let Some((w, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::InvalidArgument(format!(
                "vector for {w:?} has {} components, expected {dim}",
                v.len()
            )));
        }
        Ok(Pretrained { dim, vectors })
    }

    /// Reads a vector file. With `keep`, only words known to the vocabulary
    /// are retained.
    pub fn load(path: &Path, dim: usize, keep: Option<&Vocab>) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file), path, dim, keep)
    }

    pub fn read<R: BufRead>(reader: R, path: &Path, dim: usize, keep: Option<&Vocab>) -> Result<Self> {
        let mut vectors = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != dim + 1 {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("expected a token and {dim} values, found {} fields", fields.len()),
                ));
            }
            let word = fields[0];
            if keep.is_some_and(|v| v.word_id(word) == UNK_ID) {
                continue;
            }
            let vec = fields[1..]
                .iter()
                .map(|f| f.parse::<f32>())
                .collect::<std::result::Result<Vec<f32>, _>>()
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            vectors.insert(word.to_string(), vec);
        }
        Ok(Pretrained { dim, vectors })
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

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.vectors.get(word).map(Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_dimension_check() {
        let p = Pretrained::read("the 0.5 -1\n\n<url> 1 2\n".as_bytes(), Path::new("v.txt"), 2, None)
            .unwrap();
        assert_eq!(p.get("the"), Some(&[0.5f32, -1.0][..]));
        assert_eq!(p.len(), 2);
        let err = Pretrained::read("a 1 2 3\n".as_bytes(), Path::new("v.txt"), 2, None).unwrap_err();
        assert!(err.to_string().contains("v.txt:1"), "{err}");
    }
}
