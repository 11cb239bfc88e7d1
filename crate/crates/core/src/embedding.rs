//! Post embedding matrices and the `CANEEMB1` interchange format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "CANEEMB1" | u32 dim | u64 count | count × ( u16 id_len | id bytes | dim × f32 )
//! ```
//!
//! Records are sorted ascending by id bytes. Rows are re-normalized to unit
//! length when a file is read against a corpus, so cosine similarity is a
//! plain dot product everywhere downstream.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::PostCollection;
use crate::error::{Error, Result};
use crate::scalar::{normalize_in_place, Scalar};

pub const MAGIC: &[u8; 8] = b"CANEEMB1";

/// Row-major matrix of post vectors keyed by post id (ids kept sorted).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<S> {
    dim: usize,
    ids: Vec<String>,
    data: Vec<S>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> EmbeddingMatrix<S> {
    /// Builds a matrix from `(id, vector)` rows; rows are sorted by id.
    pub fn from_rows(dim: usize, rows: impl IntoIterator<Item = (String, Vec<S>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("dim must be positive".into()));
        }
        let mut rows: Vec<(String, Vec<S>)> = rows.into_iter().collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        let mut ids = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (id, v) in rows {
            if v.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            if ids.last() == Some(&id) {
                return Err(Error::DuplicatePostId(id));
            }
            ids.push(id);
            data.extend(v);
        }
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(EmbeddingMatrix {
            dim,
            ids,
            data,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Post ids in ascending byte order; row `i` belongs to `ids()[i]`.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, post_id: &str) -> Option<&[S]> {
        self.index.get(post_id).map(|&i| self.row(i))
    }

    pub fn position(&self, post_id: &str) -> Option<usize> {
        self.index.get(post_id).copied()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[S]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn normalize_rows(&mut self) {
        for row in self.data.chunks_exact_mut(self.dim) {
            normalize_in_place(row);
        }
    }

    pub fn cast<T: Scalar>(&self) -> EmbeddingMatrix<T> {
        EmbeddingMatrix {
            dim: self.dim,
            ids: self.ids.clone(),
            data: self.data.iter().map(|x| T::of_f64(x.as_f64())).collect(),
            index: self.index.clone(),
        }
    }

    /// Restricts the matrix to the posts of `posts`; every post must be present.
    pub fn restrict(&self, posts: &PostCollection) -> Result<Self> {
        let rows: Result<Vec<(String, Vec<S>)>> = posts
            .posts()
            .iter()
            .map(|p| {
                self.get(&p.post_id)
                    .map(|r| (p.post_id.clone(), r.to_vec()))
                    .ok_or_else(|| Error::IdMismatch {
                        count: 1,
                        first: vec![p.post_id.clone()],
                    })
            })
            .collect();
        Self::from_rows(self.dim, rows?)
    }

    /// Checks that the id sets of the matrix and the corpus coincide.
    pub fn check_ids(&self, posts: &PostCollection) -> Result<()> {
        let mut mismatches: Vec<String> = Vec::new();
        let mut count = 0;
        let mut corpus: Vec<&str> = posts.posts().iter().map(|p| p.post_id.as_str()).collect();
        corpus.sort_unstable();
        for id in &self.ids {
            if corpus.binary_search(&id.as_str()).is_err() {
                count += 1;
                if mismatches.len() < 10 {
                    mismatches.push(format!("{id} (not in corpus)"));
                }
            }
        }
        for id in corpus {
            if !self.index.contains_key(id) {
                count += 1;
                if mismatches.len() < 10 {
                    mismatches.push(format!("{id} (no embedding)"));
                }
            }
        }
        if count > 0 {
            return Err(Error::IdMismatch {
                count,
                first: mismatches,
            });
        }
        Ok(())
    }
}

/// Reads a `CANEEMB1` file without any corpus checks or normalization.
pub fn read_raw(path: impl AsRef<Path>) -> Result<EmbeddingMatrix<f32>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    decode(BufReader::new(f)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

fn decode<R: Read>(mut r: R) -> Result<EmbeddingMatrix<f32>> {
    let io = |e| Error::io("<embeddings>", e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4).map_err(io)?;
    let dim = u32::from_le_bytes(b4) as usize;
    if dim == 0 {
        return Err(Error::Format("dim = 0".into()));
    }
    r.read_exact(&mut b8).map_err(io)?;
    let count = u64::from_le_bytes(b8) as usize;
    let mut rows = Vec::with_capacity(count.min(1 << 20));
    let mut vbuf = vec![0u8; dim * 4];
    for rec in 0..count {
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)
            .map_err(|_| Error::Format(format!("truncated at record {rec}")))?;
        let mut idb = vec![0u8; u16::from_le_bytes(b2) as usize];
        r.read_exact(&mut idb)
            .map_err(|_| Error::Format(format!("truncated id at record {rec}")))?;
        let id = String::from_utf8(idb)
            .map_err(|_| Error::Format(format!("record {rec}: id is not UTF-8")))?;
        r.read_exact(&mut vbuf)
            .map_err(|_| Error::Format(format!("truncated vector at record {rec}")))?;
        let v: Vec<f32> = vbuf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        rows.push((id, v));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(io)? != 0 {
        return Err(Error::Format("trailing bytes after last record".into()));
    }
    EmbeddingMatrix::from_rows(dim, rows)
}

/// Reads embeddings for `posts`, checks the id sets match and unit-normalizes rows.
pub fn read_embeddings(path: impl AsRef<Path>, posts: &PostCollection) -> Result<EmbeddingMatrix<f32>> {
    let mut m = read_raw(path)?;
    m.check_ids(posts)?;
    m.normalize_rows();
    Ok(m)
}

pub fn write_embeddings<S: Scalar>(matrix: &EmbeddingMatrix<S>, path: impl AsRef<Path>) -> Result<()> {
    if matrix.is_empty() {
        return Err(Error::Empty("nothing to write".into()));
    }
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    encode(matrix, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn encode<S: Scalar, W: Write>(m: &EmbeddingMatrix<S>, w: &mut W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(m.dim as u32).to_le_bytes())?;
    w.write_all(&(m.len() as u64).to_le_bytes())?;
    for (id, row) in m.ids.iter().zip(m.rows()) {
        let len = u16::try_from(id.len()).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("id too long: {id}"))
        })?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        for x in row {
            w.write_all(&(x.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // final avalanche (splitmix64)
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Deterministic stand-in for a sentence encoder: signed feature hashing of
/// character 3-grams into `dim` buckets, unit-normalized.
pub fn toy_embed(text: &str, dim: usize, seed: u64) -> Result<Vec<f32>> {
    if dim < 8 {
        return Err(Error::InvalidParam(format!("toy_embed dim {dim} < 8")));
    }
    let chars: Vec<char> = text.chars().collect();
    let mut acc = vec![0.0f64; dim];
    let mut add = |gram: &[char]| {
        let s: String = gram.iter().collect();
        let h = fnv1a(s.as_bytes(), seed);
        let bucket = (h % dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    };
    if chars.len() >= 3 {
        chars.windows(3).for_each(&mut add);
    } else if !chars.is_empty() {
        add(&chars);
    }
    if acc.iter().all(|&x| x == 0.0) {
        // empty text (or perfectly cancelling grams): fixed seed-derived direction
        for (i, x) in acc.iter_mut().enumerate() {
            let h = fnv1a(&(i as u64).to_le_bytes(), seed ^ 0x5eed);
            *x = (h as f64 / u64::MAX as f64) - 0.5;
        }
    }
    normalize_in_place(&mut acc);
    Ok(acc.into_iter().map(|x| x as f32).collect())
}

/// Embeds every post's normalized text with [`toy_embed`].
pub fn toy_embed_corpus(posts: &PostCollection, dim: usize, seed: u64) -> Result<EmbeddingMatrix<f32>> {
    let rows: Result<Vec<_>> = posts
        .posts()
        .iter()
        .map(|p| toy_embed(&p.text_norm, dim, seed).map(|v| (p.post_id.clone(), v)))
        .collect();
    let mut m = EmbeddingMatrix::from_rows(dim, rows?)?;
    m.normalize_rows();
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{normalize_text, PostRecord};
    use crate::scalar::{dot, norm};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn corpus(ids: &[&str]) -> PostCollection {
        PostCollection::new(
            ids.iter()
                .map(|id| PostRecord::new(*id, "u", "x", 0, "t"))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn file_size_matches_layout() {
        let m = EmbeddingMatrix::from_rows(
            4,
            vec![("ab".to_string(), vec![1.0f32; 4]), ("c".to_string(), vec![0.5f32; 4])],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        write_embeddings(&m, &path).unwrap();
        let size = std::fs::metadata(&path).unwrap().len();
        assert_eq!(size, 8 + 4 + 8 + (2 + 2 + 16) + (2 + 1 + 16));
        let back = read_raw(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn records_sorted_on_disk() {
        let m = EmbeddingMatrix::from_rows(
            1,
            vec![("b".to_string(), vec![2.0f32]), ("a".to_string(), vec![1.0f32])],
        )
        .unwrap();
        let mut buf = Vec::new();
        encode(&m, &mut buf).unwrap();
        // first record id starts right after the 20-byte header and u16 length
        assert_eq!(buf[22], b'a');
    }

    #[test]
    fn bad_magic_and_zero_dim() {
        let mut buf = b"XXXXXXXX".to_vec();
        buf.extend(1u32.to_le_bytes());
        buf.extend(0u64.to_le_bytes());
        assert!(matches!(decode(buf.as_slice()), Err(Error::Format(_))));
        let mut buf = MAGIC.to_vec();
        buf.extend(0u32.to_le_bytes());
        buf.extend(0u64.to_le_bytes());
        assert!(matches!(decode(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn empty_matrix_refused() {
        let m = EmbeddingMatrix::<f32>::from_rows(3, Vec::new()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = write_embeddings(&m, dir.path().join("e")).unwrap_err();
        assert!(err.to_string().contains("nothing to write"));
    }

    #[test]
    fn ingestion_normalizes_and_checks_ids() {
        let m = EmbeddingMatrix::from_rows(
            2,
            vec![("p1".to_string(), vec![2.0f32, 0.0]), ("p2".to_string(), vec![0.0f32, 1.0])],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e");
        write_embeddings(&m, &path).unwrap();
        let read = read_embeddings(&path, &corpus(&["p1", "p2"])).unwrap();
        assert!((norm(read.get("p1").unwrap()) - 1.0).abs() < 1e-6);
        match read_embeddings(&path, &corpus(&["p1", "p3"])) {
            Err(Error::IdMismatch { count, first }) => {
                assert_eq!(count, 2);
                assert!(first.iter().any(|s| s.starts_with("p2")));
                assert!(first.iter().any(|s| s.starts_with("p3")));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn toy_embed_contract() {
        let a = toy_embed("hello world", 64, 7).unwrap();
        let b = toy_embed("hello world", 64, 7).unwrap();
        assert_eq!(a, b);
        assert!((norm(&a) - 1.0).abs() < 1e-6);
        assert_ne!(a, toy_embed("hello world", 64, 8).unwrap());
        let empty = toy_embed("", 64, 7).unwrap();
        assert!((norm(&empty) - 1.0).abs() < 1e-6);
        assert!(toy_embed("x", 4, 0).is_err());
    }

    #[test]
    fn toy_embed_random_strings_are_spread() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let texts: Vec<String> = (0..100)
            .map(|_| {
                let len = rng.random_range(20..60);
                (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect()
            })
            .collect();
        let vecs: Vec<Vec<f32>> = texts.iter().map(|t| toy_embed(t, 64, 1).unwrap()).collect();
        let mut max = f64::MIN;
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                max = max.max(dot(&vecs[i], &vecs[j]));
            }
        }
        assert!(max < 0.9, "max pairwise cosine {max}");
    }

    #[test]
    fn toy_embed_ignores_platform_artifacts_after_normalization() {
        let a = toy_embed(&normalize_text("rigged ballots #stopthesteal"), 32, 3).unwrap();
        let b = toy_embed(&normalize_text("@bob rigged ballots https://t.co/x"), 32, 3).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn write_read_round_trip(
            rows in proptest::collection::btree_map("[a-z0-9]{1,6}", proptest::collection::vec(-10.0f32..10.0, 3), 1..10)
        ) {
            let m = EmbeddingMatrix::from_rows(3, rows).unwrap();
            let mut buf = Vec::new();
            encode(&m, &mut buf).unwrap();
            prop_assert_eq!(decode(buf.as_slice()).unwrap(), m);
        }
    }
}
