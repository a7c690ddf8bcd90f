use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::{DayMatrix, EmbeddingModel, TrainingMeta, Vocabulary};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SLEM";
const VERSION: u32 = 1;

fn format_err(message: impl Into<String>) -> Error {
    Error::Format {
        kind: "embedding model",
        message: message.into(),
    }
}

impl EmbeddingModel {
    /// Binary layout: `SLEM`, version, dim, V, window, the vocabulary as
    /// length-prefixed UTF-8 plus u64 frequency, both matrices row-major as
    /// little-endian f32, then the training metadata as length-prefixed JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u32::<LittleEndian>(self.vocab.len() as u32)?;
        w.write_u32::<LittleEndian>(self.window as u32)?;
        w.write_u64::<LittleEndian>(self.vocab.min_count())?;
        for (t, &c) in self.vocab.tokens().iter().zip(self.vocab.counts()) {
            w.write_u32::<LittleEndian>(t.len() as u32)?;
            w.write_all(t.as_bytes())?;
            w.write_u64::<LittleEndian>(c)?;
        }
        for m in [&self.input, &self.output] {
            for x in m.iter() {
                w.write_f32::<LittleEndian>(*x)?;
            }
        }
        let meta = serde_json::to_vec(&self.meta).map_err(std::io::Error::other)?;
        w.write_u32::<LittleEndian>(meta.len() as u32)?;
        w.write_all(&meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        read_from(&mut r).map_err(|e| match e {
            ReadError::Io(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => format_err("truncated file"),
            ReadError::Io(e) => Error::io(path, e),
            ReadError::Format(e) => e,
        })
    }
}

enum ReadError {
    Io(std::io::Error),
    Format(Error),
}

impl From<std::io::Error> for ReadError {
    fn from(e: std::io::Error) -> Self {
        ReadError::Io(e)
    }
}

fn read_from(r: &mut impl Read) -> std::result::Result<EmbeddingModel, ReadError> {
    let bad = |m: &str| ReadError::Format(format_err(m));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("missing SLEM magic"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(ReadError::Format(format_err(format!("unsupported version {version}"))));
    }
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let v = r.read_u32::<LittleEndian>()? as usize;
    let window = r.read_u32::<LittleEndian>()? as usize;
    let min_count = r.read_u64::<LittleEndian>()?;
    if dim == 0 || v == 0 {
        return Err(bad("zero dimension or vocabulary size"));
    }
    let mut tokens = Vec::with_capacity(v);
    let mut counts = Vec::with_capacity(v);
    for _ in 0..v {
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        tokens.push(String::from_utf8(buf).map_err(|_| bad("token is not UTF-8"))?);
        counts.push(r.read_u64::<LittleEndian>()?);
    }
    let mut read_matrix = || -> std::result::Result<Array2<f32>, ReadError> {
        let mut data = vec![0f32; v * dim];
        r.read_f32_into::<LittleEndian>(&mut data)?;
        Ok(Array2::from_shape_vec((v, dim), data).expect("shape"))
    };
    let input = read_matrix()?;
    let output = read_matrix()?;
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    let meta: TrainingMeta = serde_json::from_slice(&buf).map_err(|_| bad("bad training metadata"))?;
    let model = EmbeddingModel {
        dim,
        window,
        vocab: Vocabulary::from_parts(tokens, counts, min_count),
        input,
        output,
        meta,
    };
    if !model.is_finite() {
        return Err(bad("non-finite vector entries"));
    }
    Ok(model)
}

fn write_tsv(
    rows: impl Iterator<Item = Vec<String>>,
    labels: impl Iterator<Item = String>,
    vectors_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    let mut vw = BufWriter::new(File::create(vectors_path).map_err(|e| Error::io(vectors_path, e))?);
    let mut lw = BufWriter::new(File::create(labels_path).map_err(|e| Error::io(labels_path, e))?);
    for row in rows {
        writeln!(vw, "{}", row.join("\t")).map_err(|e| Error::io(vectors_path, e))?;
    }
    for l in labels {
        writeln!(lw, "{l}").map_err(|e| Error::io(labels_path, e))?;
    }
    vw.flush().map_err(|e| Error::io(vectors_path, e))?;
    lw.flush().map_err(|e| Error::io(labels_path, e))
}

/// Projector-style export: one tab-separated vector per day, labelled by date.
pub fn export_matrix_tsv(m: &DayMatrix, vectors_path: &Path, labels_path: &Path) -> Result<()> {
    if m.n_days() == 0 || m.dim() == 0 {
        return Err(Error::Empty("day matrix"));
    }
    write_tsv(
        m.values.rows().into_iter().map(|r| r.iter().map(|v| v.to_string()).collect()),
        m.calendar.days().map(|d| d.to_string()),
        vectors_path,
        labels_path,
    )
}

/// Projector-style export of the word vectors, labelled by token.
pub fn export_model_tsv(model: &EmbeddingModel, vectors_path: &Path, labels_path: &Path) -> Result<()> {
    write_tsv(
        model.input.rows().into_iter().map(|r| r.iter().map(|v| v.to_string()).collect()),
        model.vocab.tokens().iter().cloned(),
        vectors_path,
        labels_path,
    )
}

pub fn read_tsv_vectors(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let row = line
            .split('\t')
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        rows.push(row);
    }
    Ok(rows)
}
