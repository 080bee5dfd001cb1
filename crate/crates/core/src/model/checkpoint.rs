//! Model checkpoint container.
//!
//! Layout: an 8-byte header (magic `CSLM` + little-endian u32 version),
//! u64 vocabulary size, u64 hidden size, the 32-byte vocabulary hash, then
//! the four parameter tensors as little-endian f64 in row-major order:
//! embedding (V x z), gate weights (4z x 2z), gate biases (4z), output
//! projection (V x z). Loading rejects dimension or vocabulary mismatches.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};

use crate::corpus::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::model::ModelParams;

const MAGIC: &[u8; 4] = b"CSLM";
const VERSION: u32 = 1;

pub fn save(path: &Path, params: &ModelParams, vocab: &Vocabulary) -> Result<()> {
    if params.vocab_size() != vocab.len() {
        return Err(Error::DimMismatch {
            expected: format!("V = {}", vocab.len()),
            got: format!("{}", params.vocab_size()),
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    out.write_all(MAGIC).map_err(io)?;
    out.write_u32::<LittleEndian>(VERSION).map_err(io)?;
    out.write_u64::<LittleEndian>(params.vocab_size() as u64)
        .map_err(io)?;
    out.write_u64::<LittleEndian>(params.hidden_size() as u64)
        .map_err(io)?;
    out.write_all(&vocab.hash()).map_err(io)?;
    write_matrix(&mut out, &params.embed).map_err(io)?;
    write_matrix(&mut out, &params.w_gates).map_err(io)?;
    for k in 0..params.b_gates.len() {
        out.write_f64::<LittleEndian>(params.b_gates[k]).map_err(io)?;
    }
    write_matrix(&mut out, &params.w_out).map_err(io)?;
    out.flush().map_err(io)
}

pub fn load(path: &Path, vocab: &Vocabulary) -> Result<ModelParams> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let io = |e| Error::io(path, e);

    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::CheckpointFormat(format!(
            "bad magic {magic:02x?}, expected {MAGIC:02x?}"
        )));
    }
    let version = input.read_u32::<LittleEndian>().map_err(io)?;
    if version != VERSION {
        return Err(Error::CheckpointFormat(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let v = input.read_u64::<LittleEndian>().map_err(io)? as usize;
    let z = input.read_u64::<LittleEndian>().map_err(io)? as usize;
    if v != vocab.len() {
        return Err(Error::DimMismatch {
            expected: format!("V = {}", vocab.len()),
            got: format!("{v}"),
        });
    }
    let mut hash = [0u8; 32];
    input.read_exact(&mut hash).map_err(io)?;
    if hash != vocab.hash() {
        return Err(Error::VocabHashMismatch);
    }
    let embed = read_matrix(&mut input, v, z).map_err(io)?;
    let w_gates = read_matrix(&mut input, 4 * z, 2 * z).map_err(io)?;
    let mut b_gates = DVector::zeros(4 * z);
    for k in 0..4 * z {
        b_gates[k] = input.read_f64::<LittleEndian>().map_err(io)?;
    }
    let w_out = read_matrix(&mut input, v, z).map_err(io)?;
    let mut trailing = [0u8; 1];
    match input.read(&mut trailing).map_err(io)? {
        0 => {}
        _ => {
            return Err(Error::CheckpointFormat(
                "trailing bytes after parameter tensors".into(),
            ))
        }
    }
    Ok(ModelParams {
        embed,
        w_gates,
        b_gates,
        w_out,
    })
}

fn write_matrix<W: Write>(out: &mut W, m: &DMatrix<f64>) -> std::io::Result<()> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.write_f64::<LittleEndian>(m[(r, c)])?;
        }
    }
    Ok(())
}

fn read_matrix<R: Read>(input: &mut R, rows: usize, cols: usize) -> std::io::Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = input.read_f64::<LittleEndian>()?;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::{build_vocabulary, LangTag};
    use crate::model::init_params;

    fn vocab_of(n1: usize, n2: usize) -> Vocabulary {
        let sentence: Vec<(String, LangTag)> = (0..n1)
            .map(|i| (format!("a{i}"), LangTag::L1))
            .chain((0..n2).map(|i| (format!("b{i}"), LangTag::L2)))
            .collect();
        build_vocabulary(&[sentence], 1).unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let vocab = vocab_of(3, 2);
        let params = init_params(vocab.len(), 4, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &params, &vocab).unwrap();
        let loaded = load(&path, &vocab).unwrap();
        assert_eq!(loaded, params);
    }

    #[test]
    fn rejects_wrong_vocabulary() {
        let vocab = vocab_of(3, 2);
        let params = init_params(vocab.len(), 4, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &params, &vocab).unwrap();

        // same size, different content -> hash mismatch
        let other = vocab_of(2, 3);
        assert_eq!(other.len(), vocab.len());
        assert!(matches!(
            load(&path, &other).unwrap_err(),
            Error::VocabHashMismatch
        ));

        // different size -> dimension mismatch
        let smaller = vocab_of(1, 1);
        assert!(matches!(
            load(&path, &smaller).unwrap_err(),
            Error::DimMismatch { .. }
        ));
    }

    #[test]
    fn rejects_bad_magic() {
        let vocab = vocab_of(2, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, b"NOPE0000rest").unwrap();
        assert!(matches!(
            load(&path, &vocab).unwrap_err(),
            Error::CheckpointFormat(_)
        ));
    }
}
