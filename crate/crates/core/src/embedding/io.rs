//! word2vec text format with a TSV frequency sidecar.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use super::EmbeddingSpace;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

/// `<path>.freq`, the sidecar holding `token<TAB>count` rows.
pub fn frequency_sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".freq");
    PathBuf::from(s)
}

pub fn write_space<W: Write>(space: &EmbeddingSpace, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{} {}", space.len(), space.dim())?;
    for (i, row) in space.vectors().row_iter().enumerate() {
        write!(w, "{}", space.vocab().token(i))?;
        for v in row.iter() {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Reads the word2vec text format. Counts are not part of the format; the
/// returned vocabulary assigns descending pseudo-counts so that file order
/// is frequency order.
pub fn read_space<R: BufRead>(reader: R, name: &str) -> Result<EmbeddingSpace> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(name, e))?,
        None => return Err(Error::format(name, 1, "malformed header: empty file")),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (n, dim) = match fields.as_slice() {
        [a, b] => match (a.parse::<usize>(), b.parse::<usize>()) {
            (Ok(n), Ok(d)) if d > 0 => (n, d),
            _ => return Err(Error::format(name, 1, "malformed header")),
        },
        _ => return Err(Error::format(name, 1, "malformed header")),
    };

    let mut tokens = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * dim);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(' ').filter(|p| !p.is_empty());
        let token = parts.next().expect("non-empty line has a token");
        let before = data.len();
        for p in parts {
            let v: f64 = p
                .parse()
                .map_err(|_| Error::format(name, line_no, format!("invalid number `{p}`")))?;
            if !v.is_finite() {
                return Err(Error::format(name, line_no, "non-finite component"));
            }
            data.push(v);
        }
        let got = data.len() - before;
        if got != dim {
            return Err(Error::format(
                name,
                line_no,
                format!("dimension mismatch: header declares {dim}, row has {got}"),
            ));
        }
        tokens.push(token.to_owned());
    }
    if tokens.len() != n {
        return Err(Error::RowCountMismatch {
            expected: n,
            actual: tokens.len(),
        });
    }
    let counts = (0..n as u64).map(|i| n as u64 - i).collect();
    let vocab = Vocabulary::from_ordered(tokens, counts)
        .map_err(|e| Error::format(name, 0, e.to_string()))?;
    EmbeddingSpace::new(vocab, DMatrix::from_row_slice(n, dim, &data))
}

/// Writes the embedding file and its frequency sidecar.
pub fn save_space(space: &EmbeddingSpace, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_space(space, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))?;

    let side = frequency_sidecar_path(path);
    let f = File::create(&side).map_err(|e| Error::io(&side, e))?;
    let mut w = BufWriter::new(f);
    (|| {
        for (t, c) in space.vocab().tokens().iter().zip(space.vocab().counts()) {
            writeln!(w, "{t}\t{c}")?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(&side, e))
}

/// Loads an embedding file. Counts come from the sidecar when present;
/// otherwise file order is taken as frequency order.
pub fn load_space(path: &Path) -> Result<EmbeddingSpace> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let space = read_space(BufReader::new(f), &path.display().to_string())?;

    let side = frequency_sidecar_path(path);
    if !side.exists() {
        log::warn!(
            "no frequency sidecar at {}; using file order as frequency order",
            side.display()
        );
        return Ok(space);
    }
    let name = side.display().to_string();
    let f = File::open(&side).map_err(|e| Error::io(&side, e))?;
    let mut counts = vec![None; space.len()];
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&side, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (tok, count) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(&name, i + 1, "expected `token<TAB>count`"))?;
        let count: u64 = count
            .trim()
            .parse()
            .map_err(|_| Error::format(&name, i + 1, "invalid count"))?;
        let idx = space.vocab().index(tok).ok_or_else(|| {
            Error::format(&name, i + 1, format!("token `{tok}` not in embedding file"))
        })?;
        counts[idx] = Some(count);
    }
    let counts: Vec<u64> = counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            c.ok_or_else(|| {
                Error::format(
                    &name,
                    0,
                    format!("missing count for `{}`", space.vocab().token(i)),
                )
            })
        })
        .collect::<Result<_>>()?;
    let vocab = Vocabulary::from_ordered(space.vocab().tokens().to_vec(), counts)?;
    EmbeddingSpace::new(vocab, space.vectors().clone())
}
