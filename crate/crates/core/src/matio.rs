//! Matrix file formats.
//!
//! The triple stream is a fixed-width little-endian binary file:
//!
//! ```text
//! offset  size  field
//!      0     8  magic "NZPCOO01"
//!      8     8  m   (u64)
//!     16     8  n   (u64)
//!     24     8  Z   (u64)
//!     32  24*Z  records: row (u64), col (u64), value (IEEE-754 f64)
//! ```
//!
//! Records are in strict `(col, row)` order. The fixed record size lets a
//! rank seek straight to its chunk ([`read_span`]) or binary-search a column
//! range ([`read_column_span`]) without touching the rest of the file.
//!
//! A line-oriented text variant (`m n Z` header, then `row col value` lines)
//! exists for debugging, and coordinate Matrix Market files can be imported.

use std::collections::BTreeMap;
use std::io::{BufRead, ErrorKind, Read, Seek, SeekFrom, Write};
use std::ops::Range;

use crate::partition::{column_ranges, ChunkBounds};
use crate::sparse::check_triples;
use crate::{CooMatrix, CscMatrix, Error, Result, Scalar, Triple};

pub const MAGIC: &[u8; 8] = b"NZPCOO01";
pub const HEADER_BYTES: u64 = 32;
pub const RECORD_BYTES: u64 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripleStreamHeader {
    pub m: u64,
    pub n: u64,
    pub nnz: u64,
}

impl TripleStreamHeader {
    pub fn read<R: Read>(source: &mut R) -> Result<Self> {
        let mut buf = [0u8; HEADER_BYTES as usize];
        read_exact_at(source, &mut buf, 0, "header")?;
        if &buf[..8] != MAGIC {
            return Err(Error::format(0, "bad magic, not a triple stream"));
        }
        let word = |i: usize| u64::from_le_bytes(buf[8 * i..8 * i + 8].try_into().unwrap());
        Ok(Self {
            m: word(1),
            n: word(2),
            nnz: word(3),
        })
    }

    pub fn write<W: Write>(&self, sink: &mut W) -> Result<()> {
        sink.write_all(MAGIC)?;
        for v in [self.m, self.n, self.nnz] {
            sink.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn record_offset(index: u64) -> u64 {
        HEADER_BYTES + index * RECORD_BYTES
    }

    fn dims(&self) -> Result<(usize, usize, usize)> {
        let conv = |v: u64| {
            usize::try_from(v).map_err(|_| Error::format(8, "dimension does not fit in memory"))
        };
        Ok((conv(self.m)?, conv(self.n)?, conv(self.nnz)?))
    }
}

fn read_exact_at<R: Read>(source: &mut R, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
    source.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::format(offset, format!("stream truncated in {what}")),
        _ => Error::Io(e),
    })
}

fn decode_record<T: Scalar>(rec: &[u8]) -> Triple<T> {
    let word = |i: usize| u64::from_le_bytes(rec[8 * i..8 * i + 8].try_into().unwrap());
    Triple::new(
        word(0) as usize,
        word(1) as usize,
        T::from_f64_lossy(f64::from_bits(word(2))),
    )
}

fn encode_record<T: Scalar>(t: &Triple<T>, out: &mut [u8; RECORD_BYTES as usize]) {
    out[..8].copy_from_slice(&(t.row as u64).to_le_bytes());
    out[8..16].copy_from_slice(&(t.col as u64).to_le_bytes());
    out[16..].copy_from_slice(&t.value.to_f64_lossy().to_le_bytes());
}

/// Reads `count` records starting at record index `first`, validating
/// bounds and order. The source must be positioned at that record.
fn read_records<T: Scalar, R: Read>(
    source: &mut R,
    header: &TripleStreamHeader,
    first: u64,
    count: usize,
) -> Result<Vec<Triple<T>>> {
    let mut bytes = vec![0u8; count * RECORD_BYTES as usize];
    let start = TripleStreamHeader::record_offset(first);
    read_exact_at(source, &mut bytes, start, "record area").map_err(|e| match e {
        Error::Format { .. } => Error::format(
            start,
            format!("stream truncated: expected {count} records from here"),
        ),
        other => other,
    })?;
    let triples: Vec<Triple<T>> = bytes
        .chunks_exact(RECORD_BYTES as usize)
        .map(decode_record)
        .collect();
    let (m, n, _) = header.dims()?;
    check_triples(m, n, &triples).map_err(|(i, msg)| {
        Error::format(TripleStreamHeader::record_offset(first + i as u64), msg)
    })?;
    Ok(triples)
}

pub fn write_triple_stream<T: Scalar, W: Write>(a: &CooMatrix<T>, mut sink: W) -> Result<()> {
    let header = TripleStreamHeader {
        m: a.nrows() as u64,
        n: a.ncols() as u64,
        nnz: a.nnz() as u64,
    };
    header.write(&mut sink)?;
    let mut rec = [0u8; RECORD_BYTES as usize];
    for t in a.triples() {
        encode_record(t, &mut rec);
        sink.write_all(&rec)?;
    }
    sink.flush()?;
    Ok(())
}

/// Reads a whole stream. Trailing bytes after the last record are an error.
pub fn read_triple_stream<T: Scalar, R: Read>(mut source: R) -> Result<CooMatrix<T>> {
    let header = TripleStreamHeader::read(&mut source)?;
    let (m, n, nnz) = header.dims()?;
    let triples = read_records(&mut source, &header, 0, nnz)?;
    let mut probe = [0u8; 1];
    if source.read(&mut probe)? != 0 {
        return Err(Error::format(
            TripleStreamHeader::record_offset(nnz as u64),
            format!("trailing data after the {nnz} records announced in the header"),
        ));
    }
    CooMatrix::new(m, n, triples).map_err(|e| Error::format(0, e.to_string()))
}

/// Reads only the records of `rank`'s nonzero chunk out of `ranks` and
/// returns its local matrix together with the global triple range.
pub fn read_span<T: Scalar, R: Read + Seek>(
    mut source: R,
    rank: usize,
    ranks: usize,
) -> Result<(CscMatrix<T>, Range<usize>)> {
    if rank >= ranks {
        return Err(Error::invalid(format!("rank {rank} outside 0..{ranks}")));
    }
    let header = TripleStreamHeader::read(&mut source)?;
    let (m, _, nnz) = header.dims()?;
    let range = ChunkBounds::new(nnz, ranks)?.range(rank);
    source.seek(SeekFrom::Start(TripleStreamHeader::record_offset(
        range.start as u64,
    )))?;
    let triples = read_records(&mut source, &header, range.start as u64, range.len())?;
    Ok((CscMatrix::from_sorted(m, &triples), range))
}

/// A rank's share under column partitioning.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpan<T> {
    pub local: CscMatrix<T>,
    pub columns: Range<usize>,
    pub triples: Range<usize>,
}

/// Reads the records of `rank`'s contiguous column range, located by binary
/// search over the sorted record area.
pub fn read_column_span<T: Scalar, R: Read + Seek>(
    mut source: R,
    rank: usize,
    ranks: usize,
) -> Result<ColumnSpan<T>> {
    if rank >= ranks {
        return Err(Error::invalid(format!("rank {rank} outside 0..{ranks}")));
    }
    let header = TripleStreamHeader::read(&mut source)?;
    let (m, n, nnz) = header.dims()?;
    let columns = column_ranges(n, ranks)?.swap_remove(rank);
    let lo = first_record_at_or_after(&mut source, nnz, columns.start)?;
    let hi = first_record_at_or_after(&mut source, nnz, columns.end)?;
    source.seek(SeekFrom::Start(TripleStreamHeader::record_offset(lo as u64)))?;
    let triples = read_records(&mut source, &header, lo as u64, hi - lo)?;
    Ok(ColumnSpan {
        local: CscMatrix::from_sorted(m, &triples),
        columns,
        triples: lo..hi,
    })
}

fn first_record_at_or_after<R: Read + Seek>(
    source: &mut R,
    nnz: usize,
    column: usize,
) -> Result<usize> {
    let (mut lo, mut hi) = (0usize, nnz);
    let mut buf = [0u8; 8];
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        let offset = TripleStreamHeader::record_offset(mid as u64) + 8;
        source.seek(SeekFrom::Start(offset))?;
        read_exact_at(source, &mut buf, offset, "record area")?;
        if (u64::from_le_bytes(buf) as usize) < column {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Debug text form: `m n Z` on the first line, then one `row col value`
/// line per record. Values use Rust's shortest round-trip formatting.
pub fn write_triple_text<T: Scalar, W: Write>(a: &CooMatrix<T>, mut sink: W) -> Result<()> {
    writeln!(sink, "{} {} {}", a.nrows(), a.ncols(), a.nnz())?;
    for t in a.triples() {
        writeln!(sink, "{} {} {:?}", t.row, t.col, t.value.to_f64_lossy())?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_triple_text<T: Scalar, R: BufRead>(source: R) -> Result<CooMatrix<T>> {
    let mut lines = LineReader::new(source);
    let (offset, header) = lines
        .next_content()?
        .ok_or_else(|| Error::format(0, "empty text stream"))?;
    let dims = parse_fields::<usize>(&header, 3, offset)?;
    let (m, n, nnz) = (dims[0], dims[1], dims[2]);
    let mut triples = Vec::with_capacity(nnz);
    while let Some((offset, line)) = lines.next_content()? {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(Error::format(offset, "expected `row col value`"));
        }
        let row = parse_one::<usize>(f[0], offset)?;
        let col = parse_one::<usize>(f[1], offset)?;
        let value = parse_one::<f64>(f[2], offset)?;
        triples.push(Triple::new(row, col, T::from_f64_lossy(value)));
    }
    if triples.len() != nnz {
        return Err(Error::format(
            lines.offset,
            format!("header announces {nnz} records, found {}", triples.len()),
        ));
    }
    CooMatrix::new(m, n, triples).map_err(|e| Error::format(0, e.to_string()))
}

/// Imports a coordinate Matrix Market file with `real` or `integer` values
/// and `general` symmetry. Duplicate entries are summed.
pub fn import_matrix_market<T: Scalar, R: BufRead>(source: R) -> Result<CooMatrix<T>> {
    let mut lines = LineReader::new(source);
    let (_, banner) = lines
        .next_line()?
        .ok_or_else(|| Error::format(0, "empty Matrix Market file"))?;
    let fields: Vec<String> = banner.split_whitespace().map(str::to_lowercase).collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(Error::format(0, "missing %%MatrixMarket matrix banner"));
    }
    if fields[2] != "coordinate" {
        return Err(Error::format(0, format!("unsupported format `{}`", fields[2])));
    }
    if fields[3] != "real" && fields[3] != "integer" {
        return Err(Error::format(0, format!("unsupported field `{}`", fields[3])));
    }
    if fields[4] != "general" {
        return Err(Error::format(0, format!("unsupported symmetry `{}`", fields[4])));
    }
    let (offset, size) = lines
        .next_content()?
        .ok_or_else(|| Error::format(lines.offset, "missing size line"))?;
    let dims = parse_fields::<usize>(&size, 3, offset)?;
    let (m, n, entries) = (dims[0], dims[1], dims[2]);
    let mut sums: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut seen = 0usize;
    while let Some((offset, line)) = lines.next_content()? {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(Error::format(offset, "expected `row col value`"));
        }
        let row = parse_one::<usize>(f[0], offset)?;
        let col = parse_one::<usize>(f[1], offset)?;
        let value = parse_one::<f64>(f[2], offset)?;
        if row == 0 || col == 0 || row > m || col > n {
            return Err(Error::format(
                offset,
                format!("entry ({row}, {col}) outside a {m}x{n} matrix (indices are 1-based)"),
            ));
        }
        *sums.entry((col - 1, row - 1)).or_insert(0.0) += value;
        seen += 1;
    }
    if seen != entries {
        return Err(Error::format(
            lines.offset,
            format!("size line announces {entries} entries, found {seen}"),
        ));
    }
    let triples = sums
        .into_iter()
        .map(|((c, r), v)| Triple::new(r, c, T::from_f64_lossy(v)))
        .collect();
    CooMatrix::new(m, n, triples).map_err(|e| Error::format(0, e.to_string()))
}

/// Line reader that tracks byte offsets for error messages.
struct LineReader<R> {
    source: R,
    offset: u64,
    buf: String,
}

impl<R: BufRead> LineReader<R> {
    fn new(source: R) -> Self {
        Self {
            source,
            offset: 0,
            buf: String::new(),
        }
    }

    fn next_line(&mut self) -> Result<Option<(u64, String)>> {
        self.buf.clear();
        let start = self.offset;
        let read = self.source.read_line(&mut self.buf)?;
        if read == 0 {
            return Ok(None);
        }
        self.offset += read as u64;
        Ok(Some((start, self.buf.trim_end().to_string())))
    }

    /// Next line that is neither blank nor a `%` comment.
    fn next_content(&mut self) -> Result<Option<(u64, String)>> {
        while let Some((offset, line)) = self.next_line()? {
            let t = line.trim();
            if !t.is_empty() && !t.starts_with('%') {
                return Ok(Some((offset, t.to_string())));
            }
        }
        Ok(None)
    }
}

fn parse_one<V: std::str::FromStr>(field: &str, offset: u64) -> Result<V> {
    field
        .parse()
        .map_err(|_| Error::format(offset, format!("cannot parse `{field}`")))
}

fn parse_fields<V: std::str::FromStr>(line: &str, count: usize, offset: u64) -> Result<Vec<V>> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != count {
        return Err(Error::format(
            offset,
            format!("expected {count} fields, found {}", fields.len()),
        ));
    }
    fields.iter().map(|f| parse_one(f, offset)).collect()
}
