//! Coordinate-format storage for the observed entries of a 3-way
//! (station × parameter × time) tensor.
//!
//! Only observed cells are kept; the dense tensor is never materialized.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: index ({i}, {j}, {k}) outside dims {dims}")]
    OutOfBounds {
        line: usize,
        i: usize,
        j: usize,
        k: usize,
        dims: Dims,
    },
    #[error("line {line}: duplicate entry ({i}, {j}, {k})")]
    Duplicate {
        line: usize,
        i: usize,
        j: usize,
        k: usize,
    },
    #[error("dimensions must be positive, got {0}")]
    EmptyDims(Dims),
    #[error("cannot normalize: {0}")]
    DegenerateRange(String),
    #[error("split ratios must be non-negative and sum to 1, got ({0}, {1}, {2})")]
    Ratios(f64, f64, f64),
    #[error("split file does not match tensor: {0}")]
    SplitMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Tensor extents `(|I|, |J|, |K|)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub stations: usize,
    pub parameters: usize,
    pub slots: usize,
}

impl Dims {
    pub fn new(stations: usize, parameters: usize, slots: usize) -> Result<Self, TensorError> {
        let dims = Dims {
            stations,
            parameters,
            slots,
        };
        if stations == 0 || parameters == 0 || slots == 0 {
            return Err(TensorError::EmptyDims(dims));
        }
        Ok(dims)
    }

    /// Number of cells in the dense tensor, saturating on overflow.
    pub fn cells(&self) -> u128 {
        self.stations as u128 * self.parameters as u128 * self.slots as u128
    }

    pub fn contains(&self, idx: EntryIndex) -> bool {
        idx.i < self.stations && idx.j < self.parameters && idx.k < self.slots
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.stations, self.parameters, self.slots)
    }
}

/// 0-based `(station, parameter, time slot)` subscript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntryIndex {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl EntryIndex {
    pub const fn new(i: usize, j: usize, k: usize) -> Self {
        EntryIndex { i, j, k }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub idx: EntryIndex,
    pub value: f64,
}

impl Entry {
    pub const fn new(i: usize, j: usize, k: usize, value: f64) -> Self {
        Entry {
            idx: EntryIndex::new(i, j, k),
            value,
        }
    }
}

/// Min-max statistics used to map raw values onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

impl Normalization {
    /// Fits statistics to a set of values. Needs at least two distinct values.
    pub fn fit<I: IntoIterator<Item = f64>>(values: I) -> Result<Self, TensorError> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut n = 0usize;
        for v in values {
            min = min.min(v);
            max = max.max(v);
            n += 1;
        }
        if n < 2 {
            return Err(TensorError::DegenerateRange(format!(
                "need at least 2 entries, got {n}"
            )));
        }
        if !(max > min) {
            return Err(TensorError::DegenerateRange(format!(
                "all values equal {min}"
            )));
        }
        Ok(Normalization { min, max })
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    #[inline]
    pub fn invert(&self, y: f64) -> f64 {
        y * (self.max - self.min) + self.min
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

/// Observed entries of a sparse 3-way tensor in coordinate format.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    dims: Dims,
    entries: Vec<Entry>,
    norm: Option<Normalization>,
}

impl SparseTensor {
    /// Builds a tensor from entries, checking bounds and uniqueness.
    pub fn from_entries(dims: Dims, entries: Vec<Entry>) -> Result<Self, TensorError> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (n, e) in entries.iter().enumerate() {
            check_entry(dims, e.idx, n + 1, &mut seen)?;
            if !e.value.is_finite() {
                return Err(TensorError::Parse {
                    line: n + 1,
                    reason: format!("non-finite value {}", e.value),
                });
            }
        }
        Ok(SparseTensor {
            dims,
            entries,
            norm: None,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> Option<Normalization> {
        self.norm
    }

    pub fn iter(&self) -> impl Iterator<Item = &Entry> {
        self.entries.iter()
    }

    /// Min-max scales every value onto `[0, 1]` using this tensor's own range.
    pub fn normalize(&self) -> Result<SparseTensor, TensorError> {
        let norm = Normalization::fit(self.entries.iter().map(|e| e.value))?;
        Ok(self.normalize_with(norm))
    }

    /// Applies previously fitted statistics. Values may land outside `[0, 1]`.
    pub fn normalize_with(&self, norm: Normalization) -> SparseTensor {
        let entries = self
            .entries
            .iter()
            .map(|e| Entry {
                idx: e.idx,
                value: norm.apply(e.value),
            })
            .collect();
        SparseTensor {
            dims: self.dims,
            entries,
            norm: Some(norm),
        }
    }

    /// Inverse of [`SparseTensor::normalize`]. A tensor with no recorded
    /// statistics is returned unchanged.
    pub fn denormalize(&self) -> SparseTensor {
        match self.norm {
            None => self.clone(),
            Some(norm) => SparseTensor {
                dims: self.dims,
                entries: self
                    .entries
                    .iter()
                    .map(|e| Entry {
                        idx: e.idx,
                        value: norm.invert(e.value),
                    })
                    .collect(),
                norm: None,
            },
        }
    }

    /// Writes entries as `i,j,k,value` lines with a header.
    pub fn write_coo<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,j,k,value")?;
        for e in &self.entries {
            writeln!(out, "{},{},{},{}", e.idx.i, e.idx.j, e.idx.k, e.value)?;
        }
        out.flush()
    }
}

fn check_entry(
    dims: Dims,
    idx: EntryIndex,
    line: usize,
    seen: &mut HashSet<EntryIndex>,
) -> Result<(), TensorError> {
    if !dims.contains(idx) {
        return Err(TensorError::OutOfBounds {
            line,
            i: idx.i,
            j: idx.j,
            k: idx.k,
            dims,
        });
    }
    if !seen.insert(idx) {
        return Err(TensorError::Duplicate {
            line,
            i: idx.i,
            j: idx.j,
            k: idx.k,
        });
    }
    Ok(())
}

/// One parsed line of a coordinate-format file.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Record<'a> {
    Blank,
    Header,
    Fields(Vec<&'a str>),
}

/// Splits a line on commas or tabs. A line whose first field is not an
/// integer is treated as a header when it is the first non-blank line.
pub(crate) fn split_record(line: &str) -> Vec<&str> {
    let line = line.trim_end_matches(['\r', '\n']);
    let delim = if line.contains('\t') { '\t' } else { ',' };
    line.split(delim).map(str::trim).collect()
}

pub(crate) fn classify<'a>(line: &'a str, first: bool) -> Record<'a> {
    if line.trim().is_empty() {
        return Record::Blank;
    }
    let fields = split_record(line);
    if first && fields[0].parse::<f64>().is_err() {
        return Record::Header;
    }
    Record::Fields(fields)
}

pub(crate) fn parse_index(field: &str, line: usize, name: &str) -> Result<usize, TensorError> {
    field.parse::<usize>().map_err(|_| TensorError::Parse {
        line,
        reason: format!("{name} index {field:?} is not a non-negative integer"),
    })
}

fn parse_value(field: &str, line: usize) -> Result<f64, TensorError> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(TensorError::Parse {
            line,
            reason: format!("value {v} is not finite"),
        }),
        Err(_) => Err(TensorError::Parse {
            line,
            reason: format!("value {field:?} is not a real number"),
        }),
    }
}

fn parse_coo_lines<R: BufRead>(source: R) -> Result<Vec<(usize, Entry)>, TensorError> {
    let mut out = Vec::new();
    let mut first = true;
    for (n, line) in source.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        match classify(&line, first) {
            Record::Blank => continue,
            Record::Header => {
                first = false;
                continue;
            }
            Record::Fields(fields) => {
                first = false;
                if fields.len() != 4 {
                    return Err(TensorError::Parse {
                        line: line_no,
                        reason: format!("expected 4 fields, found {}", fields.len()),
                    });
                }
                let i = parse_index(fields[0], line_no, "station")?;
                let j = parse_index(fields[1], line_no, "parameter")?;
                let k = parse_index(fields[2], line_no, "time")?;
                let value = parse_value(fields[3], line_no)?;
                out.push((line_no, Entry::new(i, j, k, value)));
            }
        }
    }
    Ok(out)
}

/// Reads `i,j,k,value` records (comma or tab separated, optional header,
/// LF or CRLF) into a tensor with the given extents.
pub fn load_coo<R: BufRead>(source: R, dims: Dims) -> Result<SparseTensor, TensorError> {
    let records = parse_coo_lines(source)?;
    let mut seen = HashSet::with_capacity(records.len());
    let mut entries = Vec::with_capacity(records.len());
    for (line, e) in records {
        check_entry(dims, e.idx, line, &mut seen)?;
        entries.push(e);
    }
    Ok(SparseTensor {
        dims,
        entries,
        norm: None,
    })
}

/// Reads a COO stream and sizes the tensor from the largest index seen.
pub fn load_coo_infer_dims<R: BufRead>(source: R) -> Result<SparseTensor, TensorError> {
    let records = parse_coo_lines(source)?;
    if records.is_empty() {
        return Err(TensorError::Parse {
            line: 0,
            reason: "no entries".into(),
        });
    }
    let (mut si, mut sj, mut sk) = (0, 0, 0);
    for (_, e) in &records {
        si = si.max(e.idx.i);
        sj = sj.max(e.idx.j);
        sk = sk.max(e.idx.k);
    }
    let dims = Dims::new(si + 1, sj + 1, sk + 1)?;
    let mut seen = HashSet::with_capacity(records.len());
    let mut entries = Vec::with_capacity(records.len());
    for (line, e) in records {
        check_entry(dims, e.idx, line, &mut seen)?;
        entries.push(e);
    }
    Ok(SparseTensor {
        dims,
        entries,
        norm: None,
    })
}

/// Reads `i,j,k` index lists (e.g. cells to impute).
pub fn load_indices<R: BufRead>(source: R, dims: Dims) -> Result<Vec<EntryIndex>, TensorError> {
    let mut out = Vec::new();
    let mut first = true;
    for (n, line) in source.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        match classify(&line, first) {
            Record::Blank => continue,
            Record::Header => first = false,
            Record::Fields(fields) => {
                first = false;
                if fields.len() < 3 {
                    return Err(TensorError::Parse {
                        line: line_no,
                        reason: format!("expected 3 index fields, found {}", fields.len()),
                    });
                }
                let idx = EntryIndex::new(
                    parse_index(fields[0], line_no, "station")?,
                    parse_index(fields[1], line_no, "parameter")?,
                    parse_index(fields[2], line_no, "time")?,
                );
                if !dims.contains(idx) {
                    return Err(TensorError::OutOfBounds {
                        line: line_no,
                        i: idx.i,
                        j: idx.j,
                        k: idx.k,
                        dims,
                    });
                }
                out.push(idx);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(i: usize, j: usize, k: usize) -> Dims {
        Dims::new(i, j, k).unwrap()
    }

    fn values(t: &SparseTensor) -> Vec<f64> {
        t.entries().iter().map(|e| e.value).collect()
    }

    fn from_values(vals: &[f64]) -> SparseTensor {
        let entries = vals
            .iter()
            .enumerate()
            .map(|(n, &v)| Entry::new(0, 0, n, v))
            .collect();
        SparseTensor::from_entries(dims(1, 1, vals.len()), entries).unwrap()
    }

    #[test]
    fn loads_two_entries() {
        let t = load_coo("0,0,0,1.5\n1,2,3,0.2".as_bytes(), dims(2, 3, 4)).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.entries()[1], Entry::new(1, 2, 3, 0.2));
    }

    #[test]
    fn rejects_out_of_bounds() {
        let err = load_coo("5,0,0,1.0".as_bytes(), dims(2, 3, 4)).unwrap_err();
        assert!(matches!(
            err,
            TensorError::OutOfBounds { i: 5, line: 1, .. }
        ));
    }

    #[test]
    fn rejects_duplicates() {
        let err = load_coo("0,0,0,1.0\n0,0,0,2.0".as_bytes(), dims(2, 3, 4)).unwrap_err();
        assert!(matches!(err, TensorError::Duplicate { line: 2, .. }));
    }

    #[test]
    fn header_tabs_and_crlf() {
        let src = "i\tj\tk\tvalue\r\n0\t1\t2\t0.5\r\n\r\n1\t0\t3\t-2e-3\r\n";
        let t = load_coo(src.as_bytes(), dims(2, 3, 4)).unwrap();
        assert_eq!(values(&t), vec![0.5, -2e-3]);
    }

    #[test]
    fn malformed_records_report_line() {
        let cases = [
            ("0,0,0,1\n0,0,1", 2),
            ("0,0,0,1\n0,x,1,2", 2),
            ("0,0,0,1\n0,0,1,nan", 2),
            ("0,0,0,1\n-1,0,1,2", 2),
            ("0,0,0,1\n\n0,0,1,2,3", 3),
        ];
        for (src, line) in cases {
            match load_coo(src.as_bytes(), dims(2, 3, 4)) {
                Err(TensorError::Parse { line: l, .. }) => assert_eq!(l, line, "{src:?}"),
                other => panic!("{src:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn header_only_allowed_on_first_line() {
        let err = load_coo("0,0,0,1\ni,j,k,value".as_bytes(), dims(2, 3, 4)).unwrap_err();
        assert!(matches!(err, TensorError::Parse { line: 2, .. }));
    }

    #[test]
    fn infers_dims() {
        let t = load_coo_infer_dims("0,0,0,1\n3,1,7,2".as_bytes()).unwrap();
        assert_eq!(t.dims(), dims(4, 2, 8));
    }

    #[test]
    fn normalize_examples() {
        let t = from_values(&[2.0, 4.0, 6.0]).normalize().unwrap();
        assert_eq!(values(&t), vec![0.0, 0.5, 1.0]);
        assert_eq!(t.norm(), Some(Normalization { min: 2.0, max: 6.0 }));

        let t = from_values(&[0.0, 1.0]).normalize().unwrap();
        assert_eq!(values(&t), vec![0.0, 1.0]);

        let t = from_values(&[-1.0, 0.0, 3.0]).normalize().unwrap();
        assert_eq!(values(&t), vec![0.0, 0.25, 1.0]);
    }

    #[test]
    fn normalize_rejects_degenerate() {
        assert!(matches!(
            from_values(&[3.0, 3.0, 3.0]).normalize(),
            Err(TensorError::DegenerateRange(_))
        ));
        assert!(matches!(
            from_values(&[3.0]).normalize(),
            Err(TensorError::DegenerateRange(_))
        ));
    }

    #[test]
    fn write_then_load_is_identity() {
        let t = from_values(&[0.1, -3.25e-7, 1e300, 0.30000000000000004]);
        let mut buf = Vec::new();
        t.write_coo(&mut buf).unwrap();
        let back = load_coo(buf.as_slice(), t.dims()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn index_lists() {
        let idx = load_indices("i,j,k\n1,2,3\n0,0,0,ignored".as_bytes(), dims(2, 3, 4)).unwrap();
        assert_eq!(
            idx,
            vec![EntryIndex::new(1, 2, 3), EntryIndex::new(0, 0, 0)]
        );
        assert!(load_indices("2,0,0".as_bytes(), dims(2, 3, 4)).is_err());
    }
}
