//! Train / validation / test partition of the observed entries and the
//! normalized views the trainers consume.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{
    classify, parse_index, Entry, EntryIndex, Normalization, Record, SparseTensor, TensorError,
};

/// Ratio used by the evaluation protocol: 1:2:7.
pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.1, 0.2, 0.7);

/// Training targets are kept inside the open range of the output sigmoid.
pub const TARGET_EPS: f64 = 1e-6;

const RATIO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Train,
    Validation,
    Test,
}

impl Label {
    pub fn code(self) -> u8 {
        match self {
            Label::Train => 0,
            Label::Validation => 1,
            Label::Test => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Label> {
        match code {
            0 => Some(Label::Train),
            1 => Some(Label::Validation),
            2 => Some(Label::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    labels: Vec<Label>,
    ratios: (f64, f64, f64),
    seed: u64,
}

fn check_ratios(r: (f64, f64, f64)) -> Result<(), TensorError> {
    let ok = [r.0, r.1, r.2].iter().all(|x| x.is_finite() && *x >= 0.0)
        && (r.0 + r.1 + r.2 - 1.0).abs() <= RATIO_TOL;
    if ok {
        Ok(())
    } else {
        Err(TensorError::Ratios(r.0, r.1, r.2))
    }
}

/// Labels every entry by an independent seeded uniform draw.
pub fn split(
    t: &SparseTensor,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment, TensorError> {
    check_ratios(ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cut = ratios.0 + ratios.1;
    let labels = (0..t.len())
        .map(|_| {
            let u: f64 = rng.random();
            if u < ratios.0 {
                Label::Train
            } else if u < cut {
                Label::Validation
            } else {
                Label::Test
            }
        })
        .collect();
    Ok(SplitAssignment {
        labels,
        ratios,
        seed,
    })
}

impl SplitAssignment {
    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn ratios(&self) -> (f64, f64, f64) {
        self.ratios
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for l in &self.labels {
            c[l.code() as usize] += 1;
        }
        c
    }

    /// Writes `i,j,k,label` lines, label in {0,1,2} = {train,val,test}.
    pub fn write<W: Write>(&self, t: &SparseTensor, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,j,k,label")?;
        for (e, l) in t.entries().iter().zip(&self.labels) {
            writeln!(out, "{},{},{},{}", e.idx.i, e.idx.j, e.idx.k, l.code())?;
        }
        out.flush()
    }

    /// Reads a split file and aligns it with the entries of `t`. Every
    /// entry must be labeled exactly once and no unknown index may appear.
    pub fn read<R: BufRead>(source: R, t: &SparseTensor) -> Result<SplitAssignment, TensorError> {
        let labels = parse_split_lines(source)?;
        let mut by_index: HashMap<EntryIndex, Label> = HashMap::with_capacity(labels.len());
        for (line, idx, label) in labels {
            if by_index.insert(idx, label).is_some() {
                return Err(TensorError::Duplicate {
                    line,
                    i: idx.i,
                    j: idx.j,
                    k: idx.k,
                });
            }
        }
        if by_index.len() != t.len() {
            return Err(TensorError::SplitMismatch(format!(
                "{} labels for {} entries",
                by_index.len(),
                t.len()
            )));
        }
        let labels = t
            .entries()
            .iter()
            .map(|e| {
                by_index.get(&e.idx).copied().ok_or_else(|| {
                    TensorError::SplitMismatch(format!(
                        "entry ({}, {}, {}) has no label",
                        e.idx.i, e.idx.j, e.idx.k
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let n = labels.len().max(1) as f64;
        let mut assignment = SplitAssignment {
            labels,
            ratios: (0.0, 0.0, 0.0),
            seed: 0,
        };
        let c = assignment.counts();
        assignment.ratios = (c[0] as f64 / n, c[1] as f64 / n, c[2] as f64 / n);
        Ok(assignment)
    }
}

/// Parses `i,j,k,label` records without matching them to a tensor.
pub fn parse_split_lines<R: BufRead>(
    source: R,
) -> Result<Vec<(usize, EntryIndex, Label)>, TensorError> {
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
                if fields.len() != 4 {
                    return Err(TensorError::Parse {
                        line: line_no,
                        reason: format!("expected 4 fields, found {}", fields.len()),
                    });
                }
                let idx = EntryIndex::new(
                    parse_index(fields[0], line_no, "station")?,
                    parse_index(fields[1], line_no, "parameter")?,
                    parse_index(fields[2], line_no, "time")?,
                );
                let label = fields[3]
                    .parse::<u8>()
                    .ok()
                    .and_then(Label::from_code)
                    .ok_or_else(|| TensorError::Parse {
                        line: line_no,
                        reason: format!("label {:?} not in {{0,1,2}}", fields[3]),
                    })?;
                out.push((line_no, idx, label));
            }
        }
    }
    Ok(out)
}

/// A held-out entry: the loss target (clamped to `[0, 1]`) and the
/// normalized value before clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeldOut {
    pub idx: EntryIndex,
    pub target: f64,
    pub unclamped: f64,
}

/// Normalized, split data ready for training.
///
/// Statistics are fitted on the training entries only and reused for the
/// validation and test entries.
#[derive(Debug, Clone)]
pub struct Splits {
    pub dims: crate::tensor::Dims,
    pub norm: Normalization,
    pub train: Vec<Entry>,
    pub validation: Vec<HeldOut>,
    pub test: Vec<HeldOut>,
    /// Held-out targets that fell outside `[0, 1]` and were clamped.
    pub clamped: usize,
}

impl Splits {
    pub fn new(t: &SparseTensor, assignment: &SplitAssignment) -> Result<Splits, TensorError> {
        if assignment.labels().len() != t.len() {
            return Err(TensorError::SplitMismatch(format!(
                "{} labels for {} entries",
                assignment.labels().len(),
                t.len()
            )));
        }
        let pairs = || t.entries().iter().zip(assignment.labels());
        let norm = Normalization::fit(
            pairs()
                .filter(|(_, l)| **l == Label::Train)
                .map(|(e, _)| e.value),
        )?;
        let mut splits = Splits {
            dims: t.dims(),
            norm,
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
            clamped: 0,
        };
        for (e, l) in pairs() {
            let y = norm.apply(e.value);
            match l {
                Label::Train => splits.train.push(Entry {
                    idx: e.idx,
                    value: y.clamp(TARGET_EPS, 1.0 - TARGET_EPS),
                }),
                Label::Validation | Label::Test => {
                    let target = y.clamp(0.0, 1.0);
                    if target != y {
                        splits.clamped += 1;
                    }
                    let h = HeldOut {
                        idx: e.idx,
                        target,
                        unclamped: y,
                    };
                    if *l == Label::Validation {
                        splits.validation.push(h);
                    } else {
                        splits.test.push(h);
                    }
                }
            }
        }
        Ok(splits)
    }
}
