//! Versioned plain-text checkpoints.
//!
//! ```text
//! clr-impute checkpoint v1
//! model clr
//! dims 10 8 100
//! norm 1.2e-1 9.8e-1        # or: norm none
//! rank 10
//! kernel 3                  # clr only
//! matrix station 10 10
//! <10 lines of 10 values>
//! ...
//! vector slot_bias 100
//! <1 line of 100 values>
//! end
//! ```
//!
//! Reals are written with 17 significant digits, so a write/read cycle
//! reproduces every parameter bit for bit.

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::baseline::BiasCpParams;
use crate::factor::FactorMatrix;
use crate::model::{ClrParams, ModelError};
use crate::tensor::{Dims, EntryIndex, Normalization};

const MAGIC: &str = "clr-impute checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("invalid parameters: {0}")]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Clr(ClrParams),
    Baseline(BiasCpParams),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Clr(_) => "clr",
            Model::Baseline(_) => "baseline",
        }
    }

    pub fn dims(&self) -> Dims {
        match self {
            Model::Clr(p) => p.dims(),
            Model::Baseline(p) => p.dims(),
        }
    }

    /// Prediction on the normalized scale.
    pub fn predict(&self, idx: EntryIndex) -> f64 {
        match self {
            Model::Clr(p) => p.predict(idx).value(),
            Model::Baseline(p) => p.predict_linear(idx),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub norm: Option<Normalization>,
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_matrix<W: Write>(out: &mut W, name: &str, m: &FactorMatrix) -> std::io::Result<()> {
    writeln!(out, "matrix {name} {} {}", m.rows(), m.cols())?;
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|&x| real(x)).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

fn write_vector<W: Write>(out: &mut W, name: &str, v: &[f64]) -> std::io::Result<()> {
    writeln!(out, "vector {name} {}", v.len())?;
    let row: Vec<String> = v.iter().map(|&x| real(x)).collect();
    writeln!(out, "{}", row.join(" "))
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.model.dims();
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "model {}", self.model.kind())?;
        writeln!(out, "dims {} {} {}", d.stations, d.parameters, d.slots)?;
        match self.norm {
            Some(n) => writeln!(out, "norm {} {}", real(n.min), real(n.max))?,
            None => writeln!(out, "norm none")?,
        }
        match &self.model {
            Model::Clr(p) => {
                writeln!(out, "rank {}", p.rank())?;
                writeln!(out, "kernel {}", p.kernel_len())?;
                write_matrix(&mut out, "station", &p.station)?;
                write_matrix(&mut out, "parameter", &p.parameter)?;
                write_matrix(&mut out, "temporal", &p.temporal)?;
                write_matrix(&mut out, "kernel", &p.kernel)?;
                write_vector(&mut out, "station_bias", &p.station_bias)?;
                write_vector(&mut out, "parameter_bias", &p.parameter_bias)?;
                write_vector(&mut out, "slot_bias", &p.slot_bias)?;
            }
            Model::Baseline(p) => {
                writeln!(out, "rank {}", p.rank())?;
                write_matrix(&mut out, "station", &p.station)?;
                write_matrix(&mut out, "parameter", &p.parameter)?;
                write_matrix(&mut out, "temporal", &p.temporal)?;
                write_vector(&mut out, "station_bias", &p.station_bias)?;
                write_vector(&mut out, "parameter_bias", &p.parameter_bias)?;
                write_vector(&mut out, "slot_bias", &p.slot_bias)?;
            }
        }
        writeln!(out, "end")?;
        out.flush()
    }

    pub fn read<R: BufRead>(source: R) -> Result<Checkpoint, CheckpointError> {
        let mut p = Parser {
            lines: source.lines(),
            line: 0,
        };
        let magic = p.next_line()?;
        if magic.trim() != MAGIC {
            return Err(p.err(format!("expected header {MAGIC:?}")));
        }
        let kind = p.keyword("model", 1)?.remove(0);
        let dims = p.keyword("dims", 3)?;
        let dims = [p.count(&dims[0])?, p.count(&dims[1])?, p.count(&dims[2])?];
        let norm = {
            let f = p.keyword_any("norm")?;
            match f.as_slice() {
                [none] if none == "none" => None,
                [lo, hi] => {
                    let (min, max) = (p.real(lo)?, p.real(hi)?);
                    if !(max > min) {
                        return Err(p.err("normalization range must satisfy min < max".into()));
                    }
                    Some(Normalization { min, max })
                }
                _ => return Err(p.err("expected `norm none` or `norm <min> <max>`".into())),
            }
        };
        let rank = p.keyword("rank", 1)?;
        let rank = p.count(&rank[0])?;
        let model = match kind.as_str() {
            "clr" => {
                let kernel = p.keyword("kernel", 1)?;
                let kernel = p.count(&kernel[0])?;
                let station = p.matrix("station", dims[0], rank)?;
                let parameter = p.matrix("parameter", dims[1], rank)?;
                let temporal = p.matrix("temporal", dims[2], rank)?;
                let kernel = p.matrix("kernel", kernel, rank)?;
                let a = p.vector("station_bias", dims[0])?;
                let e = p.vector("parameter_bias", dims[1])?;
                let o = p.vector("slot_bias", dims[2])?;
                Model::Clr(ClrParams::from_parts(
                    station, parameter, temporal, kernel, a, e, o,
                )?)
            }
            "baseline" => {
                let station = p.matrix("station", dims[0], rank)?;
                let parameter = p.matrix("parameter", dims[1], rank)?;
                let temporal = p.matrix("temporal", dims[2], rank)?;
                let a = p.vector("station_bias", dims[0])?;
                let e = p.vector("parameter_bias", dims[1])?;
                let o = p.vector("slot_bias", dims[2])?;
                Model::Baseline(BiasCpParams::from_parts(
                    station, parameter, temporal, a, e, o,
                )?)
            }
            other => return Err(p.err(format!("unknown model kind {other:?}"))),
        };
        if p.next_line()?.trim() != "end" {
            return Err(p.err("expected `end`".into()));
        }
        Ok(Checkpoint { model, norm })
    }
}

struct Parser<R: BufRead> {
    lines: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Parser<R> {
    fn err(&self, reason: String) -> CheckpointError {
        CheckpointError::Format {
            line: self.line,
            reason,
        }
    }

    fn next_line(&mut self) -> Result<String, CheckpointError> {
        self.line += 1;
        match self.lines.next() {
            Some(l) => Ok(l?),
            None => Err(self.err("unexpected end of file".into())),
        }
    }

    fn keyword_any(&mut self, key: &str) -> Result<Vec<String>, CheckpointError> {
        let line = self.next_line()?;
        let mut fields = line.split_whitespace();
        if fields.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        Ok(fields.map(str::to_owned).collect())
    }

    fn keyword(&mut self, key: &str, n: usize) -> Result<Vec<String>, CheckpointError> {
        let fields = self.keyword_any(key)?;
        if fields.len() != n {
            return Err(self.err(format!("`{key}` takes {n} field(s)")));
        }
        Ok(fields)
    }

    fn count(&self, s: &str) -> Result<usize, CheckpointError> {
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(self.err(format!("{s:?} is not a positive integer"))),
        }
    }

    fn real(&self, s: &str) -> Result<f64, CheckpointError> {
        match s.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(self.err(format!("{s:?} is not a finite real"))),
        }
    }

    fn row(&mut self, len: usize, out: &mut Vec<f64>) -> Result<(), CheckpointError> {
        let line = self.next_line()?;
        let before = out.len();
        for field in line.split_whitespace() {
            if out.len() - before == len {
                return Err(self.err(format!("more than {len} values")));
            }
            out.push(self.real(field)?);
        }
        if out.len() - before != len {
            return Err(self.err(format!("expected {len} values")));
        }
        Ok(())
    }

    fn matrix(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
    ) -> Result<FactorMatrix, CheckpointError> {
        let header = self.keyword("matrix", 3)?;
        if header[0] != name {
            return Err(self.err(format!("expected matrix {name:?}, found {:?}", header[0])));
        }
        if self.count(&header[1])? != rows || self.count(&header[2])? != cols {
            return Err(self.err(format!("matrix {name} must be {rows}x{cols}")));
        }
        let mut data = Vec::new();
        for _ in 0..rows {
            self.row(cols, &mut data)?;
        }
        FactorMatrix::from_vec(rows, cols, data)
            .ok_or_else(|| self.err(format!("matrix {name} has the wrong size")))
    }

    fn vector(&mut self, name: &str, len: usize) -> Result<Vec<f64>, CheckpointError> {
        let header = self.keyword("vector", 2)?;
        if header[0] != name {
            return Err(self.err(format!("expected vector {name:?}, found {:?}", header[0])));
        }
        if self.count(&header[1])? != len {
            return Err(self.err(format!("vector {name} must have {len} values")));
        }
        let mut data = Vec::new();
        self.row(len, &mut data)?;
        Ok(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clr() -> ClrParams {
        ClrParams::init_positive(Dims::new(3, 2, 5).unwrap(), 4, 3, 17).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = clr();
        p.station.set(0, 0, -1.0 / 3.0);
        p.slot_bias[4] = 1e-300;
        p.kernel.set(2, 3, f64::MIN_POSITIVE);
        let ck = Checkpoint {
            model: Model::Clr(p),
            norm: Some(Normalization { min: 0.1, max: 7.3 }),
        };
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        assert_eq!(Checkpoint::read(buf.as_slice()).unwrap(), ck);

        let base = Checkpoint {
            model: Model::Baseline(
                BiasCpParams::init_positive(Dims::new(2, 2, 2).unwrap(), 2, 1).unwrap(),
            ),
            norm: None,
        };
        let mut buf = Vec::new();
        base.write(&mut buf).unwrap();
        assert_eq!(Checkpoint::read(buf.as_slice()).unwrap(), base);
    }

    #[test]
    fn rejects_corruption() {
        let ck = Checkpoint {
            model: Model::Clr(clr()),
            norm: None,
        };
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();

        let truncated = lines[..lines.len() - 3].join("\n");
        assert!(Checkpoint::read(truncated.as_bytes()).is_err());

        let mut short_row = lines.clone();
        let row = short_row[8].rsplit_once(' ').unwrap().0.to_owned();
        short_row[8] = &row;
        assert!(matches!(
            Checkpoint::read(short_row.join("\n").as_bytes()),
            Err(CheckpointError::Format { line: 9, .. })
        ));

        let wrong_magic = text.replacen("v1", "v9", 1);
        assert!(Checkpoint::read(wrong_magic.as_bytes()).is_err());

        let nan = text.replacen("dims 3 2 5", "dims 3 2 6", 1);
        assert!(Checkpoint::read(nan.as_bytes()).is_err());
    }
}
