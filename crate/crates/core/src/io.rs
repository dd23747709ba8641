//! CSV and binary serialization of controls, snapshots, spectra and
//! optimizer histories.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use csv::{Reader, Writer};
use nalgebra::{DMatrix, DVector};

use crate::basis::SingularSpectrum;
use crate::control::ControlSignal;
use crate::error::{Error, Result};
use crate::fom::SnapshotMatrix;
use crate::optimizer::{
    IterationObserver, IterationRecord, OptimizerReport, PhaseTimings, StepKind,
};

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn format_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn parse_f64(path: &Path, row: usize, field: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| format_error(path, format!("row {row}: '{field}' is not a number")))
}

/// Writes a header and one row per entry of `rows`.
pub fn write_table<P: AsRef<Path>>(
    path: P,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<()> {
    let mut w = Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|&x| fmt_f64(x)))?;
    }
    w.flush()?;
    Ok(())
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| parse_f64(path, i + 1, f))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != header.len() {
            return Err(format_error(
                path,
                format!(
                    "row {} has {} fields, expected {}",
                    i + 1,
                    row.len(),
                    header.len()
                ),
            ));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// One row per time node with columns `u_1, ..., u_m`.
pub fn write_control_csv<P: AsRef<Path>>(path: P, u: &ControlSignal) -> Result<()> {
    let header: Vec<String> = (1..=u.m()).map(|k| format!("u_{k}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(
        path,
        &header,
        (0..u.n_t()).map(|j| u.matrix().column(j).iter().copied().collect()),
    )
}

pub fn read_control_csv<P: AsRef<Path>>(path: P) -> Result<ControlSignal> {
    let path = path.as_ref();
    let (header, rows) = read_table(path)?;
    for (k, h) in header.iter().enumerate() {
        if h != &format!("u_{}", k + 1) {
            return Err(format_error(path, format!("unexpected column '{h}'")));
        }
    }
    let m = header.len();
    Ok(ControlSignal::from_matrix(DMatrix::from_fn(
        m,
        rows.len(),
        |k, j| rows[j][k],
    )))
}

/// One row per grid node, one column `t_j` per time node.
pub fn write_snapshots_csv<P: AsRef<Path>>(path: P, q: &SnapshotMatrix) -> Result<()> {
    let header: Vec<String> = (0..q.n_t()).map(|j| format!("t_{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(
        path,
        &header,
        (0..q.n()).map(|i| q.matrix().row(i).iter().copied().collect()),
    )
}

pub fn read_snapshots_csv<P: AsRef<Path>>(path: P) -> Result<SnapshotMatrix> {
    let (header, rows) = read_table(path.as_ref())?;
    Ok(SnapshotMatrix::from_matrix(DMatrix::from_fn(
        rows.len(),
        header.len(),
        |i, j| rows[i][j],
    )))
}

/// Little-endian `u64` rows and columns followed by column-major `f64` data.
pub fn write_snapshots_bin<P: AsRef<Path>>(path: P, q: &SnapshotMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(q.n() as u64).to_le_bytes())?;
    w.write_all(&(q.n_t() as u64).to_le_bytes())?;
    for x in q.matrix().iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshots_bin<P: AsRef<Path>>(path: P) -> Result<SnapshotMatrix> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut word = [0u8; 8];
    let mut dims = [0usize; 2];
    for d in dims.iter_mut() {
        r.read_exact(&mut word)
            .map_err(|_| format_error(path, "truncated header"))?;
        *d = usize::try_from(u64::from_le_bytes(word))
            .map_err(|_| format_error(path, "dimension overflows usize"))?;
    }
    let [n, n_t] = dims;
    let len = n
        .checked_mul(n_t)
        .ok_or_else(|| format_error(path, "dimensions overflow"))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != len * 8 {
        return Err(format_error(
            path,
            format!("expected {} data bytes, found {}", len * 8, bytes.len()),
        ));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(SnapshotMatrix::from_matrix(DMatrix::from_vec(n, n_t, data)))
}

pub fn write_spectrum_csv<P: AsRef<Path>>(path: P, spectrum: &SingularSpectrum) -> Result<()> {
    write_table(path, &["sigma"], spectrum.values().iter().map(|&s| vec![s]))
}

pub fn read_spectrum_csv<P: AsRef<Path>>(path: P) -> Result<SingularSpectrum> {
    let path = path.as_ref();
    let (header, rows) = read_table(path)?;
    if header != ["sigma"] {
        return Err(format_error(path, "expected a single 'sigma' column"));
    }
    SingularSpectrum::new(DVector::from_iterator(
        rows.len(),
        rows.iter().map(|r| r[0]),
    ))
}

fn step_code(step: StepKind) -> f64 {
    match step {
        StepKind::None => 0.0,
        StepKind::Backtracking => 1.0,
        StepKind::BarzilaiBorwein => 2.0,
        StepKind::Failed => -1.0,
    }
}

const FLUSH_EVERY: usize = 50;

/// Streams iteration records into per-quantity CSV files.
pub struct ReportWriter {
    dir: PathBuf,
    cost: Writer<File>,
    gradient: Writer<File>,
    modes: Writer<File>,
    timings: Writer<File>,
    spectra: bool,
    rows: usize,
}

impl ReportWriter {
    /// Creates the history files in `dir`. With `spectra`, every refinement
    /// also writes `singular_values_iter{i}.csv`.
    pub fn create<P: AsRef<Path>>(dir: P, spectra: bool) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let open = |name: &str, header: &[&str]| -> Result<Writer<File>> {
            let mut w = Writer::from_path(dir.join(name))?;
            w.write_record(header)?;
            Ok(w)
        };
        let mut timing_header = vec!["iteration"];
        timing_header.extend(PhaseTimings::CATEGORIES);
        timing_header.push("wall");
        Ok(Self {
            cost: open(
                "cost_history.csv",
                &["iteration", "J", "tracking", "regularization"],
            )?,
            gradient: open(
                "gradient_history.csv",
                &["iteration", "grad_norm", "rel_grad", "omega", "step"],
            )?,
            modes: open(
                "modes_per_iteration.csv",
                &["iteration", "modes", "refined"],
            )?,
            timings: open("timings.csv", &timing_header)?,
            dir,
            spectra,
            rows: 0,
        })
    }

    fn flush(&mut self) -> Result<()> {
        self.cost.flush()?;
        self.gradient.flush()?;
        self.modes.flush()?;
        self.timings.flush()?;
        Ok(())
    }
}

impl IterationObserver for ReportWriter {
    fn observe(
        &mut self,
        r: &IterationRecord,
        spectrum: Option<&SingularSpectrum>,
        _u: &ControlSignal,
    ) -> Result<()> {
        let i = r.iteration.to_string();
        self.cost.write_record([
            i.clone(),
            fmt_f64(r.cost.total),
            fmt_f64(r.cost.tracking),
            fmt_f64(r.cost.regularization),
        ])?;
        self.gradient.write_record([
            i.clone(),
            fmt_f64(r.grad_norm),
            fmt_f64(r.rel_grad),
            fmt_f64(r.omega),
            format!("{}", step_code(r.step)),
        ])?;
        self.modes.write_record([
            i.clone(),
            r.modes.to_string(),
            u8::from(r.refined).to_string(),
        ])?;
        let mut row = vec![i];
        row.extend(r.timings.values().iter().map(|&t| fmt_f64(t)));
        row.push(fmt_f64(r.wall));
        self.timings.write_record(row)?;
        if let (true, Some(s)) = (self.spectra, spectrum) {
            write_spectrum_csv(
                self.dir
                    .join(format!("singular_values_iter{}.csv", r.iteration)),
                s,
            )?;
        }
        self.rows += 1;
        if self.rows.is_multiple_of(FLUSH_EVERY) {
            self.flush()?;
        }
        Ok(())
    }

    fn finish(&mut self, _report: &OptimizerReport) -> Result<()> {
        self.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        let x = 0.1 + 0.2;
        let s = fmt_f64(x);
        assert_eq!(s.parse::<f64>().unwrap(), x);
        assert_eq!(
            s.split('e').next().unwrap().replace(['.', '-'], "").len(),
            17
        );
    }

    #[test]
    fn control_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let u = ControlSignal::from_matrix(DMatrix::from_fn(3, 5, |k, j| {
            (k as f64 + 0.1) / (j as f64 + 0.7)
        }));
        let p = dir.path().join("u.csv");
        write_control_csv(&p, &u).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("u_1,u_2,u_3\n"));
        assert_eq!(text.lines().count(), 6);
        assert_eq!(read_control_csv(&p).unwrap(), u);
    }

    #[test]
    fn snapshot_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let q = SnapshotMatrix::from_matrix(DMatrix::from_fn(4, 3, |i, j| {
            (i as f64).sin() * 1e-300 + j as f64 / 3.0
        }));
        let p = dir.path().join("q.bin");
        write_snapshots_bin(&p, &q).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 16 + 12 * 8);
        assert_eq!(read_snapshots_bin(&p).unwrap(), q);
        let p = dir.path().join("q.csv");
        write_snapshots_csv(&p, &q).unwrap();
        assert_eq!(read_snapshots_csv(&p).unwrap(), q);
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        let mut bytes = Vec::new();
        bytes.extend(2u64.to_le_bytes());
        bytes.extend(2u64.to_le_bytes());
        bytes.extend(1.0f64.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_snapshots_bin(&p), Err(Error::Format { .. })));
        std::fs::write(&p, [1u8, 2]).unwrap();
        assert!(matches!(read_snapshots_bin(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn spectrum_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = SingularSpectrum::new(DVector::from_vec(vec![3.0, 1.0 / 3.0, 0.0])).unwrap();
        let p = dir.path().join("s.csv");
        write_spectrum_csv(&p, &s).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("sigma\n"));
        assert_eq!(read_spectrum_csv(&p).unwrap(), s);
    }

    #[test]
    fn malformed_csv_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.csv");
        std::fs::write(&p, "u_1,u_2\n1.0,2.0\n3.0,abc\n").unwrap();
        match read_control_csv(&p) {
            Err(Error::Format { message, .. }) => assert!(message.contains("row 2"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
