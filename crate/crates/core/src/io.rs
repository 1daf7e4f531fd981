//! Matrix files and descriptors.
//!
//! DMAT layout: the bytes `DMAT`, a version byte (1), row and column counts
//! as little-endian `u64`, then `rows·cols` little-endian `f64` values in
//! column-major order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::era::MarkovSequence;
use crate::error::{Error, Result};
use crate::linalg::condition_number;
use crate::lti::{eigenvalues, ContinuousLti, DiscreteLti, Spectrum};
use crate::snapshots::{SnapshotMatrix, VariableBlock};

pub const DMAT_MAGIC: &[u8; 4] = b"DMAT";
pub const DMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 8 + 8;

pub fn encode_dmat(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.len());
    out.extend_from_slice(DMAT_MAGIC);
    out.push(DMAT_VERSION);
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn parse_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Parse { offset: offset as u64, reason: reason.into() }
}

pub fn decode_dmat(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 4 {
        return Err(parse_err(bytes.len(), "truncated magic"));
    }
    if &bytes[..4] != DMAT_MAGIC {
        return Err(parse_err(0, "bad magic, expected DMAT"));
    }
    if bytes.len() < 5 {
        return Err(parse_err(4, "missing version byte"));
    }
    if bytes[4] != DMAT_VERSION {
        return Err(parse_err(4, format!("unsupported version {}", bytes[4])));
    }
    if bytes.len() < HEADER_LEN {
        return Err(parse_err(bytes.len(), "truncated header"));
    }
    let read_u64 = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let rows = read_u64(5);
    let cols = read_u64(13);
    let count = rows
        .checked_mul(cols)
        .filter(|c| c.checked_mul(8).is_some_and(|b| b <= (bytes.len() - HEADER_LEN) as u64 + 8 * c))
        .ok_or_else(|| parse_err(5, format!("implausible shape {rows}x{cols}")))? as usize;
    let available = (bytes.len() - HEADER_LEN) / 8;
    if available < count {
        return Err(parse_err(
            HEADER_LEN + 8 * available,
            format!("truncated data: {available} of {count} values present"),
        ));
    }
    let end = HEADER_LEN + 8 * count;
    if bytes.len() > end {
        return Err(parse_err(end, "trailing bytes after data"));
    }
    let mut values = Vec::with_capacity(count);
    for k in 0..count {
        let o = HEADER_LEN + 8 * k;
        let v = f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(parse_err(o, format!("non-finite value {v}")));
        }
        values.push(v);
    }
    Ok(DMatrix::from_vec(rows as usize, cols as usize, values))
}

/// Writes to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_dmat(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_atomic(path, &encode_dmat(m))
}

pub fn read_dmat(path: &Path) -> Result<DMatrix<f64>> {
    decode_dmat(&fs::read(path)?)
}

/// Comma-separated rows, no header, shortest round-trip formatting.
pub fn encode_csv(m: &DMatrix<f64>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v:?}")))
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Data(e.to_string()))
}

pub fn decode_csv(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut record = csv::ByteRecord::new();
    loop {
        let start = r.position().byte() as usize;
        let more = r.read_byte_record(&mut record).map_err(|e| {
            let offset = e.position().map_or(start, |p| p.byte() as usize);
            parse_err(offset, e.to_string())
        })?;
        if !more {
            break;
        }
        let line_start = record.position().map_or(start, |p| p.byte() as usize);
        let raw = &bytes[line_start..];
        let mut row = Vec::with_capacity(record.len());
        for (j, field) in record.iter().enumerate() {
            let offset = field_offset(raw, j) + line_start;
            let text = std::str::from_utf8(field).map_err(|_| parse_err(offset, "invalid UTF-8"))?;
            let v: f64 = text
                .parse()
                .map_err(|_| parse_err(offset, format!("cannot parse '{text}' as a number")))?;
            if !v.is_finite() {
                return Err(parse_err(offset, format!("non-finite value {text}")));
            }
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    line_start,
                    format!("row has {} fields, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(0, "empty CSV matrix"));
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

/// Byte offset of field `j` within an unquoted line.
fn field_offset(line: &[u8], j: usize) -> usize {
    let mut seen = 0;
    for (i, &b) in line.iter().enumerate() {
        if seen == j {
            return i;
        }
        if b == b',' {
            seen += 1;
        }
        if b == b'\n' {
            break;
        }
    }
    0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Dmat,
    Csv,
}

impl MatrixFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("csv") | Some("txt") => MatrixFormat::Csv,
            _ => MatrixFormat::Dmat,
        }
    }
}

/// Reads a matrix, choosing the format from the extension (`.csv` for CSV,
/// anything else DMAT).
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path)?;
    match MatrixFormat::from_path(path) {
        MatrixFormat::Csv => decode_csv(&bytes),
        MatrixFormat::Dmat => decode_dmat(&bytes),
    }
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    match MatrixFormat::from_path(path) {
        MatrixFormat::Csv => write_atomic(path, &encode_csv(m)?),
        MatrixFormat::Dmat => write_dmat(path, m),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_vec_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    write_atomic(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| {
        let offset = line_col_offset(&bytes, e.line(), e.column());
        parse_err(offset, e.to_string())
    })
}

fn line_col_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let mut current = 1;
    for (i, &b) in bytes.iter().enumerate() {
        if current == line {
            return (i + column.saturating_sub(1)).min(bytes.len());
        }
        if b == b'\n' {
            current += 1;
        }
    }
    bytes.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Continuous,
    Discrete,
}

/// Sidecar describing an `(A, B, C)` triple on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDescriptor {
    pub kind: SystemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blocks: Vec<VariableBlock>,
}

#[derive(Debug, Clone)]
pub enum LoadedSystem {
    Continuous(ContinuousLti),
    Discrete(DiscreteLti),
}

/// A loaded system with its diagnostics.
#[derive(Debug, Clone)]
pub struct ExternalSystem {
    pub system: LoadedSystem,
    pub spectrum: Spectrum,
    pub condition: f64,
    pub blocks: Vec<VariableBlock>,
}

pub fn load_external_system(a: &Path, b: &Path, c: &Path, descriptor: &SystemDescriptor) -> Result<ExternalSystem> {
    let (am, bm, cm) = (read_matrix(a)?, read_matrix(b)?, read_matrix(c)?);
    let (system, spectrum) = match descriptor.kind {
        SystemKind::Continuous => {
            let s = ContinuousLti::new(am, bm, cm)?;
            let sp = eigenvalues(&s);
            (LoadedSystem::Continuous(s), sp)
        }
        SystemKind::Discrete => {
            let step = descriptor
                .step
                .ok_or_else(|| Error::Config("discrete descriptor needs a step".into()))?;
            let s = DiscreteLti::new(am, bm, cm, step)?;
            let sp = eigenvalues(&s);
            (LoadedSystem::Discrete(s), sp)
        }
    };
    let amat = match &system {
        LoadedSystem::Continuous(s) => crate::lti::StateSpace::a(s),
        LoadedSystem::Discrete(s) => crate::lti::StateSpace::a(s),
    };
    let n = amat.nrows();
    if !descriptor.blocks.is_empty() {
        crate::snapshots::validate_blocks(&descriptor.blocks, n)?;
    }
    let condition = condition_number(amat);
    log::info!(
        "loaded {n}-state system: abscissa {:.4e}, radius {:.6}, condition {:.3e}",
        spectrum.abscissa,
        spectrum.radius,
        condition
    );
    Ok(ExternalSystem { system, spectrum, condition, blocks: descriptor.blocks.clone() })
}

/// Sidecar for a Markov sequence stored as `[h_1 … h_N]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovDescriptor {
    pub sample_period: f64,
    pub impulse_step: f64,
    pub q: usize,
    pub p: usize,
    pub count: usize,
}

/// Writes `<stem>.dmat` and `<stem>.json`; returns both paths.
pub fn write_markov(dir: &Path, stem: &str, seq: &MarkovSequence) -> Result<(PathBuf, PathBuf)> {
    let data = dir.join(format!("{stem}.dmat"));
    let meta = dir.join(format!("{stem}.json"));
    write_dmat(&data, &seq.hstack())?;
    write_json(
        &meta,
        &MarkovDescriptor {
            sample_period: seq.sample_period(),
            impulse_step: seq.impulse_step(),
            q: seq.q(),
            p: seq.p(),
            count: seq.len(),
        },
    )?;
    Ok((data, meta))
}

/// Reads a sequence given its data file; the sidecar shares the stem.
pub fn read_markov(data: &Path) -> Result<MarkovSequence> {
    let meta: MarkovDescriptor = read_json(&data.with_extension("json"))?;
    let m = read_matrix(data)?;
    if m.nrows() != meta.q || m.ncols() != meta.p * meta.count {
        return Err(Error::Data(format!(
            "sequence file is {}x{}, descriptor says q = {}, p = {}, count = {}",
            m.nrows(),
            m.ncols(),
            meta.q,
            meta.p,
            meta.count
        )));
    }
    MarkovSequence::from_hstack(&m, meta.p, meta.sample_period, meta.impulse_step)
}

/// Sidecar for a snapshot matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDescriptor {
    pub step: f64,
    pub blocks: Vec<VariableBlock>,
    /// File holding the reference state as an `n×1` matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_state: Option<PathBuf>,
}

/// Loads snapshots and the optional reference state; relative paths in the
/// descriptor resolve against the descriptor's directory.
pub fn read_snapshots(data: &Path, descriptor: &Path) -> Result<(SnapshotMatrix, Option<DVector<f64>>)> {
    let meta: SnapshotDescriptor = read_json(descriptor)?;
    let m = read_matrix(data)?;
    let snaps = SnapshotMatrix::new(m, meta.step, meta.blocks)?;
    let reference = match meta.reference_state {
        None => None,
        Some(p) => {
            let p = if p.is_relative() {
                descriptor.parent().unwrap_or(Path::new(".")).join(p)
            } else {
                p
            };
            let r = read_matrix(&p)?;
            if r.ncols() != 1 || r.nrows() != snaps.n() {
                return Err(Error::Data("reference state must be an n×1 matrix".into()));
            }
            Some(r.column(0).into_owned())
        }
    };
    Ok((snaps, reference))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, r: usize, c: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1e3..1e3))
    }

    #[test]
    fn dmat_roundtrip_is_bit_exact() {
        let m = random(1, 4, 3);
        let bytes = encode_dmat(&m);
        assert_eq!(bytes.len(), 21 + 96);
        let back = decode_dmat(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_dmat(&back), bytes);
        // Column-major order.
        assert_eq!(&bytes[21..29], &m[(0, 0)].to_le_bytes());
        assert_eq!(&bytes[29..37], &m[(1, 0)].to_le_bytes());
    }

    #[test]
    fn truncated_dmat_reports_offset() {
        let bytes = encode_dmat(&random(2, 2, 2));
        match decode_dmat(&bytes[..21 + 8 * 2 + 3]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 37),
            other => panic!("{other:?}"),
        }
        match decode_dmat(&bytes[..10]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 10),
            other => panic!("{other:?}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_dmat(&bad), Err(Error::Parse { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_dmat(&bad), Err(Error::Parse { offset: 4, .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_dmat(&long), Err(Error::Parse { offset: 53, .. })));
        let mut nan = bytes;
        nan[29..37].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode_dmat(&nan), Err(Error::Parse { offset: 29, .. })));
    }

    #[test]
    fn huge_header_is_rejected_without_allocating() {
        let mut bytes = encode_dmat(&random(3, 1, 1));
        bytes[5..13].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_dmat(&bytes), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_and_dmat_agree() {
        let m = random(4, 5, 3);
        let via_csv = decode_csv(&encode_csv(&m).unwrap()).unwrap();
        let via_dmat = decode_dmat(&encode_dmat(&m)).unwrap();
        assert!((via_csv - via_dmat).amax() <= 1e-15 * m.amax());
    }

    #[test]
    fn csv_errors_carry_offsets() {
        let text = b"1,2\n3,x\n";
        match decode_csv(text) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("{other:?}"),
        }
        match decode_csv(b"1,2\n3\n") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn system_roundtrip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = -DMatrix::identity(3, 3) + random(5, 3, 3) * 1e-4;
        let b = random(6, 3, 1);
        let c = random(7, 2, 3);
        for (name, m) in [("a.dmat", &a), ("b.dmat", &b), ("c.csv", &c)] {
            write_matrix(&dir.path().join(name), m).unwrap();
        }
        let desc = SystemDescriptor { kind: SystemKind::Continuous, step: None, blocks: vec![] };
        let sys = load_external_system(
            &dir.path().join("a.dmat"),
            &dir.path().join("b.dmat"),
            &dir.path().join("c.csv"),
            &desc,
        )
        .unwrap();
        match sys.system {
            LoadedSystem::Continuous(s) => {
                use crate::lti::StateSpace;
                assert_eq!(s.a(), &a);
                assert_eq!(s.b(), &b);
                assert_eq!(s.c(), &c);
            }
            _ => panic!("wrong kind"),
        }
        assert!(sys.spectrum.abscissa < 0.0);
    }

    #[test]
    fn discrete_descriptor_needs_step() {
        let dir = tempfile::tempdir().unwrap();
        let one = DMatrix::from_element(1, 1, 0.5);
        let p = dir.path().join("m.dmat");
        write_dmat(&p, &one).unwrap();
        let desc = SystemDescriptor { kind: SystemKind::Discrete, step: None, blocks: vec![] };
        assert!(load_external_system(&p, &p, &p, &desc).is_err());
    }

    #[test]
    fn markov_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = (0..4).map(|k| random(10 + k, 2, 3)).collect();
        let seq = MarkovSequence::new(samples, 0.1, 0.01).unwrap();
        let (data, _) = write_markov(dir.path(), "seq", &seq).unwrap();
        assert_eq!(read_markov(&data).unwrap(), seq);
    }

    #[test]
    fn json_errors_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        fs::write(&p, b"{\"kind\": \"continuous\",\n \"step\": oops}").unwrap();
        let err = read_json::<SystemDescriptor>(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }
}
