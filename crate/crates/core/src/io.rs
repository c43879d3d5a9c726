//! Reading and writing matrices: MatrixMarket, CSV, raw binary and grayscale PGM.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::{CsrMatrix, MatrixHandle};

pub const HDMAT_MAGIC: &[u8; 6] = b"HDMAT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    MatrixMarket,
    Csv,
    Hdmat,
    Pgm,
}

impl FileFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        match ext.as_str() {
            "mtx" => Ok(FileFormat::MatrixMarket),
            "csv" => Ok(FileFormat::Csv),
            "hdmat" => Ok(FileFormat::Hdmat),
            "pgm" => Ok(FileFormat::Pgm),
            _ => Err(Error::InvalidArgument(format!(
                "cannot infer the format of {} (expected .mtx, .csv, .hdmat or .pgm)",
                path.display()
            ))),
        }
    }
}

/// Loads a matrix, choosing the reader from the file extension.
pub fn read_matrix(path: &Path) -> Result<MatrixHandle> {
    match FileFormat::from_path(path)? {
        FileFormat::MatrixMarket => read_mtx(BufReader::new(File::open(path)?)),
        FileFormat::Csv => Ok(MatrixHandle::Dense(read_csv(File::open(path)?)?)),
        FileFormat::Hdmat => Ok(MatrixHandle::Dense(read_hdmat(BufReader::new(File::open(path)?))?)),
        FileFormat::Pgm => Ok(MatrixHandle::Dense(read_pgm(path)?)),
    }
}

/// Saves a matrix in the format given by the file extension.
pub fn write_matrix(path: &Path, x: &MatrixHandle) -> Result<()> {
    match FileFormat::from_path(path)? {
        FileFormat::MatrixMarket => write_mtx(BufWriter::new(File::create(path)?), x),
        FileFormat::Csv => write_csv(File::create(path)?, &x.densify()?),
        FileFormat::Hdmat => write_hdmat(BufWriter::new(File::create(path)?), &x.densify()?),
        FileFormat::Pgm => write_pgm(path, &x.densify()?),
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
    SkewSymmetric,
}

/// MatrixMarket `coordinate` (sparse) or `array` (dense) files with real, integer or pattern entries.
pub fn read_mtx(reader: impl BufRead) -> Result<MatrixHandle> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let header = header?;
    let tokens: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(1, "expected `%%MatrixMarket matrix <format> <field> <symmetry>`"));
    }
    let coordinate = match tokens[2].as_str() {
        "coordinate" => true,
        "array" => false,
        f => return Err(parse_err(1, format!("unsupported format `{f}`"))),
    };
    let pattern = match tokens[3].as_str() {
        "real" | "double" | "integer" => false,
        "pattern" if coordinate => true,
        f => return Err(parse_err(1, format!("unsupported field `{f}`"))),
    };
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::SkewSymmetric,
        s => return Err(parse_err(1, format!("unsupported symmetry `{s}`"))),
    };

    let mut data = lines.filter_map(|(no, l)| match l {
        Ok(s) if s.trim().is_empty() || s.trim_start().starts_with('%') => None,
        other => Some((no, other)),
    });
    let (size_no, size_line) = data.next().ok_or_else(|| parse_err(2, "missing size line"))?;
    let size_line = size_line?;
    let dims: Vec<usize> = size_line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(size_no, format!("bad size `{t}`"))))
        .collect::<Result<_>>()?;
    let expected = if coordinate { 3 } else { 2 };
    if dims.len() != expected {
        return Err(parse_err(size_no, format!("expected {expected} integers on the size line")));
    }
    let (rows, cols) = (dims[0], dims[1]);

    if !coordinate {
        let mut values = Vec::with_capacity(rows * cols);
        for (no, line) in data {
            for t in line?.split_whitespace() {
                values.push(parse_f64(t, no)?);
            }
        }
        if symmetry != Symmetry::General {
            return Err(parse_err(size_no, "symmetric array files are not supported"));
        }
        if values.len() != rows * cols {
            return Err(parse_err(size_no, format!("expected {} values, found {}", rows * cols, values.len())));
        }
        return Ok(MatrixHandle::Dense(DMatrix::from_vec(rows, cols, values)));
    }

    let nnz = dims[2];
    let mut triplets = Vec::with_capacity(nnz);
    for (no, line) in data {
        let line = line?;
        let t: Vec<&str> = line.split_whitespace().collect();
        let want = if pattern { 2 } else { 3 };
        if t.len() != want {
            return Err(parse_err(no, format!("expected {want} fields, found {}", t.len())));
        }
        let i = parse_index(t[0], rows, no)?;
        let j = parse_index(t[1], cols, no)?;
        let v = if pattern { 1.0 } else { parse_f64(t[2], no)? };
        triplets.push((i, j, v));
        if i != j {
            match symmetry {
                Symmetry::General => {}
                Symmetry::Symmetric => triplets.push((j, i, v)),
                Symmetry::SkewSymmetric => triplets.push((j, i, -v)),
            }
        }
    }
    let stored = triplets.len();
    let listed = match symmetry {
        Symmetry::General => stored,
        _ => triplets.iter().filter(|(i, j, _)| i >= j).count(),
    };
    if listed != nnz {
        return Err(parse_err(size_no, format!("header announces {nnz} entries, file has {listed}")));
    }
    Ok(MatrixHandle::Sparse(CsrMatrix::from_triplets(rows, cols, triplets)?))
}

fn parse_f64(t: &str, line: usize) -> Result<f64> {
    let v: f64 = t.parse().map_err(|_| parse_err(line, format!("bad number `{t}`")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite value `{t}`")));
    }
    Ok(v)
}

fn parse_index(t: &str, bound: usize, line: usize) -> Result<usize> {
    match t.parse::<usize>() {
        Ok(k) if k >= 1 && k <= bound => Ok(k - 1),
        _ => Err(parse_err(line, format!("index `{t}` outside 1..={bound}"))),
    }
}

/// Writes sparse input as `coordinate` and dense input as `array`, both `real general`.
pub fn write_mtx(mut w: impl Write, x: &MatrixHandle) -> Result<()> {
    match x {
        MatrixHandle::Sparse(s) => {
            writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
            writeln!(w, "{} {} {}", s.rows(), s.cols(), s.nnz())?;
            for (i, j, v) in s.iter() {
                writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
            }
        }
        MatrixHandle::Dense(d) => {
            writeln!(w, "%%MatrixMarket matrix array real general")?;
            writeln!(w, "{} {}", d.nrows(), d.ncols())?;
            for v in d.iter() {
                writeln!(w, "{v:e}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Comma-separated numbers, one matrix row per line, no header.
pub fn read_csv(r: impl Read) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(rows.len() + 1);
        let row = rec.iter().map(|t| parse_f64(t, line)).collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(line, format!("expected {} columns, found {}", first.len(), row.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(1, "no data"));
    }
    let cols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn write_csv(w: impl Write, x: &DMatrix<f64>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for i in 0..x.nrows() {
        writer
            .write_record(x.row(i).iter().map(|v| format!("{v:e}")))
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    writer.flush()?;
    Ok(())
}

/// `HDMAT1`, `u64` rows, `u64` cols (little endian), then the entries column by column as `f64` LE.
pub fn read_hdmat(mut r: impl Read) -> Result<DMatrix<f64>> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != HDMAT_MAGIC {
        return Err(parse_err(1, "missing HDMAT1 magic"));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| parse_err(1, format!("size {rows}x{cols} overflows")))?;
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut word).map_err(|_| parse_err(1, format!("truncated payload, expected {count} values")))?;
        data.push(f64::from_le_bytes(word));
    }
    Ok(DMatrix::from_vec(rows, cols, data))
}

pub fn write_hdmat(mut w: impl Write, x: &DMatrix<f64>) -> Result<()> {
    w.write_all(HDMAT_MAGIC)?;
    w.write_all(&(x.nrows() as u64).to_le_bytes())?;
    w.write_all(&(x.ncols() as u64).to_le_bytes())?;
    for v in x.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Grayscale PGM (`P2` or `P5`) with intensities divided by the maximum value into `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = ImageReader::open(path)?;
    reader.set_format(ImageFormat::Pnm);
    let img = reader.decode().map_err(|e| parse_err(1, e.to_string()))?;
    let (wd, ht) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => Ok(DMatrix::from_fn(ht, wd, |i, j| {
            g.get_pixel(j as u32, i as u32).0[0] as f64 / 255.0
        })),
        DynamicImage::ImageLuma16(g) => Ok(DMatrix::from_fn(ht, wd, |i, j| {
            g.get_pixel(j as u32, i as u32).0[0] as f64 / 65535.0
        })),
        _ => Err(parse_err(1, "only grayscale PGM images are supported")),
    }
}

/// Writes an 8-bit binary PGM after clamping entries to `[0, 1]`.
pub fn write_pgm(path: &Path, x: &DMatrix<f64>) -> Result<()> {
    let (ht, wd) = x.shape();
    let mut pixels = Vec::with_capacity(ht * wd);
    for i in 0..ht {
        for j in 0..wd {
            let v = x[(i, j)];
            let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
            pixels.push((v * 255.0).round() as u8);
        }
    }
    let file = BufWriter::new(File::create(path)?);
    PnmEncoder::new(file)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&pixels, wd as u32, ht as u32, ExtendedColorType::L8)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;
    use std::io::Cursor;

    #[test]
    fn mtx_round_trip_sparse_and_dense() {
        let mut rng = Rng64::new(1);
        let d = DMatrix::from_fn(6, 4, |_, _| if rng.uniform() < 0.4 { rng.uniform() - 0.5 } else { 0.0 });
        for x in [MatrixHandle::Sparse(CsrMatrix::from_dense(&d)), MatrixHandle::Dense(d.clone())] {
            let mut buf = Vec::new();
            write_mtx(&mut buf, &x).unwrap();
            let back = read_mtx(Cursor::new(buf)).unwrap();
            assert_eq!(back.is_sparse(), x.is_sparse());
            assert_eq!(back.to_dense(), d);
        }
    }

    #[test]
    fn mtx_symmetric_and_pattern() {
        let text = "%%MatrixMarket matrix coordinate pattern symmetric\n% comment\n3 3 2\n2 1\n3 3\n";
        let x = read_mtx(Cursor::new(text)).unwrap().to_dense();
        assert_eq!(x[(0, 1)], 1.0);
        assert_eq!(x[(1, 0)], 1.0);
        assert_eq!(x[(2, 2)], 1.0);
        assert_eq!(x.sum(), 3.0);
    }

    #[test]
    fn mtx_errors_carry_line_numbers() {
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n";
        match read_mtx(Cursor::new(text)) {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_mtx(Cursor::new("hello\n")).is_err());
        let short = "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n";
        assert!(read_mtx(Cursor::new(short)).is_err());
    }

    #[test]
    fn csv_round_trip_and_ragged_rows() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, -2.5, 3.0, 0.125, 1e-30, 7.0]);
        let mut buf = Vec::new();
        write_csv(&mut buf, &x).unwrap();
        assert_eq!(read_csv(Cursor::new(buf)).unwrap(), x);
        match read_csv(Cursor::new("1,2\n3,x\n")) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_csv(Cursor::new("1,2\n3\n")).is_err());
        assert!(read_csv(Cursor::new("")).is_err());
    }

    #[test]
    fn hdmat_round_trip_is_bit_exact() {
        let mut rng = Rng64::new(2);
        let x = DMatrix::from_fn(5, 3, |_, _| rng.uniform() * 1e6 - 3.0);
        let mut buf = Vec::new();
        write_hdmat(&mut buf, &x).unwrap();
        assert_eq!(buf.len(), 6 + 16 + 15 * 8);
        assert_eq!(read_hdmat(Cursor::new(&buf)).unwrap(), x);
        assert!(read_hdmat(Cursor::new(&buf[..buf.len() - 1])).is_err());
        assert!(read_hdmat(Cursor::new(b"HDMAT2")).is_err());
    }

    #[test]
    fn pgm_round_trip_up_to_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let mut rng = Rng64::new(3);
        let x = DMatrix::from_fn(7, 9, |_, _| rng.uniform() * 1.2 - 0.1);
        write_pgm(&path, &x).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back.shape(), (7, 9));
        for (a, b) in x.iter().zip(back.iter()) {
            assert!((a.clamp(0.0, 1.0) - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn ascii_pgm_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        std::fs::write(&path, "P2\n# c\n3 2\n4\n0 1 2\n3 4 0\n").unwrap();
        let x = read_pgm(&path).unwrap();
        assert_eq!(x.shape(), (2, 3));
        // intensities are rescaled to 8 bits by the decoder
        assert!((x[(1, 1)] - 1.0).abs() < 1e-12);
        assert!((x[(0, 2)] - 0.5).abs() <= 0.5 / 255.0);
    }

    #[test]
    fn format_detection() {
        assert_eq!(FileFormat::from_path(Path::new("a/b.MTX")).unwrap(), FileFormat::MatrixMarket);
        assert!(FileFormat::from_path(Path::new("a.txt")).is_err());
        assert!(matches!(read_matrix(Path::new("/nonexistent/x.csv")), Err(Error::Io(_))));
    }
}
