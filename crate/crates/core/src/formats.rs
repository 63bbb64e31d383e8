//! On-disk formats: sample CSV, sketch and frequency files, generator
//! checkpoints. Binary formats are little-endian.
//!
//! Sketch (`CLSK`):
//! `magic | version u32 | d u32 | m u32 | count u64 | law u8 | σ² f64 | seed u64 |
//! fingerprint u64 | m × (re f64, im f64)`.
//!
//! Frequencies (`CLFQ`):
//! `magic | version u32 | d u32 | m u32 | law u8 | σ² f64 | seed u64 | d·m f64`
//! (column-major, one frequency per column).
//!
//! Checkpoint (`CLGN`):
//! `magic | version u32 | p u32 | hidden layer count u32 | hidden widths u32… |
//! d u32 | slope f64 | per layer: weights row-major f64, bias f64`.

use std::io::{BufRead, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::generator::{Architecture, GeneratorParams};
use crate::rff_sketch::{FrequencyLaw, FrequencyMatrix, FrequencySpec, LawKind, Sketch};
use crate::samples::SampleSet;

pub const SKETCH_MAGIC: &[u8; 4] = b"CLSK";
pub const FREQUENCY_MAGIC: &[u8; 4] = b"CLFQ";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CLGN";
pub const FORMAT_VERSION: u32 = 1;

/// Streaming reader over a samples CSV. Lines starting with `#` and blank
/// lines are skipped; every data line must have the same number of fields.
pub struct CsvRows<R> {
    reader: R,
    line_no: usize,
    dim: Option<usize>,
    buf: String,
}

impl<R: BufRead> CsvRows<R> {
    pub fn new(reader: R) -> Self {
        Self {
            reader,
            line_no: 0,
            dim: None,
            buf: String::new(),
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }
}

impl<R: BufRead> Iterator for CsvRows<R> {
    type Item = Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line_no += 1;
            let line = self.buf.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let line_no = self.line_no;
            let parsed: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            let row = match parsed {
                Ok(row) => row,
                Err(e) => {
                    return Some(Err(Error::Parse {
                        line: line_no,
                        message: e.to_string(),
                    }))
                }
            };
            match self.dim {
                None => self.dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Some(Err(Error::Parse {
                        line: line_no,
                        message: format!("expected {d} fields, found {}", row.len()),
                    }))
                }
                _ => {}
            }
            return Some(Ok(row));
        }
    }
}

pub fn read_samples_csv<R: BufRead>(reader: R) -> Result<SampleSet> {
    let mut rows = CsvRows::new(reader);
    let mut data = Vec::new();
    for row in rows.by_ref() {
        data.extend(row?);
    }
    match rows.dim() {
        Some(d) => SampleSet::new(d, data),
        None => Err(Error::Format("samples file contains no data rows".into())),
    }
}

pub fn write_samples_csv<W: Write>(samples: &SampleSet, mut w: W) -> Result<()> {
    for row in samples.rows() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

fn read_magic<R: Read>(r: &mut R, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)
        .map_err(|_| Error::Format(format!("truncated {what} header")))?;
    if &got != magic {
        return Err(Error::Format(format!("not a {what} file (bad magic {got:?})")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported {what} version {version}")));
    }
    Ok(())
}

fn truncated(what: &'static str) -> impl Fn(std::io::Error) -> Error {
    move |e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("truncated {what}"))
        } else {
            Error::Io(e)
        }
    }
}

fn read_law<R: Read>(r: &mut R, d: usize) -> Result<FrequencyLaw> {
    let kind = LawKind::from_code(r.read_u8()?)?;
    let sigma2 = r.read_f64::<LittleEndian>()?;
    FrequencyLaw::new(kind, sigma2, d).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_sketch<W: Write>(sketch: &Sketch, mut w: W) -> Result<()> {
    let spec = &sketch.spec;
    w.write_all(SKETCH_MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(spec.law.dim as u32)?;
    w.write_u32::<LittleEndian>(spec.m as u32)?;
    w.write_u64::<LittleEndian>(sketch.count)?;
    w.write_u8(spec.law.kind.code())?;
    w.write_f64::<LittleEndian>(spec.law.sigma2)?;
    w.write_u64::<LittleEndian>(spec.seed)?;
    w.write_u64::<LittleEndian>(sketch.fingerprint())?;
    for z in &sketch.z {
        w.write_f64::<LittleEndian>(z.re)?;
        w.write_f64::<LittleEndian>(z.im)?;
    }
    Ok(())
}

pub fn read_sketch<R: Read>(mut r: R) -> Result<Sketch> {
    read_sketch_inner(&mut r).map_err(|e| match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => Error::Format("truncated sketch".into()),
        other => other,
    })
}

fn read_sketch_inner<R: Read>(r: &mut R) -> Result<Sketch> {
    read_magic(r, SKETCH_MAGIC, "sketch")?;
    let d = r.read_u32::<LittleEndian>()? as usize;
    let m = r.read_u32::<LittleEndian>()? as usize;
    let count = r.read_u64::<LittleEndian>()?;
    let law = read_law(r, d)?;
    let seed = r.read_u64::<LittleEndian>()?;
    let fingerprint = r.read_u64::<LittleEndian>()?;
    if m == 0 {
        return Err(Error::Format("sketch has zero frequencies".into()));
    }
    let spec = FrequencySpec { law, m, seed };
    if spec.fingerprint() != fingerprint {
        return Err(Error::Format(format!(
            "sketch fingerprint {fingerprint:#018x} does not match its header ({:#018x})",
            spec.fingerprint()
        )));
    }
    let mut z = Vec::with_capacity(m);
    for _ in 0..m {
        let re = r.read_f64::<LittleEndian>()?;
        let im = r.read_f64::<LittleEndian>()?;
        z.push(Complex64::new(re, im));
    }
    Ok(Sketch { z, count, spec })
}

pub fn write_frequencies<W: Write>(omega: &FrequencyMatrix, mut w: W) -> Result<()> {
    let spec = omega.spec();
    w.write_all(FREQUENCY_MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(spec.law.dim as u32)?;
    w.write_u32::<LittleEndian>(spec.m as u32)?;
    w.write_u8(spec.law.kind.code())?;
    w.write_f64::<LittleEndian>(spec.law.sigma2)?;
    w.write_u64::<LittleEndian>(spec.seed)?;
    for v in omega.as_slice() {
        w.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

pub fn read_frequencies<R: Read>(mut r: R) -> Result<FrequencyMatrix> {
    let r = &mut r;
    let eof = truncated("frequency file");
    read_magic(r, FREQUENCY_MAGIC, "frequency")?;
    let d = r.read_u32::<LittleEndian>().map_err(&eof)? as usize;
    let m = r.read_u32::<LittleEndian>().map_err(&eof)? as usize;
    let law = read_law(r, d)?;
    let seed = r.read_u64::<LittleEndian>().map_err(&eof)?;
    let mut omega = vec![0.0; d * m];
    r.read_f64_into::<LittleEndian>(&mut omega).map_err(&eof)?;
    FrequencyMatrix::from_raw(FrequencySpec { law, m, seed }, omega).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_checkpoint<W: Write>(params: &GeneratorParams, mut w: W) -> Result<()> {
    let arch = params.arch();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(arch.latent_dim as u32)?;
    w.write_u32::<LittleEndian>(arch.hidden.len() as u32)?;
    for h in &arch.hidden {
        w.write_u32::<LittleEndian>(*h as u32)?;
    }
    w.write_u32::<LittleEndian>(arch.out_dim as u32)?;
    w.write_f64::<LittleEndian>(arch.leaky_slope)?;
    for v in params.as_slice() {
        w.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

/// Upper bound on hidden layers accepted from a checkpoint header.
const MAX_LAYERS: usize = 4096;

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<GeneratorParams> {
    let r = &mut r;
    let eof = truncated("checkpoint");
    read_magic(r, CHECKPOINT_MAGIC, "checkpoint")?;
    let p = r.read_u32::<LittleEndian>().map_err(&eof)? as usize;
    let n_hidden = r.read_u32::<LittleEndian>().map_err(&eof)? as usize;
    if n_hidden > MAX_LAYERS {
        return Err(Error::Format(format!("implausible hidden layer count {n_hidden}")));
    }
    let hidden = (0..n_hidden)
        .map(|_| r.read_u32::<LittleEndian>().map(|h| h as usize))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(&eof)?;
    let d = r.read_u32::<LittleEndian>().map_err(&eof)? as usize;
    let slope = r.read_f64::<LittleEndian>().map_err(&eof)?;
    let arch = Architecture::new(p, hidden, d, slope).map_err(|e| Error::Format(e.to_string()))?;
    let mut theta = vec![0.0; arch.param_count()];
    r.read_f64_into::<LittleEndian>(&mut theta).map_err(&eof)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint parameters".into()));
    }
    GeneratorParams::from_flat(arch, theta).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use std::io::Cursor;

    use proptest::prelude::*;

    use super::*;
    use crate::generator::init_params;
    use crate::rff_sketch::{draw_frequencies, sketch_dataset};

    fn sample_sketch() -> Sketch {
        let law = FrequencyLaw::new(LawKind::FoldedGaussian, 1e3, 2).unwrap();
        let om = draw_frequencies(law, 12, 99).unwrap();
        sketch_dataset([[0.1, 0.2], [0.3, -0.4], [1.0, 0.0]], &om).unwrap()
    }

    #[test]
    fn sketch_file_layout() {
        let sk = sample_sketch();
        let mut buf = Vec::new();
        write_sketch(&sk, &mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 4 + 4 + 8 + 1 + 8 + 8 + 8 + 12 * 16);
        assert_eq!(&buf[..4], b"CLSK");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &12u32.to_le_bytes());
        assert_eq!(&buf[16..24], &3u64.to_le_bytes());
        assert_eq!(buf[24], 1);
        assert_eq!(&buf[25..33], &1e3f64.to_le_bytes());
        assert_eq!(&buf[33..41], &99u64.to_le_bytes());
        assert_eq!(&buf[41..49], &sk.fingerprint().to_le_bytes());
        assert_eq!(&buf[49..57], &sk.z[0].re.to_le_bytes());
        assert_eq!(read_sketch(Cursor::new(buf)).unwrap(), sk);
    }

    #[test]
    fn corrupt_sketch_files() {
        let sk = sample_sketch();
        let mut buf = Vec::new();
        write_sketch(&sk, &mut buf).unwrap();
        assert!(matches!(read_sketch(Cursor::new(&buf[..buf.len() - 3])), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_sketch(Cursor::new(bad)), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[41] ^= 1;
        assert!(matches!(read_sketch(Cursor::new(bad)), Err(Error::Format(_))));
        let mut bad = buf;
        bad[24] = 7;
        assert!(matches!(read_sketch(Cursor::new(bad)), Err(Error::Format(_))));
    }

    #[test]
    fn frequency_file_round_trip() {
        let law = FrequencyLaw::new(LawKind::Gaussian, 2.0, 3).unwrap();
        let om = draw_frequencies(law, 5, 4).unwrap();
        let mut buf = Vec::new();
        write_frequencies(&om, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"CLFQ");
        assert_eq!(buf.len(), 4 + 4 + 4 + 4 + 1 + 8 + 8 + 15 * 8);
        // column-major: the first three values are column 0
        let first = f64::from_le_bytes(buf[33..41].try_into().unwrap());
        assert_eq!(first, om.column(0)[0]);
        assert_eq!(read_frequencies(Cursor::new(&buf)).unwrap(), om);
        assert!(read_frequencies(Cursor::new(&buf[..40])).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let arch = Architecture::default();
        let p = init_params(&arch, 3).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"CLGN");
        assert_eq!(buf.len(), 4 + 4 + 4 + 4 + 7 * 4 + 4 + 8 + 792 * 8);
        assert_eq!(read_checkpoint(Cursor::new(&buf)).unwrap(), p);
        assert!(matches!(read_checkpoint(Cursor::new(&buf[..100])), Err(Error::Format(_))));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read_checkpoint(Cursor::new(extra)), Err(Error::Format(_))));
        assert!(matches!(read_checkpoint(Cursor::new(b"nope".to_vec())), Err(Error::Format(_))));
    }

    #[test]
    fn csv_parsing() {
        let text = "# x,y\n1.5,2\n\n-3e-2, 4.0\n";
        let s = read_samples_csv(Cursor::new(text)).unwrap();
        assert_eq!(s.dim(), 2);
        assert_eq!(s.as_slice(), &[1.5, 2.0, -0.03, 4.0]);

        match read_samples_csv(Cursor::new("1,2\n3,abc\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match read_samples_csv(Cursor::new("# h\n1,2\n3\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(read_samples_csv(Cursor::new("# only header\n")).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(vals in prop::collection::vec(-1e6f64..1e6, 1..40)) {
            let mut data = vals.clone();
            if data.len() % 2 == 1 { data.pop(); }
            prop_assume!(!data.is_empty());
            let s = SampleSet::new(2, data).unwrap();
            let mut buf = Vec::new();
            write_samples_csv(&s, &mut buf).unwrap();
            prop_assert_eq!(read_samples_csv(Cursor::new(buf)).unwrap(), s);
        }
    }
}
