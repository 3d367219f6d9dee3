//! On-disk formats.
//!
//! * `MCSL` multi-channel SLC: magic, version byte, `D`, height, width as
//!   little-endian `u32`, then `D*H*W` complex samples as interleaved
//!   little-endian `f32` pairs, channel-major then row-major.
//! * `MCCV` covariance field: same header, then `D^2*H*W` little-endian `f32`
//!   in the real Hermitian parameter order, plane-major then row-major.
//!   A reflectivity raster is an `MCCV` file with `D = 1`.
//! * Direction files: `key = value` header lines, then one line per direction
//!   with `2D` numbers (real and imaginary part of each component).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::design::condition_number;
use crate::error::{Error, Result};
use crate::model::{CovarianceField, MultiChannelSlc, ReflectivityImage};
use crate::projection::{DirectionSet, Parameterization};

pub const MCSLC_MAGIC: &[u8; 4] = b"MCSL";
pub const MCCOV_MAGIC: &[u8; 4] = b"MCCV";
pub const FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 17;

fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], dims: [usize; 3]) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&[FORMAT_VERSION])?;
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<[usize; 3]> {
    let mut head = [0u8; HEADER_LEN];
    r.read_exact(&mut head)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    if &head[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&head[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    if head[4] != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {}", head[4])));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let o = 5 + 4 * i;
        *d = u32::from_le_bytes(head[o..o + 4].try_into().expect("4 bytes")) as usize;
    }
    if dims.contains(&0) {
        return Err(Error::Format(format!("zero dimension in header {dims:?}")));
    }
    Ok(dims)
}

fn read_payload<R: Read>(r: &mut R, floats: usize) -> Result<Vec<f32>> {
    let mut bytes = Vec::with_capacity(floats * 4);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != floats * 4 {
        return Err(Error::Format(format!(
            "payload is {} bytes, header implies {}",
            bytes.len(),
            floats * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect())
}

pub fn write_mcslc<W: Write>(w: &mut W, img: &MultiChannelSlc) -> Result<()> {
    write_header(w, MCSLC_MAGIC, [img.channels(), img.height(), img.width()])?;
    let mut buf = Vec::with_capacity(img.data().len() * 8);
    // standard layout iteration order is (channel, row, col)
    for z in img.data().iter() {
        buf.extend_from_slice(&(z.re as f32).to_le_bytes());
        buf.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_mcslc<R: Read>(r: &mut R) -> Result<MultiChannelSlc> {
    let [d, h, w] = read_header(r, MCSLC_MAGIC)?;
    let floats = read_payload(r, 2 * d * h * w)?;
    let values: Vec<Complex64> = floats
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0] as f64, p[1] as f64))
        .collect();
    let data = Array3::from_shape_vec((d, h, w), values).expect("length checked");
    MultiChannelSlc::new(data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_mccov<W: Write>(w: &mut W, field: &CovarianceField) -> Result<()> {
    write_header(w, MCCOV_MAGIC, [field.dim(), field.height(), field.width()])?;
    let mut buf = Vec::with_capacity(field.data().len() * 4);
    for x in field.data().iter() {
        buf.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_mccov<R: Read>(r: &mut R) -> Result<CovarianceField> {
    let [d, h, w] = read_header(r, MCCOV_MAGIC)?;
    let floats = read_payload(r, d * d * h * w)?;
    let data = Array3::from_shape_vec((d * d, h, w), floats.into_iter().map(f64::from).collect())
        .expect("length checked");
    CovarianceField::new(d, data).map_err(|e| Error::Format(e.to_string()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Format(format!("cannot create {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Format(format!("cannot open {}: {e}", path.display())))
}

pub fn write_mcslc_file(path: &Path, img: &MultiChannelSlc) -> Result<()> {
    let mut w = create(path)?;
    write_mcslc(&mut w, img)?;
    w.flush()?;
    Ok(())
}

pub fn read_mcslc_file(path: &Path) -> Result<MultiChannelSlc> {
    read_mcslc(&mut open(path)?)
}

pub fn write_mccov_file(path: &Path, field: &CovarianceField) -> Result<()> {
    let mut w = create(path)?;
    write_mccov(&mut w, field)?;
    w.flush()?;
    Ok(())
}

pub fn read_mccov_file(path: &Path) -> Result<CovarianceField> {
    read_mccov(&mut open(path)?)
}

pub fn reflectivity_to_field(img: &ReflectivityImage) -> CovarianceField {
    let (h, w) = img.dim();
    let data = img.data().clone().into_shape_with_order((1, h, w)).expect("same length");
    CovarianceField::new(1, data).expect("reflectivity is finite")
}

pub fn write_reflectivity_file(path: &Path, img: &ReflectivityImage) -> Result<()> {
    write_mccov_file(path, &reflectivity_to_field(img))
}

pub fn read_reflectivity_file(path: &Path) -> Result<ReflectivityImage> {
    let field = read_mccov_file(path)?;
    if field.dim() != 1 {
        return Err(Error::Format(format!(
            "reflectivity raster must have D=1, got D={}",
            field.dim()
        )));
    }
    let (h, w) = (field.height(), field.width());
    let data: Array2<f64> = field
        .into_inner()
        .into_shape_with_order((h, w))
        .expect("single plane");
    ReflectivityImage::new(data)
}

/// A direction set with the metadata stored alongside it.
#[derive(Debug, Clone)]
pub struct DirectionFile {
    pub directions: DirectionSet,
    pub mode: Parameterization,
    pub seed: Option<u64>,
    pub condition: f64,
    /// Additional `key = value` provenance lines, preserved verbatim.
    pub provenance: BTreeMap<String, String>,
}

/// Recomputed and stored condition numbers must agree to this relative tolerance.
pub const DIRECTION_CONDITION_TOL: f64 = 1e-6;

impl DirectionFile {
    pub fn new(directions: DirectionSet, mode: Parameterization, seed: Option<u64>) -> Result<Self> {
        let condition = condition_number(&directions, mode)?;
        Ok(Self {
            directions,
            mode,
            seed,
            condition,
            provenance: BTreeMap::new(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# muchapro direction set\n");
        out += &format!("dim = {}\n", self.directions.dim());
        out += &format!("count = {}\n", self.directions.len());
        out += &format!("mode = {}\n", self.mode);
        if let Some(seed) = self.seed {
            out += &format!("seed = {seed}\n");
        }
        out += &format!("condition = {}\n", self.condition);
        for (k, v) in &self.provenance {
            out += &format!("{k} = {v}\n");
        }
        for p in self.directions.iter() {
            let line: Vec<String> = p.iter().flat_map(|z| [z.re.to_string(), z.im.to_string()]).collect();
            out += &line.join(" ");
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = BTreeMap::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                if !rows.is_empty() {
                    return Err(Error::Format(format!("line {}: header after direction data", n + 1)));
                }
                header.insert(k.trim().to_string(), v.trim().to_string());
            } else {
                let row = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
                rows.push(row);
            }
        }
        let mut take = |key: &str| {
            header
                .remove(key)
                .ok_or_else(|| Error::Format(format!("missing '{key}' in direction file")))
        };
        let parse_usize = |key: &str, v: String| {
            v.parse::<usize>()
                .map_err(|e| Error::Format(format!("bad {key} '{v}': {e}")))
        };
        let dim = parse_usize("dim", take("dim")?)?;
        let count = parse_usize("count", take("count")?)?;
        let mode: Parameterization = take("mode")?.parse().map_err(|e: Error| Error::Format(e.to_string()))?;
        let stored: f64 = take("condition")?
            .parse()
            .map_err(|e| Error::Format(format!("bad condition: {e}")))?;
        let seed = match header.remove("seed") {
            Some(s) => Some(s.parse::<u64>().map_err(|e| Error::Format(format!("bad seed: {e}")))?),
            None => None,
        };
        if rows.len() != count {
            return Err(Error::Format(format!("header says {count} directions, found {}", rows.len())));
        }
        let directions = rows
            .iter()
            .enumerate()
            .map(|(k, row)| {
                if row.len() != 2 * dim {
                    return Err(Error::Format(format!(
                        "direction {k} has {} numbers, expected {}",
                        row.len(),
                        2 * dim
                    )));
                }
                Ok(row.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
            })
            .collect::<Result<Vec<Vec<Complex64>>>>()?;
        let directions = DirectionSet::new(dim, directions).map_err(|e| Error::Format(e.to_string()))?;
        let condition = condition_number(&directions, mode)?;
        let consistent = if stored.is_infinite() || condition.is_infinite() {
            stored == condition
        } else {
            (condition - stored).abs() <= DIRECTION_CONDITION_TOL * stored.abs()
        };
        if !consistent {
            return Err(Error::Format(format!(
                "stored condition number {stored} does not match recomputed {condition}"
            )));
        }
        Ok(Self {
            directions,
            mode,
            seed,
            condition,
            provenance: header,
        })
    }
}

pub fn write_direction_file(path: &Path, file: &DirectionFile) -> Result<()> {
    std::fs::write(path, file.to_text())
        .map_err(|e| Error::Format(format!("cannot write {}: {e}", path.display())))
}

pub fn read_direction_file(path: &Path) -> Result<DirectionFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    DirectionFile::parse(&text)
}

/// Optimized `K = D^2` direction sets shipped with the library for
/// `D` in 2..=4. `D = 1` returns the trivial set `{[1]}`.
pub fn shipped_directions(dim: usize, mode: Parameterization) -> Result<DirectionFile> {
    use Parameterization::{ComplexUnconstrained as U, HermitianReal as H};
    let text = match (dim, mode) {
        (1, _) => return DirectionFile::new(DirectionSet::standard_basis(1), mode, None),
        (2, H) => include_str!("../data/directions/d2_hermitian.dirs"),
        (2, U) => include_str!("../data/directions/d2_unconstrained.dirs"),
        (3, H) => include_str!("../data/directions/d3_hermitian.dirs"),
        (3, U) => include_str!("../data/directions/d3_unconstrained.dirs"),
        (4, H) => include_str!("../data/directions/d4_hermitian.dirs"),
        (4, U) => include_str!("../data/directions/d4_unconstrained.dirs"),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "no shipped directions for D={dim}; run optimize-directions"
            )))
        }
    };
    DirectionFile::parse(text)
}

/// Writes an 8-bit RGB raster as PNG.
pub fn write_png(path: &Path, img: &image::RgbImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CMatrix;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn mcslc_golden_bytes() {
        let img = MultiChannelSlc::new(Array3::from_elem((1, 1, 1), c(1.0, 2.0))).unwrap();
        let mut buf = Vec::new();
        write_mcslc(&mut buf, &img).unwrap();
        let expected: Vec<u8> = vec![
            b'M', b'C', b'S', b'L', 1, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, // header
            0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x40, // 1.0f32, 2.0f32
        ];
        assert_eq!(buf, expected);
    }

    #[test]
    fn mccov_golden_bytes() {
        let m = CMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(1.0, 1.0), c(1.0, -1.0), c(3.0, 0.0)]);
        let f = CovarianceField::constant(1, 1, &m).unwrap();
        let mut buf = Vec::new();
        write_mccov(&mut buf, &f).unwrap();
        let mut expected: Vec<u8> = b"MCCV".to_vec();
        expected.extend_from_slice(&[1, 2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        for x in [2.0f32, 3.0, 1.0, 1.0] {
            expected.extend_from_slice(&x.to_le_bytes());
        }
        assert_eq!(buf, expected);
        assert_eq!(&buf[17..21], &[0x00, 0x00, 0x00, 0x40]);
    }

    #[test]
    fn header_errors() {
        let mut bad = b"MCSX\x01\x01\0\0\0\x01\0\0\0\x01\0\0\0\0\0\0\0\0\0\0\0".to_vec();
        assert!(read_mcslc(&mut bad.as_slice()).is_err());
        bad[3] = b'L';
        assert!(read_mcslc(&mut bad.as_slice()).is_ok());
        bad[4] = 2;
        assert!(read_mcslc(&mut bad.as_slice()).is_err());
        bad[4] = 1;
        bad.pop();
        assert!(matches!(read_mcslc(&mut bad.as_slice()), Err(Error::Format(_))));
        assert!(read_mccov(&mut &b"MCCV"[..]).is_err());
    }

    #[test]
    fn direction_file_round_trip_and_consistency() {
        let dirs = DirectionSet::new(
            2,
            vec![
                vec![c(1.0, 0.0), c(0.0, 0.0)],
                vec![c(0.0, 0.0), c(1.0, 0.0)],
                vec![c(0.6, 0.1), c(0.7, -0.2)],
                vec![c(0.3, 0.0), c(0.1, 0.9)],
            ],
        )
        .unwrap();
        let mut file = DirectionFile::new(dirs.clone(), Parameterization::HermitianReal, Some(7)).unwrap();
        file.provenance.insert("restarts".into(), "100".into());
        let text = file.to_text();
        let back = DirectionFile::parse(&text).unwrap();
        assert_eq!(back.directions, dirs);
        assert_eq!(back.seed, Some(7));
        assert_eq!(back.provenance.get("restarts").map(String::as_str), Some("100"));
        assert_eq!(back.condition, file.condition);

        let tampered = text.replace(&format!("condition = {}", file.condition), "condition = 1.5");
        assert!(DirectionFile::parse(&tampered).is_err());
        let short = text.replace("count = 4", "count = 5");
        assert!(DirectionFile::parse(&short).is_err());
    }

    proptest! {
        #[test]
        fn mcslc_bytes_round_trip(d in 1usize..4, h in 1usize..5, w in 1usize..5, vals in prop::collection::vec(-1e6f32..1e6, 96)) {
            let data = Array3::from_shape_fn((d, h, w), |(a, b, e)| {
                let i = 2 * ((a * h + b) * w + e);
                c(vals[i % 96] as f64, vals[(i + 1) % 96] as f64)
            });
            let img = MultiChannelSlc::new(data).unwrap();
            let mut buf = Vec::new();
            write_mcslc(&mut buf, &img).unwrap();
            let back = read_mcslc(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(&back, &img);
            let mut again = Vec::new();
            write_mcslc(&mut again, &back).unwrap();
            prop_assert_eq!(again, buf);
        }

        #[test]
        fn mccov_bytes_round_trip(d in 1usize..4, h in 1usize..4, w in 1usize..4, vals in prop::collection::vec(-1e6f32..1e6, 144)) {
            let data = Array3::from_shape_fn((d * d, h, w), |(a, b, e)| vals[((a * h + b) * w + e) % 144] as f64);
            let field = CovarianceField::new(d, data).unwrap();
            let mut buf = Vec::new();
            write_mccov(&mut buf, &field).unwrap();
            let back = read_mccov(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(&back, &field);
            let mut again = Vec::new();
            write_mccov(&mut again, &back).unwrap();
            prop_assert_eq!(again, buf);
        }
    }
}
