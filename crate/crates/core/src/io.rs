//! File formats: binary PGM for 2D, MetaImage-style header plus raw data for 3D,
//! transformation fields, boundary meshes, the energy log and the run summary.
//!
//! PGM row `r`, column `c` is cell `(i, j) = (c, r)`, so bytes are in cell order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::optimizer::IterationRecord;
use crate::segmenter::BoundaryGeometry;

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

/// Cell-centered volume read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    pub dim: usize,
    pub n: usize,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ElementType {
    UChar,
    UShort,
    Float,
    Double,
}

impl ElementType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "MET_UCHAR" => Self::UChar,
            "MET_USHORT" => Self::UShort,
            "MET_FLOAT" => Self::Float,
            "MET_DOUBLE" => Self::Double,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::UChar => "MET_UCHAR",
            Self::UShort => "MET_USHORT",
            Self::Float => "MET_FLOAT",
            Self::Double => "MET_DOUBLE",
        }
    }

    fn size(self) -> usize {
        match self {
            Self::UChar => 1,
            Self::UShort => 2,
            Self::Float => 4,
            Self::Double => 8,
        }
    }

    fn decode(self, bytes: &[u8]) -> Vec<f64> {
        match self {
            Self::UChar => bytes.iter().map(|&b| b as f64).collect(),
            Self::UShort => bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
                .collect(),
            Self::Float => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            Self::Double => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        }
    }
}

// ---------------------------------------------------------------- PGM

/// Reads a binary graymap (`P5`). 16-bit files are big-endian as the format requires.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let bytes = read_bytes(path)?;
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token().as_deref() != Some("P5") {
        return Err(format_err(path, "not a binary PGM (P5)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        token()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| format_err(path, format!("bad {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(path, "maxval out of range"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let per = if maxval < 256 { 1 } else { 2 };
    let expected = width * height * per;
    if bytes.len() < start || bytes.len() - start != expected {
        return Err(format_err(
            path,
            format!(
                "expected {expected} raster bytes, found {}",
                bytes.len().saturating_sub(start)
            ),
        ));
    }
    let raster = &bytes[start..];
    let data = if per == 1 {
        raster.iter().map(|&b| b as u16).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok((width, height, data))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::SizeMismatch {
            what: "PGM raster",
            expected: width * height,
            found: data.len(),
        });
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    write_bytes(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------- MetaImage

/// Parses `Key = Value` lines.
fn read_header(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = String::from_utf8(read_bytes(path)?).map_err(|_| format_err(path, "not UTF-8 text"))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format_err(path, format!("malformed header line '{line}'")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn header_field<'a>(path: &Path, h: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    h.get(key)
        .map(String::as_str)
        .ok_or_else(|| format_err(path, format!("missing {key}")))
}

fn data_path(header: &Path, file: &str) -> PathBuf {
    header.parent().unwrap_or(Path::new(".")).join(file)
}

/// Reads a MetaImage-style header and its raw little-endian payload.
fn read_mhd(path: &Path) -> Result<Volume<f64>> {
    let h = read_header(path)?;
    let dim: usize = header_field(path, &h, "NDims")?
        .parse()
        .map_err(|_| format_err(path, "bad NDims"))?;
    if dim != 2 && dim != 3 {
        return Err(format_err(path, "NDims must be 2 or 3"));
    }
    let sizes: Vec<usize> = header_field(path, &h, "DimSize")?
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| format_err(path, "bad DimSize")))
        .collect::<Result<_>>()?;
    if sizes.len() != dim || sizes.iter().any(|&s| s != sizes[0]) || sizes[0] == 0 {
        return Err(format_err(path, "DimSize must list NDims equal extents"));
    }
    if let Some(msb) = h.get("ElementByteOrderMSB").or_else(|| h.get("BinaryDataByteOrderMSB")) {
        if msb.eq_ignore_ascii_case("true") {
            return Err(format_err(path, "big-endian payloads are not supported"));
        }
    }
    if h.get("ElementNumberOfChannels").is_some_and(|c| c != "1") {
        return Err(format_err(path, "multi-channel images are not supported"));
    }
    let ty_name = header_field(path, &h, "ElementType")?;
    let ty = ElementType::parse(ty_name)
        .ok_or_else(|| format_err(path, format!("unsupported ElementType {ty_name}")))?;
    let file = header_field(path, &h, "ElementDataFile")?;
    let raw_path = data_path(path, file);
    let raw = read_bytes(&raw_path)?;
    let count = sizes[0].pow(dim as u32);
    if raw.len() != count * ty.size() {
        return Err(format_err(
            &raw_path,
            format!("expected {} bytes, found {}", count * ty.size(), raw.len()),
        ));
    }
    Ok(Volume {
        dim,
        n: sizes[0],
        data: ty.decode(&raw),
    })
}

fn write_mhd(path: &Path, dim: usize, n: usize, ty: ElementType, payload: &[u8], extra: &[(&str, String)]) -> Result<()> {
    let raw_name = raw_name(path);
    let mut header = String::new();
    header.push_str("ObjectType = Image\n");
    header.push_str(&format!("NDims = {dim}\n"));
    header.push_str(&format!("DimSize ={}\n", format!(" {n}").repeat(dim)));
    for (k, v) in extra {
        header.push_str(&format!("{k} = {v}\n"));
    }
    header.push_str("ElementByteOrderMSB = False\n");
    header.push_str(&format!("ElementType = {}\n", ty.name()));
    header.push_str(&format!("ElementDataFile = {raw_name}\n"));
    write_bytes(path, header)?;
    write_bytes(&data_path(path, &raw_name), payload)?;
    Ok(())
}

fn raw_name(header: &Path) -> String {
    let stem = header.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    format!("{stem}.raw")
}

// ---------------------------------------------------------------- images and labels

fn is_pgm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

fn read_any(path: &Path) -> Result<Volume<f64>> {
    if is_pgm(path) {
        let (w, hgt, data) = read_pgm(path)?;
        if w != hgt {
            return Err(format_err(path, format!("image must be square, got {w}x{hgt}")));
        }
        Ok(Volume {
            dim: 2,
            n: w,
            data: data.into_iter().map(f64::from).collect(),
        })
    } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mhd")) {
        read_mhd(path)
    } else {
        Err(format_err(path, "unknown extension (expected .pgm or .mhd)"))
    }
}

/// Linear map of the samples onto `[0, 255]`; a constant image maps to 0.
pub fn rescale_intensities(data: &mut [f64]) {
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    for v in data.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span * 255.0 } else { 0.0 };
    }
}

/// Loads an image and rescales its intensities to `[0, 255]`.
pub fn load_image(path: &Path) -> Result<Volume<f64>> {
    let mut v = read_any(path)?;
    if v.data.iter().any(|x| !x.is_finite()) {
        return Err(format_err(path, "non-finite intensities"));
    }
    rescale_intensities(&mut v.data);
    Ok(v)
}

/// Loads a label map stored as 8-bit values.
pub fn load_labels(path: &Path) -> Result<Volume<u32>> {
    if !is_pgm(path) {
        let h = read_header(path)?;
        if h.get("ElementType").map(String::as_str) != Some("MET_UCHAR") {
            return Err(format_err(path, "labels must be MET_UCHAR"));
        }
    } else {
        let (_, _, raw) = read_pgm(path)?;
        if raw.iter().any(|&v| v > 255) {
            return Err(format_err(path, "labels must be 8-bit"));
        }
    }
    let v = read_any(path)?;
    Ok(Volume {
        dim: v.dim,
        n: v.n,
        data: v.data.into_iter().map(|x| x as u32).collect(),
    })
}

/// Writes labels as PGM (2D) or MetaImage `MET_UCHAR` (3D), chosen by extension.
pub fn write_labels(path: &Path, dim: usize, n: usize, labels: &[u32]) -> Result<()> {
    if labels.len() != n.pow(dim as u32) {
        return Err(Error::SizeMismatch {
            what: "labels",
            expected: n.pow(dim as u32),
            found: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 255) {
        return Err(Error::InvalidLabels(format!("label {bad} does not fit in 8 bits")));
    }
    let bytes: Vec<u8> = labels.iter().map(|&l| l as u8).collect();
    if is_pgm(path) {
        if dim != 2 {
            return Err(format_err(path, "PGM holds 2D data only"));
        }
        write_pgm(path, n, n, &bytes)
    } else {
        write_mhd(path, dim, n, ElementType::UChar, &bytes, &[])
    }
}

/// Writes intensities: 8-bit PGM (rounded, clamped to `[0, 255]`) or `MET_FLOAT`.
pub fn write_image(path: &Path, dim: usize, n: usize, samples: &[f64]) -> Result<()> {
    if is_pgm(path) {
        let bytes: Vec<u8> = samples.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        write_pgm(path, n, n, &bytes)
    } else {
        let mut payload = Vec::with_capacity(samples.len() * 4);
        for v in samples {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        write_mhd(path, dim, n, ElementType::Float, &payload, &[])
    }
}

// ---------------------------------------------------------------- transformation

/// Nodal transformation as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformFile {
    pub dim: usize,
    /// Cells per axis; the field has `n + 1` nodes per axis.
    pub n: usize,
    /// Component-major, nodes in lexicographic order with x1 fastest.
    pub y: Vec<f64>,
}

/// Writes `Y` as little-endian `f64` after a small text header.
pub fn write_transform(path: &Path, dim: usize, n: usize, y: &[f64]) -> Result<()> {
    let expected = dim * (n + 1).pow(dim as u32);
    if y.len() != expected {
        return Err(Error::SizeMismatch {
            what: "transformation",
            expected,
            found: y.len(),
        });
    }
    let mut payload = Vec::with_capacity(y.len() * 8);
    for v in y {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let raw = raw_name(path);
    let header = format!(
        "ObjectType = NodalTransform\nNDims = {dim}\nCells = {n}\nDimSize ={}\nComponents = {dim}\n\
         Layout = ComponentMajor\nElementByteOrderMSB = False\nElementType = MET_DOUBLE\nElementDataFile = {raw}\n",
        format!(" {}", n + 1).repeat(dim)
    );
    write_bytes(path, header)?;
    write_bytes(&data_path(path, &raw), payload)?;
    Ok(())
}

pub fn read_transform(path: &Path) -> Result<TransformFile> {
    let h = read_header(path)?;
    let parse = |key: &str| -> Result<usize> {
        header_field(path, &h, key)?
            .parse()
            .map_err(|_| format_err(path, format!("bad {key}")))
    };
    let dim = parse("NDims")?;
    let n = parse("Cells")?;
    if parse("Components")? != dim || header_field(path, &h, "ElementType")? != "MET_DOUBLE" {
        return Err(format_err(path, "expected dim components of MET_DOUBLE"));
    }
    let raw_path = data_path(path, header_field(path, &h, "ElementDataFile")?);
    let raw = read_bytes(&raw_path)?;
    let expected = dim * (n + 1).pow(dim as u32);
    if raw.len() != expected * 8 {
        return Err(format_err(&raw_path, format!("expected {} bytes, found {}", expected * 8, raw.len())));
    }
    Ok(TransformFile {
        dim,
        n,
        y: ElementType::Double.decode(&raw),
    })
}

// ---------------------------------------------------------------- mesh

/// Plain-text mesh: a `vertices` block of coordinate lines, then an `elements` block of
/// index lines ending in the region id.
pub fn write_mesh(path: &Path, geo: &BoundaryGeometry) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("dim {}\nvertices {}\n", geo.dim, geo.vertices.len()));
    for v in &geo.vertices {
        let coords: Vec<String> = v[..geo.dim].iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&coords.join(" "));
        out.push('\n');
    }
    out.push_str(&format!("elements {}\n", geo.element_count()));
    for e in 0..geo.element_count() {
        let idx: Vec<String> = geo.element(e).iter().map(|i| i.to_string()).collect();
        out.push_str(&format!("{} {}\n", idx.join(" "), geo.element_regions[e]));
    }
    write_bytes(path, out)?;
    Ok(())
}

pub fn read_mesh(path: &Path) -> Result<BoundaryGeometry> {
    let text = String::from_utf8(read_bytes(path)?).map_err(|_| format_err(path, "not UTF-8 text"))?;
    let mut lines = text.lines();
    let mut header = |key: &str| -> Result<usize> {
        let line = lines.next().ok_or_else(|| format_err(path, "truncated mesh"))?;
        let (k, v) = line.split_once(' ').ok_or_else(|| format_err(path, "bad mesh header"))?;
        if k != key {
            return Err(format_err(path, format!("expected '{key}'")));
        }
        v.trim().parse().map_err(|_| format_err(path, format!("bad {key} count")))
    };
    let dim = header("dim")?;
    let nv = header("vertices")?;
    let mut geo = BoundaryGeometry {
        dim,
        vertices: Vec::with_capacity(nv),
        elements: Vec::new(),
        element_regions: Vec::new(),
    };
    let mut lines = text.lines().skip(2);
    for _ in 0..nv {
        let line = lines.next().ok_or_else(|| format_err(path, "truncated vertices"))?;
        let mut v = [0.0; 3];
        for (k, t) in line.split_whitespace().enumerate().take(dim) {
            v[k] = t.parse().map_err(|_| format_err(path, "bad coordinate"))?;
        }
        geo.vertices.push(v);
    }
    let ne: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("elements "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| format_err(path, "bad elements header"))?;
    for _ in 0..ne {
        let line = lines.next().ok_or_else(|| format_err(path, "truncated elements"))?;
        let vals: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| format_err(path, "bad index")))
            .collect::<Result<_>>()?;
        if vals.len() != dim + 1 || vals[..dim].iter().any(|&i| i >= nv) {
            return Err(format_err(path, "bad element line"));
        }
        geo.elements.extend_from_slice(&vals[..dim]);
        geo.element_regions.push(vals[dim] as u32);
    }
    Ok(geo)
}

// ---------------------------------------------------------------- log and summary

pub const LOG_COLUMNS: &str = "level,iteration,F,fit,length,surface,volume,grad_norm,eta,minres_iterations,min_det,max_det,minres_residual,minres_capped,steepest_descent";

pub fn write_energy_log(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|source| Error::File { path: path.display().to_string(), source })?);
    writeln!(f, "{LOG_COLUMNS}")?;
    for r in records {
        writeln!(
            f,
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{:?},{:?},{:?},{},{}",
            r.level,
            r.iteration,
            r.energy,
            r.fit,
            r.length,
            r.surface,
            r.volume,
            r.grad_norm,
            r.eta,
            r.krylov_iterations,
            r.min_det,
            r.max_det,
            r.krylov_residual,
            r.krylov_capped as u8,
            r.steepest_descent as u8
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Reads the `F` column back, for checks on written logs.
pub fn read_energy_column(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = String::from_utf8(read_bytes(path)?).map_err(|_| format_err(path, "not UTF-8 text"))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 3 {
            return Err(format_err(path, "short log line"));
        }
        let level = cols[0].parse().map_err(|_| format_err(path, "bad level"))?;
        let f = cols[2].parse().map_err(|_| format_err(path, "bad energy"))?;
        out.push((level, f));
    }
    Ok(out)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| format_err(path, e.to_string()))?;
    write_bytes(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_bytes_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        write_pgm(&p, 2, 2, &[0, 85, 170, 255]).unwrap();
        let v = load_image(&p).unwrap();
        assert_eq!(v.data, vec![0.0, 85.0, 170.0, 255.0]);
        assert_eq!((v.dim, v.n), (2, 2));
    }

    #[test]
    fn pgm_header_comments_and_size_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.pgm");
        fs::write(&p, b"P5\n# c\n2 2\n255\n\x01\x02\x03\x04").unwrap();
        assert_eq!(read_pgm(&p).unwrap().2, vec![1, 2, 3, 4]);
        fs::write(&p, b"P5\n2 2\n255\n\x01\x02\x03").unwrap();
        assert!(read_pgm(&p).is_err());
    }

    #[test]
    fn mhd_wrong_payload() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.mhd");
        fs::write(&p, "NDims = 3\nDimSize = 128 128 128\nElementType = MET_UCHAR\nElementDataFile = v.raw\n").unwrap();
        fs::write(dir.path().join("v.raw"), vec![0u8; 1000]).unwrap();
        assert!(matches!(load_image(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn ushort_rescaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.mhd");
        let vals: Vec<u16> = (0..8).map(|i| if i == 3 { 65535 } else { i * 100 }).collect();
        let bytes: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
        write_mhd(&p, 3, 2, ElementType::UShort, &bytes, &[]).unwrap();
        let v = load_image(&p).unwrap();
        assert_eq!(v.data.iter().cloned().fold(0.0, f64::max), 255.0);
        assert_eq!(v.data[0], 0.0);
    }

    #[test]
    fn label_and_transform_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let labels: Vec<u32> = (0..27).map(|i| 1 + i % 3).collect();
        let p = dir.path().join("l.mhd");
        write_labels(&p, 3, 3, &labels).unwrap();
        assert_eq!(load_labels(&p).unwrap().data, labels);
        let q = dir.path().join("l.pgm");
        write_labels(&q, 2, 3, &labels[..9]).unwrap();
        assert_eq!(load_labels(&q).unwrap().data, labels[..9].to_vec());
        let y: Vec<f64> = (0..2 * 16).map(|i| (i as f64).sqrt() / 7.0).collect();
        let t = dir.path().join("y.mhd");
        write_transform(&t, 2, 3, &y).unwrap();
        let back = read_transform(&t).unwrap();
        assert_eq!((back.dim, back.n), (2, 3));
        assert!(back.y.iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn mesh_round_trip() {
        let geo = BoundaryGeometry {
            dim: 3,
            vertices: vec![[0.1, 0.2, 1.0 / 3.0], [0.5, 0.25, 0.0], [1.0, 0.0, 0.7]],
            elements: vec![0, 1, 2],
            element_regions: vec![2],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        write_mesh(&p, &geo).unwrap();
        assert_eq!(read_mesh(&p).unwrap(), geo);
    }
}
