//! Volume files: a short text header followed by a little-endian payload.
//!
//! ```text
//! DTIVOL 1
//! kind scalar
//! shape 4 4 2
//! voxel_size 0.9375 0.9375 3.0
//! element f64
//! components 1
//! mask_runs 2 0 5 9 3
//! meta seed 7
//! end
//! <payload>
//! ```
//!
//! The mask is stored as `(start, length)` runs of inside voxels. The
//! payload covers every voxel, x fastest, with `components` values each.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fit::TensorField;
use crate::linalg::SymTensor;
use crate::sim::{AcquisitionScheme, DwiVolume};
use crate::volume::{BoolVolume, GridShape, LabelVolume, ScalarVolume, Tissue};

const MAGIC: &str = "DTIVOL 1";

#[derive(Clone, Debug, PartialEq)]
pub enum AnyVolume {
    Scalar(ScalarVolume<f64>),
    Mask(BoolVolume),
    Label(LabelVolume),
    Dwi(DwiVolume<f64>),
    Tensor(TensorField<f64>),
}

impl AnyVolume {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyVolume::Scalar(_) => "scalar",
            AnyVolume::Mask(_) => "mask",
            AnyVolume::Label(_) => "label",
            AnyVolume::Dwi(_) => "dwi",
            AnyVolume::Tensor(_) => "tensor",
        }
    }

    pub fn shape(&self) -> &GridShape {
        match self {
            AnyVolume::Scalar(v) => &v.shape,
            AnyVolume::Mask(v) => &v.shape,
            AnyVolume::Label(v) => &v.shape,
            AnyVolume::Dwi(v) => &v.shape,
            AnyVolume::Tensor(v) => &v.shape,
        }
    }

    fn mask(&self) -> Vec<bool> {
        match self {
            AnyVolume::Scalar(v) => v.mask.clone(),
            AnyVolume::Mask(v) => v.mask.clone(),
            AnyVolume::Label(v) => v.mask(),
            AnyVolume::Dwi(v) => v.mask.clone(),
            AnyVolume::Tensor(v) => v.mask.clone(),
        }
    }

    fn components(&self) -> usize {
        match self {
            AnyVolume::Scalar(_) | AnyVolume::Mask(_) => 1,
            AnyVolume::Label(_) => 2,
            AnyVolume::Dwi(v) => v.stride(),
            AnyVolume::Tensor(_) => 6,
        }
    }

    fn element(&self) -> &'static str {
        match self {
            AnyVolume::Mask(_) | AnyVolume::Label(_) => "u8",
            _ => "f64",
        }
    }

    pub fn into_scalar(self) -> Result<ScalarVolume<f64>> {
        match self {
            AnyVolume::Scalar(v) => Ok(v),
            other => Err(wrong_kind("scalar", other.kind())),
        }
    }

    pub fn into_mask(self) -> Result<BoolVolume> {
        match self {
            AnyVolume::Mask(v) => Ok(v),
            other => Err(wrong_kind("mask", other.kind())),
        }
    }

    pub fn into_label(self) -> Result<LabelVolume> {
        match self {
            AnyVolume::Label(v) => Ok(v),
            other => Err(wrong_kind("label", other.kind())),
        }
    }

    pub fn into_dwi(self) -> Result<DwiVolume<f64>> {
        match self {
            AnyVolume::Dwi(v) => Ok(v),
            other => Err(wrong_kind("dwi", other.kind())),
        }
    }

    pub fn into_tensor(self) -> Result<TensorField<f64>> {
        match self {
            AnyVolume::Tensor(v) => Ok(v),
            other => Err(wrong_kind("tensor", other.kind())),
        }
    }
}

fn wrong_kind(expected: &'static str, found: &'static str) -> Error {
    Error::WrongKind { expected, found }
}

/// A volume together with the free-form `meta` lines of its header.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeFile {
    pub volume: AnyVolume,
    pub meta: BTreeMap<String, String>,
}

pub fn write_volume(vol: &AnyVolume, path: impl AsRef<Path>) -> Result<()> {
    write_volume_with_meta(vol, &BTreeMap::new(), path)
}

pub fn write_volume_with_meta(
    vol: &AnyVolume,
    meta: &BTreeMap<String, String>,
    path: impl AsRef<Path>,
) -> Result<()> {
    fs::write(path, encode(vol, meta)?)?;
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<AnyVolume> {
    Ok(read_volume_file(path)?.volume)
}

pub fn read_volume_file(path: impl AsRef<Path>) -> Result<VolumeFile> {
    decode(&fs::read(path)?)
}

fn mask_runs(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < mask.len() {
        if mask[i] {
            let start = i;
            while i < mask.len() && mask[i] {
                i += 1;
            }
            runs.push((start, i - start));
        } else {
            i += 1;
        }
    }
    runs
}

pub fn header_text(vol: &AnyVolume, meta: &BTreeMap<String, String>) -> Result<String> {
    let s = vol.shape();
    let mut h = String::new();
    h.push_str(MAGIC);
    h.push('\n');
    h.push_str(&format!("kind {}\n", vol.kind()));
    h.push_str(&format!("shape {} {} {}\n", s.nx, s.ny, s.nz));
    let vs = s.voxel_size;
    h.push_str(&format!("voxel_size {:?} {:?} {:?}\n", vs[0], vs[1], vs[2]));
    h.push_str(&format!("element {}\n", vol.element()));
    h.push_str(&format!("components {}\n", vol.components()));
    let runs = mask_runs(&vol.mask());
    h.push_str(&format!("mask_runs {}", runs.len()));
    for (a, l) in runs {
        h.push_str(&format!(" {a} {l}"));
    }
    h.push('\n');
    if let AnyVolume::Dwi(d) = vol {
        h.push_str(&format!("b {:?}\n", d.scheme.b));
        h.push_str(&format!("gradients {}", d.scheme.len()));
        for g in &d.scheme.gradients {
            h.push_str(&format!(" {:?} {:?} {:?}", g[0], g[1], g[2]));
        }
        h.push('\n');
    }
    for (k, v) in meta {
        if k.is_empty() || k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(Error::Header(format!("meta entry `{k}` cannot be stored")));
        }
        h.push_str(&format!("meta {k} {v}\n"));
    }
    h.push_str("end\n");
    Ok(h)
}

fn encode(vol: &AnyVolume, meta: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let header = header_text(vol, meta)?;
    let mut out = header.into_bytes();
    let push_f64s = |out: &mut Vec<u8>, xs: &mut dyn Iterator<Item = f64>| {
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    match vol {
        AnyVolume::Scalar(v) => push_f64s(&mut out, &mut v.data.iter().copied()),
        AnyVolume::Mask(v) => out.extend(v.data.iter().map(|&b| b as u8)),
        AnyVolume::Label(v) => {
            for (l, o) in v.label.iter().zip(&v.orientation) {
                out.push(l.code());
                out.push(*o);
            }
        }
        AnyVolume::Dwi(v) => push_f64s(&mut out, &mut v.signals.iter().copied()),
        AnyVolume::Tensor(v) => push_f64s(&mut out, &mut v.tensors.iter().flat_map(|t| t.0)),
    }
    Ok(out)
}

struct Header {
    kind: String,
    shape: GridShape,
    element: String,
    components: usize,
    mask: Vec<bool>,
    b: Option<f64>,
    gradients: Option<Vec<[f64; 3]>>,
    meta: BTreeMap<String, String>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Header(msg.into())
}

fn parse_num<N: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<N> {
    tok.ok_or_else(|| bad(format!("missing {what}")))?
        .parse()
        .map_err(|_| bad(format!("cannot parse {what}")))
}

fn parse_header(text: &str) -> Result<Header> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing DTIVOL magic line"));
    }
    let mut kind = None;
    let mut dims = None;
    let mut voxel_size = None;
    let mut element = None;
    let mut components = None;
    let mut runs: Option<Vec<(usize, usize)>> = None;
    let mut b = None;
    let mut gradients = None;
    let mut meta = BTreeMap::new();
    for line in lines {
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        let mut tok = rest.split_ascii_whitespace();
        match key {
            "kind" => kind = Some(parse_num::<String>(tok.next(), "kind")?),
            "shape" => {
                let d: [usize; 3] = [
                    parse_num(tok.next(), "nx")?,
                    parse_num(tok.next(), "ny")?,
                    parse_num(tok.next(), "nz")?,
                ];
                dims = Some(d);
            }
            "voxel_size" => {
                let d: [f64; 3] = [
                    parse_num(tok.next(), "voxel size")?,
                    parse_num(tok.next(), "voxel size")?,
                    parse_num(tok.next(), "voxel size")?,
                ];
                voxel_size = Some(d);
            }
            "element" => element = Some(parse_num::<String>(tok.next(), "element")?),
            "components" => components = Some(parse_num::<usize>(tok.next(), "components")?),
            "mask_runs" => {
                let count: usize = parse_num(tok.next(), "run count")?;
                let mut r = Vec::with_capacity(count);
                for _ in 0..count {
                    r.push((
                        parse_num(tok.next(), "run start")?,
                        parse_num(tok.next(), "run length")?,
                    ));
                }
                runs = Some(r);
            }
            "b" => b = Some(parse_num::<f64>(tok.next(), "b")?),
            "gradients" => {
                let count: usize = parse_num(tok.next(), "gradient count")?;
                let mut g = Vec::with_capacity(count);
                for _ in 0..count {
                    g.push([
                        parse_num(tok.next(), "gradient")?,
                        parse_num(tok.next(), "gradient")?,
                        parse_num(tok.next(), "gradient")?,
                    ]);
                }
                gradients = Some(g);
            }
            "meta" => {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.insert(k.to_string(), v.to_string());
            }
            "end" => break,
            "" => {}
            other => return Err(bad(format!("unknown header field `{other}`"))),
        }
        if tok.next().is_some() && key != "meta" {
            return Err(bad(format!("trailing values on `{key}` line")));
        }
    }
    let [nx, ny, nz] = dims.ok_or_else(|| bad("missing shape"))?;
    let shape = match voxel_size {
        Some(vs) => GridShape::with_voxel_size(nx, ny, nz, vs),
        None => GridShape::new(nx, ny, nz),
    }
    .map_err(|e| bad(e.to_string()))?;
    let mut mask = vec![false; shape.len()];
    for (start, len) in runs.ok_or_else(|| bad("missing mask_runs"))? {
        let end = start.checked_add(len).filter(|&e| e <= mask.len());
        let end = end.ok_or_else(|| bad("mask run exceeds grid"))?;
        mask[start..end].iter_mut().for_each(|m| *m = true);
    }
    Ok(Header {
        kind: kind.ok_or_else(|| bad("missing kind"))?,
        shape,
        element: element.ok_or_else(|| bad("missing element"))?,
        components: components.ok_or_else(|| bad("missing components"))?,
        mask,
        b,
        gradients,
        meta,
    })
}

fn split_header(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let marker = b"\nend\n";
    let pos = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("missing `end` line"))?;
    let text = std::str::from_utf8(&bytes[..pos + marker.len()])
        .map_err(|_| bad("header is not UTF-8"))?;
    Ok((text, &bytes[pos + marker.len()..]))
}

fn f64s(payload: &[u8]) -> Vec<f64> {
    payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn decode(bytes: &[u8]) -> Result<VolumeFile> {
    let (text, payload) = split_header(bytes)?;
    let h = parse_header(text)?;
    let width = match h.element.as_str() {
        "f64" => 8,
        "u8" => 1,
        other => return Err(bad(format!("unsupported element type `{other}`"))),
    };
    let expected_element = match h.kind.as_str() {
        "scalar" | "dwi" | "tensor" => "f64",
        "mask" | "label" => "u8",
        other => return Err(Error::UnknownKind(other.to_string())),
    };
    if h.element != expected_element {
        return Err(bad(format!("kind {} stores {expected_element}", h.kind)));
    }
    let n = h.shape.len();
    let expected = n * h.components * width;
    if payload.len() != expected {
        return Err(Error::PayloadLength {
            expected,
            found: payload.len(),
        });
    }
    let want_components = |k: usize| {
        if h.components == k {
            Ok(())
        } else {
            Err(bad(format!(
                "kind {} needs {k} components, header says {}",
                h.kind, h.components
            )))
        }
    };
    let shape = h.shape;
    let volume = match h.kind.as_str() {
        "scalar" => {
            want_components(1)?;
            AnyVolume::Scalar(ScalarVolume::new(shape, f64s(payload), h.mask)?)
        }
        "mask" => {
            want_components(1)?;
            let data = payload
                .iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    _ => Err(bad(format!("mask byte {b} is not 0 or 1"))),
                })
                .collect::<Result<Vec<bool>>>()?;
            AnyVolume::Mask(BoolVolume::new(shape, data, h.mask)?)
        }
        "label" => {
            want_components(2)?;
            let mut label = Vec::with_capacity(n);
            let mut orientation = Vec::with_capacity(n);
            for c in payload.chunks_exact(2) {
                label.push(
                    Tissue::from_code(c[0]).ok_or_else(|| bad(format!("label code {}", c[0])))?,
                );
                orientation.push(c[1]);
            }
            let vol = LabelVolume::new(shape, label, orientation)?;
            if vol.mask() != h.mask {
                return Err(bad("label 0 does not match the stored mask"));
            }
            AnyVolume::Label(vol)
        }
        "dwi" => {
            let gradients = h
                .gradients
                .ok_or_else(|| bad("dwi file without gradients"))?;
            want_components(gradients.len() + 1)?;
            let scheme = AcquisitionScheme {
                b: h.b.ok_or_else(|| bad("dwi file without b"))?,
                gradients,
            };
            AnyVolume::Dwi(DwiVolume {
                shape,
                scheme,
                signals: f64s(payload),
                mask: h.mask,
            })
        }
        "tensor" => {
            want_components(6)?;
            let tensors: Vec<SymTensor<f64>> = f64s(payload)
                .chunks_exact(6)
                .map(|c| SymTensor(c.try_into().unwrap()))
                .collect();
            let fit_ok = tensors
                .iter()
                .zip(&h.mask)
                .map(|(t, &m)| m && t.is_finite())
                .collect();
            AnyVolume::Tensor(TensorField {
                shape,
                tensors,
                fit_ok,
                mask: h.mask,
            })
        }
        _ => unreachable!(),
    };
    Ok(VolumeFile {
        volume,
        meta: h.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_2x2() -> AnyVolume {
        let shape = GridShape::new(2, 2, 1).unwrap();
        let data = vec![0.25, -1.5, f64::NAN, 3.0e-300];
        AnyVolume::Scalar(ScalarVolume::new(shape, data, vec![true, false, true, true]).unwrap())
    }

    fn roundtrip(vol: &AnyVolume) -> (Vec<u8>, AnyVolume) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.dtv");
        write_volume(vol, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let back = read_volume(&p).unwrap();
        write_volume(&back, &p).unwrap();
        assert_eq!(fs::read(&p).unwrap(), bytes);
        (bytes, back)
    }

    #[test]
    fn scalar_roundtrip_is_byte_identical() {
        let vol = scalar_2x2();
        let (_, back) = roundtrip(&vol);
        let (a, b) = (vol.into_scalar().unwrap(), back.into_scalar().unwrap());
        assert_eq!(a.mask, b.mask);
        let bits = |v: &ScalarVolume<f64>| v.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn label_mask_and_tensor_roundtrip() {
        let shape = GridShape::new(3, 1, 1).unwrap();
        let labels = AnyVolume::Label(
            LabelVolume::new(
                shape,
                vec![Tissue::Outside, Tissue::Prolate, Tissue::Isotropic],
                vec![0, 2, 0],
            )
            .unwrap(),
        );
        assert_eq!(roundtrip(&labels).1, labels);
        let mask = AnyVolume::Mask(
            BoolVolume::new(shape, vec![true, false, true], vec![true, true, false]).unwrap(),
        );
        assert_eq!(roundtrip(&mask).1, mask);
        let tensors = AnyVolume::Tensor(TensorField {
            shape,
            tensors: vec![
                SymTensor([1e-3, 2e-3, 3e-3, 0.0, 1e-4, 0.0]),
                SymTensor([0.7e-3; 6]),
                SymTensor([0.0; 6]),
            ],
            fit_ok: vec![true, true, false],
            mask: vec![true, true, false],
        });
        assert_eq!(roundtrip(&tensors).1, tensors);
    }

    #[test]
    fn dwi_roundtrip_keeps_scheme() {
        let shape = GridShape::new(2, 1, 1).unwrap();
        let scheme = AcquisitionScheme::<f64>::default_12();
        let stride = scheme.len() + 1;
        let signals = (0..2 * stride).map(|i| 100.0 + i as f64 / 3.0).collect();
        let dwi = AnyVolume::Dwi(DwiVolume {
            shape,
            scheme,
            signals,
            mask: vec![true, true],
        });
        assert_eq!(roundtrip(&dwi).1, dwi);
    }

    #[test]
    fn meta_survives() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.dtv");
        let mut meta = BTreeMap::new();
        meta.insert("seed".to_string(), "42".to_string());
        meta.insert("note".to_string(), "two words".to_string());
        write_volume_with_meta(&scalar_2x2(), &meta, &p).unwrap();
        assert_eq!(read_volume_file(&p).unwrap().meta, meta);
    }

    #[test]
    fn zero_volume_sums_to_zero() {
        let shape = GridShape::new(3, 3, 3).unwrap();
        let vol = AnyVolume::Scalar(ScalarVolume::filled(shape, 0.0, vec![true; 27]).unwrap());
        let back = roundtrip(&vol).1.into_scalar().unwrap();
        assert_eq!(back.data.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn short_payload_is_rejected() {
        let shape = GridShape::new(2, 2, 2).unwrap();
        let vol = AnyVolume::Scalar(ScalarVolume::filled(shape, 1.0, vec![true; 8]).unwrap());
        let mut bytes = encode(&vol, &BTreeMap::new()).unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(
            decode(&bytes),
            Err(Error::PayloadLength {
                expected: 64,
                found: 56
            })
        ));
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode(b"NOPE\nend\n"), Err(Error::Header(_))));
        assert!(matches!(
            decode(b"DTIVOL 1\nkind scalar\n"),
            Err(Error::Header(_))
        ));
        let bad_kind =
            b"DTIVOL 1\nkind blob\nshape 1 1 1\nelement f64\ncomponents 1\nmask_runs 0\nend\n";
        assert!(matches!(decode(bad_kind), Err(Error::UnknownKind(_))));
        let bad_shape =
            b"DTIVOL 1\nkind scalar\nshape 0 1 1\nelement f64\ncomponents 1\nmask_runs 0\nend\n";
        assert!(matches!(decode(bad_shape), Err(Error::Header(_))));
        let bad_run = b"DTIVOL 1\nkind scalar\nshape 1 1 1\nelement f64\ncomponents 1\nmask_runs 1 0 2\nend\n";
        assert!(matches!(decode(bad_run), Err(Error::Header(_))));
    }

    #[test]
    fn file_size_is_header_plus_payload() {
        let shape = GridShape::new(256, 256, 30).unwrap();
        let vol =
            AnyVolume::Scalar(ScalarVolume::filled(shape, 0.5, vec![true; shape.len()]).unwrap());
        let header = header_text(&vol, &BTreeMap::new()).unwrap();
        let bytes = encode(&vol, &BTreeMap::new()).unwrap();
        assert_eq!(bytes.len(), header.len() + 8 * 1_966_080);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("missing").join("v.dtv");
        assert!(matches!(write_volume(&scalar_2x2(), &p), Err(Error::Io(_))));
    }
}
