//! `<name>.json` header + `<name>.raw` little-endian `f32` payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::{Geometry, LabelVolume, Volume3D};
use crate::{Error, Result};

/// Header and payload paths for a volume named by either file or stem.
fn pair_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("raw"))
}

fn header_err(path: &Path, field: &str, reason: impl Into<String>) -> Error {
    Error::Header {
        path: path.to_path_buf(),
        field: field.into(),
        reason: reason.into(),
    }
}

fn numbers<'a>(header: &'a Value, path: &Path, field: &str, n: usize) -> Result<Vec<&'a Value>> {
    let arr = header
        .get(field)
        .ok_or_else(|| header_err(path, field, "missing"))?
        .as_array()
        .ok_or_else(|| header_err(path, field, "not an array"))?;
    if arr.len() != n {
        return Err(header_err(path, field, format!("expected {n} entries, found {}", arr.len())));
    }
    Ok(arr.iter().collect())
}

fn floats(header: &Value, path: &Path, field: &str, n: usize) -> Result<Vec<f64>> {
    numbers(header, path, field, n)?
        .into_iter()
        .map(|v| v.as_f64().ok_or_else(|| header_err(path, field, "entry is not a number")))
        .collect()
}

fn parse_header(path: &Path, text: &str) -> Result<Geometry> {
    let header: Value = serde_json::from_str(text).map_err(|e| header_err(path, "<json>", e.to_string()))?;
    let dims: Vec<usize> = numbers(&header, path, "dims", 3)?
        .into_iter()
        .map(|v| {
            v.as_u64()
                .map(|d| d as usize)
                .ok_or_else(|| header_err(path, "dims", "entry is not a non-negative integer"))
        })
        .collect::<Result<_>>()?;
    let spacing = floats(&header, path, "spacing", 3)?;
    let flat = floats(&header, path, "affine", 16)?;
    for (field, expected) in [("dtype", "f32"), ("order", "x-fastest")] {
        match header.get(field).and_then(Value::as_str) {
            Some(v) if v == expected => {}
            Some(v) => return Err(header_err(path, field, format!("unsupported value `{v}`"))),
            None => return Err(header_err(path, field, "missing")),
        }
    }
    let mut affine = [[0.0; 4]; 4];
    for (i, v) in flat.into_iter().enumerate() {
        affine[i / 4][i % 4] = v;
    }
    Geometry::new([dims[0], dims[1], dims[2]], [spacing[0], spacing[1], spacing[2]], affine)
        .map_err(|e| header_err(path, "dims/spacing/affine", e.to_string()))
}

pub(crate) fn geometry_header(g: &Geometry) -> Value {
    let flat: Vec<f64> = g.affine().iter().flatten().copied().collect();
    json!({
        "dims": g.dims(),
        "spacing": g.spacing(),
        "affine": flat,
        "dtype": "f32",
        "order": "x-fastest",
    })
}

/// Reads a header-only geometry (the raw payload is not needed).
pub fn read_geometry(path: &Path) -> Result<Geometry> {
    let (hp, _) = pair_paths(path);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    parse_header(&hp, &text)
}

pub fn read_volume(path: &Path) -> Result<Volume3D> {
    let (hp, rp) = pair_paths(path);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let geometry = parse_header(&hp, &text)?;
    let bytes = fs::read(&rp).map_err(|e| Error::io(&rp, e))?;
    if bytes.len() != 4 * geometry.len() {
        return Err(Error::SizeMismatch(format!(
            "{}: header dims {:?} need {} bytes, raw file has {}",
            rp.display(),
            geometry.dims(),
            4 * geometry.len(),
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{} contains NaN or Inf", rp.display())));
    }
    Volume3D::new(geometry, data)
}

pub fn write_volume(v: &Volume3D, path: &Path) -> Result<()> {
    if !v.all_finite() {
        return Err(Error::NonFinite(format!("refusing to write {}", path.display())));
    }
    let (hp, rp) = pair_paths(path);
    let header = serde_json::to_string_pretty(&geometry_header(v.geometry()))?;
    fs::write(&hp, header + "\n").map_err(|e| Error::io(&hp, e))?;
    let mut raw = Vec::with_capacity(4 * v.data().len());
    for &x in v.data() {
        raw.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(&rp, raw).map_err(|e| Error::io(&rp, e))
}

fn channel_file(i: usize) -> String {
    format!("class{i}.json")
}

/// Writes one volume per channel plus `labels.json` into `dir`.
pub fn write_label_volume(labels: &LabelVolume, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files: Vec<String> = (0..labels.num_classes()).map(channel_file).collect();
    for (c, file) in files.iter().enumerate() {
        write_volume(&labels.channel_volume(c), &dir.join(file))?;
    }
    let index = json!({ "classes": labels.class_names(), "files": files });
    let path = dir.join("labels.json");
    fs::write(&path, serde_json::to_string_pretty(&index)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_label_volume(dir: &Path) -> Result<LabelVolume> {
    let path = dir.join("labels.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: Value = serde_json::from_str(&text).map_err(|e| header_err(&path, "<json>", e.to_string()))?;
    let strings = |field: &str| -> Result<Vec<String>> {
        index
            .get(field)
            .and_then(Value::as_array)
            .ok_or_else(|| header_err(&path, field, "missing or not an array"))?
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| header_err(&path, field, "entry is not a string"))
            })
            .collect()
    };
    let names = strings("classes")?;
    let files = strings("files")?;
    if names.len() != files.len() {
        return Err(header_err(&path, "files", "count differs from classes"));
    }
    let volumes = files
        .iter()
        .map(|f| read_volume(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    for (f, v) in files.iter().zip(&volumes) {
        if v.data().iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(Error::Shape(format!("{}: label channel is not binary", dir.join(f).display())));
        }
    }
    LabelVolume::from_volumes(&volumes, names, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_layout_is_little_endian_f32() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::unit([2, 1, 1]).unwrap();
        let v = Volume3D::new(g, vec![1.0, 2.0]).unwrap();
        write_volume(&v, &dir.path().join("v.json")).unwrap();
        let raw = fs::read(dir.path().join("v.raw")).unwrap();
        assert_eq!(raw.len(), 8);
        assert_eq!(raw[..4], 1.0f32.to_le_bytes());
        assert_eq!(raw[4..], 2.0f32.to_le_bytes());
    }

    #[test]
    fn size_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume3D::zeros(Geometry::unit([2, 2, 2]).unwrap());
        let p = dir.path().join("v.json");
        write_volume(&v, &p).unwrap();
        fs::write(dir.path().join("v.raw"), vec![0u8; 28]).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::SizeMismatch(_))));
    }

    #[test]
    fn bad_dtype_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume3D::zeros(Geometry::unit([1, 1, 1]).unwrap());
        let p = dir.path().join("v.json");
        write_volume(&v, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap().replace("\"f32\"", "\"f64\"");
        fs::write(&p, text).unwrap();
        match read_volume(&p) {
            Err(Error::Header { field, .. }) => assert_eq!(field, "dtype"),
            other => panic!("expected header error, got {other:?}"),
        }
    }

    #[test]
    fn nan_is_not_persisted() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume3D::new(Geometry::unit([1, 1, 1]).unwrap(), vec![f32::NAN]).unwrap();
        assert!(matches!(write_volume(&v, &dir.path().join("v")), Err(Error::NonFinite(_))));
    }

    #[test]
    fn label_volume_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::unit([3, 2, 2]).unwrap();
        let lv = LabelVolume::new(
            g,
            vec!["a".into(), "b".into()],
            vec![vec![0, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 1], vec![0; 12]],
        )
        .unwrap();
        write_label_volume(&lv, dir.path()).unwrap();
        assert_eq!(read_label_volume(dir.path()).unwrap(), lv);
    }
}
