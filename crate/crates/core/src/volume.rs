//! Dense 3D volumes and their on-disk format.
//!
//! A volume file is a pair: `<name>.vol` holds the raw little-endian `f32`
//! payload in x-fastest order (then y, then z), optionally followed by one mask
//! byte (0/1) per voxel; `<name>.vol.json` holds the header
//! `{"dims":[nx,ny,nz],"kind":...,"mask":bool,"order":"x-fastest","dtype":"f32le"}`.
//! Everything in memory is `f64`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Statistic,
    Pvalue,
    Label,
    Rejection,
    Probability,
}

impl VolumeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VolumeKind::Statistic => "statistic",
            VolumeKind::Pvalue => "pvalue",
            VolumeKind::Label => "label",
            VolumeKind::Rejection => "rejection",
            VolumeKind::Probability => "probability",
        }
    }

    fn admits(self, value: f64) -> bool {
        match self {
            VolumeKind::Statistic => value.is_finite(),
            VolumeKind::Pvalue | VolumeKind::Probability => (0.0..=1.0).contains(&value),
            VolumeKind::Label | VolumeKind::Rejection => value == 0.0 || value == 1.0,
        }
    }
}

impl fmt::Display for VolumeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dense scalar grid over a 3D lattice, stored x-fastest.
///
/// Voxels where the mask is `false` are not tested; without a mask every voxel
/// is of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    data: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Shape(format!("dims must be positive, got {dims:?}")));
        }
        let expected = dims.iter().product();
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            dims,
            data,
            mask: None,
        })
    }

    pub fn filled(dims: [usize; 3], value: f64) -> Result<Self> {
        Self::new(dims, vec![value; dims.iter().product()])
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.data.len() {
            return Err(Error::LengthMismatch {
                expected: self.data.len(),
                found: mask.len(),
            });
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn linear(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.linear(x, y, z)]
    }

    /// Whether voxel `index` is a voxel of interest.
    pub fn is_active(&self, index: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[index])
    }

    /// Linear indices of the voxels of interest, ascending.
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.data.len()).filter(|&i| self.is_active(i)).collect()
    }

    pub fn active_count(&self) -> usize {
        match &self.mask {
            Some(m) => m.iter().filter(|&&b| b).count(),
            None => self.data.len(),
        }
    }

    /// Same dims and mask, new values.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
            mask: self.mask.clone(),
        }
    }

    /// Same dims and mask, new data.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        let mut v = Self::new(self.dims, data)?;
        v.mask = self.mask.clone();
        Ok(v)
    }

    /// Whether `other` has the same dims and the same set of active voxels.
    pub fn same_layout(&self, other: &Volume3D) -> bool {
        self.dims == other.dims
            && (0..self.len()).all(|i| self.is_active(i) == other.is_active(i))
    }

    /// Check every active voxel against the value range of `kind`.
    pub fn validate(&self, kind: VolumeKind) -> Result<()> {
        for (index, &value) in self.data.iter().enumerate() {
            if !self.is_active(index) {
                continue;
            }
            if !value.is_finite() {
                return Err(Error::NonFinite(index));
            }
            if !kind.admits(value) {
                return Err(Error::OutOfRange {
                    kind: kind.as_str(),
                    index,
                    value,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dims: [usize; 3],
    kind: VolumeKind,
    mask: bool,
    order: String,
    dtype: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Path of the payload file for `path`, appending `.vol` when missing.
pub fn payload_path(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "vol") {
        path.to_path_buf()
    } else {
        let mut s = path.as_os_str().to_owned();
        s.push(".vol");
        PathBuf::from(s)
    }
}

/// Read only the header of a volume file.
pub fn read_kind(path: &Path) -> Result<VolumeKind> {
    Ok(read_header(&payload_path(path))?.kind)
}

fn read_header(payload: &Path) -> Result<Header> {
    let meta = sidecar_path(payload);
    let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| Error::Metadata {
        path: meta.clone(),
        reason: e.to_string(),
    })?;
    if header.order != "x-fastest" || header.dtype != "f32le" {
        return Err(Error::Metadata {
            path: meta,
            reason: format!(
                "unsupported order/dtype {}/{}",
                header.order, header.dtype
            ),
        });
    }
    if header.dims.contains(&0) {
        return Err(Error::Metadata {
            path: meta,
            reason: "dims must be positive".into(),
        });
    }
    Ok(header)
}

/// Load a volume and its declared kind.
pub fn load_volume_with_kind(path: &Path) -> Result<(Volume3D, VolumeKind)> {
    let payload = payload_path(path);
    let header = read_header(&payload)?;
    let bytes = fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    let n: usize = header.dims.iter().product();
    let expected = if header.mask { n * 5 } else { n * 4 };
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            expected: n,
            found: if header.mask { bytes.len() / 5 } else { bytes.len() / 4 },
        });
    }
    let data = bytes[..n * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut volume = Volume3D::new(header.dims, data)?;
    if header.mask {
        let mask = bytes[n * 4..]
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Metadata {
                    path: payload.clone(),
                    reason: format!("mask byte {other} is not 0/1"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        volume = volume.with_mask(mask)?;
    }
    volume.validate(header.kind)?;
    Ok((volume, header.kind))
}

pub fn load_volume(path: &Path) -> Result<Volume3D> {
    load_volume_with_kind(path).map(|(v, _)| v)
}

/// Load a volume, failing if its declared kind is not `expected`.
pub fn load_volume_as(path: &Path, expected: VolumeKind) -> Result<Volume3D> {
    let (v, kind) = load_volume_with_kind(path)?;
    if kind != expected {
        return Err(Error::Metadata {
            path: sidecar_path(&payload_path(path)),
            reason: format!("expected a {expected} volume, found {kind}"),
        });
    }
    Ok(v)
}

/// Write `<path>.vol` and `<path>.vol.json`. Values are validated before
/// anything touches the disk.
pub fn save_volume(v: &Volume3D, path: &Path, kind: VolumeKind) -> Result<()> {
    v.validate(kind)?;
    let payload = payload_path(path);
    let n = v.len();
    let mut bytes = Vec::with_capacity(n * 5);
    for &x in &v.data {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    if let Some(mask) = &v.mask {
        bytes.extend(mask.iter().map(|&b| b as u8));
    }
    let header = Header {
        dims: v.dims,
        kind,
        mask: v.mask.is_some(),
        order: "x-fastest".into(),
        dtype: "f32le".into(),
    };
    if let Some(dir) = payload.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&payload, &bytes).map_err(|e| Error::io(&payload, e))?;
    let meta = sidecar_path(&payload);
    let text = serde_json::to_string(&header).expect("header serializes");
    fs::write(&meta, text).map_err(|e| Error::io(&meta, e))?;
    Ok(())
}

/// Two-sided p-values from z-statistics; inactive voxels get p = 1.
pub fn z_to_pvalue(z: &Volume3D) -> Result<Volume3D> {
    let mut data = Vec::with_capacity(z.len());
    for (i, &v) in z.data.iter().enumerate() {
        if !z.is_active(i) {
            data.push(1.0);
        } else if v.is_nan() {
            return Err(Error::NonFinite(i));
        } else {
            data.push(normal::two_sided_p(v));
        }
    }
    z.with_data(data)
}

/// Embed `v` in a larger grid at the centered low-corner offset
/// `⌊(target − source)/2⌋`. New voxels carry `fill` and are masked out.
pub fn pad_to(v: &Volume3D, target: [usize; 3], fill: f64) -> Result<Volume3D> {
    let offset = pad_offset(v.dims, target)?;
    let n: usize = target.iter().product();
    let mut data = vec![fill; n];
    let mut mask = vec![false; n];
    let [nx, ny, nz] = v.dims;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let src = v.linear(x, y, z);
                let dst = (x + offset[0]) + target[0] * ((y + offset[1]) + target[1] * (z + offset[2]));
                data[dst] = v.data[src];
                mask[dst] = v.is_active(src);
            }
        }
    }
    Volume3D::new(target, data)?.with_mask(mask)
}

/// Offset used by [`pad_to`].
pub fn pad_offset(source: [usize; 3], target: [usize; 3]) -> Result<[usize; 3]> {
    if (0..3).any(|a| target[a] < source[a]) {
        return Err(Error::Shape(format!(
            "pad target {target:?} smaller than source {source:?}"
        )));
    }
    Ok([
        (target[0] - source[0]) / 2,
        (target[1] - source[1]) / 2,
        (target[2] - source[2]) / 2,
    ])
}

/// Inverse of [`pad_to`]: cut the `original` region back out, restoring
/// `original`'s mask.
pub fn crop_to(padded: &Volume3D, original: &Volume3D) -> Result<Volume3D> {
    let offset = pad_offset(original.dims, padded.dims)?;
    let [nx, ny, nz] = original.dims;
    let mut data = Vec::with_capacity(original.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                data.push(padded.get(x + offset[0], y + offset[1], z + offset[2]));
            }
        }
    }
    original.with_data(data)
}
