//! CT volumes and the preprocessing chain.
//!
//! Voxel grids are stored x-fastest: `index = x + nx * (y + ny * z)`, where
//! x/y span the transverse plane and z is the longitudinal axis.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::tensor::Tensor;

/// Lower and upper bounds of the HU window.
pub const HU_WINDOW: (i16, i16) = (-250, 250);

/// Default crop size (x, y, z) in voxels of the 1 mm grid.
pub const PATCH_EXTENT: [usize; 3] = [112, 112, 48];

/// Consecutive z-slices packed into the three colour channels.
pub const CHANNELS_PER_FRAME: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    I16,
    U8,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::I16 => "i16",
            Dtype::U8 => "u8",
        }
    }

    fn size(self) -> u64 {
        match self {
            Dtype::I16 => 2,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Voxels {
    /// Hounsfield units.
    I16(Vec<i16>),
    /// Window-rescaled intensities.
    U8(Vec<u8>),
}

impl Voxels {
    pub fn dtype(&self) -> Dtype {
        match self {
            Voxels::I16(_) => Dtype::I16,
            Voxels::U8(_) => Dtype::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Voxels::I16(v) => v.len(),
            Voxels::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    voxels: Voxels,
}

impl CtVolume {
    pub fn new(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        origin_mm: [f64; 3],
        voxels: Voxels,
    ) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Format(format!("zero extent in dims {dims:?}")));
        }
        if spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Format(format!(
                "spacing must be positive, got {spacing_mm:?}"
            )));
        }
        if origin_mm.iter().any(|o| !o.is_finite()) {
            return Err(Error::Format(format!("non-finite origin {origin_mm:?}")));
        }
        let n = dims.iter().product::<usize>();
        if voxels.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "dims {dims:?} need {n} voxels, got {}",
                voxels.len()
            )));
        }
        Ok(Self {
            dims,
            spacing_mm,
            origin_mm,
            voxels,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn origin_mm(&self) -> [f64; 3] {
        self.origin_mm
    }

    pub fn voxels(&self) -> &Voxels {
        &self.voxels
    }

    pub fn dtype(&self) -> Dtype {
        self.voxels.dtype()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn hu(&self) -> Result<&[i16]> {
        match &self.voxels {
            Voxels::I16(v) => Ok(v),
            Voxels::U8(_) => Err(Error::WrongDtype {
                expected: "i16",
                found: "u8",
            }),
        }
    }

    pub fn rescaled(&self) -> Result<&[u8]> {
        match &self.voxels {
            Voxels::U8(v) => Ok(v),
            Voxels::I16(_) => Err(Error::WrongDtype {
                expected: "u8",
                found: "i16",
            }),
        }
    }

    /// Voxel index nearest to a physical point, ties toward the lower index.
    /// `None` when the point maps outside the grid.
    pub fn nearest_voxel(&self, point_mm: [f64; 3]) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = (point_mm[a] - self.origin_mm[a]) / self.spacing_mm[a];
            let i = (f - 0.5).ceil();
            if !i.is_finite() || i < 0.0 || i > (self.dims[a] - 1) as f64 {
                return None;
            }
            out[a] = i as usize;
        }
        Some(out)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Rv1Header {
    magic: String,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    dtype: Dtype,
}

/// Payload file belonging to an RV1 header (`scan.json` -> `scan.raw`).
pub fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

pub fn load_volume(header_path: &Path) -> Result<CtVolume> {
    let text = fs::read_to_string(header_path).at(header_path)?;
    let header: Rv1Header = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", header_path.display())))?;
    if header.magic != "RV1" {
        return Err(Error::Format(format!(
            "{}: bad magic `{}`",
            header_path.display(),
            header.magic
        )));
    }
    if header.dims.contains(&0) {
        return Err(Error::Format(format!(
            "{}: zero extent in dims {:?}",
            header_path.display(),
            header.dims
        )));
    }
    let raw_path = payload_path(header_path);
    let bytes = fs::read(&raw_path).at(&raw_path)?;
    let n = header.dims.iter().product::<usize>();
    let expected = n as u64 * header.dtype.size();
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: bytes.len() as u64,
        });
    }
    let voxels = match header.dtype {
        Dtype::U8 => Voxels::U8(bytes),
        Dtype::I16 => Voxels::I16(
            bytes
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]))
                .collect(),
        ),
    };
    CtVolume::new(header.dims, header.spacing_mm, header.origin_mm, voxels)
}

pub fn save_volume(v: &CtVolume, header_path: &Path) -> Result<()> {
    let header = Rv1Header {
        magic: "RV1".into(),
        dims: v.dims,
        spacing_mm: v.spacing_mm,
        origin_mm: v.origin_mm,
        dtype: v.dtype(),
    };
    let json = serde_json::to_string(&header).expect("header serializes");
    fs::write(header_path, json).at(header_path)?;
    let raw_path = payload_path(header_path);
    let mut f = std::io::BufWriter::new(fs::File::create(&raw_path).at(&raw_path)?);
    match &v.voxels {
        Voxels::U8(data) => f.write_all(data).at(&raw_path)?,
        Voxels::I16(data) => {
            for x in data {
                f.write_all(&x.to_le_bytes()).at(&raw_path)?;
            }
        }
    }
    f.flush().at(&raw_path)?;
    Ok(())
}

/// Linear interpolation weights along one axis: for every output sample the
/// lower input index and the fractional offset toward the next one.
fn axis_samples(n: usize, spacing: f64, target: f64) -> Vec<(usize, f64)> {
    if spacing == target {
        return (0..n).map(|i| (i, 0.0)).collect();
    }
    let out_n = (((n - 1) as f64 * spacing / target) + 1e-9).floor() as usize + 1;
    (0..out_n)
        .map(|i| {
            let u = (i as f64 * target / spacing).min((n - 1) as f64);
            let lo = (u.floor() as usize).min(n - 1);
            (lo, u - lo as f64)
        })
        .collect()
}

fn resample_axis(
    data: &[f64],
    dims: [usize; 3],
    axis: usize,
    samples: &[(usize, f64)],
) -> (Vec<f64>, [usize; 3]) {
    let mut out_dims = dims;
    out_dims[axis] = samples.len();
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let mut out = Vec::with_capacity(out_dims.iter().product());
    for z in 0..out_dims[2] {
        for y in 0..out_dims[1] {
            for x in 0..out_dims[0] {
                let pos = [x, y, z];
                let (lo, frac) = samples[pos[axis]];
                let mut base = [x, y, z];
                base[axis] = lo;
                let i = base[0] + dims[0] * (base[1] + dims[1] * base[2]);
                let v = if frac == 0.0 {
                    data[i]
                } else {
                    data[i] * (1.0 - frac) + data[i + stride] * frac
                };
                out.push(v);
            }
        }
    }
    (out, out_dims)
}

/// Trilinear resampling of a HU volume onto an isotropic grid with spacing
/// `target_mm`. Output samples sit at `origin + i * target_mm`, so the origin
/// is preserved and no sample extrapolates past the last input voxel.
pub fn resample_isotropic(v: &CtVolume, target_mm: f64) -> Result<CtVolume> {
    let hu = v.hu()?;
    if !(target_mm.is_finite() && target_mm > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "target spacing must be positive, got {target_mm}"
        )));
    }
    for axis in 0..3 {
        if v.dims[axis] < 2 && v.spacing_mm[axis] != target_mm {
            return Err(Error::DegenerateAxis {
                axis,
                spacing: v.spacing_mm[axis],
                target: target_mm,
            });
        }
    }
    if v.spacing_mm.iter().all(|&s| s == target_mm) {
        return Ok(v.clone());
    }
    let mut data: Vec<f64> = hu.iter().map(|&h| h as f64).collect();
    let mut dims = v.dims;
    for axis in 0..3 {
        if v.spacing_mm[axis] == target_mm {
            continue;
        }
        let samples = axis_samples(dims[axis], v.spacing_mm[axis], target_mm);
        (data, dims) = resample_axis(&data, dims, axis, &samples);
    }
    let out = data
        .into_iter()
        .map(|x| x.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)
        .collect();
    CtVolume::new(
        dims,
        [target_mm; 3],
        v.origin_mm,
        Voxels::I16(out),
    )
}

/// Clamp to the HU window and map linearly onto 0..=255, rounding half up.
pub fn window_value(h: i16) -> u8 {
    let (lo, hi) = HU_WINDOW;
    let c = h.clamp(lo, hi) as i64 - lo as i64;
    let span = (hi as i64 - lo as i64) * 2;
    // floor(c * 255 / 500 + 1/2) in exact integer arithmetic
    ((2 * c * 255 + span / 2) / span) as u8
}

pub fn window_rescale(v: &CtVolume) -> Result<CtVolume> {
    let out = v.hu()?.iter().map(|&h| window_value(h)).collect();
    CtVolume::new(v.dims, v.spacing_mm, v.origin_mm, Voxels::U8(out))
}

/// Resample to 1 mm and window, the full preprocessing chain for one scan.
pub fn preprocess(v: &CtVolume) -> Result<CtVolume> {
    window_rescale(&resample_isotropic(v, 1.0)?)
}

/// A fixed-size block of rescaled voxels cut around a GTV center.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    extent: [usize; 3],
    values: Vec<u8>,
    source_center_mm: [f64; 3],
}

impl Patch {
    pub fn new(extent: [usize; 3], values: Vec<u8>, source_center_mm: [f64; 3]) -> Result<Self> {
        if extent.contains(&0) || values.len() != extent.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!(
                "patch extent {extent:?} with {} values",
                values.len()
            )));
        }
        Ok(Self {
            extent,
            values,
            source_center_mm,
        })
    }

    pub fn extent(&self) -> [usize; 3] {
        self.extent
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn source_center_mm(&self) -> [f64; 3] {
        self.source_center_mm
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.extent[0] * (y + self.extent[1] * z)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> u8 {
        self.values[self.index(x, y, z)]
    }

    fn remap(&self, extent: [usize; 3], src: impl Fn(usize, usize, usize) -> usize) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for z in 0..extent[2] {
            for y in 0..extent[1] {
                for x in 0..extent[0] {
                    values.push(self.values[src(x, y, z)]);
                }
            }
        }
        Self {
            extent,
            values,
            source_center_mm: self.source_center_mm,
        }
    }

    /// Mirror across the sagittal plane (reverses x).
    pub fn flip_sagittal(&self) -> Self {
        let ex = self.extent[0];
        self.remap(self.extent, |x, y, z| self.index(ex - 1 - x, y, z))
    }

    /// Mirror across the coronal plane (reverses y).
    pub fn flip_coronal(&self) -> Self {
        let ey = self.extent[1];
        self.remap(self.extent, |x, y, z| self.index(x, ey - 1 - y, z))
    }

    /// Rotate by `k` quarter turns in the transverse plane.
    pub fn rotate_quarter(&self, k: u8) -> Self {
        let mut out = self.clone();
        for _ in 0..(k % 4) {
            let [ex, ey, ez] = out.extent;
            // new(x, y) = old(y, ex_new - 1 - x) with ex_new = ey
            out = out.remap([ey, ex, ez], |x, y, z| out.index(y, ey - 1 - x, z));
        }
        out
    }
}

/// Cut a block of `extent` voxels centered on the voxel nearest `center_mm`,
/// shifted by `offset_vox` in the transverse plane. Voxels outside the volume
/// are zero.
pub fn crop_at(
    v: &CtVolume,
    center_mm: [f64; 3],
    offset_vox: (i64, i64),
    extent: [usize; 3],
) -> Result<Patch> {
    let data = v.rescaled()?;
    let center = v
        .nearest_voxel(center_mm)
        .ok_or(Error::CenterOutside { center_mm })?;
    let shift = [offset_vox.0, offset_vox.1, 0];
    let start: Vec<i64> = (0..3)
        .map(|a| center[a] as i64 + shift[a] - (extent[a] / 2) as i64)
        .collect();
    let [nx, ny, nz] = v.dims.map(|n| n as i64);
    let mut values = vec![0u8; extent.iter().product()];
    for z in 0..extent[2] {
        let sz = start[2] + z as i64;
        if !(0..nz).contains(&sz) {
            continue;
        }
        for y in 0..extent[1] {
            let sy = start[1] + y as i64;
            if !(0..ny).contains(&sy) {
                continue;
            }
            let row = (sy + ny * sz) * nx;
            let dst = extent[0] * (y + extent[1] * z);
            for x in 0..extent[0] {
                let sx = start[0] + x as i64;
                if (0..nx).contains(&sx) {
                    values[dst + x] = data[(row + sx) as usize];
                }
            }
        }
    }
    Patch::new(extent, values, center_mm)
}

fn frame_count(p: &Patch) -> Result<usize> {
    let ez = p.extent[2];
    if !ez.is_multiple_of(CHANNELS_PER_FRAME) {
        return Err(Error::ShapeMismatch(format!(
            "longitudinal extent {ez} is not a multiple of {CHANNELS_PER_FRAME}"
        )));
    }
    Ok(ez / CHANNELS_PER_FRAME)
}

/// Pack consecutive z-slices into colour channels: frame `f`, channel `c`
/// holds slice `z = 3f + c`. Output shape is (frames, x, y, 3).
pub fn rearrange_frames(p: &Patch) -> Result<Tensor> {
    let frames = frame_count(p)?;
    let [ex, ey, _] = p.extent;
    let mut data = Vec::with_capacity(p.values.len());
    for f in 0..frames {
        for x in 0..ex {
            for y in 0..ey {
                for c in 0..CHANNELS_PER_FRAME {
                    data.push(p.at(x, y, CHANNELS_PER_FRAME * f + c) as f32);
                }
            }
        }
    }
    Tensor::new(&[frames, ex, ey, CHANNELS_PER_FRAME], data)
}

/// Inverse of [`rearrange_frames`].
pub fn frames_to_patch(t: &Tensor, source_center_mm: [f64; 3]) -> Result<Patch> {
    let &[frames, ex, ey, ch] = t.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "expected (frames, x, y, 3), got {:?}",
            t.shape()
        )));
    };
    if ch != CHANNELS_PER_FRAME {
        return Err(Error::ShapeMismatch(format!("expected 3 channels, got {ch}")));
    }
    let extent = [ex, ey, frames * ch];
    let mut values = vec![0u8; t.len()];
    let d = t.data();
    for f in 0..frames {
        for x in 0..ex {
            for y in 0..ey {
                for c in 0..ch {
                    let v = d[((f * ex + x) * ey + y) * ch + c];
                    values[x + ex * (y + ey * (ch * f + c))] = v as u8;
                }
            }
        }
    }
    Patch::new(extent, values, source_center_mm)
}

/// Split a patch into 2D slices of shape (x, y, 3); slice `k` holds
/// `z ∈ {3k, 3k+1, 3k+2}`.
pub fn slice_stack(p: &Patch) -> Result<Vec<Tensor>> {
    let frames = rearrange_frames(p)?;
    let [n, ex, ey, ch] = [
        frames.shape()[0],
        frames.shape()[1],
        frames.shape()[2],
        frames.shape()[3],
    ];
    let per = ex * ey * ch;
    (0..n)
        .map(|k| Tensor::new(&[ex, ey, ch], frames.data()[k * per..(k + 1) * per].to_vec()))
        .collect()
}
