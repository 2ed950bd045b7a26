//! Image file I/O: PNG for 2D data, NIfTI-1 (`.nii` / `.nii.gz`) for any rank.
//!
//! Tensors are always exchanged as `f32` in `[channel, spatial...]` layout.
//! NIfTI files store the first axis fastest, so spatial axes appear reversed
//! relative to the file's `dim` array and extra dimensions fold into channels.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};
use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::image::{AnomalyMap, NdImage};

const NIFTI_HEADER: usize = 348;
const NIFTI_VOX_OFFSET: usize = 352;
/// Full-scale value of a 16-bit label PNG; stored value = round(label * scale).
pub const LABEL_PNG_SCALE: f64 = 65535.0;

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// File name with any image extension (`.png`, `.nii`, `.nii.gz`) removed.
pub fn image_stem(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    for ext in [".nii.gz", ".nii", ".png"] {
        if let Some(stem) = name.strip_suffix(ext) {
            if !stem.is_empty() {
                return Some(stem.to_string());
            }
        }
    }
    None
}

pub fn is_nifti(path: &Path) -> bool {
    let name = path.to_string_lossy();
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

pub fn is_png(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Reads a PNG or NIfTI image. `spatial_rank` applies to NIfTI only; `None`
/// takes every dimension up to three as spatial.
pub fn read_image(path: &Path, spatial_rank: Option<usize>) -> Result<NdImage> {
    if is_png(path) {
        read_png(path).map(|(img, _)| img)
    } else if is_nifti(path) {
        read_nifti(path, spatial_rank)
    } else {
        Err(Error::Format(format!(
            "unrecognised image extension: {}",
            path.display()
        )))
    }
}

// ---------------------------------------------------------------- PNG

/// Decodes a PNG into raw sample values (no rescaling). Also returns the
/// full-scale value of the stored sample type (255, 65535 or 1.0).
pub fn read_png(path: &Path) -> Result<(NdImage, f32)> {
    let bytes = fs::read(path)?;
    decode_png(&bytes)
}

pub fn decode_png(bytes: &[u8]) -> Result<(NdImage, f32)> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let c = usize::from(img.color().channel_count());
    let (raw, full): (Vec<f32>, f32) = match img {
        DynamicImage::ImageLuma8(b) => (b.into_raw().into_iter().map(f32::from).collect(), 255.0),
        DynamicImage::ImageLumaA8(b) => (b.into_raw().into_iter().map(f32::from).collect(), 255.0),
        DynamicImage::ImageRgb8(b) => (b.into_raw().into_iter().map(f32::from).collect(), 255.0),
        DynamicImage::ImageRgba8(b) => (b.into_raw().into_iter().map(f32::from).collect(), 255.0),
        DynamicImage::ImageLuma16(b) => {
            (b.into_raw().into_iter().map(f32::from).collect(), 65535.0)
        }
        DynamicImage::ImageLumaA16(b) => {
            (b.into_raw().into_iter().map(f32::from).collect(), 65535.0)
        }
        DynamicImage::ImageRgb16(b) => (b.into_raw().into_iter().map(f32::from).collect(), 65535.0),
        DynamicImage::ImageRgba16(b) => {
            (b.into_raw().into_iter().map(f32::from).collect(), 65535.0)
        }
        DynamicImage::ImageRgb32F(b) => (b.into_raw(), 1.0),
        DynamicImage::ImageRgba32F(b) => (b.into_raw(), 1.0),
        other => {
            return Err(Error::Format(format!(
                "unsupported PNG colour type {:?}",
                other.color()
            )))
        }
    };
    // interleaved [h, w, c] -> planar [c, h, w]
    let interleaved = ArrayD::from_shape_vec(IxDyn(&[h, w, c]), raw)
        .map_err(|e| Error::InvalidShape(e.to_string()))?;
    let planar = interleaved
        .permuted_axes(IxDyn(&[2, 0, 1]))
        .as_standard_layout()
        .into_owned();
    Ok((NdImage::new(planar)?, full))
}

fn encode_png<P: image::Pixel<Subpixel = S>, S: image::Primitive>(
    buf: ImageBuffer<P, Vec<S>>,
) -> Result<Vec<u8>>
where
    DynamicImage: From<ImageBuffer<P, Vec<S>>>,
{
    let mut out = Cursor::new(Vec::new());
    DynamicImage::from(buf).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

fn dims_2d(shape: &[usize], what: &str) -> Result<(u32, u32)> {
    match shape {
        [h, w] => Ok((*w as u32, *h as u32)),
        _ => Err(Error::UnsupportedRank {
            op: if what == "label" { "label png" } else { "png" },
            rank: shape.len(),
        }),
    }
}

/// 16-bit grayscale label PNG; values quantised with [`LABEL_PNG_SCALE`].
pub fn encode_label_png(label: &AnomalyMap) -> Result<Vec<u8>> {
    let (w, h) = dims_2d(label.shape(), "label")?;
    let data: Vec<u16> = label
        .values()
        .iter()
        .map(|&v| (f64::from(v) * LABEL_PNG_SCALE).round() as u16)
        .collect();
    let buf = ImageBuffer::<Luma<u16>, _>::from_raw(w, h, data)
        .ok_or_else(|| Error::InvalidShape("label buffer size".into()))?;
    encode_png(buf)
}

/// 8-bit grayscale PNG of a single-channel 2D array already scaled to [0, 255].
pub fn encode_gray8_png(values: &ArrayD<u8>) -> Result<Vec<u8>> {
    let (w, h) = dims_2d(values.shape(), "gray")?;
    let data = values.as_standard_layout().iter().copied().collect();
    let buf = ImageBuffer::<Luma<u8>, _>::from_raw(w, h, data)
        .ok_or_else(|| Error::InvalidShape("gray buffer size".into()))?;
    encode_png(buf)
}

/// 8-bit RGB PNG from a `[3, h, w]` array.
pub fn encode_rgb8_png(planar: &ArrayD<u8>) -> Result<Vec<u8>> {
    if planar.ndim() != 3 || planar.shape()[0] != 3 {
        return Err(Error::InvalidShape(format!(
            "rgb panel shape {:?}",
            planar.shape()
        )));
    }
    let (h, w) = (planar.shape()[1], planar.shape()[2]);
    let data: Vec<u8> = planar
        .view()
        .permuted_axes(IxDyn(&[1, 2, 0]))
        .iter()
        .copied()
        .collect();
    let buf = ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, data)
        .ok_or_else(|| Error::InvalidShape("rgb buffer size".into()))?;
    encode_png(buf)
}

// ---------------------------------------------------------------- NIfTI-1

struct Header {
    big_endian: bool,
    dims: Vec<usize>,
    datatype: i16,
    vox_offset: usize,
    slope: f32,
    inter: f32,
}

fn rd_i16(b: &[u8], off: usize, be: bool) -> i16 {
    let a = [b[off], b[off + 1]];
    if be {
        i16::from_be_bytes(a)
    } else {
        i16::from_le_bytes(a)
    }
}

fn rd_i32(b: &[u8], off: usize, be: bool) -> i32 {
    let a = [b[off], b[off + 1], b[off + 2], b[off + 3]];
    if be {
        i32::from_be_bytes(a)
    } else {
        i32::from_le_bytes(a)
    }
}

fn rd_f32(b: &[u8], off: usize, be: bool) -> f32 {
    f32::from_bits(rd_i32(b, off, be) as u32)
}

fn parse_header(b: &[u8]) -> Result<Header> {
    if b.len() < NIFTI_HEADER {
        return Err(Error::Format("truncated NIfTI header".into()));
    }
    let big_endian = match (rd_i32(b, 0, false), rd_i32(b, 0, true)) {
        (348, _) => false,
        (_, 348) => true,
        _ => {
            return Err(Error::Format(
                "not a NIfTI-1 file (sizeof_hdr != 348)".into(),
            ))
        }
    };
    if &b[344..348] != b"n+1\0" {
        return Err(Error::Format(
            "only single-file NIfTI-1 (magic n+1) is supported".into(),
        ));
    }
    let be = big_endian;
    let ndim = rd_i16(b, 40, be);
    if !(1..=7).contains(&ndim) {
        return Err(Error::Format(format!("NIfTI dim[0] = {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim as usize);
    for k in 1..=ndim as usize {
        let d = rd_i16(b, 40 + 2 * k, be);
        if d < 1 {
            return Err(Error::Format(format!("NIfTI dim[{k}] = {d}")));
        }
        dims.push(d as usize);
    }
    let vox = rd_f32(b, 108, be);
    if !(vox.is_finite() && vox >= NIFTI_HEADER as f32) {
        return Err(Error::Format(format!("NIfTI vox_offset {vox}")));
    }
    Ok(Header {
        big_endian,
        dims,
        datatype: rd_i16(b, 70, be),
        vox_offset: vox as usize,
        slope: rd_f32(b, 112, be),
        inter: rd_f32(b, 116, be),
    })
}

fn decode_voxels(h: &Header, data: &[u8], n: usize) -> Result<Vec<f32>> {
    let be = h.big_endian;
    macro_rules! conv {
        ($t:ty, $w:expr) => {{
            if data.len() < n * $w {
                return Err(Error::Format("truncated NIfTI data".into()));
            }
            data[..n * $w]
                .chunks_exact($w)
                .map(|c| {
                    let a: [u8; $w] = c.try_into().unwrap();
                    (if be {
                        <$t>::from_be_bytes(a)
                    } else {
                        <$t>::from_le_bytes(a)
                    }) as f32
                })
                .collect::<Vec<f32>>()
        }};
    }
    let mut v = match h.datatype {
        2 => conv!(u8, 1),
        256 => conv!(i8, 1),
        4 => conv!(i16, 2),
        512 => conv!(u16, 2),
        8 => conv!(i32, 4),
        768 => conv!(u32, 4),
        16 => conv!(f32, 4),
        64 => conv!(f64, 8),
        dt => return Err(Error::Format(format!("unsupported NIfTI datatype {dt}"))),
    };
    if h.slope != 0.0 && h.slope.is_finite() && !(h.slope == 1.0 && h.inter == 0.0) {
        let inter = if h.inter.is_finite() { h.inter } else { 0.0 };
        for x in &mut v {
            *x = *x * h.slope + inter;
        }
    }
    Ok(v)
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Reads a NIfTI-1 volume. The first `spatial_rank` file dimensions are
/// spatial (reversed into row-major order); the rest become channels.
pub fn read_nifti(path: &Path, spatial_rank: Option<usize>) -> Result<NdImage> {
    decode_nifti(&read_maybe_gz(path)?, spatial_rank)
}

pub fn decode_nifti(bytes: &[u8], spatial_rank: Option<usize>) -> Result<NdImage> {
    let h = parse_header(bytes)?;
    let d = spatial_rank.unwrap_or(h.dims.len().min(3));
    if d == 0 || d > 3 || d > h.dims.len() {
        return Err(Error::Format(format!(
            "NIfTI with dims {:?} cannot hold spatial rank {d}",
            h.dims
        )));
    }
    let n: usize = h.dims.iter().product();
    if bytes.len() < h.vox_offset {
        return Err(Error::Format("truncated NIfTI data".into()));
    }
    let values = decode_voxels(&h, &bytes[h.vox_offset..], n)?;
    let channels: usize = h.dims[d..].iter().product();
    let mut shape = vec![channels];
    shape.extend(h.dims[..d].iter().rev());
    let arr = ArrayD::from_shape_vec(IxDyn(&shape), values)
        .map_err(|e| Error::InvalidShape(e.to_string()))?;
    NdImage::new(arr)
}

/// Encodes `[channel, spatial...]` data as a float32 NIfTI-1 file. A single
/// channel is written without a channel dimension.
pub fn encode_nifti_f32(data: &ArrayD<f32>) -> Result<Vec<u8>> {
    if data.ndim() < 2 {
        return Err(Error::InvalidShape("expected [channel, spatial...]".into()));
    }
    let channels = data.shape()[0];
    let mut dims: Vec<usize> = data.shape()[1..].iter().rev().copied().collect();
    if channels > 1 {
        dims.push(channels);
    }
    if dims.len() > 7 || dims.iter().any(|&x| x > i16::MAX as usize) {
        return Err(Error::Format(format!(
            "shape {:?} does not fit a NIfTI-1 header",
            data.shape()
        )));
    }
    let mut hdr = vec![0u8; NIFTI_VOX_OFFSET];
    hdr[0..4].copy_from_slice(&(NIFTI_HEADER as i32).to_le_bytes());
    hdr[40..42].copy_from_slice(&(dims.len() as i16).to_le_bytes());
    for (k, &d) in dims.iter().enumerate() {
        let off = 42 + 2 * k;
        hdr[off..off + 2].copy_from_slice(&(d as i16).to_le_bytes());
    }
    for k in dims.len() + 1..8 {
        let off = 40 + 2 * k;
        hdr[off..off + 2].copy_from_slice(&1i16.to_le_bytes());
    }
    hdr[70..72].copy_from_slice(&16i16.to_le_bytes());
    hdr[72..74].copy_from_slice(&32i16.to_le_bytes());
    for k in 0..8 {
        let off = 76 + 4 * k;
        hdr[off..off + 4].copy_from_slice(&1.0f32.to_le_bytes());
    }
    hdr[108..112].copy_from_slice(&(NIFTI_VOX_OFFSET as f32).to_le_bytes());
    hdr[344..348].copy_from_slice(b"n+1\0");
    let mut out = hdr;
    out.reserve(data.len() * 4);
    for v in data.as_standard_layout().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Writes a float32 NIfTI, gzip-compressed when the name ends in `.gz`.
pub fn write_nifti_f32(path: &Path, data: &ArrayD<f32>) -> Result<()> {
    let bytes = encode_nifti_f32(data)?;
    if path.to_string_lossy().ends_with(".gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes)?;
        write_atomic(path, &enc.finish()?)
    } else {
        write_atomic(path, &bytes)
    }
}

pub fn write_label_nifti(path: &Path, label: &AnomalyMap) -> Result<()> {
    let mut shape = vec![1];
    shape.extend_from_slice(label.shape());
    let data = label
        .values()
        .clone()
        .into_shape_with_order(IxDyn(&shape))
        .map_err(|e| Error::InvalidShape(e.to_string()))?;
    write_nifti_f32(path, &data)
}
