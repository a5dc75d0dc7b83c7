//! Loading channel planes and writing 16-bit label maps.
//!
//! Integer samples are normalized by the bit-depth maximum (8-bit / 255,
//! 16-bit / 65535). Multi-page TIFFs contribute one channel per page and per
//! sample; PNGs contribute one channel per color sample.

use std::fs::File;
use std::io::{BufReader, Cursor};
use std::path::Path;

use image::DynamicImage;
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::ColorType;

use super::{Channel, Raster};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Container {
    Tiff,
    Png,
}

fn container_of(path: &Path) -> Result<Container> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("tif") | Some("tiff") => Ok(Container::Tiff),
        Some("png") => Ok(Container::Png),
        _ => Err(Error::Format(format!(
            "unsupported image extension: {}",
            path.display()
        ))),
    }
}

fn tiff_err(e: tiff::TiffError) -> Error {
    Error::Format(format!("tiff: {e}"))
}

fn image_err(e: image::ImageError) -> Error {
    Error::Format(format!("png: {e}"))
}

/// Reads every channel plane of a TIFF or PNG file, normalized to `[0, 1]`.
pub fn read_planes(path: &Path) -> Result<Vec<Channel>> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    match container_of(path)? {
        Container::Tiff => read_tiff_planes(path),
        Container::Png => read_png_planes(path),
    }
}

fn samples_per_pixel(ct: ColorType) -> Result<usize> {
    Ok(match ct {
        ColorType::Gray(_) => 1,
        ColorType::GrayA(_) => 2,
        ColorType::RGB(_) => 3,
        ColorType::RGBA(_) => 4,
        other => {
            return Err(Error::Format(format!("unsupported tiff color type {other:?}")));
        }
    })
}

fn read_tiff_planes(path: &Path) -> Result<Vec<Channel>> {
    let file = BufReader::new(File::open(path)?);
    let mut decoder = Decoder::new(file).map_err(tiff_err)?;
    let mut planes = Vec::new();
    loop {
        let (w, h) = decoder.dimensions().map_err(tiff_err)?;
        let (w, h) = (w as usize, h as usize);
        let spp = samples_per_pixel(decoder.colortype().map_err(tiff_err)?)?;
        let values: Vec<f32> = match decoder.read_image().map_err(tiff_err)? {
            DecodingResult::U8(v) => v.iter().map(|s| *s as f32 / 255.0).collect(),
            DecodingResult::U16(v) => v.iter().map(|s| *s as f32 / 65535.0).collect(),
            DecodingResult::F32(v) => v,
            DecodingResult::F64(v) => v.iter().map(|s| *s as f32).collect(),
            _ => return Err(Error::Format("unsupported tiff sample format".into())),
        };
        planes.extend(deinterleave(&values, w, h, spp)?);
        if !decoder.more_images() {
            break;
        }
        decoder.next_image().map_err(tiff_err)?;
    }
    Ok(planes)
}

fn read_png_planes(path: &Path) -> Result<Vec<Channel>> {
    let img = image::ImageReader::open(path)?
        .decode()
        .map_err(image_err)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (values, spp): (Vec<f32>, usize) = match img {
        DynamicImage::ImageLuma8(b) => (b.iter().map(|s| *s as f32 / 255.0).collect(), 1),
        DynamicImage::ImageLumaA8(b) => (b.iter().map(|s| *s as f32 / 255.0).collect(), 2),
        DynamicImage::ImageRgb8(b) => (b.iter().map(|s| *s as f32 / 255.0).collect(), 3),
        DynamicImage::ImageRgba8(b) => (b.iter().map(|s| *s as f32 / 255.0).collect(), 4),
        DynamicImage::ImageLuma16(b) => (b.iter().map(|s| *s as f32 / 65535.0).collect(), 1),
        DynamicImage::ImageLumaA16(b) => (b.iter().map(|s| *s as f32 / 65535.0).collect(), 2),
        DynamicImage::ImageRgb16(b) => (b.iter().map(|s| *s as f32 / 65535.0).collect(), 3),
        DynamicImage::ImageRgba16(b) => (b.iter().map(|s| *s as f32 / 65535.0).collect(), 4),
        _ => return Err(Error::Format("unsupported png pixel format".into())),
    };
    deinterleave(&values, w, h, spp)
}

fn deinterleave(values: &[f32], w: usize, h: usize, spp: usize) -> Result<Vec<Channel>> {
    if values.len() != w * h * spp {
        return Err(Error::Format(format!(
            "expected {} samples, decoded {}",
            w * h * spp,
            values.len()
        )));
    }
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Format(
            "floating-point samples outside [0, 1]".into(),
        ));
    }
    (0..spp)
        .map(|c| Raster::from_vec(w, h, values.iter().skip(c).step_by(spp).copied().collect()))
        .collect()
}

/// Encodes channels as a multi-page 16-bit grayscale TIFF.
pub fn encode_planes_tiff(planes: &[Channel]) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    {
        let mut enc = TiffEncoder::new(&mut buf).map_err(tiff_err)?;
        for p in planes {
            let data: Vec<u16> = p
                .as_slice()
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
                .collect();
            enc.write_image::<colortype::Gray16>(p.width() as u32, p.height() as u32, &data)
                .map_err(tiff_err)?;
        }
    }
    Ok(buf.into_inner())
}

fn labels_u16(labels: &Raster<u32>) -> Result<Vec<u16>> {
    labels
        .as_slice()
        .iter()
        .map(|l| {
            u16::try_from(*l).map_err(|_| Error::Format(format!("label {l} exceeds 16 bits")))
        })
        .collect()
}

/// Encodes a label raster as a 16-bit single-channel image, TIFF or PNG by extension.
pub fn encode_label_map(path: &Path, labels: &Raster<u32>) -> Result<Vec<u8>> {
    let data = labels_u16(labels)?;
    let (w, h) = (labels.width() as u32, labels.height() as u32);
    match container_of(path)? {
        Container::Tiff => {
            let mut buf = Cursor::new(Vec::new());
            TiffEncoder::new(&mut buf)
                .map_err(tiff_err)?
                .write_image::<colortype::Gray16>(w, h, &data)
                .map_err(tiff_err)?;
            Ok(buf.into_inner())
        }
        Container::Png => {
            let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w, h, data)
                .ok_or_else(|| Error::Format("label buffer size".into()))?;
            let mut buf = Cursor::new(Vec::new());
            DynamicImage::ImageLuma16(img)
                .write_to(&mut buf, image::ImageFormat::Png)
                .map_err(image_err)?;
            Ok(buf.into_inner())
        }
    }
}

pub fn write_label_map(path: &Path, labels: &Raster<u32>) -> Result<Vec<u8>> {
    let bytes = encode_label_map(path, labels)?;
    std::fs::write(path, &bytes)?;
    Ok(bytes)
}

/// Reads an integer label (or binary) image without normalization.
pub fn read_label_raster(path: &Path) -> Result<Raster<u32>> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    match container_of(path)? {
        Container::Tiff => {
            let file = BufReader::new(File::open(path)?);
            let mut decoder = Decoder::new(file).map_err(tiff_err)?;
            let (w, h) = decoder.dimensions().map_err(tiff_err)?;
            if samples_per_pixel(decoder.colortype().map_err(tiff_err)?)? != 1 {
                return Err(Error::Format("label image must be single-channel".into()));
            }
            let data: Vec<u32> = match decoder.read_image().map_err(tiff_err)? {
                DecodingResult::U8(v) => v.into_iter().map(u32::from).collect(),
                DecodingResult::U16(v) => v.into_iter().map(u32::from).collect(),
                DecodingResult::U32(v) => v,
                _ => return Err(Error::Format("label tiff must be integer".into())),
            };
            Raster::from_vec(w as usize, h as usize, data)
        }
        Container::Png => {
            let img = image::ImageReader::open(path)?
                .decode()
                .map_err(image_err)?;
            let (w, h) = (img.width() as usize, img.height() as usize);
            let data: Vec<u32> = match img {
                DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u32::from).collect(),
                DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(u32::from).collect(),
                _ => return Err(Error::Format("label png must be single-channel".into())),
            };
            Raster::from_vec(w, h, data)
        }
    }
}
