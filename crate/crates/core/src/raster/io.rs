use std::io::Cursor;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use super::{Pixels, Point, RasterLayer, SystemId};
use crate::error::{Error, Result};

/// Georeferencing metadata stored next to a raster image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub resolution_m_per_px: f64,
    pub origin_m: [f64; 2],
    pub system_id: SystemId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture_date: Option<NaiveDate>,
}

/// `dir/name.png` -> `dir/name.meta.json`.
pub fn sidecar_path_for(image_path: &Path) -> PathBuf {
    image_path.with_extension("meta.json")
}

pub fn decode_png(bytes: &[u8], path: &Path) -> Result<Pixels> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => Pixels::gray(w, h, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => Pixels::rgb(w, h, buf.into_raw()),
        other => Err(Error::Decode {
            path: path.to_path_buf(),
            reason: format!("unsupported pixel format {:?}; expected 8-bit gray or RGB", other.color()),
        }),
    }
}

pub fn encode_png(pixels: &Pixels) -> Result<Vec<u8>> {
    let (w, h) = (pixels.width() as u32, pixels.height() as u32);
    let img = if pixels.is_gray() {
        DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(w, h, pixels.data().to_vec()).expect("buffer size checked"),
        )
    } else {
        DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, pixels.data().to_vec()).expect("buffer size checked"))
    };
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn save_png(path: &Path, pixels: &Pixels) -> Result<()> {
    let bytes = encode_png(pixels)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a PNG raster and its JSON sidecar.
pub fn load_raster(image_path: &Path, sidecar_path: &Path) -> Result<RasterLayer> {
    let bytes = std::fs::read(image_path).map_err(|e| Error::io(image_path, e))?;
    let pixels = decode_png(&bytes, image_path)?;
    let text = std::fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
    let meta: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Sidecar {
        path: sidecar_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let origin = Point::new(meta.origin_m[0], meta.origin_m[1]);
    Ok(RasterLayer::new(pixels, meta.resolution_m_per_px, origin, meta.system_id)?.with_capture_date(meta.capture_date))
}

/// Loads a raster whose sidecar follows the `<name>.meta.json` convention.
pub fn load_raster_auto(image_path: &Path) -> Result<RasterLayer> {
    load_raster(image_path, &sidecar_path_for(image_path))
}

/// Writes `layer` as PNG plus sidecar.
pub fn save_layer(layer: &RasterLayer, image_path: &Path) -> Result<()> {
    save_png(image_path, layer.pixels())?;
    let meta = Sidecar {
        resolution_m_per_px: layer.resolution(),
        origin_m: [layer.origin().x, layer.origin().y],
        system_id: layer.system_id(),
        capture_date: layer.capture_date(),
    };
    let side = sidecar_path_for(image_path);
    std::fs::write(&side, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(side, e))
}
