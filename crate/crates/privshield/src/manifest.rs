//! Labeled image datasets on disk.
//!
//! A dataset is a UTF-8 CSV manifest with the header
//! `path,identity,attr_0,...,attr_{k-1}` and one row per sample. `path` is
//! relative to the manifest's directory and names a PNG file; `identity` is a
//! non-negative integer; every `attr_j` is `0` or `1`. All images must share
//! one size. Grayscale PNGs load as one channel, everything else as RGB (alpha
//! is dropped). Pixels are divided by the storage maximum, so values land in
//! `[0, 1]`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};
use privshield_core::data::{Dataset, ImageShape, Sample};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Header expected for `k` attributes.
pub fn manifest_header(k: usize) -> Vec<String> {
    let mut h = vec!["path".to_string(), "identity".to_string()];
    h.extend((0..k).map(|j| format!("attr_{j}")));
    h
}

/// Reads a manifest and its images. Rows are numbered from 1, counting the
/// header as row 0.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read(path).map_err(Error::io(path))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).has_headers(false).from_reader(&text[..]);
    let mut records = reader.records();
    let bad = |row: usize, msg: String| Error::Manifest { path: path.to_path_buf(), row, msg };

    let header = match records.next() {
        Some(r) => r.map_err(|e| bad(0, e.to_string()))?,
        None => return Err(bad(0, "empty manifest".into())),
    };
    let fields: Vec<&str> = header.iter().collect();
    if fields.len() < 3 {
        return Err(bad(0, "header needs path, identity and at least one attribute".into()));
    }
    let k = fields.len() - 2;
    if fields != manifest_header(k) {
        return Err(bad(0, format!("header must be `{}`", manifest_header(k).join(","))));
    }

    let root = path.parent().unwrap_or(Path::new("."));
    let mut shape: Option<ImageShape> = None;
    let mut samples = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| bad(row, e.to_string()))?;
        if rec.len() != k + 2 {
            return Err(bad(row, format!("expected {} attribute columns, found {}", k, rec.len().saturating_sub(2))));
        }
        let identity: usize = rec[1].trim().parse().map_err(|_| bad(row, format!("identity `{}` is not a non-negative integer", &rec[1])))?;
        let attributes = (0..k)
            .map(|j| match rec[j + 2].trim() {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(bad(row, format!("attr_{j} must be 0 or 1, found `{other}`"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        let file = root.join(&rec[0]);
        let (img_shape, image) = read_png(&file).map_err(|e| bad(row, e.to_string()))?;
        match shape {
            None => shape = Some(img_shape),
            Some(s) if s != img_shape => {
                return Err(bad(row, format!("image {}x{}x{} differs from the first image {}x{}x{}",
                    img_shape.height, img_shape.width, img_shape.channels, s.height, s.width, s.channels)));
            }
            _ => {}
        }
        samples.push(Sample { image, attributes, identity });
    }
    let shape = shape.ok_or_else(|| bad(1, "manifest has no rows".into()))?;
    Ok(Dataset::new(shape, k, samples)?)
}

/// Writes `dataset` as `dir/manifest.csv` plus `dir/images/NNNNNN.png`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(Error::io(&images))?;
    let manifest = dir.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| Error::format(&manifest, e))?;
    w.write_record(manifest_header(dataset.k_attributes)).map_err(|e| Error::format(&manifest, e))?;
    for (i, s) in dataset.samples.iter().enumerate() {
        let name = format!("images/{i:06}.png");
        write_png(&dir.join(&name), dataset.shape, &s.image)?;
        let mut row = vec![name, s.identity.to_string()];
        row.extend(s.attributes.iter().map(|a| a.to_string()));
        w.write_record(&row).map_err(|e| Error::format(&manifest, e))?;
    }
    w.flush().map_err(Error::io(&manifest))?;
    Ok(manifest)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes an `H x W x C` image with values in `[0, 1]` (C is 1 or 3).
pub fn write_png(path: &Path, shape: ImageShape, hwc: &[f32]) -> Result<()> {
    let (w, h) = (shape.width as u32, shape.height as u32);
    let bytes: Vec<u8> = hwc.iter().map(|&v| to_u8(v)).collect();
    let img = match shape.channels {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("sized buffer")),
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("sized buffer")),
        c => return Err(Error::format(path, format!("cannot store {c}-channel images as PNG"))),
    };
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::format(path, e))
}

/// Decodes a PNG into an `H x W x C` image with values in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<(ImageShape, Vec<f32>)> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|e| Error::format(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = !img.color().has_color();
    let (channels, data): (usize, Vec<f32>) = if gray {
        (1, img.to_luma32f().into_raw())
    } else {
        (3, img.to_rgb32f().into_raw())
    };
    Ok((ImageShape { height: h, width: w, channels }, data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()))
}

/// Tiles images into a near-square grid with a one pixel gap.
pub fn write_grid(path: &Path, shape: ImageShape, images: &[Vec<f32>]) -> Result<()> {
    let (rows, cols) = grid_layout(images.len());
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    let gw = cols * (w + 1) - 1;
    let gh = rows * (h + 1) - 1;
    let mut canvas = vec![1.0f32; gh * gw * c];
    for (i, img) in images.iter().enumerate() {
        let (oy, ox) = ((i / cols) * (h + 1), (i % cols) * (w + 1));
        for y in 0..h {
            let src = &img[y * w * c..(y + 1) * w * c];
            let at = ((oy + y) * gw + ox) * c;
            canvas[at..at + w * c].copy_from_slice(src);
        }
    }
    write_png(path, ImageShape { height: gh, width: gw, channels: c }, &canvas)
}

/// Number of tiles a grid of `n` images has along each axis.
pub fn grid_layout(n: usize) -> (usize, usize) {
    let n = n.max(1);
    let cols = (n as f64).sqrt().ceil() as usize;
    (n.div_ceil(cols), cols)
}
