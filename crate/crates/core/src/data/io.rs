use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma};

use super::{Dataset, Domain, Image, Item, LabelMap, SplitTag, NUM_CLASSES};
use crate::error::{Error, Result};

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Reads an 8- or 16-bit grayscale raster; raw code values are kept.
pub fn read_image(path: &Path, domain: Domain) -> Result<Image> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f32> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(f32::from).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(f32::from).collect(),
        other if other.color().has_color() || other.color().has_alpha() => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                reason: format!("expected a grayscale raster, found {:?}", other.color()),
            })
        }
        other => other.to_luma16().into_raw().into_iter().map(f32::from).collect(),
    };
    Image::new(h, w, pixels, domain)
}

/// Reads an 8-bit index raster with values in `{0, 1, 2}`.
pub fn read_label_map(path: &Path) -> Result<LabelMap> {
    let img = open(path)?;
    let DynamicImage::ImageLuma8(buf) = img else {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            reason: "mask must be an 8-bit single-channel raster".into(),
        });
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let labels = buf.into_raw();
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::InvalidClassId {
            id: bad as u32,
            context: path.display().to_string(),
        });
    }
    LabelMap::new(h, w, labels)
}

/// Writes `[0, 255]` intensities as a 16-bit PNG (value × 257, rounded).
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let data: Vec<u16> = img
        .pixels
        .iter()
        .map(|&p| (p.clamp(0.0, 255.0) as f64 * 257.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, data).expect("buffer size");
    buf.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn write_label_map(path: &Path, labels: &LabelMap) -> Result<()> {
    let buf = GrayImage::from_raw(labels.width as u32, labels.height as u32, labels.labels.clone())
        .expect("buffer size");
    buf.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Loads the cases listed in a tab-separated manifest
/// (`case-id <TAB> image-path [<TAB> mask-path]`, paths relative to `root`).
/// Blank lines and lines starting with `#` are skipped.
pub fn load_dataset(root: &Path, manifest: &Path, domain: Domain) -> Result<Dataset> {
    if !manifest.exists() {
        return Err(Error::MissingFile(manifest.to_path_buf()));
    }
    let text = fs::read_to_string(manifest)?;
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 || fields[0].is_empty() {
            return Err(Error::Config(format!(
                "{}:{}: expected `case-id<TAB>image[<TAB>mask]`",
                manifest.display(),
                lineno + 1
            )));
        }
        let image = read_image(&root.join(fields[1]), domain)?;
        let label = match fields.get(2).filter(|m| !m.is_empty()) {
            Some(m) => {
                let l = read_label_map(&root.join(m))?;
                if l.height != image.height || l.width != image.width {
                    return Err(Error::shape(&[image.height, image.width], &[l.height, l.width]));
                }
                Some(l)
            }
            None => None,
        };
        items.push(Item {
            case_id: fields[0].to_string(),
            image,
            label,
        });
    }
    Dataset::new(items, domain, SplitTag::Unsplit)
}

/// Writes images (and masks when present) under `dir` plus a `manifest.tsv`.
/// Returns the manifest path.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("images"))?;
    let mut manifest = String::new();
    for it in &ds.items {
        let img_rel = format!("images/{}.png", it.case_id);
        write_image(&dir.join(&img_rel), &it.image)?;
        manifest.push_str(&it.case_id);
        manifest.push('\t');
        manifest.push_str(&img_rel);
        if let Some(l) = &it.label {
            fs::create_dir_all(dir.join("masks"))?;
            let mask_rel = format!("masks/{}.png", it.case_id);
            write_label_map(&dir.join(&mask_rel), l)?;
            manifest.push('\t');
            manifest.push_str(&mask_rel);
        }
        manifest.push('\n');
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest)?;
    Ok(path)
}
