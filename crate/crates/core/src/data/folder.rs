//! Image-folder ingestion: `root/<class_name>/<file>.{png,jpg,jpeg}`.
//!
//! Classes are the subdirectory names in lexicographic order; files are
//! ordered lexicographically within each class, so two scans of the same
//! tree produce identical indexes. Files that fail to decode are skipped
//! and reported, not fatal.

use std::path::{Path, PathBuf};

use crate::data::{DatasetIndex, PixelImage, SampleRef, SampleSource};
use crate::error::{Error, Result};

pub struct FolderDataset {
    pub index: DatasetIndex,
    /// Decoded pixels, aligned with `index.samples`.
    pub images: Vec<PixelImage>,
    /// Files that could not be decoded.
    pub skipped: Vec<PathBuf>,
}

pub fn decode_image(path: &Path) -> Result<PixelImage> {
    let img = image::open(path)
        .map_err(|e| Error::Dataset(format!("cannot decode {}: {e}", path.display())))?;
    Ok(match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            PixelImage::new(w, h, 1, g.into_raw())?
        }
        other => {
            // Interleaved RGB -> planar.
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let raw = rgb.into_raw();
            let plane = w * h;
            let mut pixels = vec![0u8; 3 * plane];
            for i in 0..plane {
                pixels[i] = raw[3 * i];
                pixels[plane + i] = raw[3 * i + 1];
                pixels[2 * plane + i] = raw[3 * i + 2];
            }
            PixelImage::new(w, h, 3, pixels)?
        }
    })
}

pub fn load_image_folder(root: &Path) -> Result<FolderDataset> {
    let mut class_dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", root.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::Dataset(format!(
            "{} contains no class directories",
            root.display()
        )));
    }

    let mut class_names = Vec::new();
    let mut samples = Vec::new();
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for (class_id, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Dataset(format!("unreadable directory name in {}", root.display())))?
            .to_string();
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", dir.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
                    .unwrap_or(false)
            })
            .collect();
        files.sort();
        let before = images.len();
        for file in files {
            match decode_image(&file) {
                Ok(img) => {
                    samples.push(SampleRef {
                        source: SampleSource::File(file),
                        class_id,
                    });
                    images.push(img);
                }
                Err(_) => skipped.push(file),
            }
        }
        if images.len() == before {
            return Err(Error::Dataset(format!(
                "class directory {} holds no decodable images",
                dir.display()
            )));
        }
        class_names.push(name);
    }

    Ok(FolderDataset {
        index: DatasetIndex::new(class_names, samples)?,
        images,
        skipped,
    })
}
