//! `adlite tx-preview`: apply the negative-image transformation to raw
//! images and write original/transformed pairs for visual inspection.
//!
//! Pixels map through round(m * (c - v)) clamped to [0, 255], per channel.
//! With m = 1 the transformation is its own inverse on 8-bit data.

use std::path::{Path, PathBuf};

use adlite_core::{Error, Result};

pub struct TxPreviewOpts {
    pub inputs: Vec<PathBuf>,
    pub m: f64,
    pub c: f64,
}

fn tx_pixel(v: u8, m: f64, c: f64) -> u8 {
    (m * (c - v as f64)).round().clamp(0.0, 255.0) as u8
}

pub fn run(opts: &TxPreviewOpts, out_dir: &Path) -> Result<()> {
    if opts.inputs.is_empty() {
        return Err(Error::Config("no input images given".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    for input in &opts.inputs {
        let img = image::open(input)
            .map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", input.display()))))?;
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Config(format!("unusable file name {}", input.display())))?;

        let (orig_path, tx_path) = (
            out_dir.join(format!("{stem}_orig.png")),
            out_dir.join(format!("{stem}_tx.png")),
        );
        match img {
            image::DynamicImage::ImageLuma8(gray) => {
                gray.save(&orig_path)
                    .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
                let mut out = gray.clone();
                for p in out.pixels_mut() {
                    p.0[0] = tx_pixel(p.0[0], opts.m, opts.c);
                }
                out.save(&tx_path)
                    .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
            }
            other => {
                let rgb = other.to_rgb8();
                rgb.save(&orig_path)
                    .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
                let mut out = rgb.clone();
                for p in out.pixels_mut() {
                    for ch in &mut p.0 {
                        *ch = tx_pixel(*ch, opts.m, opts.c);
                    }
                }
                out.save(&tx_path)
                    .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
            }
        }
        println!("{} -> {} / {}", input.display(), orig_path.display(), tx_path.display());
    }
    Ok(())
}
