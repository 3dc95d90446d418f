//! Dataset loading for the commands: ADS1 files or image folders, several
//! of them merged under a class map when asked.

use std::path::Path;

use adlite_core::data::{ads1, folder, merge_datasets, ClassMap, DatasetIndex, PixelImage};
use adlite_core::optim::PreparedDataset;
use adlite_core::{Error, Result, Scalar};

use crate::config::RunConfig;

pub struct LoadedData {
    pub index: DatasetIndex,
    /// Pixels aligned with `index.samples`.
    pub images: Vec<PixelImage>,
}

pub fn resolve_classmap(spec: &str) -> Result<ClassMap> {
    if spec == "ad-adni" {
        return Ok(ClassMap::merged_ad_adni());
    }
    let text = std::fs::read_to_string(Path::new(spec))?;
    ClassMap::from_json_str(&text)
}

fn load_one(path: &str, format: &str) -> Result<(DatasetIndex, Vec<PixelImage>)> {
    match format {
        "ads1" => {
            let ds = ads1::load(Path::new(path))?;
            Ok((ds.index, ds.images))
        }
        "folder" => {
            let ds = folder::load_image_folder(Path::new(path))?;
            for skipped in &ds.skipped {
                eprintln!("warning: skipped undecodable file {}", skipped.display());
            }
            if !ds.skipped.is_empty() {
                eprintln!("warning: {} file(s) skipped", ds.skipped.len());
            }
            Ok((ds.index, ds.images))
        }
        other => Err(Error::Config(format!("unknown data format \"{other}\""))),
    }
}

/// Load every configured dataset; merge under the class map when one is
/// configured or when several datasets are given.
pub fn load_datasets(cfg: &RunConfig) -> Result<LoadedData> {
    if cfg.data_paths.is_empty() {
        return Err(Error::Config("no dataset path given".into()));
    }
    let mut parts = Vec::new();
    for path in &cfg.data_paths {
        parts.push(load_one(path, &cfg.data_format)?);
    }

    if parts.len() == 1 && cfg.classmap.is_none() {
        let (index, images) = parts.pop().expect("one part");
        return Ok(LoadedData { index, images });
    }

    let map = match &cfg.classmap {
        Some(spec) => resolve_classmap(spec)?,
        None => {
            return Err(Error::Config(
                "merging several datasets requires a class map".into(),
            ))
        }
    };
    let names: Vec<String> = (0..parts.len()).map(|i| cfg.dataset_name(i)).collect();
    let named: Vec<(&str, &DatasetIndex)> = names
        .iter()
        .map(|n| n.as_str())
        .zip(parts.iter().map(|(idx, _)| idx))
        .collect();
    let index = merge_datasets(&named, &map)?;
    // merge_datasets keeps sample order, so pixel stores concatenate.
    let mut images = Vec::with_capacity(index.len());
    for (_, imgs) in parts {
        images.extend(imgs);
    }
    Ok(LoadedData { index, images })
}

/// Preprocess a subset of the loaded data into batched tensors.
pub fn prepare_subset<T: Scalar>(
    data: &LoadedData,
    positions: &[usize],
    input_channels: usize,
    input_size: usize,
) -> Result<PreparedDataset<T>> {
    let images: Vec<PixelImage> = positions.iter().map(|&p| data.images[p].clone()).collect();
    let labels: Vec<usize> = positions
        .iter()
        .map(|&p| data.index.samples[p].class_id)
        .collect();
    PreparedDataset::from_pixels(
        &images,
        &labels,
        data.index.num_classes(),
        input_channels,
        input_size,
    )
}
