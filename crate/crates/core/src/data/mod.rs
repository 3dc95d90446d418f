//! Dataset ingestion and partitioning: the ADS1 raw container, an optional
//! image-folder loader, deterministic stratified/k-fold splitting, dataset
//! merging under a class map, preprocessing into tensors, and a synthetic
//! ring-image generator for codec-free desk-scale experiments.

pub mod ads1;
#[cfg(feature = "images")]
pub mod folder;
pub mod preprocess;
pub mod split;
pub mod synth;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One decoded image, planar layout: all of channel 0's rows, then channel
/// 1's, and so on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl PixelImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width * height * channels != pixels.len() {
            return Err(Error::Dataset(format!(
                "{}x{}x{channels} image needs {} bytes, got {}",
                width,
                height,
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(PixelImage {
            width,
            height,
            channels,
            pixels,
        })
    }
}

/// Where a sample's pixels live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SampleSource {
    File(PathBuf),
    /// Byte offset of the record inside its ADS1 container.
    Raw { offset: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRef {
    pub source: SampleSource,
    pub class_id: usize,
}

/// Label-mapped catalog of samples. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub class_names: Vec<String>,
    pub samples: Vec<SampleRef>,
}

impl DatasetIndex {
    pub fn new(class_names: Vec<String>, samples: Vec<SampleRef>) -> Result<Self> {
        let k = class_names.len();
        if let Some(bad) = samples.iter().find(|s| s.class_id >= k) {
            return Err(Error::Dataset(format!(
                "sample labeled {} but only {k} classes exist",
                bad.class_id
            )));
        }
        Ok(DatasetIndex {
            class_names,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn per_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_names.len()];
        for s in &self.samples {
            counts[s.class_id] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.class_id).collect()
    }

    /// New index over the given sample positions (same class table).
    pub fn subset(&self, positions: &[usize]) -> Result<DatasetIndex> {
        let mut samples = Vec::with_capacity(positions.len());
        for &p in positions {
            let s = self
                .samples
                .get(p)
                .ok_or_else(|| Error::Dataset(format!("sample position {p} out of range")))?;
            samples.push(s.clone());
        }
        Ok(DatasetIndex {
            class_names: self.class_names.clone(),
            samples,
        })
    }
}

/// Total mapping from `dataset/class` to a merged class name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassMap {
    map: BTreeMap<String, String>,
}

impl ClassMap {
    pub fn from_pairs(pairs: &[(&str, &str)]) -> Self {
        ClassMap {
            map: pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("class map: {e}")))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self).expect("string map serializes")
    }

    pub fn lookup(&self, dataset: &str, class: &str) -> Result<&str> {
        self.map
            .get(&format!("{dataset}/{class}"))
            .map(|s| s.as_str())
            .ok_or_else(|| {
                Error::Config(format!(
                    "class map has no entry for \"{dataset}/{class}\""
                ))
            })
    }

    /// Maps every class of `dataset` to itself.
    pub fn identity(dataset: &str, classes: &[String]) -> Self {
        ClassMap {
            map: classes
                .iter()
                .map(|c| (format!("{dataset}/{c}"), c.clone()))
                .collect(),
        }
    }

    /// The shipped map for merging the four-class dementia-stage dataset
    /// ("AD") with the three-class axial dataset ("ADNI"): both early-stage
    /// classes collapse into CI, the severe class aligns with AD, and the
    /// healthy class with CN.
    pub fn merged_ad_adni() -> Self {
        ClassMap::from_pairs(&[
            ("AD/MildDemented", "CI"),
            ("AD/VeryMildDemented", "CI"),
            ("AD/ModerateDemented", "AD"),
            ("AD/NonDemented", "CN"),
            ("ADNI/AD", "AD"),
            ("ADNI/CI", "CI"),
            ("ADNI/CN", "CN"),
        ])
    }
}

/// Merge several indexes into one under a class map. Sample order is
/// preserved (first dataset's samples, then the next's), so a parallel
/// pixel store can simply be concatenated. Merged class names are sorted.
pub fn merge_datasets(inputs: &[(&str, &DatasetIndex)], map: &ClassMap) -> Result<DatasetIndex> {
    let mut merged_names: Vec<String> = Vec::new();
    for (name, index) in inputs {
        for class in &index.class_names {
            let target = map.lookup(name, class)?.to_string();
            if !merged_names.contains(&target) {
                merged_names.push(target);
            }
        }
    }
    merged_names.sort();

    let mut samples = Vec::new();
    for (name, index) in inputs {
        let remap: Vec<usize> = index
            .class_names
            .iter()
            .map(|class| {
                let target = map.lookup(name, class).expect("checked above");
                merged_names.iter().position(|m| m == target).expect("present")
            })
            .collect();
        for s in &index.samples {
            samples.push(SampleRef {
                source: s.source.clone(),
                class_id: remap[s.class_id],
            });
        }
    }
    DatasetIndex::new(merged_names, samples)
}
