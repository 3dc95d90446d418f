//! `adlite synth`: write a synthetic ring-image dataset as an ADS1 file.

use std::path::Path;

use adlite_core::data::ads1;
use adlite_core::data::synth::{synth_generate, SyntheticSpec};
use adlite_core::Result;

pub struct SynthOpts {
    pub counts: Vec<usize>,
    pub size: usize,
    pub noise: f64,
    pub seed: u64,
    pub names: Option<Vec<String>>,
}

pub fn run(opts: &SynthOpts, out: &Path) -> Result<()> {
    let spec = SyntheticSpec {
        counts: opts.counts.clone(),
        image_size: opts.size,
        noise_sigma: opts.noise,
        seed: opts.seed,
    };
    let samples = synth_generate(&spec)?;
    let names = match &opts.names {
        Some(n) => n.clone(),
        None => spec.class_names(),
    };
    ads1::save(out, &names, &samples)?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    for (name, count) in names.iter().zip(&spec.counts) {
        println!("  {name}: {count}");
    }
    Ok(())
}
