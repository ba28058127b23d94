use std::path::Path;

use oodkit::data::{generate_spurious_benchmark, write_benchmark, SpuriousSpec};
use oodkit::error::{Error, Result};

pub fn run(spec_path: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let spec = match spec_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str::<SpuriousSpec>(&text).map_err(|e| Error::ConfigParse(e.to_string()))?
        }
        None => SpuriousSpec::desk_default(),
    };
    let (manifest, images) = generate_spurious_benchmark(&spec, seed)?;
    write_benchmark(out, &manifest, &images)?;
    println!(
        "benchmark written to {} ({} samples, seed {seed})",
        out.display(),
        manifest.records.len()
    );
    for split in oodkit::data::Split::ALL {
        let n = manifest.records_of(split).count();
        if n > 0 {
            println!("  {:<18} {n}", split.as_str());
        }
    }
    Ok(())
}
