use std::path::PathBuf;

use clap::Args;

use amcs_core::dataset::{
    extract_patches, load_manifest_images, save_patch_cache, DEFAULT_STRIDE, PATCH_SIDE,
};
use amcs_core::Result;

#[derive(Args)]
pub struct DatasetArgs {
    /// Manifest of source images (one PGM path per line).
    #[arg(long)]
    images: PathBuf,

    /// Output patch cache.
    #[arg(long)]
    out: PathBuf,

    /// Extraction stride in pixels.
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    stride: usize,
}

pub fn run(args: DatasetArgs) -> Result<()> {
    let images = load_manifest_images(&args.images)?;
    let dataset = extract_patches(&images, PATCH_SIDE, args.stride)?;
    for name in &dataset.skipped {
        eprintln!("amcs: warning: {name} is smaller than a patch, skipped");
    }
    save_patch_cache(&dataset, &args.out)?;
    println!(
        "extracted {} patches from {} images into {}",
        dataset.len(),
        dataset.source_manifest.len(),
        args.out.display()
    );
    Ok(())
}
