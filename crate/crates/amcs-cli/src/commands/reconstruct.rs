use std::path::PathBuf;

use clap::Args;

use amcs_core::image_io::{read_pgm, write_pgm};
use amcs_core::inference::{
    reconstruct_from_measurements, reconstruct_with_measurements, BlockMeasurements,
};
use amcs_core::{Model, Result};

#[derive(Args)]
pub struct ReconstructArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,

    /// Input: a PGM image, or a measurement dump produced by
    /// --dump-measurements.
    #[arg(long = "in")]
    input: PathBuf,

    /// Output PGM image.
    #[arg(long)]
    out: PathBuf,

    /// Also write the per-block measurements to this file.
    #[arg(long)]
    dump_measurements: Option<PathBuf>,
}

pub fn run(args: ReconstructArgs) -> Result<()> {
    let model = Model::load(&args.model)?;
    if super::is_chunk_container(&args.input)? {
        let dump = BlockMeasurements::load(&args.input)?;
        let recon = reconstruct_from_measurements(&model, &dump)?;
        write_pgm(&args.out, &recon.image)?;
    } else {
        let image = read_pgm(&args.input)?;
        let (recon, dump) = reconstruct_with_measurements(&model, &image)?;
        write_pgm(&args.out, &recon.image)?;
        if let Some(path) = &args.dump_measurements {
            dump.save(path)?;
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}
