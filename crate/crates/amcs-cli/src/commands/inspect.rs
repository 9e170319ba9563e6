use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;

use amcs_core::diagnostics::{
    band_energy, channel_mosaic, diagonal_dominance, equivalent_matrix, export_feature_maps,
    high_frequency_fraction, normalize_to_image, row_spectrum, spectrum_to_image,
};
use amcs_core::image_io::{read_pgm, write_pgm};
use amcs_core::{Error, Model, Result};

#[derive(Args)]
pub struct InspectArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,

    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,

    /// Export the 1089x1089 equivalent-matrix heatmap.
    #[arg(long)]
    equivalent: bool,

    /// Comma list of measurement-matrix rows to export as 33x33 images.
    #[arg(long)]
    rows: Option<String>,

    /// With --rows, also export the DFT magnitude of each row.
    #[arg(long)]
    spectra: bool,

    /// Run a 33x33 PGM block through the network and export the fc,
    /// mid-network and final feature maps.
    #[arg(long)]
    feature_maps: Option<PathBuf>,

    /// Write numeric diagnostics (dominance ratio, band energy,
    /// high-frequency fraction) as CSV.
    #[arg(long)]
    metrics: bool,
}

pub fn run(args: InspectArgs) -> Result<()> {
    let model = Model::load(&args.model)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    if args.equivalent || args.metrics {
        let eq = equivalent_matrix(&model)?;
        if args.equivalent {
            let path = args.out.join("equivalent.pgm");
            write_pgm(&path, &normalize_to_image(&eq.matrix)?)?;
            println!("wrote {}", path.display());
        }
        if args.metrics {
            let op = model.measurement()?;
            let mut csv = String::from("metric,value\n");
            let dominance = diagonal_dominance(&eq);
            let _ = writeln!(csv, "diagonal_dominance,{dominance:.6}");
            for hw in [0usize, 34, 100] {
                let _ = writeln!(csv, "band_energy_hw{hw},{:.6}", band_energy(&eq, hw)?);
            }
            let hf = high_frequency_fraction(op.matrix(), 11)?;
            let _ = writeln!(csv, "high_frequency_fraction,{hf:.6}");
            let path = args.out.join("metrics.csv");
            std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
            println!("wrote {}", path.display());
        }
    }

    if let Some(rows) = &args.rows {
        let op = model.measurement()?;
        for token in rows.split(',') {
            let row: usize = token
                .trim()
                .parse()
                .map_err(|_| Error::Usage(format!("bad row index {token:?}")))?;
            let spec = row_spectrum(op.matrix(), row)?;
            let time_path = args.out.join(format!("row_{row}_time.pgm"));
            write_pgm(&time_path, &normalize_to_image(&spec.time)?)?;
            println!("wrote {}", time_path.display());
            if args.spectra {
                let freq_path = args.out.join(format!("row_{row}_freq.pgm"));
                write_pgm(&freq_path, &spectrum_to_image(&spec.magnitude)?)?;
                println!("wrote {}", freq_path.display());
            }
        }
    }

    if let Some(block_path) = &args.feature_maps {
        let block = read_pgm(block_path)?;
        let maps = export_feature_maps(&model, &block)?;
        let fc_path = args.out.join("fc_map.pgm");
        write_pgm(&fc_path, &normalize_to_image(&maps.fc_map)?)?;
        let mid_path = args.out.join("conv_mid_map.pgm");
        write_pgm(&mid_path, &channel_mosaic(&maps.conv_mid)?)?;
        let last_path = args.out.join("conv_last_map.pgm");
        write_pgm(&last_path, &normalize_to_image(&maps.conv_last)?)?;
        println!(
            "wrote {}, {}, {}",
            fc_path.display(),
            mid_path.display(),
            last_path.display()
        );
    }
    Ok(())
}
