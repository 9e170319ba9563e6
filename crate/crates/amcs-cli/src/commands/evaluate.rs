use std::path::PathBuf;

use clap::Args;

use amcs_core::dataset::load_manifest_images;
use amcs_core::evaluation::evaluate_suite;
use amcs_core::{Error, Model, Result};

#[derive(Args)]
pub struct EvaluateArgs {
    /// Directory of .amcs models, or a comma-separated list of files.
    #[arg(long)]
    models: String,

    /// Manifest of test images (one PGM path per line).
    #[arg(long)]
    images: PathBuf,

    /// Output CSV; a text table is written next to it as .txt.
    #[arg(long)]
    out: PathBuf,

    /// Comma list of rates that must all be covered, e.g. 0.25,0.1,0.01.
    #[arg(long)]
    rates: Option<String>,
}

fn collect_model_paths(spec: &str) -> Result<Vec<PathBuf>> {
    let as_path = PathBuf::from(spec);
    if as_path.is_dir() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&as_path)
            .map_err(|e| Error::io(&as_path, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "amcs"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Config(format!(
                "no .amcs models found in {}",
                as_path.display()
            )));
        }
        return Ok(paths);
    }
    Ok(spec.split(',').map(PathBuf::from).collect())
}

pub fn run(args: EvaluateArgs) -> Result<()> {
    let models = collect_model_paths(&args.models)?
        .iter()
        .map(Model::load)
        .collect::<Result<Vec<_>>>()?;
    let images = load_manifest_images(&args.images)?;
    let rates = match &args.rates {
        None => Vec::new(),
        Some(spec) => spec
            .split(',')
            .map(|r| {
                r.parse::<f64>()
                    .map_err(|_| Error::Usage(format!("bad rate {r:?}")))
            })
            .collect::<Result<Vec<_>>>()?,
    };

    let report = evaluate_suite(&models, &images, &rates)?;
    report.write_csv(&args.out)?;
    let table = report.to_table();
    let table_path = args.out.with_extension("txt");
    std::fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;
    print!("{table}");
    println!("wrote {} and {}", args.out.display(), table_path.display());
    Ok(())
}
