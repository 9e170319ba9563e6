use std::path::PathBuf;
use std::time::Instant;

use clap::Args;

use amcs_core::dataset::{
    attach_measurements, extract_patches, load_manifest_images, load_patch_cache,
    split_validation, DEFAULT_STRIDE, PATCH_SIDE,
};
use amcs_core::reconnet::{ArchConfig, InitMode};
use amcs_core::training::{train, write_log_csv, TrainConfig};
use amcs_core::{Error, MeasurementKind, MeasurementOperator, Model, Result};

#[derive(Args)]
pub struct TrainArgs {
    /// Measurement kind: fixed (random Gaussian) or adaptive (learned).
    #[arg(long)]
    mode: String,

    /// Measurement rate in (0, 1].
    #[arg(long)]
    rate: f64,

    /// Explicit measurement count, overriding round(rate * 1089).
    #[arg(long)]
    m: Option<usize>,

    /// Image manifest (one PGM path per line) or a patch cache.
    #[arg(long)]
    data: PathBuf,

    /// Output model file.
    #[arg(long)]
    out: PathBuf,

    /// Training log CSV (default: model path with .csv extension).
    #[arg(long)]
    log: Option<PathBuf>,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long, default_value_t = 1e-3)]
    lr: f64,

    #[arg(long, default_value_t = 0.9)]
    momentum: f64,

    #[arg(long, default_value_t = 16)]
    batch: usize,

    #[arg(long, default_value_t = 20_000)]
    iters: usize,

    /// Fraction of patches held out for validation.
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,

    /// Iterations between validation evaluations.
    #[arg(long, default_value_t = 500)]
    val_every: usize,

    /// Comma list of initializations to race, e.g.
    /// `gaussian:0.01,deterministic`. Default: both for fixed mode,
    /// gaussian for adaptive.
    #[arg(long)]
    init: Option<String>,

    /// Convolutional architecture, e.g. `11x64,1x32,7x1,11x64,1x32,7x1`.
    #[arg(long)]
    arch: Option<String>,

    /// Multiply the learning rate by FACTOR every EVERY iterations,
    /// written EVERY:FACTOR.
    #[arg(long)]
    lr_decay: Option<String>,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let mode = MeasurementKind::parse(&args.mode)?;
    let mut config = TrainConfig::new(mode, args.rate);
    config.m_override = args.m;
    config.learning_rate = args.lr;
    config.momentum = args.momentum;
    config.batch_size = args.batch;
    config.max_iterations = args.iters;
    config.validation_every = args.val_every;
    config.seed = args.seed;
    if let Some(arch) = &args.arch {
        config.arch = ArchConfig::parse(arch)?;
    }
    if let Some(init) = &args.init {
        config.init_modes = init
            .split(',')
            .map(InitMode::parse)
            .collect::<Result<Vec<_>>>()?;
    }
    if let Some(decay) = &args.lr_decay {
        let (every, factor) = decay
            .split_once(':')
            .ok_or_else(|| Error::Usage(format!("--lr-decay wants EVERY:FACTOR, got {decay:?}")))?;
        config.lr_decay = Some((
            every
                .parse()
                .map_err(|_| Error::Usage("bad EVERY in --lr-decay".into()))?,
            factor
                .parse()
                .map_err(|_| Error::Usage("bad FACTOR in --lr-decay".into()))?,
        ));
    }

    let m = amcs_core::measurement::resolve_m(args.rate, args.m)?;
    let phi = match mode {
        MeasurementKind::FixedGaussian => Some(MeasurementOperator::fixed_gaussian(
            args.rate, args.m, args.seed,
        )?),
        MeasurementKind::Adaptive => None,
    };

    let started = Instant::now();
    let mut dataset = if super::is_chunk_container(&args.data)? {
        load_patch_cache(&args.data)?
    } else {
        let images = load_manifest_images(&args.data)?;
        extract_patches(&images, PATCH_SIDE, DEFAULT_STRIDE)?
    };
    for name in &dataset.skipped {
        eprintln!("amcs: warning: {name} is smaller than a patch, skipped");
    }
    split_validation(&mut dataset, args.val_frac, args.seed)?;
    if let Some(phi) = &phi {
        let widths_match = dataset
            .measurements
            .as_ref()
            .is_some_and(|t| t.shape()[1] == m);
        if !widths_match {
            attach_measurements(&mut dataset, phi)?;
        }
    }
    eprintln!(
        "amcs: {} patches ({} train / {} validation) in {:.1}s",
        dataset.len(),
        dataset.train_indices.len(),
        dataset.validation_indices.len(),
        started.elapsed().as_secs_f64()
    );

    let t0 = Instant::now();
    let outcome = train(&config, &dataset, phi.as_ref())?;
    for c in &outcome.candidates {
        match &c.diverged {
            Some(why) => eprintln!("amcs: candidate {} diverged: {why}", c.init.encode()),
            None => eprintln!(
                "amcs: candidate {} final validation loss {:.6}",
                c.init.encode(),
                c.final_val_loss
            ),
        }
    }
    eprintln!(
        "amcs: chose {} after {} iterations in {:.1}s",
        outcome.chosen_init.encode(),
        args.iters,
        t0.elapsed().as_secs_f64()
    );

    let model = Model {
        mode,
        rate: args.rate,
        m,
        arch: config.arch.clone(),
        seed: args.seed,
        init: outcome.chosen_init.encode(),
        iterations: args.iters,
        params: outcome.params,
        phi,
    };
    model.save(&args.out)?;
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| args.out.with_extension("csv"));
    write_log_csv(&outcome.log, &log_path)?;
    println!(
        "wrote {} and {}",
        args.out.display(),
        log_path.display()
    );
    Ok(())
}
