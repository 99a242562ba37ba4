use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use crnet_core::eval::{
    evaluate_directory, refine_interpolated, super_resolve_image, Checkpoint, EvalOptions,
    MetricsReport, SrSource,
};
use crnet_core::image_io::{list_images, load_image, save_image};
use crnet_core::models::ModelKind;
use crnet_core::training::degrade as degrade_image;

use crate::{BaselineArgs, DegradeArgs, EvalArgs, MetricArgs, SrArgs};

pub fn sr(args: SrArgs) -> Result<ExitCode> {
    let model = Checkpoint::load(&args.checkpoint)?.to_model()?;
    let input = load_image(&args.input)?;
    let out = if args.interpolated {
        if model.kind() != ModelKind::CrnetA {
            bail!("--interpolated applies to CRNet-A checkpoints only");
        }
        refine_interpolated(&model, &input, args.ensemble)?
    } else {
        super_resolve_image(&model, &input, args.scale, args.ensemble)?
    };
    save_image(&args.output, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn options(m: &MetricArgs, quantize: bool) -> EvalOptions {
    EvalOptions {
        shave: m.shave,
        quantize,
        ..EvalOptions::new(m.scale)
    }
}

fn report(r: &MetricsReport, csv: Option<&Path>) -> Result<ExitCode> {
    print!("{}", r.to_table());
    if let Some(path) = csv {
        std::fs::write(path, r.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn eval(args: EvalArgs) -> Result<ExitCode> {
    let opts = options(&args.metric, args.quantize);
    let r = match (&args.checkpoint, &args.sr_dir) {
        (Some(path), _) => {
            let model = Checkpoint::load(path)?.to_model()?;
            evaluate_directory(
                &args.hr_dir,
                &SrSource::Model {
                    model: &model,
                    ensemble: args.ensemble,
                },
                opts,
            )?
        }
        (None, Some(dir)) => {
            evaluate_directory(&args.hr_dir, &SrSource::Directory(dir.clone()), opts)?
        }
        (None, None) => bail!("need --checkpoint or --sr-dir"),
    };
    report(&r, args.metric.csv.as_deref())
}

pub fn baseline(args: BaselineArgs) -> Result<ExitCode> {
    let r = evaluate_directory(
        &args.set,
        &SrSource::Bicubic(args.border),
        options(&args.metric, !args.float),
    )?;
    report(&r, args.metric.csv.as_deref())
}

pub fn degrade(args: DegradeArgs) -> Result<ExitCode> {
    let inputs: Vec<PathBuf> = if args.input.is_dir() {
        list_images(&args.input)?
    } else {
        vec![args.input.clone()]
    };
    if inputs.is_empty() {
        bail!("no images in {}", args.input.display());
    }
    for path in &inputs {
        let hr = load_image(path)?.modcrop(args.scale)?;
        let (lr, ilr) = degrade_image(&hr, args.scale)?;
        let name = Path::new(path.file_stem().unwrap_or_default()).with_extension("png");
        for (dir, img) in [("hr", &hr), ("lr", &lr), ("ilr", &ilr)] {
            save_image(&args.out.join(dir).join(&name), img)?;
        }
    }
    eprintln!("wrote {} triples to {}", inputs.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}
