use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use crnet_core::eval::{Checkpoint, Precision};
use crnet_core::image_io::{list_images, load_image};
use crnet_core::kv::KvMap;
use crnet_core::models::{Model, ModelConfig};
use crnet_core::training::{make_patch_pairs, train, write_trace_csv, TrainConfig};

use crate::TrainArgs;

pub fn run(args: TrainArgs) -> Result<ExitCode> {
    let kv =
        KvMap::load(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let known: Vec<&str> = ModelConfig::KEYS
        .iter()
        .chain(TrainConfig::KEYS)
        .copied()
        .collect();
    kv.reject_unknown(&known)?;
    let model_cfg = ModelConfig::from_kv(&kv)?;
    let cfg = TrainConfig::from_kv(&kv)?;
    if let Some(s) = cfg.scales.iter().find(|&&s| !model_cfg.supports_scale(s)) {
        bail!("training scale {s} is not one of the model's scales");
    }

    let mut model = match &args.resume {
        Some(path) => {
            let m = Checkpoint::load(path)?.to_model()?;
            if m.config != model_cfg {
                bail!(
                    "checkpoint {} holds a different model configuration",
                    path.display()
                );
            }
            m
        }
        None => Model::init(model_cfg, cfg.seed)?,
    };

    let images = list_images(&args.data)?
        .iter()
        .map(|p| load_image(p))
        .collect::<crnet_core::Result<Vec<_>>>()?;
    if images.is_empty() {
        bail!("no images in {}", args.data.display());
    }
    let channels = model.config.channels();
    if let Some(img) = images.iter().find(|i| i.shape().c != channels) {
        bail!(
            "model takes {channels}-channel images, found {}",
            img.shape()
        );
    }
    let mut pairs = Vec::new();
    for &scale in &cfg.scales {
        let (patch, stride) = cfg.hr_window(model.kind(), scale);
        pairs.extend(make_patch_pairs(
            &images,
            scale,
            patch,
            stride,
            model.kind(),
        )?);
    }
    if pairs.is_empty() {
        bail!("no patch pairs: images are too small for the configured patch size");
    }
    eprintln!(
        "{} parameters, {} patch pairs from {} images",
        model.num_parameters(),
        pairs.len(),
        images.len()
    );

    std::fs::create_dir_all(&args.out)?;
    let precision = if args.f32 {
        Precision::F32
    } else {
        Precision::F64
    };
    let mut extra = KvMap::new();
    cfg.write_kv(&mut extra);
    let report = train(&mut model, pairs, &cfg, |end| {
        eprintln!("epoch {:>4}  loss {:.6e}", end.epoch + 1, end.mean_loss);
        if end.checkpoint_due {
            let mut meta = extra.clone();
            meta.set("epoch", end.epoch + 1);
            let ck = Checkpoint::from_model(end.model, &meta, cfg.seed, precision);
            ck.save(&args.out.join(format!("epoch_{:04}.ckpt", end.epoch + 1)))?;
            if end.last {
                ck.save(&args.out.join("final.ckpt"))?;
            }
        }
        Ok(())
    })?;
    write_trace_csv(&args.out.join("loss.csv"), &report.trace)?;
    eprintln!(
        "{} steps, final epoch mean {:.6e}",
        report.steps,
        report.epoch_means.last().copied().unwrap_or(f64::NAN)
    );
    Ok(ExitCode::SUCCESS)
}
