use std::fmt::Write as _;
use std::process::ExitCode;

use anyhow::{bail, Result};
use crnet_core::autodiff::grad_check as check;
use crnet_core::csc::{solve_traced, CscProblem};
use crnet_core::eval::{Checkpoint, Precision};
use crnet_core::image_io::{load_image, read_tensor, write_tensor};
use crnet_core::kv::KvMap;
use crnet_core::models::{CrnetAConfig, CrnetBConfig, Model, ModelConfig, INPUT};
use crnet_core::training::{loss_graph, Loss, TARGET};
use crnet_core::{FilterBank, Shape, Tensor4};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{CscSolveArgs, GradCheckArgs, InitArgs};

pub fn init(args: InitArgs) -> Result<ExitCode> {
    let config = match (&args.config, args.model) {
        (Some(path), _) => {
            let kv = KvMap::load(path)?;
            kv.reject_unknown(ModelConfig::KEYS)?;
            ModelConfig::from_kv(&kv)?
        }
        (None, Some(kind)) => ModelConfig::default_for(kind),
        (None, None) => bail!("need --config or --model"),
    };
    let mut model = Model::init(config, args.seed)?;
    if args.zero_residual {
        model.zero_residual_head()?;
    }
    Checkpoint::from_model(&model, &KvMap::new(), args.seed, Precision::F64).save(&args.out)?;
    eprintln!(
        "{} with {} parameters -> {}",
        model.kind(),
        model.num_parameters(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn csc_solve(args: CscSolveArgs) -> Result<ExitCode> {
    let y = load_image(&args.image)?;
    let filters = match (&args.filters, args.random_filters) {
        (Some(path), _) => FilterBank::new(read_tensor(path)?)?,
        (None, Some(m)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let s = args.filter_size;
            let mut w = Tensor4::random_normal(Shape::new(m, y.shape().c, s, s), 1.0, &mut rng);
            let per = y.shape().c * s * s;
            for atom in w.data_mut().chunks_mut(per) {
                let norm = atom.iter().map(|v| v * v).sum::<f64>().sqrt();
                atom.iter_mut().for_each(|v| *v /= norm);
            }
            FilterBank::new(w)?
        }
        (None, None) => bail!("need --filters or --random-filters"),
    };
    let problem = CscProblem::new(y, filters, args.lambda, args.nonnegative)?;
    let sol = solve_traced(&problem, args.iters, args.tol)?;
    let mut csv = String::from("iteration,objective\n");
    for (i, obj) in sol.trace.iter().enumerate() {
        let _ = writeln!(csv, "{},{obj}", i + 1);
    }
    std::fs::write(&args.trace, csv)?;
    write_tensor(&args.codes, &sol.state.z)?;
    eprintln!(
        "L = {:.6}, {} iterations, objective {:.6e}, {} of {} codes nonzero",
        sol.lipschitz,
        sol.state.iteration,
        sol.state.objective,
        sol.state.z.count_nonzero(),
        sol.state.z.len()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn grad_check(args: GradCheckArgs) -> Result<ExitCode> {
    let tiny_b = |c, scales| CrnetBConfig {
        c,
        n0: 4,
        m0: 6,
        s: 3,
        k: 2,
        scales,
    };
    let cases: Vec<(&str, ModelConfig, usize)> = vec![
        ("crnet-a residual", CrnetAConfig::tiny(2, 3, 2).into(), 1),
        (
            "crnet-a plain",
            CrnetAConfig {
                residual: false,
                ..CrnetAConfig::tiny(2, 3, 2)
            }
            .into(),
            1,
        ),
        ("crnet-b gray x2", tiny_b(1, vec![2]).into(), 2),
        ("crnet-b rgb x2", tiny_b(3, vec![2]).into(), 2),
        ("crnet-b gray x3", tiny_b(1, vec![3]).into(), 3),
        ("crnet-b gray x4", tiny_b(1, vec![4]).into(), 4),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut failed = 0;
    for (i, (name, cfg, scale)) in cases.into_iter().enumerate() {
        let model = Model::init(cfg, args.seed.wrapping_add(i as u64))?;
        let c = model.config.channels();
        let (side, out) = match model.kind() {
            crnet_core::models::ModelKind::CrnetA => (8, 8),
            crnet_core::models::ModelKind::CrnetB => (4, 4 * scale),
        };
        let x = Tensor4::random_uniform(Shape::new(1, c, side, side), 0.0, 1.0, &mut rng);
        let t = Tensor4::random_uniform(Shape::new(1, c, out, out), 0.0, 1.0, &mut rng);
        let (mg, _) = loss_graph(&model, scale, Loss::L2)?;
        let report = check(
            &mg.graph,
            &model.params,
            &[(INPUT, &x), (TARGET, &t)],
            args.step,
            args.tolerance,
        )?;
        let ok = report.passed();
        failed += usize::from(!ok);
        println!(
            "{} {name:<18} worst relative error {:.2e} over {} parameters",
            if ok { "PASS" } else { "FAIL" },
            report.worst(),
            report.params.len()
        );
        for f in report.failures() {
            println!("     {}: {:.2e}", f.name, f.max_rel_error);
        }
    }
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
