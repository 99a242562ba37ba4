use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::grad_check;
use crate::kv::KvMap;
use crate::tensor::{conv2d_same, pixel_shuffle, FilterBank};

fn conv(x: &Tensor4, store: &ParamStore, name: &str) -> Tensor4 {
    conv2d_same(
        x,
        &FilterBank::new(store.tensor(name).unwrap().clone()).unwrap(),
    )
    .unwrap()
}

fn tiny_a(residual: bool) -> CrnetAConfig {
    CrnetAConfig {
        residual,
        ..CrnetAConfig::tiny(2, 3, 2)
    }
}

fn tiny_b(scales: Vec<usize>) -> CrnetBConfig {
    CrnetBConfig {
        c: 1,
        n0: 4,
        m0: 6,
        s: 3,
        k: 2,
        scales,
    }
}

/// Hand-written CISTA recursion on tensors.
fn cista_direct(y: &Tensor4, store: &ParamStore, s_name: &str, k: usize) -> Tensor4 {
    let wy = conv(y, store, "Wl");
    let mut z = wy.relu();
    for _ in 0..k {
        z = wy.add(&conv(&z, store, s_name)).unwrap().relu();
    }
    z
}

fn crneta_direct(x: &Tensor4, store: &ParamStore, cfg: &CrnetAConfig) -> Tensor4 {
    let y = conv(&conv(x, store, "F0").relu(), store, "F1").relu();
    let z = cista_direct(&y, store, "S", cfg.k);
    let r = conv(&conv(&z, store, "Wh").relu(), store, "H");
    if cfg.residual {
        x.add(&r).unwrap()
    } else {
        r
    }
}

fn cista_graph(k: usize) -> Graph {
    let mut g = Graph::new();
    let y = g.input("y");
    let wl = g.parameter("Wl");
    let s = g.parameter("S");
    let z = cista_block(&mut g, y, wl, s, k);
    g.set_output(z);
    g
}

fn cista_params(seed: u64, s_zero: bool) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    p.insert(
        "Wl",
        Tensor4::random_normal(Shape::new(4, 2, 3, 3), 0.5, &mut rng),
    );
    let s = Tensor4::random_normal(Shape::new(4, 4, 3, 3), 0.3, &mut rng);
    p.insert("S", if s_zero { Tensor4::zeros(s.shape()) } else { s });
    p
}

#[test]
fn cista_block_with_zero_s_collapses() {
    let p = cista_params(1, true);
    let y = Tensor4::random_normal(
        Shape::new(2, 2, 6, 5),
        1.0,
        &mut ChaCha8Rng::seed_from_u64(2),
    );
    let expected = conv(&y, &p, "Wl").relu();
    for k in 1..=4 {
        assert_eq!(cista_graph(k).evaluate(&p, &[("y", &y)]).unwrap(), expected);
    }
}

#[test]
fn cista_block_matches_direct_recursion() {
    let p = cista_params(3, false);
    let y = Tensor4::random_normal(
        Shape::new(1, 2, 7, 6),
        1.0,
        &mut ChaCha8Rng::seed_from_u64(4),
    );
    for k in [1, 3] {
        let got = cista_graph(k).evaluate(&p, &[("y", &y)]).unwrap();
        assert_eq!(got, cista_direct(&y, &p, "S", k));
        assert!(got.data().iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn crneta_zero_params_is_identity() {
    let cfg = tiny_a(true);
    let mut m = Model::init(cfg.into(), 0).unwrap();
    for p in m.params.iter_mut() {
        p.tensor = Tensor4::zeros(p.tensor.shape());
    }
    let x = Tensor4::random_uniform(
        Shape::new(1, 1, 9, 7),
        0.0,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(5),
    );
    assert_eq!(m.forward(&x, 2).unwrap(), x);
}

#[test]
fn crneta_zero_head_is_identity_with_random_trunk() {
    let mut m = Model::init(tiny_a(true).into(), 6).unwrap();
    m.zero_residual_head().unwrap();
    let x = Tensor4::random_uniform(
        Shape::new(1, 1, 8, 8),
        0.0,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(7),
    );
    assert_eq!(m.forward(&x, 3).unwrap(), x);
}

#[test]
fn crneta_preserves_shape() {
    let m = Model::init(tiny_a(true).into(), 8).unwrap();
    for (h, w) in [(1, 1), (5, 9), (12, 3)] {
        let x = Tensor4::zeros(Shape::new(2, 1, h, w));
        assert_eq!(m.forward(&x, 2).unwrap().shape(), x.shape());
    }
    assert!(m
        .forward(&Tensor4::zeros(Shape::new(1, 3, 4, 4)), 2)
        .is_err());
}

#[test]
fn crneta_matches_direct_composition() {
    for residual in [true, false] {
        let cfg = tiny_a(residual);
        let m = Model::init(cfg.clone().into(), 9).unwrap();
        let x = Tensor4::random_uniform(
            Shape::new(1, 1, 8, 8),
            0.0,
            1.0,
            &mut ChaCha8Rng::seed_from_u64(10),
        );
        assert_eq!(
            m.forward(&x, 2).unwrap(),
            crneta_direct(&x, &m.params, &cfg)
        );
    }
}

#[test]
fn crneta_residual_decomposition_and_nonnegative_code() {
    let m = Model::init(tiny_a(true).into(), 11).unwrap();
    let x = Tensor4::random_uniform(
        Shape::new(2, 1, 8, 6),
        0.0,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(12),
    );
    let mg = m.graph(2).unwrap();
    let tape = mg.graph.forward(&m.params, &[(INPUT, &x)]).unwrap();
    let r = tape.value(mg.nodes.residual.unwrap());
    let out = tape.output();
    assert_eq!(out, &x.add(r).unwrap());
    assert!(out.sub(&x).unwrap().max_abs_diff(r).unwrap() <= 1e-15);
    assert!(tape.value(mg.nodes.code).data().iter().all(|&v| v >= 0.0));
}

#[test]
fn crnetb_output_dims() {
    let m = Model::init(tiny_b(vec![2, 3, 4]).into(), 13).unwrap();
    let x = Tensor4::random_uniform(
        Shape::new(1, 1, 5, 7),
        0.0,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(14),
    );
    for r in [2, 3, 4] {
        assert_eq!(
            m.forward(&x, r).unwrap().shape(),
            Shape::new(1, 1, 5 * r, 7 * r)
        );
    }
    assert!(matches!(m.forward(&x, 5), Err(crate::Error::Config(_))));
}

/// Centre-only 3×3 bank with the given 1×1 weights.
fn centre_bank(out: usize, inp: usize, weight: impl Fn(usize, usize) -> f64) -> Tensor4 {
    Tensor4::from_fn(Shape::new(out, inp, 3, 3), |o, c, i, j| {
        if i == 1 && j == 1 {
            weight(o, c)
        } else {
            0.0
        }
    })
}

#[test]
fn crnetb_constant_input_with_replicating_upsampler() {
    let cfg = CrnetBConfig {
        c: 3,
        ..tiny_b(vec![2, 3, 4])
    };
    let mut m = Model::init(cfg.clone().into(), 15).unwrap();
    for p in m.params.iter_mut() {
        p.tensor = Tensor4::zeros(p.tensor.shape());
    }
    let set = |m: &mut Model, name: &str, t: Tensor4| *m.params.tensor_mut(name).unwrap() = t;
    // head copies the colour channels into the first feature maps
    set(
        &mut m,
        "head",
        centre_bank(cfg.n0, 3, |o, c| f64::from(u8::from(o == c))),
    );
    // upsamplers send channel c to all r² sub-pixels of output channel c
    for r in [2, 3] {
        set(
            &mut m,
            &format!("up{r}"),
            centre_bank(3 * r * r, cfg.n0, |o, c| {
                f64::from(u8::from(o / (r * r) == c))
            }),
        );
    }
    set(
        &mut m,
        "up4_a",
        centre_bank(12, cfg.n0, |o, c| f64::from(u8::from(o / 4 == c))),
    );
    set(
        &mut m,
        "up4_b",
        centre_bank(12, 3, |o, c| f64::from(u8::from(o / 4 == c))),
    );
    set(
        &mut m,
        "tail",
        centre_bank(3, 3, |o, c| f64::from(u8::from(o == c))),
    );

    let colour = [0.2, 0.5, 0.9];
    let x = Tensor4::from_fn(Shape::new(1, 3, 4, 5), |_, c, _, _| colour[c]);
    for r in [2, 3, 4] {
        let y = m.forward(&x, r).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 3, 4 * r, 5 * r));
        for (c, &level) in colour.iter().enumerate() {
            assert!(y.channel(c).data().iter().all(|&v| v == level));
        }
    }
}

#[test]
fn crnetb_matches_direct_composition() {
    let cfg = tiny_b(vec![2, 4]);
    let m = Model::init(cfg.clone().into(), 16).unwrap();
    let p = &m.params;
    let x = Tensor4::random_uniform(
        Shape::new(1, 1, 5, 6),
        0.0,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(17),
    );
    for r in [2, 4] {
        let h = conv(&x, p, "head");
        let unit = conv(
            &conv(&h.relu(), p, &format!("pre{r}_a")).relu(),
            p,
            &format!("pre{r}_b"),
        );
        let pre = h.add(&unit).unwrap();
        let y = conv(&conv(&pre, p, "F0").relu(), p, "F1").relu();
        let z = cista_direct(&y, p, "S", cfg.k);
        let t = pre.add(&conv(&conv(&z, p, "Wh").relu(), p, "H")).unwrap();
        let u = if r == 4 {
            let u = pixel_shuffle(&conv(&t, p, "up4_a"), 2).unwrap();
            pixel_shuffle(&conv(&u, p, "up4_b"), 2).unwrap()
        } else {
            pixel_shuffle(&conv(&t, p, "up2"), 2).unwrap()
        };
        let expected = conv(&u, p, "tail");
        assert_eq!(m.forward(&x, r).unwrap(), expected);
    }
}

#[test]
fn init_is_deterministic_per_seed() {
    let cfg: ModelConfig = tiny_a(true).into();
    assert_eq!(
        init_params(&cfg, 42).unwrap(),
        init_params(&cfg, 42).unwrap()
    );
    assert_ne!(
        init_params(&cfg, 42).unwrap(),
        init_params(&cfg, 43).unwrap()
    );
}

#[test]
fn init_variance_follows_fan_in() {
    // F0 is n0×c×s×s with fan-in c·s² = 9: variance 2/9.
    let cfg: ModelConfig = CrnetAConfig {
        n0: 4096,
        m0: 1,
        ..CrnetAConfig::tiny(1, 1, 1)
    }
    .into();
    let p = init_params(&cfg, 7).unwrap();
    let f0 = p.tensor("F0").unwrap();
    let n = f0.len() as f64;
    let mean = f0.sum() / n;
    let var = f0
        .data()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n - 1.0);
    let expected = 2.0 / 9.0;
    assert!((var - expected).abs() / expected < 0.2, "variance {var}");
}

#[test]
fn default_parameter_count() {
    let cfg = CrnetAConfig::default();
    assert_eq!(cfg.closed_form_param_count(), 1_329_408);
    let m = Model::init(cfg.clone().into(), 0).unwrap();
    assert_eq!(m.num_parameters(), cfg.closed_form_param_count());
    for k in [1, 5, 40] {
        let other = Model::init(CrnetAConfig { k, ..cfg.clone() }.into(), 0).unwrap();
        let shapes: Vec<_> = other
            .params
            .iter()
            .map(|p| (p.name.clone(), p.tensor.shape()))
            .collect();
        let base: Vec<_> = m
            .params
            .iter()
            .map(|p| (p.name.clone(), p.tensor.shape()))
            .collect();
        assert_eq!(shapes, base);
    }
}

#[test]
fn deeper_recursion_only_grows_the_graph() {
    let a = Model::init(tiny_a(true).into(), 1).unwrap();
    let b = Model::init(
        CrnetAConfig {
            k: 6,
            ..tiny_a(true)
        }
        .into(),
        1,
    )
    .unwrap();
    assert_eq!(a.params, b.params);
    assert!(b.graph(2).unwrap().graph.len() > a.graph(2).unwrap().graph.len());
}

fn loss_graph(m: &Model, scale: usize) -> Graph {
    let mut mg = m.graph(scale).unwrap();
    let t = mg.graph.input("target");
    let loss = mg.graph.mse_loss(mg.nodes.output, t);
    mg.graph.set_output(loss);
    mg.graph
}

#[test]
fn tiny_models_pass_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let a = Model::init(tiny_a(true).into(), 19).unwrap();
    let x = Tensor4::random_uniform(Shape::new(1, 1, 8, 8), 0.0, 1.0, &mut rng);
    let t = Tensor4::random_uniform(Shape::new(1, 1, 8, 8), 0.0, 1.0, &mut rng);
    let report = grad_check(
        &loss_graph(&a, 2),
        &a.params,
        &[(INPUT, &x), ("target", &t)],
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.params.len(), 6);

    let b = Model::init(tiny_b(vec![2]).into(), 20).unwrap();
    let x = Tensor4::random_uniform(Shape::new(1, 1, 4, 4), 0.0, 1.0, &mut rng);
    let t = Tensor4::random_uniform(Shape::new(1, 1, 8, 8), 0.0, 1.0, &mut rng);
    let report = grad_check(
        &loss_graph(&b, 2),
        &b.params,
        &[(INPUT, &x), ("target", &t)],
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn shared_gradient_is_sum_of_unshared_copies() {
    let cfg = CrnetAConfig::tiny(2, 3, 3);
    let m = Model::init(cfg.clone().into(), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = Tensor4::random_uniform(Shape::new(1, 1, 6, 6), 0.0, 1.0, &mut rng);
    let t = Tensor4::random_uniform(Shape::new(1, 1, 6, 6), 0.0, 1.0, &mut rng);
    let inputs = [(INPUT, &x), ("target", &t)];

    let shared = loss_graph(&m, 2)
        .forward(&m.params, &inputs)
        .unwrap()
        .backward()
        .unwrap();

    let mut g = Graph::new();
    let xi = g.input(INPUT);
    let nodes = build_crneta_unshared(&mut g, &cfg, xi).unwrap();
    let ti = g.input("target");
    let loss = g.mse_loss(nodes.output, ti);
    g.set_output(loss);
    let copies = unshare_recurrent_weights(&m.params, cfg.k).unwrap();
    let unshared = g.forward(&copies, &inputs).unwrap().backward().unwrap();

    let mut sum = Tensor4::zeros(m.params.tensor("S").unwrap().shape());
    for i in 0..cfg.k {
        sum.add_assign(unshared.get(&format!("S#{i}")).unwrap())
            .unwrap();
    }
    assert!(shared.get("S").unwrap().max_abs_diff(&sum).unwrap() <= 1e-12);
    assert_eq!(shared.get("F0"), unshared.get("F0"));
}

#[test]
fn config_round_trips_through_kv() {
    for cfg in [
        ModelConfig::A(tiny_a(false)),
        ModelConfig::B(tiny_b(vec![2, 4])),
    ] {
        let text = cfg.to_kv().to_string();
        assert_eq!(
            ModelConfig::from_kv(&KvMap::parse(&text).unwrap()).unwrap(),
            cfg
        );
    }
    let kv = KvMap::parse("model = crnet-b\nscales = 4, 2, 2").unwrap();
    match ModelConfig::from_kv(&kv).unwrap() {
        ModelConfig::B(b) => assert_eq!(b.scales, vec![2, 4]),
        other => panic!("{other:?}"),
    }
    assert!(ModelConfig::from_kv(&KvMap::parse("model = crnet-b\nscales = 5").unwrap()).is_err());
    assert!(ModelConfig::from_kv(&KvMap::parse("model = crnet-a\ns = 2").unwrap()).is_err());
    assert!(ModelConfig::from_kv(&KvMap::parse("model = crnet-a\nk = 0").unwrap()).is_err());
}

#[test]
fn from_parts_validates_shapes() {
    let m = Model::init(tiny_a(true).into(), 23).unwrap();
    assert!(Model::from_parts(m.config.clone(), m.params.clone()).is_ok());
    let mut bad = m.params.clone();
    bad.insert("S", Tensor4::zeros(Shape::new(2, 2, 3, 3)));
    assert!(Model::from_parts(m.config.clone(), bad).is_err());
    let mut extra = m.params.clone();
    extra.insert("junk", Tensor4::scalar(1.0));
    assert!(Model::from_parts(m.config.clone(), extra).is_err());

    let typed = CrnetAParams::from_store(&m.params).unwrap();
    assert_eq!(typed.s.out_channels(), 3);
    assert_eq!(typed.into_store(), m.params);
}
