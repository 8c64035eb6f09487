use super::*;
use crate::dataset::{build_training_set, synth_corpus, SynthConfig};
use crate::nn::gradcheck::GradCheckConfig;
use crate::types::{ModelConfig, WindowRole};

fn window(end: usize, role: WindowRole) -> WindowSample {
    let label = if role == WindowRole::Background { 3 } else { 1 };
    WindowSample::new("v", end, end as f64, vec![end as f64, 0.0], label, role).unwrap()
}

#[test]
fn adaptive_batch_is_half_starts() {
    let starts: Vec<WindowSample> = (0..5).map(|i| window(i, WindowRole::Start)).collect();
    let others: Vec<WindowSample> = (10..30).map(|i| window(i, WindowRole::Background)).collect();
    let s: Vec<&WindowSample> = starts.iter().collect();
    let o: Vec<&WindowSample> = others.iter().collect();
    let mut rng = stream_rng(3, 0);
    for n in [4, 6, 32] {
        for _ in 0..50 {
            let b = adaptive_sample_batch(&mut rng, &s, &o, n).unwrap();
            assert_eq!(b.len(), n);
            assert_eq!(b.iter().filter(|w| w.role() == WindowRole::Start).count(), n / 2);
        }
    }
}

#[test]
fn single_start_fills_half_the_batch() {
    let one = window(0, WindowRole::Start);
    let other = window(5, WindowRole::Inside);
    let b = adaptive_sample_batch(&mut stream_rng(0, 0), &[&one], &[&other], 8).unwrap();
    assert_eq!(b.iter().filter(|w| w.end_frame() == 0).count(), 4);
}

#[test]
fn adaptive_batch_errors() {
    let w = window(0, WindowRole::Start);
    let mut rng = stream_rng(0, 0);
    assert!(matches!(adaptive_sample_batch(&mut rng, &[], &[&w], 4), Err(Error::Data(_))));
    assert!(matches!(adaptive_sample_batch(&mut rng, &[&w], &[], 4), Err(Error::Data(_))));
    assert!(adaptive_sample_batch(&mut rng, &[&w], &[&w], 5).is_err());
}

#[test]
fn adaptive_batch_order_is_shuffled() {
    let starts: Vec<WindowSample> = (0..4).map(|i| window(i, WindowRole::Start)).collect();
    let others: Vec<WindowSample> = (10..14).map(|i| window(i, WindowRole::Background)).collect();
    let s: Vec<&WindowSample> = starts.iter().collect();
    let o: Vec<&WindowSample> = others.iter().collect();
    let mut rng = stream_rng(1, 0);
    let interleaved = (0..20).any(|_| {
        let b = adaptive_sample_batch(&mut rng, &s, &o, 8).unwrap();
        b[0].role() != WindowRole::Start
    });
    assert!(interleaved);
}

#[test]
fn start_frequencies_are_uniform() {
    // each of m starts is drawn with p = 1/m per slot; counts are binomial
    let m = 7;
    let starts: Vec<WindowSample> = (0..m).map(|i| window(i, WindowRole::Start)).collect();
    let other = window(99, WindowRole::Background);
    let s: Vec<&WindowSample> = starts.iter().collect();
    let mut rng = stream_rng(11, 0);
    let (batches, n) = (100_000, 4);
    let mut counts = vec![0usize; m];
    for _ in 0..batches {
        for w in adaptive_sample_batch(&mut rng, &s, &[&other], n).unwrap() {
            if w.role() == WindowRole::Start {
                counts[w.end_frame()] += 1;
            }
        }
    }
    let draws = (batches * n / 2) as f64;
    let p = 1.0 / m as f64;
    let sigma = (draws * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - draws * p).abs() <= 3.0 * sigma, "count {c}");
    }
}

#[test]
fn methods_parse_and_print() {
    assert_eq!("".parse::<Methods>().unwrap(), Methods::NONE);
    assert_eq!("adaptive,tc,gan".parse::<Methods>().unwrap(), Methods::ALL);
    let m: Methods = " gan , adaptive".parse().unwrap();
    assert!(m.adaptive && m.gan && !m.temporal_consistency);
    assert_eq!(m.to_string(), "adaptive,gan");
    assert_eq!(Methods::NONE.to_string(), "none");
    for m in Methods::ablation_grid() {
        assert_eq!(m.to_string().parse::<Methods>().unwrap(), m);
    }
    assert!("dropout".parse::<Methods>().is_err());
}

#[test]
fn methods_apply_switches() {
    let cfg = TrainConfig::default();
    let off = Methods::NONE.apply(&cfg);
    assert_eq!(off.sampling, Sampling::Uniform);
    assert_eq!(off.lambda, 0.0);
    assert_eq!(off.gan_iters, 0);
    assert_eq!(Methods::ALL.apply(&cfg), cfg);
}

#[test]
fn train_config_json() {
    let text = r#"{"batch_size": 8, "lr_pretrain": 0.1, "lr_generator": 0.01,
        "lr_discriminator": 0.02, "pretrain_iters": 10, "gan_iters": 5}"#;
    let cfg: TrainConfig = serde_json::from_str(text).unwrap();
    assert_eq!(cfg.lambda, 1.0);
    assert_eq!(cfg.momentum, 0.9);
    assert_eq!(cfg.sampling, Sampling::Adaptive);
    let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert!(serde_json::from_str::<TrainConfig>(r#"{"batch_size": 8, "typo": 1}"#).is_err());
}

#[test]
fn train_config_validation() {
    let ok = TrainConfig::default();
    assert!(ok.validate().is_ok());
    for bad in [
        TrainConfig { batch_size: 6 + 1, ..ok.clone() },
        TrainConfig { batch_size: 2, ..ok.clone() },
        TrainConfig { lr_pretrain: 0.0, ..ok.clone() },
        TrainConfig { lr_generator: -1.0, ..ok.clone() },
        TrainConfig { momentum: 1.0, ..ok.clone() },
        TrainConfig { lambda: f64::NAN, ..ok.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}

fn small_setup(seed: u64) -> (ModelConfig, TrainingSet) {
    let mut sc = SynthConfig::new(seed, 3, 8, 6);
    sc.separation = 6.0;
    let s = synth_corpus(&sc).unwrap();
    let mut mc = ModelConfig::new(3, 8, 16);
    mc.noise_dim = 8;
    mc.gen_hidden_dim = 16;
    let set = build_training_set(&s.corpus, &mc).unwrap();
    (mc, set)
}

fn quick_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        lr_pretrain: 0.01,
        lr_generator: 0.005,
        lr_discriminator: 0.005,
        pretrain_iters: 60,
        gan_iters: 30,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_lambda_is_plain_classification() {
    let (mc, set) = small_setup(1);
    let mut cfg = quick_cfg(5);
    cfg.lambda = 0.0;
    let init = Discriminator::new(&mc, &mut stream_rng(5, 0));

    let mut a = init.clone();
    let log = pretrain(&mut a, &set, &cfg).unwrap();
    assert!(log.iter().all(|r| r.sim.is_none()));

    let mut b = init;
    let starts = set.starts();
    let others = set.non_starts();
    let mut rng = stream_rng(cfg.seed, STREAM_PRETRAIN_BATCH);
    let sgd = Sgd::new(cfg.lr_pretrain, cfg.momentum);
    for _ in 0..cfg.pretrain_iters {
        let batch = adaptive_sample_batch(&mut rng, &starts, &others, cfg.batch_size).unwrap();
        classification_loss(&mut b, &batch).unwrap();
        sgd.step(&mut b).unwrap();
    }
    assert_eq!(a.param_vector(), b.param_vector());
}

#[test]
fn pretrain_is_deterministic() {
    let (mc, set) = small_setup(2);
    let cfg = quick_cfg(9);
    let run = || {
        let mut d = Discriminator::new(&mc, &mut stream_rng(9, 0));
        let log = pretrain(&mut d, &set, &cfg).unwrap();
        (d.param_vector(), log)
    };
    let (pa, la) = run();
    let (pb, lb) = run();
    assert_eq!(pa, pb);
    assert_eq!(la, lb);
    assert!(la.iter().all(|r| r.cls.is_some() && r.sim.is_some()));
}

#[test]
fn pretrain_separates_easy_corpus() {
    let (mc, set) = small_setup(3);
    let cfg = TrainConfig {
        pretrain_iters: 2000,
        batch_size: 32,
        lambda: 0.0,
        sampling: Sampling::Uniform,
        ..quick_cfg(4)
    };
    let (mut d, _) = init_networks(&mc, &set, 4).unwrap();
    pretrain(&mut d, &set, &cfg).unwrap();
    // start windows mix background in, so judge the unmixed windows
    let clean: Vec<&WindowSample> = set
        .samples
        .iter()
        .filter(|s| s.role() != WindowRole::Start)
        .collect();
    let acc = accuracy(&d, &clean).unwrap();
    assert!(acc >= 0.95, "accuracy {acc}");
}

#[test]
fn zero_gan_iterations_leave_networks_alone() {
    let (mc, set) = small_setup(4);
    let mut rng = stream_rng(0, 0);
    let mut d = Discriminator::new(&mc, &mut rng);
    let mut g = Generator::new(&mc, &mut rng);
    let (d0, g0) = (d.param_vector(), g.param_vector());
    let cfg = TrainConfig { gan_iters: 0, ..quick_cfg(0) };
    assert!(train_gan(&mut g, &mut d, &set, &cfg).unwrap().is_empty());
    assert_eq!(d.param_vector(), d0);
    assert_eq!(g.param_vector(), g0);
}

#[test]
fn gan_steps_touch_only_their_network() {
    let (mc, set) = small_setup(5);
    let mut rng = stream_rng(1, 0);
    let mut d = Discriminator::new(&mc, &mut rng);
    let mut g = Generator::new(&mc, &mut rng);
    let starts = set.starts();
    let batch: Vec<&WindowSample> = set.samples.iter().take(8).collect();
    let noise = sample_noise(&mut rng, 4, mc.noise_dim);
    let sgd = Sgd::new(0.1, 0.9);

    let d_before = d.param_vector();
    let g_before = g.param_vector();
    // a G step is the matching loss plus an update of G alone
    matching_loss(&mut g, &mut d, &starts[..4], &noise).unwrap();
    assert!(d.grad_vector().iter().all(|v| *v == 0.0));
    sgd.step(&mut g).unwrap();
    assert_eq!(d.param_vector(), d_before);
    assert_ne!(g.param_vector(), g_before);

    let g_before = g.param_vector();
    let d_before = d.param_vector();
    discriminator_loss(&mut g, &mut d, &batch, &[], &noise, 1.0).unwrap();
    assert!(g.grad_vector().iter().all(|v| *v == 0.0));
    sgd.step(&mut d).unwrap();
    assert_eq!(g.param_vector(), g_before);
    assert_ne!(d.param_vector(), d_before);
}

#[test]
fn matching_loss_falls_during_gan_training() {
    let (mc, set) = small_setup(6);
    let cfg = TrainConfig {
        pretrain_iters: 300,
        gan_iters: 300,
        lambda: 0.1,
        ..quick_cfg(2)
    };
    let (mut d, mut g) = init_networks(&mc, &set, 2).unwrap();
    pretrain(&mut d, &set, &cfg).unwrap();
    let log = train_gan(&mut g, &mut d, &set, &cfg).unwrap();
    assert_eq!(log.len(), 300);
    assert_eq!(log[0].iter, 300);
    let m: Vec<f64> = log.iter().map(|r| r.matching.unwrap()).collect();
    let mean = m.iter().sum::<f64>() / m.len() as f64;
    assert!(mean < m[0], "first {} mean {mean}", m[0]);
    for r in &log {
        assert!(r.real.unwrap() >= 0.0 && r.fake.unwrap() >= 0.0);
        assert!(r.sim.unwrap() >= 0.0 && r.matching.unwrap() >= 0.0);
    }
}

#[test]
fn divergence_names_the_iteration() {
    let (mc, set) = small_setup(7);
    let cfg = TrainConfig {
        lr_pretrain: 1e300,
        pretrain_iters: 20,
        ..quick_cfg(0)
    };
    let mut d = Discriminator::new(&mc, &mut stream_rng(0, 0));
    match pretrain(&mut d, &set, &cfg) {
        Err(Error::Divergence { location }) => assert!(location.contains("pretrain iteration"), "{location}"),
        other => panic!("expected divergence, got ok={}", other.is_ok()),
    }
}

#[test]
fn every_loss_passes_gradient_check() {
    for seed in 0..3 {
        for c in check_all_losses(seed, &GradCheckConfig::default()).unwrap() {
            assert!(c.passed(), "seed {seed} {}: {:?}", c.loss, c.report.worst);
            assert!(c.report.checked > 0);
        }
    }
}

#[test]
fn injected_fault_is_detected_in_every_loss() {
    let gc = GradCheckConfig {
        inject_fault: Some(0),
        ..GradCheckConfig::default()
    };
    for c in check_all_losses(0, &gc).unwrap() {
        assert!(!c.report.passed(), "{} missed the fault", c.loss);
    }
}

#[test]
fn loss_log_layout() {
    let recs = [
        LossRecord {
            iter: 0,
            cls: Some(1.5),
            sim: None,
            ..LossRecord::default()
        },
        LossRecord {
            iter: 1,
            matching: Some(0.25),
            real: Some(1.0),
            fake: Some(2.0),
            ..LossRecord::default()
        },
    ];
    let mut out = Vec::new();
    write_loss_log(&mut out, &recs).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iter,loss_cls,loss_sim,loss_match,loss_real,loss_fake");
    assert_eq!(lines[1], "0,1.50000000,,,,");
    assert_eq!(lines[2], "1,,,0.25000000,1.00000000,2.00000000");
}

#[test]
fn argmax_prefers_lowest_index() {
    assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
    assert_eq!(argmax(&[1.0]), 0);
}
