//! End-to-end acceptance suite. Each test prints a single PASS/FAIL line
//! for its criterion (run with `--nocapture` to see PASS lines).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use pops::datagen::{derive_seed, toy_dataset, ToyOracle};
use pops::embedding::{cosine, Embedding, EmbeddingBatch, SpaceTag};
use pops::metrics::{
    aggregate, text_similarity, to_csv, EvalRecord, REFERENCE_SCENE_IMAGE_SIM,
    REFERENCE_SCENE_SENTENCE_SIM, REFERENCE_SCENE_TEXT_SIM,
};
use pops::ops::{builtin_spec, loss_and_grad, LossKind, OperatorName, DEFAULT_INSTRUCT_LAMBDA};
use pops::prior::{
    build_sequence, FreezePolicy, PriorConfig, PriorNet, CONDITION_SLOTS, OUTPUT_INDEX, SEQ_LEN,
};
use pops::schedule::{cfg_combine, sample, GuidanceConfig, NoiseSchedule, SampleConfig};
use pops::trainer::{TrainConfig, Trainer};
use pops::tree::{self, ApplyNode, Expr, TreeProgram};
use pops::Error;

fn report(name: &str, ok: bool, detail: &str) {
    println!("{name} {}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name} failed: {detail}");
}

fn random_embedding(rng: &mut ChaCha8Rng, d: usize, tag: SpaceTag) -> Embedding {
    let v: Vec<f32> = (0..d)
        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
        .collect();
    Embedding::new(v, tag).unwrap()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// A1: the toy midpoint operator is learnable at desk scale.
#[test]
fn a1_toy_operator_learnability() {
    let d = 16;
    let train = toy_dataset(&ToyOracle::Midpoint, d, 512, 100).unwrap();
    let held_out = toy_dataset(&ToyOracle::Midpoint, d, 256, 999).unwrap();

    let net = PriorNet::init(&PriorConfig::toy(d), 0).unwrap();
    let schedule = NoiseSchedule::linear(1000);
    let mut config = TrainConfig::toy(0);
    config.log_every = 1000;
    let mut trainer = Trainer::new(
        net,
        schedule,
        builtin_spec(OperatorName::Union),
        FreezePolicy::All,
        config,
    )
    .unwrap();
    trainer.fit(&train, 4000, None, None).unwrap();

    let sample_config = |seed| SampleConfig {
        steps: 25,
        guidance: GuidanceConfig { scale: 1.0, ..GuidanceConfig::default() },
        seed,
        renorm_to: None,
    };
    let mut cosines: Vec<f64> = held_out
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let out = sample(
                trainer.net(),
                trainer.schedule(),
                &s.conditions,
                &sample_config(i as u64),
            )
            .unwrap();
            cosine(&out, &s.target).unwrap()
        })
        .collect();
    let med = median(&mut cosines);
    report(
        "A1",
        med >= 0.95,
        &format!("median held-out cosine {med:.4} (>= 0.95, 256 pairs, 4000 steps)"),
    );
}

/// A2: forward noising inverts exactly in full precision.
#[test]
fn a2_scheduler_inversion() {
    let schedule = NoiseSchedule::linear(1000);
    let d = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let e0: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let t = rng.gen_range(0..1000);
        let x_t = schedule.forward_noise_f64(&e0, t, &eps).unwrap();
        let ab = schedule.alpha_bar(t);
        for ((x, e), n) in x_t.iter().zip(&e0).zip(&eps) {
            let recovered = (x - (1.0 - ab).sqrt() * n) / ab.sqrt();
            worst = worst.max((recovered - e).abs());
        }
    }
    report("A2", worst <= 1e-5, &format!("max abs inversion error {worst:.2e} (<= 1e-5)"));
}

/// A3: guidance identities hold exactly.
#[test]
fn a3_cfg_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ok = true;
    for _ in 0..1000 {
        let a = random_embedding(&mut rng, 8, SpaceTag::Image);
        let b = random_embedding(&mut rng, 8, SpaceTag::Image);
        ok &= cfg_combine(&a, &b, 1.0).unwrap().values() == b.values();
        for s in [0.0, 0.5, 1.0, 4.0] {
            ok &= cfg_combine(&a, &a, s).unwrap().values() == a.values();
        }
    }
    report("A3", ok, "cfg(a,b,1)=b and cfg(a,a,s)=a exact for 1000 instances, s in {0,0.5,1,4}");
}

/// A4: the 79-token layout contract holds for every builtin operator.
#[test]
fn a4_token_layout_contract() {
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ok = OUTPUT_INDEX == 78 && SEQ_LEN == 79;
    for name in [
        OperatorName::Texturing,
        OperatorName::Scene,
        OperatorName::Union,
        OperatorName::Instruct,
        OperatorName::Composition,
        OperatorName::Identity,
    ] {
        let spec = builtin_spec(name);
        let conditions: Vec<(usize, Embedding)> = spec
            .slot_map
            .entries()
            .iter()
            .map(|e| (e.slot, random_embedding(&mut rng, d, e.space)))
            .collect();
        let noised = random_embedding(&mut rng, d, SpaceTag::Image);
        let seq = build_sequence(&conditions, 5, &noised).unwrap();
        ok &= seq.len() == 79;
        let assigned: Vec<usize> = conditions.iter().map(|(s, _)| *s).collect();
        for slot in 0..CONDITION_SLOTS {
            if !assigned.contains(&slot) {
                ok &= seq.slots()[slot].norm() == 0.0;
            }
        }
        if name == OperatorName::Composition {
            ok &= assigned == (0..12).collect::<Vec<_>>();
        }
    }
    report("A4", ok, "79 tokens, zero unassigned slots, output at 78, composition slots 0..11");
}

fn finite_difference_check(loss: &LossKind, with_text: bool) -> (f64, usize) {
    let d = 8;
    let config = PriorConfig::toy(d);
    let net = PriorNet::init(&config, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let conditions = vec![
        (0, random_embedding(&mut rng, d, SpaceTag::Image)),
        (1, random_embedding(&mut rng, d, SpaceTag::Image)),
    ];
    let noised = random_embedding(&mut rng, d, SpaceTag::Image);
    let target: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let e_text: Option<Vec<f64>> =
        with_text.then(|| (0..d).map(|_| rng.sample(StandardNormal)).collect());
    let t = 17;

    let eval = |params: Vec<f64>| -> f64 {
        let n = PriorNet::from_flat(&config, params).unwrap();
        let seq = build_sequence(&conditions, t, &noised).unwrap();
        let (pred, _) = n.forward(&seq).unwrap();
        loss_and_grad(loss, &pred, &target, e_text.as_deref()).unwrap().0
    };

    let seq = build_sequence(&conditions, t, &noised).unwrap();
    let (pred, cache) = net.forward(&seq).unwrap();
    let (_, dpred) = loss_and_grad(loss, &pred, &target, e_text.as_deref()).unwrap();
    let analytic = net.backward(&cache, &dpred);

    let n_params = net.n_params();
    let h = 1e-3;
    let mut checked = 0;
    let mut worst_rel: f64 = 0.0;
    let mut tries = 0;
    while checked < 10 && tries < 200 {
        tries += 1;
        let i = rng.gen_range(0..n_params);
        if analytic[i].abs() < 1e-8 {
            continue;
        }
        let mut plus = net.data().to_vec();
        plus[i] += h;
        let mut minus = net.data().to_vec();
        minus[i] -= h;
        let numeric = (eval(plus) - eval(minus)) / (2.0 * h);
        let rel = (numeric - analytic[i]).abs() / analytic[i].abs().max(numeric.abs());
        worst_rel = worst_rel.max(rel);
        checked += 1;
    }
    (worst_rel, checked)
}

/// A5: analytic gradients match central finite differences for both
/// training losses.
#[test]
fn a5_gradient_correctness() {
    let (mse_rel, mse_n) = finite_difference_check(&LossKind::MseOnly, false);
    let (sim_rel, sim_n) = finite_difference_check(
        &LossKind::MsePlusSimilarity { lambda: DEFAULT_INSTRUCT_LAMBDA, raw_dot: false },
        true,
    );
    let ok = mse_rel <= 1e-4 && sim_rel <= 1e-4 && mse_n == 10 && sim_n == 10;
    report(
        "A5",
        ok,
        &format!(
            "max rel error mse {mse_rel:.2e}, mse+sim {sim_rel:.2e} (<= 1e-4, 10 params each)"
        ),
    );
}

fn run_cli(parts: &[&str]) -> i32 {
    let mut args = vec!["pops".to_string()];
    args.extend(parts.iter().map(|s| s.to_string()));
    pops::cli::run_with_args(&args)
}

/// A6: CLI sampling and tree evaluation are bit-deterministic.
#[test]
fn a6_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ckpt = dir.path().join("op.ckpt");
    assert_eq!(
        run_cli(&[
            "datagen", "--toy-oracle", "midpoint", "--dim", "8", "--n", "8",
            "--out", data.to_str().unwrap(),
        ]),
        0
    );
    assert_eq!(
        run_cli(&[
            "train", "--data", data.to_str().unwrap(), "--out", ckpt.to_str().unwrap(),
            "--steps", "3", "--batch-size", "2", "--timesteps", "50",
        ]),
        0
    );

    let emb = data.join("embeddings.pops");
    let sample_to = |out: &Path| {
        assert_eq!(
            run_cli(&[
                "sample", "--ckpt", ckpt.to_str().unwrap(),
                "--condition", &format!("0={}", emb.display()),
                "--condition", &format!("1={}#1", emb.display()),
                "--seed", "7", "--steps", "10", "--out", out.to_str().unwrap(),
            ]),
            0
        );
    };
    let s1 = dir.path().join("s1.pops");
    let s2 = dir.path().join("s2.pops");
    sample_to(&s1);
    sample_to(&s2);
    let sample_ok = std::fs::read(&s1).unwrap() == std::fs::read(&s2).unwrap();

    let program = dir.path().join("tree.sexp");
    std::fs::write(
        &program,
        "(let a (union (text \"x\") (text \"y\")))\n(union a (text \"z\"))\n",
    )
    .unwrap();
    let compose_to = |out: &Path| {
        assert_eq!(
            run_cli(&[
                "compose", "--program", program.to_str().unwrap(),
                "--ckpt", ckpt.to_str().unwrap(),
                "--seed", "9", "--steps", "10", "--out", out.to_str().unwrap(),
            ]),
            0
        );
    };
    let c1 = dir.path().join("c1.pops");
    let c2 = dir.path().join("c2.pops");
    compose_to(&c1);
    compose_to(&c2);
    let compose_ok = std::fs::read(&c1).unwrap() == std::fs::read(&c2).unwrap();

    report(
        "A6",
        sample_ok && compose_ok,
        "sample and compose outputs bit-identical across reruns with fixed seeds",
    );
}

fn random_tree(rng: &mut ChaCha8Rng, depth: usize) -> Expr {
    if depth == 0 || rng.gen::<f64>() < 0.4 {
        return match rng.gen_range(0..3) {
            0 => Expr::Image(format!("img{}.png", rng.gen_range(0..100))),
            1 => Expr::Text(format!("prompt {} \"quoted\"", rng.gen_range(0..100))),
            _ => Expr::Emb(format!("bank.pops#{}", rng.gen_range(0..32))),
        };
    }
    let ops = [
        OperatorName::Union,
        OperatorName::Texturing,
        OperatorName::Scene,
        OperatorName::Instruct,
        OperatorName::Composition,
        OperatorName::Identity,
    ];
    let operator = ops[rng.gen_range(0..ops.len())];
    let n_children = rng.gen_range(0..3);
    let children = (0..n_children)
        .map(|_| {
            let slot = rng.gen::<bool>().then(|| rng.gen_range(0..12));
            (slot, random_tree(rng, depth - 1))
        })
        .collect();
    Expr::Apply(ApplyNode {
        operator,
        children,
        seed: rng.gen::<bool>().then(|| rng.gen()),
        scale: rng.gen::<bool>().then(|| f64::from(rng.gen_range(0..80)) / 8.0),
    })
}

/// A7: serialization round-trips and malformed inputs report the right
/// source location.
#[test]
fn a7_dsl_roundtrip_and_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut roundtrip_ok = true;
    for _ in 0..50 {
        let program = TreeProgram { bindings: vec![], root: random_tree(&mut rng, 3) };
        let reparsed = tree::parse(&program.serialize()).unwrap();
        roundtrip_ok &= reparsed == program;
    }

    let malformed: [(&str, usize, usize); 20] = [
        ("(bogus)", 1, 2),
        ("(union (text \"a\")\n  (bogus))", 2, 4),
        (")", 1, 1),
        ("(union))", 1, 8),
        ("(image foo)", 1, 8),
        ("(text)", 1, 6),
        ("\"abc", 1, 5),
        ("(union :seed x)", 1, 14),
        ("(union :scale ())", 1, 15),
        ("(union :wat 3)", 1, 8),
        ("(let a)", 1, 7),
        ("(let (x) (text \"t\"))", 1, 6),
        ("(text \"x\") (let a (text \"y\"))", 1, 12),
        ("(let a (text \"x\"))", 1, 18),
        ("", 1, 1),
        ("(slot 1 (text \"x\"))", 1, 2),
        ("(union (slot x (text \"a\")) (text \"b\"))", 1, 14),
        ("(texturing (text \"a\") :seed)", 1, 28),
        ("(union (text \"a b)", 1, 19),
        ("(union\n (emb 3))", 2, 7),
    ];
    let mut errors_ok = true;
    for (src, line, col) in malformed {
        match tree::parse(src) {
            Err(Error::Parse { line: l, col: c, .. }) if l == line && c == col => {}
            other => {
                eprintln!("A7 case {src:?}: expected Parse at {line}:{col}, got {other:?}");
                errors_ok = false;
            }
        }
    }
    report(
        "A7",
        roundtrip_ok && errors_ok,
        "50 random programs round-trip; 20 malformed inputs report exact line:col",
    );
}

/// A8: checkpoint save/load resume equals uninterrupted training.
#[test]
fn a8_checkpoint_resumability() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("resume.ckpt");
    let d = 8;
    let ds = toy_dataset(&ToyOracle::Midpoint, d, 16, 8).unwrap();
    let make = || {
        let net = PriorNet::init(&PriorConfig::toy(d), 8).unwrap();
        let mut config = TrainConfig::toy(8);
        config.batch_size = 4;
        config.log_every = 0;
        Trainer::new(
            net,
            NoiseSchedule::linear(100),
            builtin_spec(OperatorName::Union),
            FreezePolicy::All,
            config,
        )
        .unwrap()
    };

    let mut uninterrupted = make();
    for _ in 0..15 {
        uninterrupted.train_step(&ds).unwrap();
    }

    let mut first_leg = make();
    for _ in 0..5 {
        first_leg.train_step(&ds).unwrap();
    }
    first_leg.save(&path).unwrap();
    let mut resumed = Trainer::load(&path).unwrap();
    for _ in 0..10 {
        resumed.train_step(&ds).unwrap();
    }

    let ok = resumed.net().data() == uninterrupted.net().data();
    report("A8", ok, "save -> load -> 10 steps equals uninterrupted run bit-for-bit");
}

/// A9: null-input sampling is diverse but stays in the data's norm range.
#[test]
fn a9_null_input_sampling() {
    let d = 16;
    let train = toy_dataset(&ToyOracle::FirstArg, d, 256, 90).unwrap();
    let mean_norm = train.mean_target_norm();

    let net = PriorNet::init(&PriorConfig::toy(d), 9).unwrap();
    let mut config = TrainConfig::toy(9);
    config.log_every = 0;
    // Heavier condition dropping than the texturing default so the
    // null-slot-0 regime gets enough gradient signal at desk scale:
    // with slot 0 absent the target is unpredictable and the optimal
    // prediction tracks the noised token, which is what produces
    // seed-to-seed diversity.
    config.drop_override = Some(pops::ops::DropConfig { p_drop: 0.2, per_slot: Some(0.5) });
    let mut trainer = Trainer::new(
        net,
        NoiseSchedule::linear(1000),
        builtin_spec(OperatorName::Texturing),
        FreezePolicy::All,
        config,
    )
    .unwrap();
    trainer.fit(&train, 2000, None, None).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let fixed_b = random_embedding(&mut rng, d, SpaceTag::Image);
    let outputs: Vec<Embedding> = (0..64)
        .map(|seed| {
            // Slot 0 (the one the oracle copies) is left zero.
            let conditions = vec![(1, fixed_b.clone())];
            sample(
                trainer.net(),
                trainer.schedule(),
                &conditions,
                &SampleConfig {
                    steps: 25,
                    guidance: GuidanceConfig { scale: 1.0, ..GuidanceConfig::default() },
                    seed,
                    renorm_to: None,
                },
            )
            .unwrap()
        })
        .collect();

    let mut cos_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..outputs.len() {
        for j in (i + 1)..outputs.len() {
            cos_sum += cosine(&outputs[i], &outputs[j]).unwrap();
            pairs += 1;
        }
    }
    let mean_cos = cos_sum / pairs as f64;
    let norms_ok = outputs
        .iter()
        .all(|e| e.norm() >= 0.5 * mean_norm && e.norm() <= 2.0 * mean_norm);
    report(
        "A9",
        mean_cos < 0.99 && norms_ok,
        &format!(
            "pairwise mean cosine {mean_cos:.4} (< 0.99), all 64 norms in [{:.2}, {:.2}]",
            0.5 * mean_norm,
            2.0 * mean_norm
        ),
    );
}

/// A10: the metrics harness agrees with brute-force implementations and
/// carries the full-scale reference constants.
#[test]
fn a10_metrics_harness() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let d = 16;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let a = random_embedding(&mut rng, d, SpaceTag::Image);
        let b = random_embedding(&mut rng, d, SpaceTag::Text);
        let got = text_similarity(&a, &b).unwrap();
        // Brute-force cosine straight off the f32 values.
        let dot: f64 = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| f64::from(*x) * f64::from(*y))
            .sum();
        let na: f64 = a.values().iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.values().iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        worst = worst.max((got - dot / (na * nb)).abs());
    }

    let records = vec![
        EvalRecord { method: "m".into(), image_sim: Some(0.2), text_sim: Some(0.1), sentence_sim: None },
        EvalRecord { method: "m".into(), image_sim: Some(0.6), text_sim: Some(0.5), sentence_sim: None },
        EvalRecord { method: "m".into(), image_sim: Some(0.7), text_sim: None, sentence_sim: None },
    ];
    let aggs = aggregate(&records);
    let agg_ok = (aggs[0].image_sim_mean.unwrap() - 0.5).abs() < 1e-12
        && (aggs[0].text_sim_mean.unwrap() - 0.3).abs() < 1e-12
        && aggs[0].n == 3;

    let csv = to_csv(&aggs, true);
    let ref_ok = csv.contains("0.6607")
        && csv.contains("0.236")
        && csv.contains("0.437")
        && REFERENCE_SCENE_IMAGE_SIM == 0.6607
        && REFERENCE_SCENE_TEXT_SIM == 0.236
        && REFERENCE_SCENE_SENTENCE_SIM == 0.437;

    // Batch average sanity riding on the same harness.
    let a = Embedding::new(vec![1.0; d], SpaceTag::Image).unwrap();
    let b = Embedding::new(vec![3.0; d], SpaceTag::Image).unwrap();
    let avg = pops::embedding::average(&EmbeddingBatch::new(vec![a, b]).unwrap()).unwrap();
    let avg_ok = avg.values().iter().all(|&v| v == 2.0);

    report(
        "A10",
        worst <= 1e-6 && agg_ok && ref_ok && avg_ok,
        &format!("cosine vs brute force max err {worst:.2e} (<= 1e-6); aggregates and reference constants check out"),
    );
}
