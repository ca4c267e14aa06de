//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use muvitanet::data::{
    generate_synthetic_bundle, Demographics, LabelRule, PatientRecord, SyntheticSpec, TaskBundle, Visit, AGE_GROUPS,
    REGIONS,
};
use muvitanet::encoders::temporal_encoding;
use muvitanet::heads::{bce_loss_node, contrastive_loss, contrastive_loss_node, project_unlabeled, task_attention};
use muvitanet::interpret::{ablate_and_repredict, rank_features, Removal};
use muvitanet::model::{build_variant, Network};
use muvitanet::numerics::{finite_difference_check, GradCheckOptions, NodeId, Tensor};
use muvitanet::trainer::{
    auroc, compute_sampling_rates, evaluate_task, prepare_folds, run_fold, sample_task, train_epoch, EpochData,
    TaskExamples, TrainerConfig,
};
use muvitanet::{EncoderConfig, Graph, ModelConfig, MuViTaNet, Variant};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check = (usize, &'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_record(rng: &mut ChaCha8Rng, vocab: usize, visits: usize) -> PatientRecord {
    let mut day = 0;
    let visits = (0..visits)
        .map(|_| {
            day += rng.gen_range(0..60);
            let n = rng.gen_range(1..=vocab.min(4));
            Visit::new(day, (0..n).map(|_| rng.gen_range(0..vocab))).unwrap()
        })
        .collect();
    let demo = Demographics::new(rng.gen_range(0..AGE_GROUPS as u8), rng.gen_range(0..REGIONS as u8)).unwrap();
    PatientRecord::new(format!("p{}", rng.gen::<u32>()), demo, visits)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let config = ModelConfig::new(EncoderConfig::new(4, 12));
    let tasks = vec!["a".to_string(), "b".to_string()];
    let mut net = Network::new(&config, &tasks, build_variant(Variant::Full), 3).map_err(|e| e.to_string())?;
    // Move every parameter off its initialization so zero biases do not hide
    // gradient paths.
    for id in net.store.ids().collect::<Vec<_>>() {
        for v in net.store.value_mut(id).data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    let batch = |rng: &mut ChaCha8Rng| (0..3).map(|_| random_record(rng, 12, 5)).collect::<Vec<_>>();
    let (xa, xb, xu) = (batch(&mut rng), batch(&mut rng), batch(&mut rng));
    let (ya, yb) = ([1.0, 0.0, 1.0], [0.0, 1.0, 0.0]);
    let loss = |g: &mut Graph<'_>| -> muvitanet::Result<NodeId> {
        let mut terms = Vec::new();
        for (head, (records, labels)) in [(&xa, &ya), (&xb, &yb)].into_iter().enumerate() {
            let preds = records
                .iter()
                .map(|r| net.forward(g, r, head).map(|f| f.prediction))
                .collect::<muvitanet::Result<Vec<_>>>()?;
            terms.push(bce_loss_node(g, &preds, labels)?);
        }
        let head = net.contrastive.as_ref().expect("full variant has an unlabeled head");
        let mut pairs = Vec::new();
        for r in &xu {
            let shared = net.encoder.encode(g, r)?;
            let t = task_attention(g, &shared, head)?;
            pairs.push(project_unlabeled(
                g,
                t.feature_summary.unwrap(),
                t.visit_summary.unwrap(),
                t.patient_vector.unwrap(),
                head,
            )?);
        }
        terms.push(contrastive_loss_node(g, &pairs, net.temperature)?);
        g.sum(&terms)
    };
    let opts = GradCheckOptions {
        max_coords_per_tensor: usize::MAX,
        ..GradCheckOptions::default()
    };
    let report = finite_difference_check(&net.store, loss, &opts).map_err(|e| e.to_string())?;
    let worst = report.worst().map(|w| (w.name.clone(), w.max_relative_error)).unwrap_or_default();
    let elapsed = start.elapsed();
    check(
        report.passed && elapsed < Duration::from_secs(120),
        format!(
            "{} tensors, {} coordinates, worst {} at {:.2e}, {:.1}s",
            report.params.len(),
            report.params.iter().map(|p| p.coords_checked).sum::<usize>(),
            worst.0,
            worst.1,
            elapsed.as_secs_f64()
        ),
    )
}

fn dimension_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut failures = Vec::new();
    for case in 0..500 {
        let d = 2 * rng.gen_range(1..=5);
        let c = rng.gen_range(3..30);
        let t = rng.gen_range(1..9);
        let record = random_record(&mut rng, c, t);
        let t = record.num_visits();
        let config = ModelConfig::new(EncoderConfig::new(d, c));
        let tasks = vec!["x".to_string(), "y".to_string()];
        let seed = rng.gen();
        let full = MuViTaNet::new(Variant::Full, config.clone(), tasks.clone(), seed).map_err(|e| e.to_string())?;
        let tr = full.trace(&record, 1).map_err(|e| e.to_string())?;
        let shape = |x: &Option<Tensor>| x.as_ref().map(|x| x.shape().to_vec());
        let mut ok = shape(&tr.shared.feature_view) == Some(vec![c, 4 * d])
            && shape(&tr.shared.visit_view) == Some(vec![t, 2 * d])
            && shape(&tr.shared.patient_vector) == Some(vec![2 * d])
            && tr.representation.shape() == [8 * d];
        for v in [Variant::NoFeatureView, Variant::NoVisitView] {
            let m = MuViTaNet::new(v, config.clone(), tasks.clone(), seed).map_err(|e| e.to_string())?;
            ok &= m.trace(&record, 0).map_err(|e| e.to_string())?.representation.shape() == [4 * d];
        }
        if !ok {
            failures.push(case);
        }
    }
    check(failures.is_empty(), format!("500 configs, {} failures {:?}", failures.len(), failures))
}

fn distribution_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut passes = 0;
    let mut worst: f64 = 0.0;
    let mut negative = 0;
    let mut inspect = |t: &Tensor| {
        worst = worst.max((t.sum() - 1.0).abs());
        negative += t.data().iter().filter(|&&v| v < 0.0).count();
    };
    for _ in 0..100 {
        let d = 2 * rng.gen_range(1..=4);
        let c = rng.gen_range(3..25);
        let model = MuViTaNet::new(
            Variant::Full,
            ModelConfig::new(EncoderConfig::new(d, c)),
            vec!["x".into(), "y".into()],
            rng.gen(),
        )
        .map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let t = rng.gen_range(1..10);
            let record = random_record(&mut rng, c, t);
            let tr = model.trace(&record, rng.gen_range(0..2)).map_err(|e| e.to_string())?;
            tr.shared.code_attention.iter().for_each(&mut inspect);
            inspect(tr.beta.as_ref().ok_or("no feature attention")?);
            inspect(tr.gamma.as_ref().ok_or("no visit attention")?);
            passes += 1;
        }
    }
    check(
        worst <= 1e-6 && negative == 0,
        format!("{passes} forward passes, max |sum-1| {worst:.1e}, {negative} negative weights"),
    )
}

fn temporal_encoding_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut problems = 0;
    for _ in 0..1000 {
        let d = 2 * rng.gen_range(1..=64);
        let tj: i64 = rng.gen_range(-5000..5000);
        let tt = tj + rng.gen_range(0..5000);
        let e = temporal_encoding(tj as f64, tt as f64, d).map_err(|e| e.to_string())?;
        problems += e.data().iter().filter(|v| !(-1.0..=1.0).contains(*v)).count();
        let shift = rng.gen_range(-3000..3000);
        let same = temporal_encoding((tj + shift) as f64, (tt + shift) as f64, d).map_err(|e| e.to_string())?;
        problems += usize::from(same != e);
        let zero = temporal_encoding(tt as f64, tt as f64, d).map_err(|e| e.to_string())?;
        let expected: Vec<f64> = (0..d).map(|i| (i % 2) as f64).collect();
        problems += usize::from(zero.data() != expected.as_slice());
    }
    check(problems == 0, format!("1000 triples, {problems} violations"))
}

/// Direct enumeration of the two-view loss: every anchor against every other
/// row, positives at the partner index.
fn contrastive_oracle(pairs: &[(Vec<f64>, Vec<f64>)], tau: f64) -> f64 {
    let rows: Vec<&Vec<f64>> = pairs.iter().flat_map(|(f, v)| [f, v]).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / tau;
    let mut loss = 0.0;
    for a in 0..rows.len() {
        let partner = if a % 2 == 0 { a + 1 } else { a - 1 };
        let mut denom = 0.0;
        for j in 0..rows.len() {
            if j != a {
                denom += dot(rows[a], rows[j]).exp();
            }
        }
        loss -= (dot(rows[a], rows[partner]).exp() / denom).ln();
    }
    loss
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn contrastive_check() -> Outcome {
    let as_tensors =
        |p: &[(Vec<f64>, Vec<f64>)]| p.iter().map(|(f, v)| (Tensor::vector(f), Tensor::vector(v))).collect::<Vec<_>>();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let single = vec![(unit(&mut rng, 4), unit(&mut rng, 4))];
    let b1 = contrastive_loss(&as_tensors(&single), 1.0).map_err(|e| e.to_string())?;
    let hand = vec![(vec![1.0, 0.0], vec![0.6, 0.8]), (vec![0.0, 1.0], vec![-0.8, 0.6])];
    let b2 = contrastive_loss(&as_tensors(&hand), 1.0).map_err(|e| e.to_string())?;
    let b2_oracle = contrastive_oracle(&hand, 1.0);
    let mut worst_perm: f64 = 0.0;
    for _ in 0..50 {
        let b = rng.gen_range(2..8);
        let mut pairs: Vec<_> = (0..b).map(|_| (unit(&mut rng, 5), unit(&mut rng, 5))).collect();
        let before = contrastive_loss(&as_tensors(&pairs), 1.0).map_err(|e| e.to_string())?;
        pairs.shuffle(&mut rng);
        let after = contrastive_loss(&as_tensors(&pairs), 1.0).map_err(|e| e.to_string())?;
        worst_perm = worst_perm.max((before - after).abs());
        worst_perm = worst_perm.max((before - contrastive_oracle(&pairs, 1.0)).abs());
    }
    check(
        b1.abs() <= 1e-9 && (b2 - b2_oracle).abs() <= 1e-9 && worst_perm <= 1e-9,
        format!(
            "B=1 loss {b1:.1e}, B=2 {b2:.12} vs oracle {b2_oracle:.12}, max permutation gap {worst_perm:.1e}"
        ),
    )
}

fn all_pairs_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == 1 && yj == 0 {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn auroc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut mismatches = 0;
    let mut tied = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=50);
        let levels = rng.gen_range(1..=n);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 1;
        labels[1] = 0;
        labels.shuffle(&mut rng);
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        tied += usize::from(sorted.windows(2).any(|w| w[0] == w[1]));
        let fast = auroc(&scores, &labels).map_err(|e| e.to_string())?;
        // Both sides are sums of halves divided by the same count, so they
        // agree exactly.
        mismatches += usize::from(fast != all_pairs_auroc(&scores, &labels));
    }
    check(mismatches == 0, format!("1000 instances ({tied} with ties), {mismatches} mismatches"))
}

fn sampler_fidelity() -> Outcome {
    let sizes = [320, 640, 1280, 25600];
    let batches = [16, 16, 16, 256];
    let rates = compute_sampling_rates(&sizes, &batches).map_err(|e| e.to_string())?;
    let expected = [20.0 / 240.0, 40.0 / 240.0, 80.0 / 240.0, 100.0 / 240.0];
    let formula_gap = rates.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut counts = [0usize; 4];
    let draws = 10_000;
    for _ in 0..draws {
        counts[sample_task(&rates, &[true; 4], &mut rng).ok_or("no task drawn")?] += 1;
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    let gap = freq.iter().zip(&rates).map(|(f, r)| (f - r).abs()).fold(0.0, f64::max);
    check(
        formula_gap < 1e-12 && gap <= 0.02,
        format!("λ {rates:.4?}, observed {freq:.4?}, max gap {gap:.4}"),
    )
}

fn overfit_sanity() -> Outcome {
    let start = Instant::now();
    let config = TrainerConfig::default();
    let mut spec = SyntheticSpec::new(30, 50, vec![vec![0]], 11);
    spec.label_rule = LabelRule::Threshold;
    let bundle = generate_synthetic_bundle(&spec).map_err(|e| e.to_string())?;
    let ds = &bundle.tasks[0];
    let mut model = MuViTaNet::new(Variant::Full, config.model_config(30), bundle.task_names(), config.seed)
        .map_err(|e| e.to_string())?;
    let data = EpochData {
        tasks: vec![TaskExamples {
            head: 0,
            records: ds.records.iter().collect(),
            labels: ds.labels.iter().map(|&y| f64::from(y)).collect(),
        }],
        unlabeled: bundle.unlabeled.iter().collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best = (0.0, 0);
    for epoch in 1..=200 {
        train_epoch(&mut model.networks[0], &data, &config, &mut rng).map_err(|e| e.to_string())?;
        let a = evaluate_task(&model, 0, ds).map_err(|e| e.to_string())?;
        if a > best.0 {
            best = (a, epoch);
        }
        if a >= 0.95 {
            break;
        }
    }
    let elapsed = start.elapsed();
    check(
        best.0 >= 0.95 && elapsed < Duration::from_secs(300),
        format!(
            "training AU-ROC {:.3} at epoch {} (d={}, lr {}, batches {}/{}), {:.0}s",
            best.0,
            best.1,
            config.hidden_dim,
            config.learning_rate,
            config.labeled_batch,
            config.unlabeled_batch,
            elapsed.as_secs_f64()
        ),
    )
}

const ABLATION_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const ABLATION_VOCAB: usize = 40;
const ABLATION_HIDDEN: usize = 8;
const ABLATION_LR: f64 = 1e-3;
const ABLATION_EPOCHS: usize = 24;

/// Task-specific planted codes, plus one risk code every task shares.
fn ablation_spec(seed: u64) -> SyntheticSpec {
    let mut spec = SyntheticSpec::new(ABLATION_VOCAB, 2000, vec![vec![0, 3], vec![1, 3], vec![2, 3]], seed);
    spec.num_unlabeled = Some(2000);
    spec
}

struct SeedRun {
    seed: u64,
    bundle: TaskBundle,
    scores: Vec<(Variant, f64)>,
    full: MuViTaNet,
}

fn ablation_runs() -> Result<Vec<SeedRun>, String> {
    let mut runs = Vec::new();
    for seed in ABLATION_SEEDS {
        let bundle = generate_synthetic_bundle(&ablation_spec(seed)).map_err(|e| e.to_string())?;
        let mut scores = Vec::new();
        let mut full = None;
        for variant in Variant::ALL {
            let config = TrainerConfig {
                hidden_dim: ABLATION_HIDDEN,
                learning_rate: ABLATION_LR,
                epochs: ABLATION_EPOCHS,
                seed,
                variant,
                only_fold: Some(0),
                ..TrainerConfig::default()
            };
            let folds = prepare_folds(&bundle, &config).map_err(|e| e.to_string())?;
            let out = run_fold(&folds[0], &config, ABLATION_VOCAB, None, |_| Ok(())).map_err(|e| e.to_string())?;
            let mean = out.rows.iter().map(|r| r.auroc).sum::<f64>() / out.rows.len() as f64;
            scores.push((variant, mean));
            if variant == Variant::Full {
                full = Some(out.state.best_model());
            }
        }
        runs.push(SeedRun {
            seed,
            bundle,
            scores,
            full: full.ok_or("full variant missing")?,
        });
    }
    Ok(runs)
}

fn ablation_order(runs: &[SeedRun]) -> Outcome {
    let mut holds = 0;
    let mut lines = Vec::new();
    for run in runs {
        let s = |v: Variant| run.scores.iter().find(|(x, _)| *x == v).map(|(_, a)| *a).unwrap_or(f64::NAN);
        let (full, unl, fv, vv, ts) = (
            s(Variant::Full),
            s(Variant::NoUnlabeled),
            s(Variant::NoFeatureView),
            s(Variant::NoVisitView),
            s(Variant::NoTaskSpecific),
        );
        let ok = full >= unl && unl >= fv.max(vv) && fv.max(vv) >= ts;
        holds += usize::from(ok);
        lines.push(format!(
            "seed {}: full {full:.4} -unl {unl:.4} -fv {fv:.4} -vv {vv:.4} -ts {ts:.4} {}",
            run.seed,
            if ok { "ok" } else { "out of order" }
        ));
    }
    check(holds >= 4, format!("ordering holds in {holds}/{} seeds\n    {}", runs.len(), lines.join("\n    ")))
}

fn interpretability(runs: &[SeedRun]) -> Outcome {
    let (mut cells, mut ranked, mut decreased) = (0, 0, 0);
    let mut misses = Vec::new();
    for run in runs {
        let spec = ablation_spec(run.seed);
        for (k, ds) in run.bundle.tasks.iter().enumerate() {
            // The code only this task is driven by.
            let code = spec.planted_risk_codes[k][0];
            cells += 1;
            let table = rank_features(&run.full, ds, &ds.task, true, None, &run.bundle.vocabulary)
                .map_err(|e| e.to_string())?;
            let position = table.position_of(code);
            if position.is_some_and(|p| p < 5) {
                ranked += 1;
            } else {
                misses.push(format!("seed {} {}: rank {:?}", run.seed, ds.task, position.map(|p| p + 1)));
            }

            let mut carriers: Vec<(f64, &PatientRecord)> = ds
                .records
                .iter()
                .zip(&ds.labels)
                .filter(|(r, &y)| y == 1 && r.contains_code(code))
                .map(|(r, _)| run.full.predict(r, k).map(|p| (p, r)))
                .collect::<muvitanet::Result<_>>()
                .map_err(|e| e.to_string())?;
            carriers.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (before, median) = *carriers.get(carriers.len() / 2).ok_or("no positive carrier")?;
            let id = run.bundle.vocabulary.code(code).ok_or("planted code missing")?.id.clone();
            let after = ablate_and_repredict(&run.full, median, &ds.task, &[Removal::Codes(vec![id])], &run.bundle.vocabulary)
                .map_err(|e| e.to_string())?[0]
                .prediction;
            if after < before {
                decreased += 1;
            } else {
                misses.push(format!("seed {} {}: ŷ {before:.4} -> {after:.4}", run.seed, ds.task));
            }
        }
    }
    check(
        ranked as f64 >= 0.8 * cells as f64 && decreased == cells,
        format!("top-5 in {ranked}/{cells} cells, ablation lowers ŷ in {decreased}/{cells} {misses:?}"),
    )
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_muvitanet"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn pipeline(root: &Path, name: &str) -> Result<(Vec<u8>, Vec<u8>), String> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (bundle, run, eval) = (root.join(format!("{name}_bundle")), root.join(format!("{name}_run")), root.join(format!("{name}_eval.json")));
    cli(&["generate", "--config", &s(&root.join("spec.json")), "--out", &s(&bundle)])?;
    cli(&[
        "train", "--quiet", "--bundle", &s(&bundle), "--config", &s(&root.join("train.json")), "--out", &s(&run),
    ])?;
    cli(&["evaluate", "--bundle", &s(&bundle), "--checkpoint", &s(&run), "--out", &s(&eval)])?;
    let metrics = fs::read(run.join("metrics.jsonl")).map_err(|e| e.to_string())?;
    let eval = fs::read(eval).map_err(|e| e.to_string())?;
    Ok((metrics, eval))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    fs::write(
        dir.path().join("spec.json"),
        r#"{"vocabularySize": 24, "numPatientsPerTask": 60, "plantedRiskCodes": [[0], [1]], "numUnlabeled": 32, "seed": 9}"#,
    )
    .map_err(|e| e.to_string())?;
    fs::write(
        dir.path().join("train.json"),
        r#"{"hiddenDim": 4, "epochs": 3, "folds": 3, "labeledBatch": 8, "unlabeledBatch": 16, "learningRate": 0.003, "seed": 4}"#,
    )
    .map_err(|e| e.to_string())?;
    let a = pipeline(dir.path(), "a")?;
    let b = pipeline(dir.path(), "b")?;
    check(
        a == b && !a.0.is_empty(),
        format!("metrics {} bytes, evaluation {} bytes, identical: {}", a.0.len(), a.1.len(), a == b),
    )
}

/// Criterion numbers given on the command line restrict the run; no
/// arguments runs everything.
fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| only.is_empty() || only.contains(&n);
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} {status} {name}: {detail}");
    };
    let checks: [Check; 8] = [
        (1, "gradient correctness", gradient_correctness),
        (2, "dimension contract", dimension_contract),
        (3, "distribution invariants", distribution_invariants),
        (4, "temporal encoding", temporal_encoding_check),
        (5, "contrastive loss", contrastive_check),
        (6, "AU-ROC oracle equivalence", auroc_oracle),
        (7, "sampler fidelity", sampler_fidelity),
        (8, "overfit sanity", overfit_sanity),
    ];
    for (n, name, f) in checks {
        if wanted(n) {
            report(n, name, f());
        }
    }
    if wanted(9) || wanted(10) {
        match ablation_runs() {
            Ok(runs) => {
                report(9, "ablation ordering", ablation_order(&runs));
                report(10, "interpretability signal", interpretability(&runs));
            }
            Err(e) => {
                report(9, "ablation ordering", Err(e.clone()));
                report(10, "interpretability signal", Err(e));
            }
        }
    }
    if wanted(11) {
        report(11, "determinism", determinism());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
