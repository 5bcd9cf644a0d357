//! Acceptance gate. Runs every criterion at its stated tolerance and time
//! budget, prints one PASS/FAIL line per criterion and exits non-zero if any
//! fails.

// `ensure!` negates its condition so that NaN counts as a failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hofdetect::augment::{
    AugmentConfig, MockClient, PromptTemplate, Verdict, augment_corpus, compute_agreement,
    export_audit_sheet,
};
use hofdetect::classifier::{BackboneSpec, TrainConfig, load_model, save_model, train_model};
use hofdetect::corpus::{Label, Language, LabeledCorpus, SplitSpec, TextSample, UnlabeledPool, split_corpus};
use hofdetect::eval::{
    ClassMetrics, ConfusionMatrix, EvaluationReport, RunFingerprint, TableFormat, confusion,
    macro_f1, render_table,
};
use hofdetect::pipeline::{RunOptions, run_experiment};
use hofdetect::selftrain::{ThresholdPolicy, partition_scores, self_train};
use hofdetect::synthetic::SyntheticGenerator;

use common::{labels, oracle_macro_f1, tree_bytes, write_offline_experiment};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn metric_oracle() -> Outcome {
    let f1 = |p: &str, g: &str| macro_f1(&confusion(&labels(p), &labels(g)).unwrap()).unwrap();
    let a = f1("HNNN", "HHNN");
    ensure!((a - 11.0 / 15.0).abs() < 1e-15, "hand case 1 gave {a}");
    let b = f1("HH", "HN");
    ensure!((b - 1.0 / 3.0).abs() < 1e-15, "hand case 2 gave {b}");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=50);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<Label> {
            (0..n)
                .map(|_| if rng.gen_bool(0.5) { Label::Hof } else { Label::Not })
                .collect()
        };
        let gold = draw(&mut rng);
        let pred = draw(&mut rng);
        let got = macro_f1(&confusion(&pred, &gold).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        worst = worst.max((got - oracle_macro_f1(&pred, &gold)).abs());
    }
    ensure!(worst <= 1e-12, "max deviation from oracle {worst:e}");
    Ok(format!("1000 instances, max deviation {worst:e}; hand cases 11/15 and 1/3"))
}

fn augmentation_arithmetic() -> Outcome {
    let cfg = AugmentConfig {
        multiplier: 3,
        max_in_flight: 8,
        ..AugmentConfig::default()
    };
    let client = MockClient::new(3);
    let mut lines = Vec::new();
    for (i, (before, after)) in [(1281, 3843), (4036, 12108), (1679, 5037)].into_iter().enumerate() {
        // Split a corpus whose training side has exactly `before` samples.
        let total = before + before / 9;
        let corpus = SyntheticGenerator::new(100 + i as u64).labeled(total, 0.55, "t");
        let (train, heldout) = split_corpus(&corpus, &SplitSpec::new(0.9, 7).unwrap()).map_err(|e| e.to_string())?;
        ensure!(train.len() == before, "train split has {} samples, wanted {before}", train.len());
        let heldout_fp = heldout.fingerprint().to_string();

        let out = augment_corpus(&train, &cfg, &client, &PromptTemplate::default()).map_err(|e| e.to_string())?;
        ensure!(out.corpus.len() == after, "{before} became {}, wanted {after}", out.corpus.len());
        let violations = out.corpus.augmented_label_violations();
        ensure!(violations.is_empty(), "{} augmented labels differ from their parents", violations.len());
        ensure!(
            heldout.fingerprint() == heldout_fp,
            "heldout fingerprint changed during augmentation"
        );
        let heldout_ids: HashSet<&str> = heldout.samples().iter().map(|s| s.id.as_str()).collect();
        ensure!(
            out.corpus.samples().iter().all(|s| !heldout_ids.contains(s.id.as_str())),
            "augmented corpus contains heldout ids"
        );
        lines.push(format!("{before}->{after}"));
    }
    Ok(lines.join(", "))
}

fn audit_agreement() -> Outcome {
    let originals = SyntheticGenerator::new(5).labeled(100, 0.5, "a");
    let mut client = MockClient::new(8);
    for s in originals.samples().iter().step_by(25) {
        client.corrupt.insert(s.text.clone());
    }
    ensure!(client.corrupt.len() == 4, "expected 4 corrupted parents");
    let cfg = AugmentConfig::default();
    let out = augment_corpus(&originals, &cfg, &client, &PromptTemplate::default()).map_err(|e| e.to_string())?;
    let mut sheet = export_audit_sheet(&out.corpus, 200, 21).map_err(|e| e.to_string())?;
    ensure!(sheet.len() == 200, "sheet has {} rows", sheet.len());
    // Simulated reviewer: disagrees exactly with flipped generations.
    for row in &mut sheet.rows {
        row.verdict = if row.augmented_text.contains(MockClient::FLIP_MARKER) {
            Verdict::Disagree
        } else {
            Verdict::Agree
        };
    }
    let disagree = sheet.rows.iter().filter(|r| r.verdict == Verdict::Disagree).count();
    ensure!(disagree == 4, "{disagree} corrupted rows on the sheet");
    let agreement = compute_agreement(&sheet).map_err(|e| e.to_string())?;
    ensure!(agreement == 0.98, "agreement {agreement}");
    Ok(format!("agreement {agreement:.3} on 200 rows"))
}

fn pseudo_label_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let default = ThresholdPolicy::default();
    ensure!(
        (default.decision(), default.upper(), default.lower()) == (0.5, 0.90, 0.20),
        "unexpected defaults"
    );
    let instances = 600;
    for case in 0..instances {
        let n = rng.gen_range(1..=200);
        let samples = (0..n)
            .map(|i| TextSample::original(format!("p{i}"), format!("text {i}"), None, Language::Assamese, "pool"))
            .collect();
        let pool = UnlabeledPool::new(samples, "pool").map_err(|e| e.to_string())?;
        let scores: Vec<f64> = (0..n)
            .map(|_| match rng.gen_range(0..10) {
                0 => 0.0,
                1 => 1.0,
                2 => [0.1, 0.2, 0.5, 0.9, 0.95][rng.gen_range(0..5)],
                _ => rng.r#gen::<f64>(),
            })
            .collect();
        let lower = rng.gen_range(0.0..0.5);
        let upper = rng.gen_range(0.5..=1.0);
        let p1 = if case == 0 {
            default
        } else {
            ThresholdPolicy::new(0.5, upper, lower).map_err(|e| e.to_string())?
        };
        let p2 = ThresholdPolicy::new(
            0.5,
            rng.gen_range(p1.upper()..=1.0),
            rng.gen_range(0.0..=p1.lower()),
        )
        .map_err(|e| e.to_string())?;

        let b1 = partition_scores(&pool, &scores, &p1, "m");
        let kept: HashSet<&str> = b1.kept.iter().map(|s| s.id.as_str()).collect();
        let abstained: HashSet<&str> = b1.abstained.iter().map(String::as_str).collect();
        ensure!(kept.is_disjoint(&abstained), "case {case}: kept and abstained overlap");
        ensure!(kept.len() + abstained.len() == n, "case {case}: partition does not cover the pool");
        for s in &b1.kept {
            let score = s.score.unwrap();
            let ok = match s.label {
                Some(Label::Hof) => score >= p1.upper(),
                Some(Label::Not) => score <= p1.lower(),
                None => false,
            };
            ensure!(ok, "case {case}: {} on the wrong side of the band", s.id);
        }
        let b2 = partition_scores(&pool, &scores, &p2, "m");
        ensure!(
            b2.kept.iter().all(|s| kept.contains(s.id.as_str())),
            "case {case}: tighter policy kept a sample the looser one abstained on"
        );
    }
    Ok(format!("{instances} random (scores, policy) instances"))
}

fn desk_self_training() -> Outcome {
    let mut generator = SyntheticGenerator::new(2024);
    let corpus = generator.labeled(200, 0.5, "s");
    let (train, heldout) = split_corpus(&corpus, &SplitSpec::new(0.9, 3).unwrap()).map_err(|e| e.to_string())?;
    let (pool, gold) = generator.pool(900, 0.5, "u");
    let config = TrainConfig::for_backbone(BackboneSpec::tiny_test(), 5);
    let out = self_train(&config, &train, &heldout, &pool, &ThresholdPolicy::default(), 1)
        .map_err(|e| e.to_string())?;
    let round = &out.report.rounds[0];
    let batch = &out.batches[0];
    let correct = batch
        .kept
        .iter()
        .filter(|s| s.label == gold.get(&s.id).copied())
        .count();
    let kept = batch.kept.len();
    ensure!(kept > 0, "nothing kept");
    let accuracy = correct as f64 / kept as f64;
    let fraction = kept as f64 / pool.len() as f64;
    ensure!(accuracy >= 0.95, "pseudo-label accuracy {accuracy:.3}");
    ensure!(fraction >= 0.5, "kept fraction {fraction:.3}");
    ensure!(
        round.post.macro_f1 >= round.pre.macro_f1 - 0.01,
        "macro F1 fell from {:.4} to {:.4}",
        round.pre.macro_f1,
        round.post.macro_f1
    );
    let heldout_ids: HashSet<&str> = heldout.samples().iter().map(|s| s.id.as_str()).collect();
    ensure!(
        out.corpus.samples().iter().all(|s| !heldout_ids.contains(s.id.as_str())),
        "heldout sample leaked into the training corpus"
    );
    ensure!(out.corpus.len() == train.len() + kept, "corpus did not grow by the kept count");
    Ok(format!(
        "kept {kept}/900 ({fraction:.3}), accuracy {accuracy:.3}, macro F1 {:.3} -> {:.3}",
        round.pre.macro_f1, round.post.macro_f1
    ))
}

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = write_offline_experiment(dir.path(), 300, 400);
    let opts = RunOptions {
        offline: true,
        ..RunOptions::default()
    };
    let a = run_experiment(&manifest, &opts).map_err(|e| e.to_string())?;
    let b = run_experiment(&manifest, &opts).map_err(|e| e.to_string())?;
    ensure!(a.root != b.root, "run directory reused");
    let mut compared = 0;
    for sub in ["eval", "tables", "selftrain", "corpora", "augmentation"] {
        let left = tree_bytes(&a.root.join(sub));
        let right = tree_bytes(&b.root.join(sub));
        ensure!(!left.is_empty(), "{sub}/ is empty");
        ensure!(left == right, "{sub}/ differs between runs");
        compared += left.len();
    }
    let table = std::fs::read_to_string(a.root.join("tables/results.md")).map_err(|e| e.to_string())?;
    let rows = table.lines().filter(|l| l.starts_with("| tiny-")).count();
    ensure!(rows == 4, "expected 3 backbone rows plus the self-trained row, got {rows}");
    Ok(format!("{compared} artifacts byte-identical across two runs"))
}

fn table_golden() -> Outcome {
    let report = |language, f1| EvaluationReport {
        language,
        macro_f1: f1,
        hof: ClassMetrics { precision: f1, recall: f1, f1, support: 1, degenerate: false },
        not: ClassMetrics { precision: f1, recall: f1, f1, support: 1, degenerate: false },
        matrix: ConfusionMatrix { tp: 1, fp: 0, fn_: 0, tn: 1 },
        degenerate: false,
        fingerprint: RunFingerprint { corpus: "c".into(), model: "m".into(), threshold: 0.5 },
    };
    let reports = vec![
        ("submission".to_string(), report(Language::Assamese, 0.722)),
        ("submission".to_string(), report(Language::Bengali, 0.734)),
        ("submission".to_string(), report(Language::Bodo, 0.762)),
    ];
    for format in [TableFormat::Markdown, TableFormat::Csv] {
        let table = render_table(&reports, format).map_err(|e| e.to_string())?;
        for v in ["0.722", "0.734", "0.762"] {
            ensure!(table.contains(v), "{format:?} table lacks {v}");
        }
        ensure!(
            table == render_table(&reports, format).unwrap(),
            "{format:?} rendering is not stable"
        );
    }
    Ok("0.722 / 0.734 / 0.762 rendered in markdown and csv".into())
}

fn checkpoint_fidelity() -> Outcome {
    let corpus: LabeledCorpus = SyntheticGenerator::new(9).labeled(120, 0.5, "c");
    let model = train_model(&corpus, &TrainConfig::for_backbone(BackboneSpec::tiny_test(), 4))
        .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    save_model(&model, dir.path()).map_err(|e| e.to_string())?;
    let loaded = load_model(dir.path()).map_err(|e| e.to_string())?;
    let texts: Vec<String> = SyntheticGenerator::new(10)
        .labeled(100, 0.5, "q")
        .samples()
        .iter()
        .map(|s| s.text.clone())
        .collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let before = model.predict_scores(&refs).map_err(|e| e.to_string())?;
    let after = loaded.predict_scores(&refs).map_err(|e| e.to_string())?;
    let same = before
        .as_slice()
        .iter()
        .zip(after.as_slice())
        .all(|(x, y)| x.to_bits() == y.to_bits());
    ensure!(same, "scores changed after save/load");
    Ok("100 scores bit-identical after save/load".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("macro-F1 oracle", Duration::from_secs(5), metric_oracle),
        ("augmentation size arithmetic", Duration::from_secs(30), augmentation_arithmetic),
        ("audit agreement", Duration::from_secs(5), audit_agreement),
        ("pseudo-label properties", Duration::from_secs(10), pseudo_label_properties),
        ("desk-scale self-training", Duration::from_secs(120), desk_self_training),
        ("end-to-end offline determinism", Duration::from_secs(180), end_to_end_determinism),
        ("table golden values", Duration::from_secs(1), table_golden),
        ("checkpoint fidelity", Duration::from_secs(10), checkpoint_fidelity),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; took {elapsed:.2?}, budget {budget:?}")),
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS [{}] {name} ({elapsed:.2?}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name} ({elapsed:.2?}): {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
