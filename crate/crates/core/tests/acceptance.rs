//! Acceptance suite. Runs as a plain binary (`harness = false`) so every
//! criterion prints one PASS/FAIL/SKIP line even under `cargo test`.
//!
//! Criterion 9 needs a real backbone and public data; it runs only when
//! `SQUARE_EXTENDED_CONFIG` names an experiment config, and never gates.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use square_core::corpus::Split;
use square_core::encoding::{encode, EncodingVariant};
use square_core::harness::{
    run_ablation_matrix, run_experiment, EvalReport, ExperimentConfig, ExternalScorerConfig, RowStatus, Technique,
};
use square_core::metrics::{self, ScoredSet};
use square_core::reference_selection::SelectionPolicy;
use square_core::rng::Stream;
use square_core::scorer::{Backbone, HashedBagBackbone};
use square_core::training::synthetic::{self, SyntheticSpec};
use square_core::training::{
    batch_loss, batch_loss_and_grad, fit, prepare, train, DevPoint, Hyperparams, TrainConfig, TrainError,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- oracles -------------------------------------------------------------

fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn direct_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n;
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n;
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx.sqrt() * vy.sqrt()))
}

// ---- criteria ------------------------------------------------------------

fn c1_metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = Stream::new(2024, "acceptance-metrics");
    let mut with_dups = 0;
    let (mut worst_auc, mut worst_r) = (0.0f64, 0.0f64);
    for case in 0..1000 {
        let n = rng.range_inclusive(2, 200);
        let force_dups = case % 5 == 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if force_dups {
                    rng.below(4) as f64 / 4.0
                } else {
                    rng.unit_f64()
                }
            })
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
        labels[0] = 0;
        labels[1] = 1;
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            with_dups += 1;
        }
        let set = ScoredSet::from_pairs(scores.clone(), labels.clone()).map_err(|e| e.to_string())?;
        let auc = metrics::auroc(&set).map_err(|e| e.to_string())?;
        let diff = (auc - brute_auroc(&scores, &labels)).abs();
        worst_auc = worst_auc.max(diff);
        ensure(diff <= 1e-12, || format!("case {case}: AUROC off by {diff:e}"))?;

        let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        match (metrics::pearson(&set), direct_pearson(&scores, &y)) {
            (Ok(r), Some(r0)) => {
                let d = (r - r0).abs();
                worst_r = worst_r.max(d);
                ensure(d <= 1e-9, || format!("case {case}: pearson off by {d:e}"))?;
            }
            (Err(_), None) => {}
            (got, want) => return Err(format!("case {case}: pearson {got:?} vs direct {want:?}")),
        }
    }
    let elapsed = start.elapsed();
    ensure(with_dups >= 100, || format!("only {with_dups} sets with duplicate scores"))?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "1000 sets, {with_dups} with ties, max |ΔAUROC| {worst_auc:.1e}, max |Δr| {worst_r:.1e}, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn c2_worked_values() -> Outcome {
    let set = ScoredSet::from_pairs(vec![0.1, 0.4, 0.35, 0.8], vec![0, 0, 1, 1]).map_err(|e| e.to_string())?;
    let auc = metrics::auroc(&set).map_err(|e| e.to_string())?;
    ensure(auc == 0.75, || format!("AUROC {auc}"))?;
    let set = ScoredSet::from_pairs(vec![0.9, 0.2, 0.6], vec![1, 0, 0]).map_err(|e| e.to_string())?;
    let acc = metrics::accuracy(&set, 0.5);
    ensure((acc - 2.0 / 3.0).abs() < 1e-15, || format!("accuracy {acc}"))?;
    let d = metrics::relative_delta(0.833, 0.734).map_err(|e| e.to_string())?;
    ensure((d - 13.49).abs() <= 0.01, || format!("relative delta {d}"))?;
    Ok(format!("AUROC {auc}, accuracy {acc:.6}, delta {d:+.4}%"))
}

const Q: &str = "Who wrote Hamlet?";
const A: &str = "Shakespeare did.";
const P: [&str; 2] = ["Hamlet is by Shakespeare.", "It was William Shakespeare."];
const N: [&str; 2] = ["Hamlet is a village.", "Marlowe wrote it."];
const NONE: [&str; 0] = [];

struct Golden {
    name: &'static str,
    q: &'static str,
    a: &'static str,
    pos: &'static [&'static str],
    neg: &'static [&'static str],
    variant: EncodingVariant,
    max_units: usize,
    expected: &'static str,
    truncated: bool,
}

fn goldens() -> Vec<Golden> {
    let g = |name, pos, neg, variant, max_units, expected, truncated| Golden {
        name,
        q: Q,
        a: A,
        pos,
        neg,
        variant,
        max_units,
        expected,
        truncated,
    };
    let full = "Question: Who wrote Hamlet? Target: Shakespeare did. Pos_Ref: Hamlet is by Shakespeare. \
                Pos_Ref: It was William Shakespeare. Neg_Ref: Hamlet is a village. Neg_Ref: Marlowe wrote it.";
    let head = "Question: Who wrote Hamlet? Target: Shakespeare did.";
    let sq = EncodingVariant::square();
    vec![
        g("square, both pools", &P, &N, sq, 512, full, false),
        g("square, empty pools", &NONE, &NONE, sq, 512, head, false),
        g(
            "square, negatives only",
            &NONE,
            &N,
            sq,
            512,
            "Question: Who wrote Hamlet? Target: Shakespeare did. Neg_Ref: Hamlet is a village. Neg_Ref: Marlowe wrote it.",
            false,
        ),
        g(
            "square, positives only",
            &P,
            &NONE,
            sq,
            512,
            "Question: Who wrote Hamlet? Target: Shakespeare did. Pos_Ref: Hamlet is by Shakespeare. Pos_Ref: It was William Shakespeare.",
            false,
        ),
        g("qt, pools ignored", &P, &N, EncodingVariant::qt(), 512, head, false),
        g("qt, empty pools", &NONE, &NONE, EncodingVariant::qt(), 512, head, false),
        g(
            "tr",
            &P,
            &N,
            EncodingVariant::tr(),
            512,
            "Target: Shakespeare did. Pos_Ref: Hamlet is by Shakespeare.",
            false,
        ),
        g(
            "tqr",
            &P,
            &N,
            EncodingVariant::tqr(),
            512,
            "Question: Who wrote Hamlet? Target: Shakespeare did. Pos_Ref: Hamlet is by Shakespeare.",
            false,
        ),
        g(
            "tqr_neg",
            &P,
            &N,
            EncodingVariant::tqr_neg(),
            512,
            "Question: Who wrote Hamlet? Target: Shakespeare did. Neg_Ref: Hamlet is a village.",
            false,
        ),
        g(
            "tqr_neg, other order",
            &P,
            &["Marlowe wrote it.", "Hamlet is a village."],
            EncodingVariant::tqr_neg(),
            512,
            "Question: Who wrote Hamlet? Target: Shakespeare did. Neg_Ref: Marlowe wrote it.",
            false,
        ),
        g(
            "square_pos",
            &P,
            &N,
            EncodingVariant::square_pos(),
            512,
            "Question: Who wrote Hamlet? Target: Shakespeare did. Pos_Ref: Hamlet is by Shakespeare. Pos_Ref: It was William Shakespeare.",
            false,
        ),
        g("square_pos, no positives", &NONE, &N, EncodingVariant::square_pos(), 512, head, false),
        Golden {
            name: "whitespace normalization",
            q: "  Who   wrote\tHamlet? ",
            a: "Shakespeare\n did.",
            pos: &["Hamlet  is by\n\nShakespeare."],
            neg: &NONE,
            variant: sq,
            max_units: 512,
            expected: "Question: Who wrote Hamlet? Target: Shakespeare did. Pos_Ref: Hamlet is by Shakespeare.",
            truncated: false,
        },
        g("truncate, exact fit", &P, &N, sq, 26, full, false),
        g(
            "truncate, one reference dropped",
            &P,
            &N,
            sq,
            25,
            "Question: Who wrote Hamlet? Target: Shakespeare did. Pos_Ref: Hamlet is by Shakespeare. \
             Pos_Ref: It was William Shakespeare. Neg_Ref: Hamlet is a village.",
            true,
        ),
        g(
            "truncate, negatives dropped",
            &P,
            &N,
            sq,
            20,
            "Question: Who wrote Hamlet? Target: Shakespeare did. Pos_Ref: Hamlet is by Shakespeare. Pos_Ref: It was William Shakespeare.",
            true,
        ),
        g("truncate, head only", &P, &N, sq, 7, head, true),
        g("truncate, budget below head", &P, &N, sq, 3, head, true),
        g("tr truncated", &P, &N, EncodingVariant::tr(), 3, "Target: Shakespeare did.", true),
        Golden {
            name: "non-ascii reference",
            q: Q,
            a: A,
            pos: &["Écrit par Shakespeare, café."],
            neg: &NONE,
            variant: sq,
            max_units: 512,
            expected: "Question: Who wrote Hamlet? Target: Shakespeare did. Pos_Ref: Écrit par Shakespeare, café.",
            truncated: false,
        },
    ]
}

fn c3_encoding_goldens() -> Outcome {
    let cases = goldens();
    ensure(cases.len() == 20, || format!("{} golden cases", cases.len()))?;
    let mut kinds = std::collections::BTreeSet::new();
    for c in &cases {
        let got = encode(c.q, c.a, c.pos, c.neg, c.variant, c.max_units).map_err(|e| format!("{}: {e}", c.name))?;
        ensure(got.text == c.expected, || {
            format!("{}:\n  got      {:?}\n  expected {:?}", c.name, got.text, c.expected)
        })?;
        ensure(got.truncated == c.truncated, || format!("{}: truncated = {}", c.name, got.truncated))?;
        kinds.insert(c.variant.to_string());
    }
    ensure(kinds.len() == 6, || format!("variants covered: {kinds:?}"))?;
    ensure(
        encode(Q, A, &NONE, &N, EncodingVariant::tr(), 512).is_err(),
        || "tr without a positive encoded".into(),
    )?;
    Ok(format!("20 byte-exact cases over {}", kinds.into_iter().collect::<Vec<_>>().join(", ")))
}

fn c4_gradient_check() -> Outcome {
    let d = synthetic::generate(&SyntheticSpec {
        n_train: 400,
        n_dev: 0,
        n_test: 0,
        ..Default::default()
    });
    let prepared = prepare(&d, EncodingVariant::square(), &SelectionPolicy::default(), 512);
    let backbone = HashedBagBackbone::default();
    let texts: Vec<&str> = prepared.inputs.iter().map(|i| i.text.as_str()).collect();
    let feats = backbone.encode_batch(&texts).map_err(|e| e.to_string())?;
    let mut rng = Stream::new(7, "acceptance-gradcheck");
    let h = 1e-4;
    let mut worst = 0.0f64;
    for b in 0..50 {
        let idx = rng.sample_indices(feats.len(), 32);
        let batch: Vec<&[f32]> = idx.iter().map(|&i| feats[i].as_slice()).collect();
        let labels: Vec<u8> = idx.iter().map(|&i| prepared.labels[i]).collect();
        let weights: Vec<f64> = (0..backbone.dim()).map(|_| rng.unit_f64() * 2.0 - 1.0).collect();
        let bias = rng.unit_f64() - 0.5;
        let (_, gw, gb) = batch_loss_and_grad(&batch, &labels, &weights, bias);
        let mut check = |fd: f64, an: f64, what: String| -> Result<(), String> {
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            worst = worst.max(rel);
            ensure(rel <= 1e-3, || format!("batch {b} {what}: fd {fd} analytic {an}"))
        };
        for j in 0..weights.len() {
            let mut plus = weights.clone();
            let mut minus = weights.clone();
            plus[j] += h;
            minus[j] -= h;
            let fd = (batch_loss(&batch, &labels, &plus, bias) - batch_loss(&batch, &labels, &minus, bias)) / (2.0 * h);
            check(fd, gw[j], format!("w[{j}]"))?;
        }
        let fd = (batch_loss(&batch, &labels, &weights, bias + h) - batch_loss(&batch, &labels, &weights, bias - h))
            / (2.0 * h);
        check(fd, gb, "bias".into())?;
    }
    Ok(format!("50 minibatches x {} params, max rel err {worst:.1e}", 65))
}

fn c5_toy_training() -> Outcome {
    let start = Instant::now();
    let d = synthetic::generate(&SyntheticSpec::default());
    let (tr, dev, test) = (d.split(Split::Train), d.split(Split::Dev), d.split(Split::Test));
    let hp = Hyperparams::toy();
    ensure(hp.epochs == 20 && hp.batch_size == 32, || format!("{hp:?}"))?;
    let cfg = TrainConfig::new(hp.clone(), EncodingVariant::square(), SelectionPolicy::default());
    let (model, log) = train(&tr, &dev, &cfg, Arc::new(HashedBagBackbone::default()), "acceptance")
        .map_err(|e| e.to_string())?;

    let best = log.epochs.iter().map(|e| e.val_auroc).fold(f64::MIN, f64::max);
    let first_best = log.epochs.iter().position(|e| e.val_auroc == best).unwrap() + 1;
    ensure(log.selected_epoch == first_best, || {
        format!("selected epoch {} but argmax is {first_best}", log.selected_epoch)
    })?;

    let tp = prepare(&test, cfg.encoding_variant, &cfg.selection_policy, cfg.max_units);
    let scores = model.score_batch(&tp.inputs, 64).map_err(|e| e.to_string())?;
    let set = tp.scored(scores).map_err(|e| e.to_string())?;
    let acc = metrics::accuracy(&set, 0.5);
    let auc = metrics::auroc(&set).map_err(|e| e.to_string())?;
    ensure(acc >= 0.9, || format!("held-out accuracy {acc}"))?;
    ensure(auc >= 0.95, || format!("held-out AUROC {auc}"))?;

    let fake = [0.6, 0.9, 0.7];
    let three = Hyperparams { epochs: 3, ..hp };
    let train_p = prepare(&tr, cfg.encoding_variant, &cfg.selection_policy, cfg.max_units);
    let mut heads = Vec::new();
    let (injected, ilog) = fit(&train_p, &three, Arc::new(HashedBagBackbone::default()), "fake", |m, epoch| {
        heads.push(m.head.clone());
        Ok::<_, TrainError>(DevPoint {
            accuracy: 0.5,
            auroc: fake[epoch - 1],
        })
    })
    .map_err(|e| e.to_string())?;
    ensure(ilog.selected_epoch == 2 && injected.head == heads[1], || {
        format!("injected sequence selected epoch {}", ilog.selected_epoch)
    })?;

    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "test accuracy {acc:.4}, AUROC {auc:.4}, selected epoch {} of 20, injected [0.6,0.9,0.7] -> 2, {:.1}s",
        log.selected_epoch,
        elapsed.as_secs_f64()
    ))
}

fn toy_config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::toy(dir.join("out"));
    cfg.cache_dir = Some(dir.join("cache"));
    cfg
}

fn c6_ablation() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = run_ablation_matrix(&toy_config(dir.path())).map_err(|e| e.to_string())?;
    let refs: Vec<&str> = out.report.rows.iter().map(|r| r.n_refs_descriptor.as_str()).collect();
    ensure(refs == ["1", "5", "3", "[1,5]", "5"], || format!("descriptors {refs:?}"))?;
    let names: Vec<&str> = out.report.rows.iter().map(|r| r.technique.as_str()).collect();
    ensure(
        names == ["AVA-TQR(-)", "SQuArE(+)", "SQuArE", "SQuArE", "SQuArE"],
        || format!("techniques {names:?}"),
    )?;
    let mut aurocs = Vec::new();
    for r in &out.report.rows {
        ensure(r.status == RowStatus::Ok, || format!("{} ({}) failed: {:?}", r.technique, r.n_refs_descriptor, r.error))?;
        let v = r.values().ok_or("missing metrics")?;
        ensure(
            v.accuracy.is_finite() && v.auroc.is_finite() && v.correlation.is_finite(),
            || format!("non-finite metrics in {r:?}"),
        )?;
        aurocs.push(format!("{:.3}", v.auroc));
    }
    Ok(format!("rows {refs:?}, AUROC [{}]", aurocs.join(", ")))
}

fn c7_determinism_and_cache() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = toy_config(dir.path());
    let first = run_experiment(&cfg).map_err(|e| e.to_string())?;
    ensure(first.trained.iter().all(|t| !t.cache_hit()), || "first run hit a cache".into())?;
    let second = run_experiment(&cfg).map_err(|e| e.to_string())?;
    ensure(!second.trained.is_empty() && second.trained.iter().all(|t| t.cache_hit() && t.log.is_none()), || {
        "second run trained".into()
    })?;
    ensure(first.report.rows == second.report.rows, || "cached run changed metrics".into())?;

    let mut fresh = cfg.clone();
    fresh.cache_dir = Some(dir.path().join("cache-2"));
    fresh.output_dir = dir.path().join("out-2");
    let third = run_experiment(&fresh).map_err(|e| e.to_string())?;
    ensure(third.trained.iter().all(|t| !t.cache_hit()), || "fresh cache hit".into())?;
    ensure(first.report.rows == third.report.rows, || "retraining changed metrics".into())?;
    let v = first.report.rows[0].values().ok_or("missing metrics")?;
    Ok(format!(
        "identical metrics across 3 runs (accuracy {:.4}, AUROC {:.4}); run 2 loaded the cached checkpoint",
        v.accuracy, v.auroc
    ))
}

fn c8_adapter_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = toy_config(dir.path());
    cfg.external_scorers = vec![ExternalScorerConfig {
        label: "IdentityOracle".into(),
        adapter: "label-oracle".into(),
        params: Default::default(),
    }];
    run_experiment(&cfg).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(cfg.output_dir.join("report.json")).map_err(|e| e.to_string())?;
    let report = EvalReport::from_json(&text).map_err(|e| e.to_string())?;
    let row = report
        .rows
        .iter()
        .find(|r| r.technique == "IdentityOracle")
        .ok_or("oracle row missing from report.json")?;
    ensure(row.accuracy == Some(1.0) && row.auroc == Some(1.0), || format!("{row:?}"))?;
    Ok(format!("report.json row: accuracy 1.0, AUROC 1.0 over {} examples", row.n_examples))
}

fn c9_extended() -> Result<Verdict, String> {
    let Ok(path) = std::env::var("SQUARE_EXTENDED_CONFIG") else {
        return Ok(Verdict::Skip("set SQUARE_EXTENDED_CONFIG to a real-backbone config".into()));
    };
    let mut cfg = ExperimentConfig::from_file(&path).map_err(|e| e.to_string())?;
    cfg.technique = Technique::Square;
    cfg.baseline_technique = Some(Technique::Qt);
    let out = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut all = true;
    for info in &out.report.metadata.eval_datasets {
        let auc = |t: Technique| {
            out.report
                .rows_for(&info.name)
                .find(|r| r.technique == t.display_name())
                .and_then(|r| r.auroc)
        };
        let (sq, qt) = (auc(Technique::Square), auc(Technique::Qt));
        let ok = matches!((sq, qt), (Some(a), Some(b)) if a > b);
        all &= ok;
        lines.push(format!("{}: SQuArE {sq:?} vs AVA-QT {qt:?}", info.name));
    }
    let msg = lines.join("; ");
    Ok(if all && !lines.is_empty() {
        Verdict::Pass(msg)
    } else {
        Verdict::Fail(msg)
    })
}

fn run(f: fn() -> Outcome) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(m)) => Verdict::Pass(m),
        Ok(Err(m)) => Verdict::Fail(m),
        Err(_) => Verdict::Fail("panicked".into()),
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("metric oracle equivalence", c1_metric_oracles),
        ("worked metric values", c2_worked_values),
        ("encoding golden suite", c3_encoding_goldens),
        ("gradient check", c4_gradient_check),
        ("toy end-to-end training", c5_toy_training),
        ("ablation matrix fidelity", c6_ablation),
        ("determinism and caching", c7_determinism_and_cache),
        ("adapter round-trip", c8_adapter_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        match run(f) {
            Verdict::Pass(m) => println!("[{}] PASS  {name}: {m}", i + 1),
            Verdict::Fail(m) => {
                failed += 1;
                println!("[{}] FAIL  {name}: {m}", i + 1);
            }
            Verdict::Skip(m) => println!("[{}] SKIP  {name}: {m}", i + 1),
        }
    }
    let extended = catch_unwind(c9_extended).unwrap_or_else(|_| Err("panicked".into()));
    match extended {
        Ok(Verdict::Pass(m)) => println!("[9] PASS  real-backbone ordering (non-gating): {m}"),
        Ok(Verdict::Fail(m)) | Err(m) => println!("[9] FAIL  real-backbone ordering (non-gating): {m}"),
        Ok(Verdict::Skip(m)) => println!("[9] SKIP  real-backbone ordering (non-gating): {m}"),
    }
    if failed == 0 {
        println!("acceptance: all gating criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} gating criteria failed");
        ExitCode::FAILURE
    }
}
