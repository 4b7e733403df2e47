//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use attribench::binarize::{argmax, binarize_label, binarize_score};
use attribench::cli::run;
use attribench::contrastive::{predict, train_head, EmbeddingSet, HeadParams, LossConfig, TrainConfig};
use attribench::io::write_embeddings;
use attribench::metrics::{auc, balanced_accuracy, eer, manipulation_accuracy, ScoredLabels};
use attribench::protocol::{make_plan, shared_manipulation_triplets, LossSetting, Mode, PlanRequest, ResearchQuestion};
use attribench::registry::{
    builtin_dataset_descriptors, canonical_manipulation, write_catalog, DatasetDescriptor, SampleCatalog, Split,
};
use common::*;
use ndarray::{Array1, Array2};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let elapsed = start.elapsed();
    o.detail = format!("{}; {:.2}s", o.detail, elapsed.as_secs_f64());
    if let Some(limit) = limit {
        if elapsed > limit {
            o.pass = false;
            o.detail.push_str(&format!(" exceeds {}s", limit.as_secs()));
        }
    }
    o
}

/// Softmax row with `p` at index `j`, the remainder spread evenly over
/// enough other classes that `j` stays the unique argmax.
fn row_with_max(j: usize, p: f64) -> Array1<f64> {
    let classes = (((1.0 - p) / p).floor() as usize + 2).max(6);
    let rest = (1.0 - p) / (classes - 1) as f64;
    let mut row = Array1::from_elem(classes, rest);
    row[j] = p;
    row
}

fn binarization_grid() -> Outcome {
    let mut checked = 0;
    for j in 0..=5 {
        for k in 1..=99 {
            let p = k as f64 / 100.0;
            let row = row_with_max(j, p);
            if argmax(row.view()) != (j, p) {
                return outcome(false, format!("grid row j={j} p={p} does not have its max at j"));
            }
            let s = match binarize_score(row.view()) {
                Ok(s) => s,
                Err(e) => return outcome(false, format!("j={j} p={p}: {e}")),
            };
            let expected = match (j, p < 0.5) {
                (0, false) => 1.0 - p,
                _ => p,
            };
            if s != expected || (j == 0 && s != p.min(1.0 - p)) {
                return outcome(false, format!("j={j} p={p}: got {s}, expected {expected}"));
            }
            checked += 1;
        }
    }
    for label in 0..=10 {
        if binarize_label(label) != u8::from(label != 0) {
            return outcome(false, format!("label {label}"));
        }
    }
    outcome(true, format!("{checked} grid points, labels 0..10"))
}

fn metric_oracles() -> Outcome {
    let mut r = rng(101);
    let (mut worst_auc, mut worst_eer): (f64, f64) = (0.0, 0.0);
    for _ in 0..500 {
        let (scores, labels) = tied_instance(&mut r);
        let sl = ScoredLabels::new(&scores, &labels).unwrap();
        worst_auc = worst_auc.max((auc(&sl).unwrap() - pair_count_auc(&scores, &labels)).abs());
        worst_eer = worst_eer.max((eer(&sl).unwrap().eer - sweep_eer(&scores, &labels)).abs());
    }
    outcome(
        worst_auc <= 1e-9 && worst_eer <= 1e-9,
        format!("500 tied instances; max |auc diff| {worst_auc:.1e}, max |eer diff| {worst_eer:.1e}"),
    )
}

fn gradient_checks() -> Outcome {
    let worst = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    let tri = triplet_gradient_errors(20, 201);
    let nt = ntxent_gradient_errors(20, 202);
    let sc = supcon_gradient_errors(20, 203);
    let joint: Vec<f64> = joint_gradient_errors(20, 204).into_iter().map(|c| c.1).collect();
    let all = [worst(&tri), worst(&nt), worst(&sc), worst(&joint)];
    outcome(
        all.iter().all(|&e| e < GRAD_TOL),
        format!(
            "20 cases each; max rel err triplet {:.1e}, nt-xent {:.1e}, supcon {:.1e}, joint {:.1e}",
            all[0], all[1], all[2], all[3]
        ),
    )
}

fn loss_identities() -> Outcome {
    let ln3 = identical_batch_deviation(301);
    let eq = supcon_ntxent_deviation(50, 302);
    let inv = invariance_deviation(50, 303);
    outcome(
        ln3 <= 1e-12 && eq <= 1e-9 && inv <= 1e-9,
        format!("|L - ln 3| {ln3:.1e}; |SC - NT| {eq:.1e}; invariance {inv:.1e}"),
    )
}

fn triplet_enumeration() -> Outcome {
    let descs = builtin_dataset_descriptors();
    let mut brute = BTreeSet::new();
    for a in &descs {
        for b in &descs {
            if a.name != b.name && a.has_manipulation_labels && b.has_manipulation_labels {
                for m in a.manipulations.intersection(&b.manipulations) {
                    brute.insert((a.name.clone(), b.name.clone(), m.as_str().to_string()));
                }
            }
        }
    }
    let got: Vec<_> = shared_manipulation_triplets(&descs)
        .into_iter()
        .map(|t| (t.train, t.test, t.manipulation.as_str().to_string()))
        .collect();
    let same = got.len() == brute.len() && got.iter().cloned().collect::<BTreeSet<_>>() == brute;
    let required = [("FF++", "CelebDF", "DEEPFAKES"), ("FF++", "FakeAVCeleb", "FACESWAP"), ("DFPlatter", "FakeAVCeleb", "FSGAN")];
    let present = required.iter().all(|(a, b, m)| brute.contains(&(a.to_string(), b.to_string(), m.to_string())));
    outcome(same && present, format!("{} triplets, oracle match {same}, required cells present {present}", got.len()))
}

/// Attribution BA over argmax labels and detection BA on binarized scores
/// at 0.5, both over the test split.
fn test_scores(head: &HeadParams, x: &Array2<f32>, cat: &SampleCatalog) -> (f64, f64) {
    let preds = predict(&EmbeddingSet::new(x.clone()).unwrap(), head).unwrap();
    let (mut pred, mut truth, mut bin_pred, mut bin_truth) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for row in cat.split_rows(Split::Test) {
        pred.push(argmax(preds.row(row.row_index)).0);
        truth.push(head.label_order.iter().position(|l| l == &row.label).unwrap());
        bin_pred.push(u8::from(binarize_score(preds.row(row.row_index)).unwrap() >= 0.5));
        bin_truth.push(u8::from(row.label.is_fake()));
    }
    (balanced_accuracy(&pred, &truth).unwrap(), balanced_accuracy(&bin_pred, &bin_truth).unwrap())
}

fn synthetic_end_to_end() -> Outcome {
    let (x, cat) = four_class_blobs(64, 200, 50, 401);
    let emb = EmbeddingSet::new(x.clone()).unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for setting in [LossSetting::Baseline, LossSetting::SupCon] {
        let (head, _) =
            train_head(&emb, &cat, Mode::Multiclass, &LossConfig::new(setting), &TrainConfig::default()).unwrap();
        let (attr, det) = test_scores(&head, &x, &cat);
        pass &= attr >= 0.95 && det >= 0.95;
        details.push(format!("{setting}: attribution BA {attr:.3}, detection BA {det:.3}"));
    }
    outcome(pass, details.join("; "))
}

fn shift_descriptors() -> Vec<DatasetDescriptor> {
    let manips = ["DEEPFAKES", "FACESWAP", "FACESHIFTER"].map(|m| canonical_manipulation(m).unwrap());
    descriptors_with(&[
        DatasetDescriptor::new("SynthA", manips.clone(), true).unwrap(),
        DatasetDescriptor::new("SynthB", manips, true).unwrap(),
    ])
}

/// Train on SynthA; test on SynthA (within) and on SynthB, whose samples
/// are scaled by 1.5 and shifted towards the REAL centre.
fn distribution_shift() -> Outcome {
    let labels = ["REAL", "DEEPFAKES", "FACESWAP", "FACESHIFTER"];
    let dim = 64;
    let descs = shift_descriptors();
    let spec = |dataset, train, test, scale, shift| BlobSpec {
        dataset,
        labels: &labels,
        dim,
        train_per_class: train,
        test_per_class: test,
        separation: 1.5,
        scale,
        shift,
    };
    let toward_real = Array1::from_shape_fn(dim, |d| if d % labels.len() == 0 { 1.5 } else { -0.5 });
    let build = |test_spec: BlobSpec<'_>, seed| {
        let mut r = rng(seed);
        let (mut rows, mut data) = (Vec::new(), Vec::new());
        push_blobs(&spec("SynthA", 200, 0, 1.0, None), &mut r, &mut rows, &mut data);
        push_blobs(&test_spec, &mut r, &mut rows, &mut data);
        (to_matrix(&data), SampleCatalog::new(rows, &descs).unwrap())
    };
    let (x_within, cat_within) = build(spec("SynthA", 0, 50, 1.0, None), 501);
    let (x_cross, cat_cross) = build(spec("SynthB", 0, 50, 1.5, Some(toward_real)), 501);

    let (head, _) = train_head(
        &EmbeddingSet::new(x_within.clone()).unwrap(),
        &cat_within,
        Mode::Multiclass,
        &LossConfig::new(LossSetting::Baseline),
        &TrainConfig::default(),
    )
    .unwrap();
    let within_preds = predict(&EmbeddingSet::new(x_within).unwrap(), &head).unwrap();
    let cross_preds = predict(&EmbeddingSet::new(x_cross).unwrap(), &head).unwrap();
    let mut pass = true;
    let mut details = Vec::new();
    for m in &labels[1..] {
        let target = canonical_manipulation(m).unwrap();
        let w = manipulation_accuracy(&within_preds, &cat_within, &target, &head.label_order).unwrap();
        let c = manipulation_accuracy(&cross_preds, &cat_cross, &target, &head.label_order).unwrap();
        pass &= w >= 0.9 && w - c >= 0.15;
        details.push(format!("{m} within {w:.3} cross {c:.3}"));
    }
    outcome(pass, details.join("; "))
}

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("attribench").chain(args.iter().copied()))
}

/// Full train, evaluate and report pipeline in `dir`; returns the bytes of
/// the head and every report file.
fn pipeline(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let (x, cat) = four_class_blobs(32, 50, 20, 601);
    let path = |n: &str| dir.join(n).to_str().unwrap().to_string();
    write_embeddings(path("emb.atrb"), &x).map_err(|e| e.to_string())?;
    write_catalog(path("catalog.csv"), &cat).map_err(|e| e.to_string())?;
    std::fs::write(path("run.cfg"), "epochs = 4\nbatch_size = 32\n").map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for loss in ["b", "t-hs", "nt", "sc"] {
        let head = path(&format!("head-{loss}.atrh"));
        let code = cli(&[
            "train-head", "--embeddings", &path("emb.atrb"), "--catalog", &path("catalog.csv"),
            "--mode", "multiclass", "--loss", loss, "--config", &path("run.cfg"), "--seed", "17", "--out", &head,
        ]);
        if code != 0 {
            return Err(format!("train-head {loss} exited {code}"));
        }
        for manip in [None, Some("DEEPFAKES")] {
            let out = path(&format!("rec-{loss}-{}.json", manip.unwrap_or("all")));
            let mut args = vec!["evaluate", "--head", &head, "--embeddings", "", "--catalog", ""];
            let (e, c) = (path("emb.atrb"), path("catalog.csv"));
            args[4] = &e;
            args[6] = &c;
            if let Some(m) = manip {
                args.extend(["--manipulation", m]);
            }
            args.extend(["--out", &out]);
            let code = cli(&args);
            if code != 0 {
                return Err(format!("evaluate exited {code}"));
            }
        }
        files.push(std::fs::read(&head).map_err(|e| e.to_string())?);
    }
    for format in ["csv", "json", "md"] {
        let out = path(&format!("report.{format}"));
        let glob = path("rec-*.json");
        if cli(&["report", "--inputs", &glob, "--format", format, "--out", &out]) != 0 {
            return Err(format!("report {format} failed"));
        }
        files.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    match (pipeline(a.path()), pipeline(b.path())) {
        (Ok(x), Ok(y)) => {
            let identical = x == y;
            outcome(identical, format!("{} head and report files, byte-identical {identical}", x.len()))
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e),
    }
}

fn plan_cardinalities() -> Outcome {
    let descs = builtin_dataset_descriptors();
    let models = vec!["m1".to_string(), "m2".to_string(), "m3".to_string()];
    let tests = vec!["FF++".to_string(), "CelebDF".to_string(), "DFDC".to_string()];
    let count = |rq| {
        make_plan(&PlanRequest::new(rq, models.clone(), 0).tests(tests.clone()), &descs).unwrap().cells.len()
    };
    let (rq1, rq3) = (count(ResearchQuestion::Rq1), count(ResearchQuestion::Rq3));
    let rq2 = make_plan(&PlanRequest::new(ResearchQuestion::Rq2, vec!["m1".into()], 0), &descs).unwrap().cells.len();
    let triplets = shared_manipulation_triplets(&descs).len();
    outcome(
        rq1 == 3 * 2 * 3 && rq3 == 3 * 5 * 3 && rq2 == triplets,
        format!("RQ1 {rq1} (expect 18), RQ3 {rq3} (expect 45), RQ2 {rq2} (expect {triplets})"),
    )
}

fn main() {
    type Criterion = (&'static str, Option<u64>, fn() -> Outcome);
    let criteria: Vec<Criterion> = vec![
        ("binarization grid", Some(1), binarization_grid),
        ("metric oracles", Some(10), metric_oracles),
        ("gradient checks", Some(30), gradient_checks),
        ("loss identities", None, loss_identities),
        ("shared-manipulation enumeration", None, triplet_enumeration),
        ("synthetic end-to-end", Some(60), synthetic_end_to_end),
        ("synthetic distribution shift", None, distribution_shift),
        ("determinism", None, determinism),
        ("plan cardinalities", None, plan_cardinalities),
    ];
    let mut failed = 0;
    for (name, limit, f) in criteria {
        let o = timed(limit.map(Duration::from_secs), f);
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
