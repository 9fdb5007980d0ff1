//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its measured numbers.
//!
//! Criteria 5-7 share a lazily built fixture (synthesized corpus,
//! generated dataset, and trained length / c1 / c1110 classifiers); run
//! with `--nocapture` to watch progress.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;
use std::time::Instant;

use numstr_cli::commands::{cmd_eval, cmd_generate, cmd_train};
use numstr_cli::config::{CorpusSource, ExperimentConfig, KindTrain};
use numstr_core::datagen::{
    load_idx, read_metadata, GenConfig, GrayImage, LengthCounts, Split,
};
use numstr_core::error::Result;
use numstr_core::eval::{emit_report, EvalReport, ReportFormat};
use numstr_core::fusion::{
    fuse_eq1, pipeline_dynamic, pipeline_end_to_end, pipeline_end_to_end_l, read_decisions,
    ClassifierBank, DecisionRecord, FusedChoice, FusionConfig, LengthScores, LengthVerdict,
};
use numstr_core::modelzoo::{decode_omega, encode_omega, ClassifierKind, OmegaCode};
use numstr_core::nncore::{
    conv_backward, conv_forward, cross_entropy_loss, fc_backward, fc_forward, maxpool_backward,
    maxpool_forward, relu, relu_backward, softmax, Tensor, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------
// criterion 1: gradient correctness
// ---------------------------------------------------------------------

const FD_H: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn fd_rel_err(n: f64, a: f64) -> f64 {
    (n - a).abs() / (n.abs() + a.abs()).max(1e-6)
}

fn fd_grad(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_H;
        let plus = f(x);
        x[i] = orig - FD_H;
        let minus = f(x);
        x[i] = orig;
        g[i] = (plus - minus) / (2.0 * FD_H);
    }
    g
}

fn max_err(numeric: &[f64], analytic: &[f64]) -> f64 {
    numeric
        .iter()
        .zip(analytic)
        .map(|(&n, &a)| fd_rel_err(n, a))
        .fold(0.0, f64::max)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Distinct values with gaps far above the perturbation step.
fn distinct(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    perm.into_iter().map(|p| p as f64 * 0.017 - 0.5).collect()
}

fn off_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn objective(out: &Tensor<f64>, c: &[f64]) -> f64 {
    out.data().iter().zip(c).map(|(o, w)| o * w).sum()
}

#[test]
fn a01_gradient_correctness_against_finite_differences() {
    let started = Instant::now();
    let instances = 20;
    let mut worst: f64 = 0.0;

    for rep in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(9_000 + rep);
        // conv on a small randomized shape
        let (n, ci, h, w) = (1 + rep as usize % 2, 1 + rep as usize % 3, 5, 6);
        let (oc, kh, kw, stride) = (2, 2, 3, 1 + rep as usize % 2);
        let mut x = uniform(&mut rng, n * ci * h * w);
        let mut wv = uniform(&mut rng, oc * ci * kh * kw);
        let mut bv = uniform(&mut rng, oc);
        let xt = Tensor::new(&[n, ci, h, w], x.clone()).unwrap();
        let wt = Tensor::new(&[oc, ci, kh, kw], wv.clone()).unwrap();
        let bt = Tensor::new(&[oc], bv.clone()).unwrap();
        let out = conv_forward(&xt, &wt, &bt, stride).unwrap();
        let c = uniform(&mut rng, out.len());
        let grad_out = Tensor::new(out.shape(), c.clone()).unwrap();
        let (gi, gw, gb) = conv_backward(&grad_out, &xt, &wt, stride).unwrap();
        worst = worst.max(max_err(
            &fd_grad(&mut x, |v| {
                let t = Tensor::new(&[n, ci, h, w], v.to_vec()).unwrap();
                objective(&conv_forward(&t, &wt, &bt, stride).unwrap(), &c)
            }),
            gi.data(),
        ));
        worst = worst.max(max_err(
            &fd_grad(&mut wv, |v| {
                let t = Tensor::new(&[oc, ci, kh, kw], v.to_vec()).unwrap();
                objective(&conv_forward(&xt, &t, &bt, stride).unwrap(), &c)
            }),
            gw.data(),
        ));
        worst = worst.max(max_err(
            &fd_grad(&mut bv, |v| {
                let t = Tensor::new(&[oc], v.to_vec()).unwrap();
                objective(&conv_forward(&xt, &wt, &t, stride).unwrap(), &c)
            }),
            gb.data(),
        ));

        // max-pool with tie-free inputs
        let (ph, pw) = (6, 6);
        let mut px = distinct(&mut rng, ph * pw);
        let pxt = Tensor::new(&[1, 1, ph, pw], px.clone()).unwrap();
        let (pout, idx) = maxpool_forward(&pxt, (2, 2), 2).unwrap();
        let pc = uniform(&mut rng, pout.len());
        let pgrad = Tensor::new(pout.shape(), pc.clone()).unwrap();
        let pai = maxpool_backward(&pgrad, &idx, pxt.shape()).unwrap();
        worst = worst.max(max_err(
            &fd_grad(&mut px, |v| {
                let t = Tensor::new(&[1, 1, ph, pw], v.to_vec()).unwrap();
                objective(&maxpool_forward(&t, (2, 2), 2).unwrap().0, &pc)
            }),
            pai.data(),
        ));

        // fully-connected
        let (fn_, fin, fout) = (2, 7, 4);
        let mut fx = uniform(&mut rng, fn_ * fin);
        let mut fw = uniform(&mut rng, fout * fin);
        let mut fb = uniform(&mut rng, fout);
        let fxt = Tensor::new(&[fn_, fin], fx.clone()).unwrap();
        let fwt = Tensor::new(&[fout, fin], fw.clone()).unwrap();
        let fbt = Tensor::new(&[fout], fb.clone()).unwrap();
        let fout_t = fc_forward(&fxt, &fwt, &fbt).unwrap();
        let fc = uniform(&mut rng, fout_t.len());
        let fgrad = Tensor::new(fout_t.shape(), fc.clone()).unwrap();
        let (fgi, fgw, fgb) = fc_backward(&fgrad, &fxt, &fwt).unwrap();
        worst = worst.max(max_err(
            &fd_grad(&mut fx, |v| {
                let t = Tensor::new(&[fn_, fin], v.to_vec()).unwrap();
                objective(&fc_forward(&t, &fwt, &fbt).unwrap(), &fc)
            }),
            fgi.data(),
        ));
        worst = worst.max(max_err(
            &fd_grad(&mut fw, |v| {
                let t = Tensor::new(&[fout, fin], v.to_vec()).unwrap();
                objective(&fc_forward(&fxt, &t, &fbt).unwrap(), &fc)
            }),
            fgw.data(),
        ));
        worst = worst.max(max_err(
            &fd_grad(&mut fb, |v| {
                let t = Tensor::new(&[fout], v.to_vec()).unwrap();
                objective(&fc_forward(&fxt, &fwt, &t).unwrap(), &fc)
            }),
            fgb.data(),
        ));

        // relu away from zero
        let mut rx = off_zero(&mut rng, 12);
        let rxt = Tensor::new(&[3, 4], rx.clone()).unwrap();
        let rc = uniform(&mut rng, 12);
        let rgrad = Tensor::new(&[3, 4], rc.clone()).unwrap();
        let rgi = relu_backward(&rgrad, &rxt).unwrap();
        worst = worst.max(max_err(
            &fd_grad(&mut rx, |v| {
                let t = Tensor::new(&[3, 4], v.to_vec()).unwrap();
                objective(&relu(&t), &rc)
            }),
            rgi.data(),
        ));

        // softmax + cross-entropy fused gradient
        let (sn, sk) = (2, 6);
        let mut logits = uniform(&mut rng, sn * sk);
        let targets: Vec<usize> = (0..sn).map(|_| rng.random_range(0..sk)).collect();
        let lt = Tensor::new(&[sn, sk], logits.clone()).unwrap();
        let probs = softmax(&lt).unwrap();
        let (_, sgrad) = cross_entropy_loss(&probs, &targets).unwrap();
        worst = worst.max(max_err(
            &fd_grad(&mut logits, |v| {
                let t = Tensor::new(&[sn, sk], v.to_vec()).unwrap();
                let p = softmax(&t).unwrap();
                cross_entropy_loss(&p, &targets).unwrap().0
            }),
            sgrad.data(),
        ));
    }

    let elapsed = started.elapsed();
    assert!(
        worst < FD_TOL,
        "criterion 1 FAILED: max relative error {worst:.3e} >= {FD_TOL:.0e}"
    );
    assert!(
        elapsed.as_secs() < 60,
        "criterion 1 FAILED: took {elapsed:?}, limit 60s"
    );
    println!(
        "[PASS] criterion 1: every backward pass matches finite differences \
         (max rel err {worst:.2e} over {instances} instances/layer, {elapsed:.2?})"
    );
}

// ---------------------------------------------------------------------
// criterion 2: fusion oracle equivalence
// ---------------------------------------------------------------------

struct TableBank(BTreeMap<ClassifierKind, Vec<f32>>);

impl ClassifierBank for TableBank {
    fn probs(&mut self, kind: ClassifierKind) -> Result<Vec<f32>> {
        Ok(self.0[&kind].clone())
    }
}

fn dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let mut v: Vec<f32> = (0..n).map(|_| rng.random_range(0.0..1.0f32)).collect();
    let s: f32 = v.iter().sum();
    v.iter_mut().for_each(|p| *p /= s);
    v
}

fn oracle_label(length: usize, local: usize) -> String {
    match length {
        1 => format!("{local}"),
        2 => format!("{local:02}"),
        _ => format!("{local:03}"),
    }
}

/// Branch-enumeration oracle over raw vectors, written independently of
/// the fusion module.
fn oracle(length_probs: &[f32], digit: impl Fn(usize) -> Vec<f32>, t: f32) -> Option<String> {
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        length_probs[b]
            .partial_cmp(&length_probs[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let (l1, s1, l2) = (order[0] + 1, length_probs[order[0]], order[1] + 1);
    let best = |len: usize| -> (String, f32) {
        let p = digit(len);
        let mut bi = 0;
        for i in 1..p.len() {
            if p[i] > p[bi] {
                bi = i;
            }
        }
        (oracle_label(len, bi), p[bi])
    };
    if s1 >= t {
        return if l1 == 4 { None } else { Some(best(l1).0) };
    }
    match ((l1 != 4).then(|| best(l1)), (l2 != 4).then(|| best(l2))) {
        (None, None) => None,
        (Some(a), None) => Some(a.0),
        (None, Some(b)) => Some(b.0),
        (Some(a), Some(b)) => Some(if b.1 > a.1 { b.0 } else { a.0 }),
    }
}

#[test]
fn a02_fusion_rule_matches_brute_force_enumeration() {
    let started = Instant::now();
    let cfg = FusionConfig::default();
    let t = cfg.threshold;
    let trials = 10_000;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(31_000 + trial);
        // every fifth trial pins the top length score exactly at T
        let length = if trial % 5 == 0 {
            let mut v = vec![0.0f32; 4];
            let top = rng.random_range(0..4);
            v[top] = t;
            let mut rest: Vec<f32> = (0..3).map(|_| rng.random_range(0.0..1.0f32)).collect();
            let s: f32 = rest.iter().sum();
            rest.iter_mut().for_each(|p| *p *= (1.0 - t) / s);
            let mut j = 0;
            for (i, slot) in v.iter_mut().enumerate() {
                if i != top {
                    *slot = rest[j];
                    j += 1;
                }
            }
            v
        } else {
            dist(&mut rng, 4)
        };
        let c1 = dist(&mut rng, 10);
        let c2 = dist(&mut rng, 100);
        let c3 = dist(&mut rng, 1000);
        let c1110 = dist(&mut rng, 1110);

        // fuse_eq1 directly against the oracle's branch outcome
        let verdict = LengthVerdict::from_probs(length.clone()).unwrap();
        let mut scores = LengthScores::default();
        let argmax = |p: &[f32]| {
            let mut bi = 0;
            for i in 1..p.len() {
                if p[i] > p[bi] {
                    bi = i;
                }
            }
            (bi, p[bi])
        };
        for (len, p) in [(1usize, &c1), (2, &c2), (3, &c3)] {
            let (local, score) = argmax(p);
            scores.set(len, local, score).unwrap();
        }
        let fused = fuse_eq1(&verdict, &scores, &cfg).unwrap();
        let fused_label = match fused {
            FusedChoice::Accept {
                length, local_class, ..
            } => Some(oracle_label(length, local_class)),
            FusedChoice::Reject => None,
        };
        let want = oracle(&length, |len| match len {
            1 => c1.clone(),
            2 => c2.clone(),
            _ => c3.clone(),
        }, t);
        assert_eq!(fused_label, want, "fuse_eq1 mismatch in trial {trial}");

        // all three pipelines against the same oracle
        let mut bank = TableBank(BTreeMap::from([
            (ClassifierKind::Length, length.clone()),
            (ClassifierKind::C1, c1.clone()),
            (ClassifierKind::C2, c2.clone()),
            (ClassifierKind::C3, c3.clone()),
            (ClassifierKind::C1110, c1110.clone()),
        ]));
        let got = pipeline_dynamic(&mut bank, &cfg).unwrap();
        assert_eq!(got.predicted, want, "dynamic mismatch in trial {trial}");

        let got = pipeline_end_to_end(&mut bank).unwrap();
        let (gclass, _) = argmax(&c1110);
        let want_e2e = if gclass < 10 {
            format!("{gclass}")
        } else if gclass < 110 {
            format!("{:02}", gclass - 10)
        } else {
            format!("{:03}", gclass - 110)
        };
        assert_eq!(
            got.predicted.as_deref(),
            Some(want_e2e.as_str()),
            "end-to-end mismatch in trial {trial}"
        );

        let got = pipeline_end_to_end_l(&mut bank, &cfg).unwrap();
        let want = oracle(&length, |len| match len {
            1 => c1110[0..10].to_vec(),
            2 => c1110[10..110].to_vec(),
            _ => c1110[110..1110].to_vec(),
        }, t);
        assert_eq!(got.predicted, want, "end-to-end-l mismatch in trial {trial}");
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 10,
        "criterion 2 FAILED: took {elapsed:?}, limit 10s"
    );
    println!(
        "[PASS] criterion 2: fusion rule and all pipelines match the \
         brute-force oracle on {trials} configurations incl. T-boundary ({elapsed:.2?})"
    );
}

// ---------------------------------------------------------------------
// criterion 3: generator invariants
// ---------------------------------------------------------------------

/// Flood fill written from scratch for this check.
fn oracle_component_count(im: &GrayImage) -> usize {
    let (w, h) = (im.width(), im.height());
    let mut seen = vec![false; w * h];
    let mut count = 0;
    for start in 0..w * h {
        if seen[start] || im.pixels()[start] == 0 {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(p) = stack.pop() {
            let (px, py) = ((p % w) as isize, (p / w) as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (nx, ny) = (px + dx, py + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if !seen[q] && im.pixels()[q] > 0 {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
    }
    count
}

#[test]
fn a03_generator_invariants_on_two_thousand_samples() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    let (images, labels) = numstr_core::datagen::corpus::write_corpus(
        &corpus_dir,
        &numstr_core::datagen::corpus::CorpusConfig {
            count: 3_000,
            seed: 17,
            ..Default::default()
        },
    )
    .unwrap();
    let pool = load_idx(&images, &labels).unwrap();
    let digit_of_writer: BTreeMap<u32, u8> =
        pool.iter().map(|g| (g.writer_id, g.digit)).collect();

    let mut counts = BTreeMap::new();
    counts.insert(
        Split::Train,
        LengthCounts {
            len2: 1_000,
            len3: 1_000,
            ..Default::default()
        },
    );
    counts.insert(
        Split::Test,
        LengthCounts {
            len2: 120,
            ..Default::default()
        },
    );
    let mut writer_ranges = BTreeMap::new();
    writer_ranges.insert(Split::Train, (0, 2_500));
    writer_ranges.insert(Split::Test, (2_500, 3_000));
    let gen = GenConfig {
        seed: 23,
        counts,
        writer_ranges,
        ..GenConfig::default()
    };
    let manifests =
        numstr_core::datagen::generate_dataset(&pool, &gen, &dir.path().join("data")).unwrap();

    let mut checked = 0usize;
    for manifest in &manifests {
        let records = numstr_core::datagen::load_split(manifest).unwrap();
        let metadata = read_metadata(&manifest.metadata_path).unwrap();
        for (record, row) in records.iter().zip(&metadata) {
            // single component, by an independent flood fill
            assert_eq!(
                oracle_component_count(&record.sample.image),
                1,
                "sample {} is not a single component",
                record.id
            );
            // label equals the concatenated source digits, recovered from
            // the writer ids against the corpus
            let expected: String = row
                .writer_ids
                .iter()
                .map(|w| char::from(b'0' + digit_of_writer[w]))
                .collect();
            assert_eq!(record.sample.label, expected, "label mismatch in {}", record.id);
            // writer ids inside the split's declared range
            for &w in &row.writer_ids {
                assert!(
                    w >= manifest.writer_range.0 && w < manifest.writer_range.1,
                    "writer {w} outside {:?} in {}",
                    manifest.writer_range,
                    record.id
                );
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 2_120);

    // split writer sets are pairwise disjoint
    let sets: Vec<std::collections::BTreeSet<u32>> = manifests
        .iter()
        .map(|m| {
            read_metadata(&m.metadata_path)
                .unwrap()
                .into_iter()
                .flat_map(|r| r.writer_ids)
                .collect()
        })
        .collect();
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            assert!(sets[i].is_disjoint(&sets[j]), "splits {i} and {j} share writers");
        }
    }

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 60,
        "criterion 3 FAILED: took {elapsed:?}, limit 60s"
    );
    println!(
        "[PASS] criterion 3: 2000 generated 2-/3-digit samples are 100% \
         single-component with faithful labels and writer-disjoint splits ({elapsed:.2?})"
    );
}

// ---------------------------------------------------------------------
// criterion 4: class-index codec
// ---------------------------------------------------------------------

#[test]
fn a04_omega_codec_round_trips_all_classes() {
    for v in 0..1110u16 {
        let code = OmegaCode::new(v).unwrap();
        let label = decode_omega(code);
        assert_eq!(encode_omega(&label).unwrap(), code, "class {v}");
    }
    assert_eq!(encode_omega("0").unwrap().value(), 0);
    assert_eq!(encode_omega("00").unwrap().value(), 10);
    assert_eq!(encode_omega("000").unwrap().value(), 110);
    assert!(encode_omega("1234").is_err());
    assert!(OmegaCode::new(1110).is_err());
    println!("[PASS] criterion 4: class-index codec round-trips all 1110 classes exactly");
}

// ---------------------------------------------------------------------
// shared fixture for criteria 5-7
// ---------------------------------------------------------------------

struct Fixture {
    _dir: tempfile::TempDir,
    cfg: ExperimentConfig,
    report: EvalReport,
    train_secs: BTreeMap<ClassifierKind, f64>,
}

fn fixture_config(root: &Path) -> ExperimentConfig {
    let mut counts = BTreeMap::new();
    counts.insert(
        Split::Train,
        LengthCounts {
            len1: 10_000,
            len2: 3_200,
            len3: 3_200,
            len4: 0,
        },
    );
    counts.insert(
        Split::Validation,
        LengthCounts {
            len1: 1_000,
            len2: 400,
            len3: 400,
            len4: 0,
        },
    );
    counts.insert(
        Split::Test,
        LengthCounts {
            len1: 1_500,
            len2: 800,
            len3: 500,
            len4: 0,
        },
    );
    let mut writer_ranges = BTreeMap::new();
    writer_ranges.insert(Split::Train, (0, 12_000));
    writer_ranges.insert(Split::Validation, (12_000, 14_000));
    writer_ranges.insert(Split::Test, (14_000, 16_000));

    let mut train = BTreeMap::new();
    train.insert(
        "c1".to_string(),
        KindTrain {
            config: TrainConfig {
                batch_size: 64,
                max_epochs: 2,
                patience: 2,
                seed: 0,
                ..TrainConfig::default()
            },
            per_length_cap: None,
        },
    );
    train.insert(
        "length".to_string(),
        KindTrain {
            config: TrainConfig {
                batch_size: 64,
                max_epochs: 2,
                patience: 2,
                seed: 0,
                ..TrainConfig::default()
            },
            per_length_cap: Some(3_200),
        },
    );
    train.insert(
        "c1110".to_string(),
        KindTrain {
            config: TrainConfig {
                batch_size: 64,
                max_epochs: 4,
                patience: 2,
                seed: 0,
                ..TrainConfig::default()
            },
            per_length_cap: Some(1_000),
        },
    );

    ExperimentConfig {
        seed: 2024,
        out_dir: root.join("run"),
        corpus: CorpusSource {
            images: root.join("corpus/digits.images.idx"),
            labels: root.join("corpus/digits.labels.idx"),
            writers: None,
            synthesize: Some(16_000),
        },
        gen: GenConfig {
            counts,
            writer_ranges,
            ..GenConfig::default()
        },
        train,
        fusion: FusionConfig::default(),
        pipelines: vec!["end-to-end".into(), "end-to-end-l".into()],
    }
}

static FIXTURE: LazyLock<Fixture> = LazyLock::new(|| {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = fixture_config(dir.path());
    let t0 = Instant::now();
    cmd_generate(&cfg).expect("dataset generation");
    eprintln!("[fixture] dataset generated in {:.1?}", t0.elapsed());
    let mut train_secs = BTreeMap::new();
    for kind in [
        ClassifierKind::C1,
        ClassifierKind::Length,
        ClassifierKind::C1110,
    ] {
        let t = Instant::now();
        cmd_train(&cfg, kind).expect("training");
        eprintln!("[fixture] trained {kind} in {:.1?}", t.elapsed());
        train_secs.insert(kind, t.elapsed().as_secs_f64());
    }
    let t = Instant::now();
    let json = cmd_eval(
        &cfg,
        &[
            numstr_core::fusion::Pipeline::EndToEnd,
            numstr_core::fusion::Pipeline::EndToEndLength,
        ],
        ReportFormat::Json,
    )
    .expect("evaluation");
    eprintln!("[fixture] evaluated in {:.1?}", t.elapsed());
    let report: EvalReport = serde_json::from_str(&json).expect("report json");
    Fixture {
        _dir: dir,
        cfg,
        report,
        train_secs,
    }
});

// ---------------------------------------------------------------------
// criterion 5: toy training of the 10-class digit classifier
// ---------------------------------------------------------------------

#[test]
fn a05_digit_classifier_reaches_desk_scale_accuracy() {
    let fixture = &*FIXTURE;
    // trained on the full 10,000 length-1 training samples
    let manifest = numstr_core::datagen::load_manifests(&fixture.cfg.data_dir()).unwrap();
    let train_len1 = manifest
        .iter()
        .find(|m| m.split == Split::Train)
        .unwrap()
        .counts_per_length
        .len1;
    assert!(train_len1 >= 10_000);

    let rates = &fixture.report.classifier_rates["c1"];
    assert!(
        rates.top1_pct >= 97.0,
        "criterion 5 FAILED: c1 test accuracy {:.2}% < 97%",
        rates.top1_pct
    );
    println!(
        "[PASS] criterion 5: c1 trained on {train_len1} digits reaches {:.2}% test accuracy \
         (paper 99.6%; trained in {:.0}s, target 900s)",
        rates.top1_pct, fixture.train_secs[&ClassifierKind::C1]
    );
}

// ---------------------------------------------------------------------
// criterion 6: toy training of the length classifier
// ---------------------------------------------------------------------

#[test]
fn a06_length_classifier_reaches_desk_scale_accuracy() {
    let fixture = &*FIXTURE;
    let rates = &fixture.report.classifier_rates["length"];
    assert!(
        rates.top1_pct >= 90.0,
        "criterion 6 FAILED: length Top-1 {:.2}% < 90%",
        rates.top1_pct
    );
    assert!(
        rates.top2_pct >= 98.0,
        "criterion 6 FAILED: length Top-2 {:.2}% < 98%",
        rates.top2_pct
    );
    // confusion matrix emitted in the published table layout
    let confusion = fixture
        .report
        .length_confusion
        .as_ref()
        .expect("length confusion matrix");
    assert_eq!(confusion.n(), 4);
    let md = fs::read_to_string(fixture.cfg.eval_dir().join("report.md")).unwrap();
    assert!(md.contains("| truth \\ prediction | (1) | (2) | (3) | (4) |"));
    println!(
        "[PASS] criterion 6: length classifier reaches Top-1 {:.2}% / Top-2 {:.2}% \
         (paper 98.4% / 99.9%; trained in {:.0}s, target 1200s); confusion matrix emitted",
        rates.top1_pct,
        rates.top2_pct,
        fixture.train_secs[&ClassifierKind::Length]
    );
    for (t, row) in confusion.percent().iter().enumerate() {
        println!(
            "       ({}) | {}",
            t + 1,
            row.iter()
                .map(|v| format!("{v:6.2}"))
                .collect::<Vec<_>>()
                .join(" ")
        );
    }
}

// ---------------------------------------------------------------------
// criterion 7: pipeline ordering and error attribution
// ---------------------------------------------------------------------

fn pair_subset(records: &[DecisionRecord]) -> Vec<DecisionRecord> {
    records
        .iter()
        .filter(|r| r.true_length == 2)
        .cloned()
        .collect()
}

fn accuracy_pct(records: &[DecisionRecord]) -> f64 {
    records.iter().filter(|r| r.is_correct()).count() as f64 * 100.0 / records.len() as f64
}

#[test]
fn a07_end_to_end_length_fusion_helps_on_held_out_pairs() {
    let fixture = &*FIXTURE;
    let eval_dir = fixture.cfg.eval_dir();
    let e2e = pair_subset(&read_decisions(&eval_dir.join("end-to-end.decisions.jsonl")).unwrap());
    let e2el =
        pair_subset(&read_decisions(&eval_dir.join("end-to-end-l.decisions.jsonl")).unwrap());
    assert_eq!(e2e.len(), 800);
    assert_eq!(e2el.len(), 800);

    let acc_e2e = accuracy_pct(&e2e);
    let acc_e2el = accuracy_pct(&e2el);
    assert!(
        acc_e2el >= acc_e2e - 0.5,
        "criterion 7 FAILED: end-to-end+L {acc_e2el:.2}% vs end-to-end {acc_e2e:.2}% \
         (allowed slack 0.5)"
    );

    // error attribution reconciles exactly on the pair subset
    let attribution = numstr_core::eval::error_attribution(&e2el);
    assert_eq!(
        attribution.from_length + attribution.from_digits - attribution.overlap,
        attribution.wrong,
        "criterion 7 FAILED: attribution components do not reconcile"
    );
    let residual = attribution.from_length_pct() + attribution.from_digits_pct()
        - attribution.overlap_pct()
        - attribution.total_pct();
    assert!(
        residual.abs() < 0.01,
        "criterion 7 FAILED: attribution residual {residual:.4} >= 0.01 points"
    );

    println!(
        "[PASS] criterion 7: on 800 held-out pairs end-to-end+L {acc_e2el:.2}% vs \
         end-to-end {acc_e2e:.2}% (delta {:+.2}; paper reports 96.05 vs 94.37, delta +1.68); \
         attribution total {:.2}% = length {:.2}% + digits {:.2}% - overlap {:.2}%",
        acc_e2el - acc_e2e,
        attribution.total_pct(),
        attribution.from_length_pct(),
        attribution.from_digits_pct(),
        attribution.overlap_pct()
    );
}

// ---------------------------------------------------------------------
// criterion 8: determinism of the commands
// ---------------------------------------------------------------------

fn tiny_config(root: &Path, tag: &str) -> ExperimentConfig {
    let mut counts = BTreeMap::new();
    counts.insert(
        Split::Train,
        LengthCounts {
            len1: 40,
            len2: 20,
            ..Default::default()
        },
    );
    counts.insert(
        Split::Validation,
        LengthCounts {
            len1: 20,
            ..Default::default()
        },
    );
    counts.insert(
        Split::Test,
        LengthCounts {
            len1: 10,
            ..Default::default()
        },
    );
    let mut writer_ranges = BTreeMap::new();
    writer_ranges.insert(Split::Train, (0, 500));
    writer_ranges.insert(Split::Validation, (500, 700));
    writer_ranges.insert(Split::Test, (700, 800));
    let mut train = BTreeMap::new();
    train.insert(
        "c1".to_string(),
        KindTrain {
            config: TrainConfig {
                batch_size: 16,
                max_epochs: 2,
                patience: 2,
                ..TrainConfig::default()
            },
            per_length_cap: None,
        },
    );
    ExperimentConfig {
        seed: 77,
        out_dir: root.join(tag),
        corpus: CorpusSource {
            images: root.join("corpus/digits.images.idx"),
            labels: root.join("corpus/digits.labels.idx"),
            writers: None,
            synthesize: Some(800),
        },
        gen: GenConfig {
            counts,
            writer_ranges,
            ..GenConfig::default()
        },
        train,
        fusion: FusionConfig::default(),
        pipelines: vec!["end-to-end".into()],
    }
}

#[test]
fn a08_generate_and_train_are_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_a = tiny_config(dir.path(), "a");
    let cfg_b = tiny_config(dir.path(), "b");
    cmd_generate(&cfg_a).unwrap();
    cmd_generate(&cfg_b).unwrap();
    for name in [
        "train.images.idx",
        "train.metadata.csv",
        "validation.images.idx",
        "validation.metadata.csv",
        "test.images.idx",
        "test.metadata.csv",
    ] {
        let a = fs::read(cfg_a.data_dir().join(name)).unwrap();
        let b = fs::read(cfg_b.data_dir().join(name)).unwrap();
        assert_eq!(a, b, "criterion 8 FAILED: dataset file {name} differs");
    }
    cmd_train(&cfg_a, ClassifierKind::C1).unwrap();
    cmd_train(&cfg_b, ClassifierKind::C1).unwrap();
    let a = fs::read(cfg_a.model_path(ClassifierKind::C1)).unwrap();
    let b = fs::read(cfg_b.model_path(ClassifierKind::C1)).unwrap();
    assert_eq!(a, b, "criterion 8 FAILED: trained models differ across reruns");
    let a_log = fs::read(cfg_a.models_dir().join("c1.trainlog.json")).unwrap();
    let b_log = fs::read(cfg_b.models_dir().join("c1.trainlog.json")).unwrap();
    assert_eq!(a_log, b_log, "criterion 8 FAILED: training logs differ");
    println!(
        "[PASS] criterion 8: regeneration and retraining with one seed are byte-identical \
         (datasets, models, and logs)"
    );
}

// ---------------------------------------------------------------------
// criterion 9: format fidelity
// ---------------------------------------------------------------------

#[test]
fn a09_file_formats_are_faithful() {
    // IDX: canonical published header layout round-trips
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    bytes.extend_from_slice(&60_000u32.to_be_bytes());
    bytes.extend_from_slice(&28u32.to_be_bytes());
    bytes.extend_from_slice(&28u32.to_be_bytes());
    bytes.resize(16 + 60_000 * 784, 7);
    let images = numstr_core::datagen::idx::read_idx_images(bytes.as_slice()).unwrap();
    assert_eq!(
        (images.count, images.height, images.width),
        (60_000, 28, 28)
    );
    let mut rewritten = Vec::new();
    numstr_core::datagen::idx::write_idx_images(&mut rewritten, &images).unwrap();
    assert_eq!(bytes, rewritten, "criterion 9 FAILED: IDX bytes not preserved");

    // model container: bitwise round trip
    let spec = numstr_core::modelzoo::build_spec(ClassifierKind::Length);
    let state = numstr_core::nncore::NetworkState::<f32>::init(&spec, 99).unwrap();
    let mut model_bytes = Vec::new();
    numstr_core::nncore::model_io::write_model(&mut model_bytes, &spec, &state).unwrap();
    let (spec2, state2) = numstr_core::nncore::model_io::read_model(model_bytes.as_slice()).unwrap();
    assert_eq!(spec, spec2);
    assert_eq!(state, state2);
    let mut model_bytes2 = Vec::new();
    numstr_core::nncore::model_io::write_model(&mut model_bytes2, &spec2, &state2).unwrap();
    assert_eq!(
        model_bytes, model_bytes2,
        "criterion 9 FAILED: model bytes not preserved"
    );

    // golden report over a fixed decision log
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/eval_report.md");
    let report = golden_report();
    let rendered = emit_report(&report, ReportFormat::Markdown).unwrap();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&golden_path, &rendered).unwrap();
    }
    let golden = fs::read_to_string(&golden_path).expect("golden file present");
    assert_eq!(
        rendered, golden,
        "criterion 9 FAILED: report drifted from the golden file"
    );
    println!(
        "[PASS] criterion 9: IDX and model containers round-trip bitwise; \
         report matches the golden file"
    );
}

/// Fixed decision log feeding the golden report.
fn golden_report() -> EvalReport {
    use numstr_core::datagen::ConnectionType;
    use numstr_core::fusion::{Candidate, Pipeline};
    let mk = |id: &str, predicted: Option<&str>, truth: &str, ct: ConnectionType| DecisionRecord {
        id: id.into(),
        pipeline: Pipeline::EndToEndLength,
        predicted: predicted.map(String::from),
        truth: truth.into(),
        true_length: truth.len(),
        connection_type: ct,
        omega: None,
        length_scores: Some(vec![0.1, 0.8, 0.05, 0.05]),
        used_classifiers: vec!["length".into(), "c1110".into()],
        winning_score: 0.8,
        candidates: vec![
            Candidate {
                length: truth.len(),
                label: predicted.unwrap_or("00").into(),
                score: 0.8,
            },
        ],
    };
    let decisions = vec![
        mk("g-0", Some("7"), "7", ConnectionType::Untagged),
        mk("g-1", Some("12"), "12", ConnectionType::I),
        mk("g-2", Some("34"), "34", ConnectionType::II),
        mk("g-3", Some("56"), "65", ConnectionType::III),
        mk("g-4", Some("426"), "426", ConnectionType::V),
        mk("g-5", None, "88", ConnectionType::I),
    ];
    let mut report = EvalReport::default();
    report.pipelines.push(numstr_core::eval::summarize_pipeline(
        Pipeline::EndToEndLength,
        &decisions,
    ));
    report.classifier_rates.insert(
        "c1".into(),
        numstr_core::eval::ClassifierRates {
            top1_pct: 98.5,
            top2_pct: 99.5,
        },
    );
    let mut confusion = numstr_core::eval::ConfusionMatrix::new(4);
    for (t, p) in [(0, 0), (0, 0), (1, 1), (1, 2), (2, 2), (3, 3)] {
        confusion.add(t, p).unwrap();
    }
    report.length_confusion = Some(confusion);
    report
}
