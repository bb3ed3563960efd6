//! Acceptance suite: one PASS/FAIL line per criterion, in order.
//!
//! Runs without the libtest harness so the lines come out in order and
//! uninterleaved. Exits non-zero when a criterion fails, unless it is listed in
//! `KNOWN_UNATTAINABLE`; those still print FAIL.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use takunet_core::arch::{count_flops, count_params, derive_channel_config, ArchConfig, DeriveConstraints, Mode, Model};
use takunet_core::data::{index_dataset, mix_seed, AugmentPolicy, BatchIterator, Split, SplitMode, SyntheticSource};
use takunet_core::eval::bench_activations;
use takunet_core::testutil::{gradcheck, uniform};
use takunet_core::train::{lr_at_epoch, train_epoch, RmsProp, TrainConfig};
use takunet_core::Precision;

// Reference values and tolerances.
const REF_PARAMS: usize = 37_685;
const REF_PARAMS_4: usize = 37_444;
const PARAMS_FALLBACK_TOL: f64 = 0.05;
const DERIVE_BUDGET_S: f64 = 300.0;
const REF_FLOPS_240: f64 = 35.93e6;
const REF_FLOPS_224: f64 = 31.38e6;
const FLOPS_TOL: f64 = 0.02;
const REF_SIZE_MB: f64 = 0.15;
const OP_TOL: f64 = 1e-4;
const OP_SHAPES: usize = 20;
const GRAPH_TOL: f64 = 1e-3;
const GRAD_BUDGET_S: f64 = 120.0;
const SMOKE_IMAGES: usize = 64;
const SMOKE_ACC: f64 = 0.99;
const SMOKE_MAX_EPOCHS: usize = 200;
const ABLATION_SEEDS: u64 = 5;
const ABLATION_MAX_EPOCHS: usize = 15;
const LR_REL_TOL: f64 = 1e-12;
const F16_TOL: f64 = 1e-2;
const F16_INPUTS: usize = 100;
const ACT_SHAPE: (usize, usize) = (10_000, 100);
const ACT_ITERS: usize = 10;
const ACT_REPS: usize = 10;
const ACT_MIN_OK: usize = 9;

/// Criteria that cannot pass as written, with the reason.
const KNOWN_UNATTAINABLE: &[(&str, &str)] = &[(
    "AC9",
    "the AIDER table lists train+test above each class total (395+146 > 511), so no split of the stated totals matches",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b) / b
}

fn ac1() -> Outcome {
    let t = Instant::now();
    let rep = derive_channel_config(&DeriveConstraints::default()).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let best = rep.best();
    let delta = best.params as i64 - best.params_fewer_classes as i64;
    let ref_delta = (REF_PARAMS - REF_PARAMS_4) as i64;
    let exact = best.params == REF_PARAMS && best.params_fewer_classes == REF_PARAMS_4;
    let within = rel(best.params as f64, REF_PARAMS as f64).abs() <= PARAMS_FALLBACK_TOL
        && rel(best.params_fewer_classes as f64, REF_PARAMS_4 as f64).abs() <= PARAMS_FALLBACK_TOL;
    let widths = best.config.stage_out_channels;
    let pass = delta == ref_delta && (exact || within) && widths[3] == 240 && secs < DERIVE_BUDGET_S;
    outcome(
        pass,
        format!(
            "widths {widths:?}: {} params vs {REF_PARAMS} ({:+.2}%), {} at 4 classes vs {REF_PARAMS_4}; delta {delta} (need {ref_delta}); \
             exact match: {} of {} candidates, {}; search {secs:.2}s",
            best.params,
            100.0 * rel(best.params as f64, REF_PARAMS as f64),
            best.params_fewer_classes,
            rep.exact.len(),
            rep.evaluated,
            if exact { "exact" } else { "within 5% fallback" },
        ),
    )
}

fn ac2() -> Outcome {
    let cfg = ArchConfig::default();
    let f240 = count_flops(&cfg, (240, 240)).unwrap() as f64;
    let f224 = count_flops(&cfg, (224, 224)).unwrap() as f64;
    let (e240, e224) = (rel(f240, REF_FLOPS_240), rel(f224, REF_FLOPS_224));
    outcome(
        e240.abs() <= FLOPS_TOL && e224.abs() <= FLOPS_TOL,
        format!(
            "{:.3}M @240 ({:+.3}%), {:.3}M @224 ({:+.3}%), tolerance 2%",
            f240 / 1e6,
            100.0 * e240,
            f224 / 1e6,
            100.0 * e224
        ),
    )
}

fn ac3() -> Outcome {
    let cfg = ArchConfig::default();
    let params = count_params(&cfg).unwrap();
    let m32 = Model::new(&cfg, 0).unwrap();
    let m16 = m32.cast(Precision::F16);
    let (b16, b32) = (m16.param_bytes(), m32.param_bytes());
    outcome(
        b16 == 2 * params && b32 == 4 * params && m32.param_count() == params,
        format!(
            "f16 {b16} B = 2x{params} ({:.4} MB), f32 {b32} B = 4x{params} ({:.4} MB); reference {REF_SIZE_MB} MB lies between",
            b16 as f64 / 1e6,
            b32 as f64 / 1e6
        ),
    )
}

fn mini() -> ArchConfig {
    ArchConfig {
        input_size: (64, 64),
        stem_channels: 4,
        stage_depths: [1, 1, 1, 1],
        stage_out_channels: [4, 8, 8, 8],
        ..Default::default()
    }
}

fn ac4() -> Outcome {
    let t = Instant::now();
    let ops = gradcheck::all_ops(OP_SHAPES, 0xACCE97);
    let worst_op = ops.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).unwrap();
    let graph = gradcheck::full_graph(&mini(), 2, 0xACCE97);
    let secs = t.elapsed().as_secs_f64();
    let ops_ok = ops.iter().all(|r| r.cases >= OP_SHAPES && r.max_rel_err <= OP_TOL);
    outcome(
        ops_ok && graph.max_rel_err <= GRAPH_TOL && secs < GRAD_BUDGET_S,
        format!(
            "{} ops x {OP_SHAPES} shapes, worst {} {:.2e} (tol {OP_TOL:e}); full graph {:.2e} over {} entries, {} kinks (tol {GRAPH_TOL:e}); {secs:.1}s",
            ops.len(),
            worst_op.op,
            worst_op.max_rel_err,
            graph.max_rel_err,
            graph.entries,
            graph.kinks
        ),
    )
}

/// Epochs of the default recipe until an epoch's train-mode accuracy reaches
/// the threshold, with the per-epoch accuracies seen.
fn epochs_to_fit(arch: &ArchConfig, seed: u64, max_epochs: usize) -> (Option<usize>, Vec<f64>) {
    let src = SyntheticSource::new(SMOKE_IMAGES, arch.num_classes, arch.input_size, 0);
    let cfg = TrainConfig { seed, k_folds: 1, ..Default::default() };
    let idx: Vec<usize> = (0..SMOKE_IMAGES).collect();
    let policy = AugmentPolicy::default();
    let mut model = Model::new(arch, seed).unwrap();
    let mut opt = RmsProp::new(&model);
    let mut accs = Vec::new();
    for epoch in 0..max_epochs {
        let shuffle = mix_seed(seed, epoch as u64 + 1);
        let it = BatchIterator::new(&src, &idx, cfg.batch_size, arch.input_size, Some(shuffle))
            .unwrap()
            .with_augmentation(&policy, mix_seed(shuffle, 0xA06));
        let stats = train_epoch(&mut model, it, &mut opt, &cfg, epoch).unwrap();
        accs.push(stats.accuracy);
        if stats.accuracy >= SMOKE_ACC {
            return (Some(epoch + 1), accs);
        }
    }
    (None, accs)
}

fn fmt_epochs(e: Option<usize>) -> String {
    e.map_or_else(|| format!(">{ABLATION_MAX_EPOCHS}"), |e| e.to_string())
}

fn ac5() -> Outcome {
    let t = Instant::now();
    let arch = ArchConfig::default();
    let (hit, accs) = epochs_to_fit(&arch, 0, SMOKE_MAX_EPOCHS);
    let smoke_s = t.elapsed().as_secs_f64();
    let accs: Vec<String> = accs.iter().map(|a| format!("{a:.3}")).collect();

    // Logged only: dense connections off must not converge faster.
    let off = ArchConfig { dense_connections: false, ..arch.clone() };
    let mut rows = Vec::new();
    let mut faster = 0;
    for seed in 1..=ABLATION_SEEDS {
        let (on_e, _) = epochs_to_fit(&arch, seed, ABLATION_MAX_EPOCHS);
        let (off_e, _) = epochs_to_fit(&off, seed, ABLATION_MAX_EPOCHS);
        let key = |e: Option<usize>| e.unwrap_or(usize::MAX);
        if key(off_e) < key(on_e) {
            faster += 1;
        }
        rows.push(format!("s{seed} {}/{}", fmt_epochs(on_e), fmt_epochs(off_e)));
    }
    outcome(
        hit.is_some(),
        format!(
            "{SMOKE_IMAGES} synthetic 240x240 images, default recipe: acc >= {SMOKE_ACC} at epoch {} (accs {}, {smoke_s:.0}s); \
             dense on/off epochs [{}], off faster in {faster}/{ABLATION_SEEDS} (logged)",
            hit.map_or("none".into(), |e| e.to_string()),
            accs.join(" "),
            rows.join(", "),
        ),
    )
}

fn ac6() -> Outcome {
    let cfg = TrainConfig::default();
    let mut worst = 0.0f64;
    for t in 0..300usize {
        let mut oracle = 1e-3;
        for _ in 0..t / 2 {
            oracle *= 0.975;
        }
        worst = worst.max((lr_at_epoch(&cfg, t) - oracle).abs() / oracle);
    }
    let spots = [(0, 1e-3), (2, 9.75e-4), (5, 9.50625e-4)];
    let spot_err = spots
        .iter()
        .map(|&(t, v)| (lr_at_epoch(&cfg, t) - v).abs() / v)
        .fold(0.0, f64::max);
    outcome(
        worst <= LR_REL_TOL && spot_err <= LR_REL_TOL,
        format!("t in 0..299 max rel err {worst:.1e}; spots t=0/2/5 max rel err {spot_err:.1e} (tol {LR_REL_TOL:e})"),
    )
}

fn ac7() -> Outcome {
    let cfg = ArchConfig::default();
    let mut m32 = Model::new(&cfg, 7).unwrap();
    let mut m16 = m32.cast(Precision::F16);
    let mut worst = 0.0f64;
    let batch = 10;
    for b in 0..F16_INPUTS / batch {
        let x = uniform(&[batch, 3, 240, 240], -1.0, 1.0, 100 + b as u64, Precision::F16);
        let a = m32.forward(&x.cast(Precision::F32), Mode::Eval).unwrap();
        let h = m16.forward(&x, Mode::Eval).unwrap();
        worst = worst.max(a.max_abs_diff(&h));
    }
    outcome(
        worst <= F16_TOL,
        format!("{F16_INPUTS} inputs in [-1, 1], max |logit f16 - f32| = {worst:.2e} (tol {F16_TOL:e})"),
    )
}

fn ac8() -> Outcome {
    let mut ok = 0;
    let mut orders = Vec::new();
    for _ in 0..ACT_REPS {
        let rows = bench_activations(ACT_SHAPE, ACT_ITERS, false).unwrap();
        let time = |name: &str| rows.iter().find(|r| r.activation == name).unwrap().total_ms;
        let fast = ["ReLU", "ReLU6", "LeakyReLU"].map(time);
        let mid = ["ELU", "CELU"].map(time);
        let gelu = time("GELU");
        let fast_max = fast.iter().copied().fold(0.0, f64::max);
        let mid_min = mid.iter().copied().fold(f64::INFINITY, f64::min);
        let mid_max = mid.iter().copied().fold(0.0, f64::max);
        if fast_max < mid_min && gelu > mid_max {
            ok += 1;
        }
        orders.push(rows.iter().map(|r| r.activation.as_str()).collect::<Vec<_>>().join("<"));
    }
    orders.dedup();
    outcome(
        ok >= ACT_MIN_OK,
        format!("{ok}/{ACT_REPS} repetitions ordered (need {ACT_MIN_OK}); observed {}", orders.join(" | ")),
    )
}

fn touch(dir: &Path, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        std::fs::File::create(dir.join(format!("{i:05}.jpg"))).unwrap();
    }
}

fn ac9() -> Outcome {
    // (class, total, reference train, reference test)
    let aider = [
        ("collapsed_building", 511, 395, 146),
        ("fire", 521, 403, 148),
        ("flood", 526, 406, 150),
        ("normal", 4390, 3250, 1540),
        ("traffic_incident", 485, 376, 139),
    ];
    let tmp = tempfile::tempdir().unwrap();
    for (c, n, _, _) in aider {
        touch(&tmp.path().join(c), n);
    }
    let idx = index_dataset(tmp.path(), &SplitMode::parse("aider").unwrap(), 0).unwrap();
    let mut aider_ok = true;
    let mut rows = Vec::new();
    for ((c, _, tr, te), [got_tr, _, got_te]) in aider.iter().zip(idx.counts()) {
        aider_ok &= (got_tr, got_te) == (*tr, *te);
        rows.push(format!("{c} {got_tr}/{got_te} vs {tr}/{te}"));
    }

    // (class, train, val, test). The fire row prints 436 validation images, but
    // its row total (4,384) and the validation column total (1,670) both imply 439.
    let v2 = [("earthquake", 1927, 239, 239), ("fire", 3509, 439, 436), ("flood", 4063, 505, 502), ("normal", 3900, 487, 477)];
    let tmp2 = tempfile::tempdir().unwrap();
    for (c, tr, va, te) in v2 {
        for (split, n) in [(Split::Train, tr), (Split::Val, va), (Split::Test, te)] {
            touch(&tmp2.path().join(split.name()).join(c), n);
        }
    }
    let idx2 = index_dataset(tmp2.path(), &SplitMode::parse("aiderv2").unwrap(), 0).unwrap();
    let want: Vec<[usize; 3]> = v2.iter().map(|&(_, a, b, c)| [a, b, c]).collect();
    let totals = idx2.split_totals();
    let v2_ok = idx2.counts() == want && totals == [13_399, 1_670, 1_654];
    outcome(
        aider_ok && v2_ok,
        format!(
            "AIDER {} [{}]; AIDERv2 {} per class and totals {}/{}/{} (fire val 439 from the row and column totals)",
            if aider_ok { "match" } else { "mismatch" },
            rows.join(", "),
            if v2_ok { "match" } else { "mismatch" },
            totals[0],
            totals[1],
            totals[2]
        ),
    )
}

fn ac10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let synth = tmp.path().join("synth");
    SyntheticSource::new(40, 5, (64, 64), 3).write_tree(&synth, None).unwrap();
    let tiny = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.cfg");
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_takunet"))
            .args(["train", "--config"])
            .arg(&tiny)
            .arg("--data")
            .arg(&synth)
            .arg("--out")
            .arg(&out)
            .args(["--seed", "7", "--no-timing", "k_folds=2", "epochs=2"])
            .stderr(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "train exited with {status}");
        out
    };
    let (a, b) = (run("a"), run("b"));
    let files = ["metrics.jsonl", "model.tkck"];
    let same: Vec<bool> = files
        .iter()
        .map(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap())
        .collect();
    let lines = std::fs::read_to_string(a.join("metrics.jsonl")).unwrap().lines().count();
    let bytes = std::fs::metadata(a.join("model.tkck")).unwrap().len();
    outcome(
        same.iter().all(|&s| s),
        format!("two CLI train runs, seed 7, 2 folds: metrics.jsonl ({lines} lines) identical: {}, model.tkck ({bytes} B) identical: {}", same[0], same[1]),
    )
}

type Check = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("AC1", ac1),
        ("AC2", ac2),
        ("AC3", ac3),
        ("AC4", ac4),
        ("AC5", ac5),
        ("AC6", ac6),
        ("AC7", ac7),
        ("AC8", ac8),
        ("AC9", ac9),
        ("AC10", ac10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC")).collect();
    let mut blocking = Vec::new();
    for (id, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|a| a == id) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        let known = KNOWN_UNATTAINABLE.iter().find(|(k, _)| *k == id);
        println!("{id:<4} {} {} [{:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, t.elapsed().as_secs_f64());
        match (o.pass, known) {
            (false, Some((_, why))) => println!("     known unattainable: {why}"),
            (false, None) => blocking.push(id),
            _ => {}
        }
    }
    if !blocking.is_empty() {
        eprintln!("failing criteria: {}", blocking.join(", "));
        std::process::exit(1);
    }
}
