//! Independent oracles and the acceptance checks shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fiberseg::evaluation::{split_dataset, FoldAssignment, SetKind, DEFAULT_MAX_ATTEMPTS};
use fiberseg::losses::{focal_loss, focal_loss_gradient, mean_class_accuracy_n, FocalLossConfig};
use fiberseg::methods::{fit, run_method, DataSplit, Init, MethodConfig, MethodId};
use fiberseg::nn::{conv_forward, Tensor, Window};
use fiberseg::synthgen::{generate_dataset, GeneratorSpec, LabeledScan};
use fiberseg::transfer::{inflate_center, inflate_stack, NamedTensor, TensorKind};
use fiberseg::voxcore::OrientationClass;

pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn default_dataset(first_seed: u64) -> Vec<LabeledScan> {
    generate_dataset(&GeneratorSpec::default(), first_seed..first_seed + 12).expect("default dataset")
}

/// Plain 2D cross-correlation in f64: x is (c, h, w), k is (o, c, kh, kw),
/// zero padding `pad` on both spatial axes, unit stride.
pub fn corr2d(x: &[f64], c: usize, h: usize, w: usize, k: &[f64], o: usize, kh: usize, kw: usize, pad: [usize; 2]) -> Vec<f64> {
    let oh = h + 2 * pad[0] + 1 - kh;
    let ow = w + 2 * pad[1] + 1 - kw;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for y in 0..oh {
            for xx in 0..ow {
                let mut s = 0.0;
                for ic in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            let (sy, sx) = (y + i, xx + j);
                            if sy < pad[0] || sx < pad[1] || sy - pad[0] >= h || sx - pad[1] >= w {
                                continue;
                            }
                            s += x[(ic * h + sy - pad[0]) * w + sx - pad[1]] * k[((oc * c + ic) * kh + i) * kw + j];
                        }
                    }
                }
                out[(oc * oh + y) * ow + xx] = s;
            }
        }
    }
    out
}

fn rel_err(got: &[f32], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    got.iter()
        .zip(want)
        .map(|(g, w)| (*g as f64 - w).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Grid values k/64 in [-2, 2], exact in f32.
fn exact_values(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-128i32..=128) as f64 / 64.0).collect()
}

fn random_kernel(r: &mut ChaCha8Rng, o: usize, c: usize, kh: usize, kw: usize) -> NamedTensor {
    let data: Vec<f32> = (0..o * c * kh * kw).map(|_| r.gen_range(-1.0f32..1.0)).collect();
    NamedTensor::from_f32("k", TensorKind::Kernel2d, vec![o, c, kh, kw], &data).unwrap()
}

/// Criterion 1: stack inflation on depth-replicated input and center
/// inflation on arbitrary input both reproduce 2D correlation.
pub fn criterion_transfer(pairs: usize) -> Check {
    let start = std::time::Instant::now();
    let mut r = rng(1);
    let (mut worst_stack, mut worst_center) = (0.0f64, 0.0f64);
    for _ in 0..pairs {
        let (o, c) = (r.gen_range(1..=4), r.gen_range(1..=3));
        let (kh, kw) = (2 * r.gen_range(0..=2) + 1, 2 * r.gen_range(0..=2) + 1);
        let (h, w) = (r.gen_range(kh..=12), r.gen_range(kw..=12));
        let pad = [kh / 2, kw / 2];
        let k2 = random_kernel(&mut r, o, c, kh, kw);
        let bias = vec![0.0f32; o];

        // stack: every depth copy sees the same 2D input
        let d = r.gen_range(1..=5);
        let depth = d + r.gen_range(0..=3);
        let x2 = exact_values(&mut r, c * h * w);
        let want = corr2d(&x2, c, h, w, &k2.data, o, kh, kw, pad);
        let k3 = inflate_stack(&k2, d).unwrap();
        let mut x3 = Vec::with_capacity(c * depth * h * w);
        for ch in 0..c {
            for _ in 0..depth {
                x3.extend(x2[ch * h * w..(ch + 1) * h * w].iter().map(|v| *v as f32));
            }
        }
        let xt = Tensor::from_vec([c, depth, h, w], x3).unwrap();
        let win = Window {
            kernel: [d, kh, kw],
            stride: [1, 1, 1],
            pad: [0, pad[0], pad[1]],
        };
        let (y, _) = conv_forward(&xt, &k3.to_f32(), &bias, o, &win, false);
        let od = depth - d + 1;
        let plane = h * w;
        for z in 0..od {
            let got: Vec<f32> = (0..o)
                .flat_map(|oc| y.data[(oc * od + z) * plane..(oc * od + z + 1) * plane].to_vec())
                .collect();
            worst_stack = worst_stack.max(rel_err(&got, &want));
        }

        // center: output slice z equals 2D correlation of input slice z
        let dc = 2 * r.gen_range(0..=2) + 1;
        let depth = r.gen_range(1..=6);
        let x3 = exact_values(&mut r, c * depth * h * w);
        let k3 = inflate_center(&k2, dc).unwrap();
        let xt = Tensor::from_vec([c, depth, h, w], x3.iter().map(|v| *v as f32).collect()).unwrap();
        let win = Window {
            kernel: [dc, kh, kw],
            stride: [1, 1, 1],
            pad: [dc / 2, pad[0], pad[1]],
        };
        let (y, _) = conv_forward(&xt, &k3.to_f32(), &bias, o, &win, false);
        for z in 0..depth {
            let slice: Vec<f64> = (0..c)
                .flat_map(|ch| x3[(ch * depth + z) * plane..(ch * depth + z + 1) * plane].to_vec())
                .collect();
            let want = corr2d(&slice, c, h, w, &k2.data, o, kh, kw, pad);
            let got: Vec<f32> = (0..o)
                .flat_map(|oc| y.data[(oc * depth + z) * plane..(oc * depth + z + 1) * plane].to_vec())
                .collect();
            worst_center = worst_center.max(rel_err(&got, &want));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Check::new(
        worst_stack <= 1e-5 && worst_center <= 1e-6 && secs < 60.0,
        format!("{pairs} pairs, stack rel err {worst_stack:.2e}, center rel err {worst_center:.2e}, {secs:.1} s"),
    )
}

fn random_probs(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| r.gen_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn one_hot(n: usize, t: usize) -> Vec<f64> {
    (0..n).map(|i| if i == t { 1.0 } else { 0.0 }).collect()
}

/// Criterion 2: focal loss reduces to cross-entropy, its gradient matches
/// finite differences, and the worked value reproduces.
pub fn criterion_focal() -> Check {
    let mut r = rng(2);
    let mut worst_ce = 0.0f64;
    for _ in 0..10_000 {
        let n = r.gen_range(2..=6);
        let p = random_probs(&mut r, n);
        let t = r.gen_range(0..n);
        let got = focal_loss(&p, &one_hot(n, t), &FocalLossConfig::cross_entropy(n)).unwrap();
        worst_ce = worst_ce.max((got + p[t].ln()).abs());
    }
    let mut worst_grad = 0.0f64;
    let eps = 1e-6;
    for _ in 0..1_000 {
        let n = 3;
        let cfg = FocalLossConfig::new(r.gen_range(0.0..5.0), (0..n).map(|_| r.gen_range(0.1..2.0)).collect()).unwrap();
        let p = random_probs(&mut r, n);
        let truth = one_hot(n, r.gen_range(0..n));
        let g = focal_loss_gradient(&p, &truth, &cfg).unwrap();
        for i in 0..n {
            let (mut hi, mut lo) = (p.clone(), p.clone());
            hi[i] += eps;
            lo[i] -= eps;
            let fd = (focal_loss(&hi, &truth, &cfg).unwrap() - focal_loss(&lo, &truth, &cfg).unwrap()) / (2.0 * eps);
            let err = (g[i] - fd).abs() / fd.abs().max(g[i].abs()).max(1e-8);
            let err = if fd.abs() < 1e-9 && g[i].abs() < 1e-9 { 0.0 } else { err };
            worst_grad = worst_grad.max(err);
        }
    }
    let worked = focal_loss(&[0.5, 0.3, 0.2], &[1.0, 0.0, 0.0], &FocalLossConfig::new(2.0, vec![1.0; 3]).unwrap()).unwrap();
    let worked_err = (worked - 0.17328679).abs();
    Check::new(
        worst_ce <= 1e-9 && worst_grad <= 1e-4 && worked_err <= 1e-7,
        format!("CE diff {worst_ce:.1e}, gradient rel err {worst_grad:.1e}, worked value {worked:.8}"),
    )
}

/// Mean of per-class recalls from an explicit confusion matrix, as exact rationals.
pub fn meanacc_oracle(pred: &[usize], truth: &[usize], n: usize) -> f64 {
    let mut cm = vec![vec![0u64; n]; n];
    for (&p, &t) in pred.iter().zip(truth) {
        cm[t][p] += 1;
    }
    let recalls: Vec<f64> = (0..n)
        .filter(|&i| cm[i].iter().sum::<u64>() > 0)
        .map(|i| cm[i][i] as f64 / cm[i].iter().sum::<u64>() as f64)
        .collect();
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

/// Criterion 3: mean class accuracy against the confusion-matrix oracle.
pub fn criterion_meanacc() -> Check {
    let mut r = rng(3);
    let n = 3;
    let mut mismatches = 0;
    let mut balanced_mismatches = 0;
    let mut balanced = 0;
    for i in 0..10_000 {
        let (pred, truth): (Vec<usize>, Vec<usize>) = if i % 4 == 0 {
            // balanced instance: every class equally often in truth
            let per = r.gen_range(1..=16);
            let truth: Vec<usize> = (0..n).flat_map(|c| std::iter::repeat(c).take(per)).collect();
            let pred = truth.iter().map(|_| r.gen_range(0..n)).collect();
            (pred, truth)
        } else {
            let k = r.gen_range(1..=50);
            ((0..k).map(|_| r.gen_range(0..n)).collect(), (0..k).map(|_| r.gen_range(0..n)).collect())
        };
        let got = mean_class_accuracy_n(&pred, &truth, n).unwrap();
        if got != meanacc_oracle(&pred, &truth, n) {
            mismatches += 1;
        }
        if i % 4 == 0 {
            balanced += 1;
            let plain = pred.iter().zip(&truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64;
            if (got - plain).abs() > 1e-12 {
                balanced_mismatches += 1;
            }
        }
    }
    use OrientationClass::*;
    let truth = [S, S, D, N, N, N, N];
    let pred = [S, D, D, N, N, N, S];
    let worked = fiberseg::losses::mean_class_accuracy(&pred, &truth).unwrap();
    Check::new(
        mismatches == 0 && balanced_mismatches == 0 && worked == 0.75,
        format!(
            "{mismatches} oracle mismatches in 10000, {balanced_mismatches} of {balanced} balanced differ from accuracy, worked example {worked}"
        ),
    )
}

/// Re-counts an assignment from raw label grids; returns the violations.
pub fn split_violations(a: &FoldAssignment, scans: &[LabeledScan]) -> Vec<String> {
    let mut v = Vec::new();
    let by_id: BTreeMap<&str, &LabeledScan> = scans.iter().map(|s| (s.volume.scan_id.as_str(), s)).collect();
    let ids: BTreeSet<&str> = a.records.iter().map(|r| r.scan_id.as_str()).collect();
    if ids.len() != a.records.len() || ids != by_id.keys().copied().collect() {
        v.push("records do not partition the dataset".into());
    }
    let mut counts = [0usize; 3];
    let mut cells = [[0usize; 3]; 3];
    let mut group_sets: BTreeMap<&str, BTreeSet<SetKind>> = BTreeMap::new();
    for rec in &a.records {
        let k = match rec.set {
            SetKind::Train => 0,
            SetKind::Val => 1,
            SetKind::Test => 2,
        };
        counts[k] += 1;
        let Some(scan) = by_id.get(rec.scan_id.as_str()) else { continue };
        group_sets.entry(scan.volume.group_id.as_str()).or_default().insert(rec.set);
        for c in scan.labels.cells() {
            let j = match c {
                OrientationClass::S => 0,
                OrientationClass::D => 1,
                OrientationClass::N => 2,
            };
            cells[k][j] += 1;
        }
    }
    let n = scans.len() as f64;
    for (k, frac) in [0.5, 0.25, 0.25].iter().enumerate() {
        if (counts[k] as f64 - frac * n).abs() > 1.0 {
            v.push(format!("set {k} has {} scans, target {}", counts[k], frac * n));
        }
        let total: usize = cells[k].iter().sum();
        for (j, name) in [(0, "S"), (1, "D")] {
            if total == 0 || (cells[k][j] as f64) < 0.02 * total as f64 {
                v.push(format!("set {k} has {} of {total} {name} cells", cells[k][j]));
            }
        }
    }
    for (g, sets) in group_sets {
        if sets.len() > 1 {
            v.push(format!("group {g} spans {sets:?}"));
        }
    }
    v
}

/// Criterion 4: 100 seeded splits of the default dataset all pass the re-check.
pub fn criterion_splits() -> Check {
    let scans = default_dataset(0);
    let mut failures = Vec::new();
    for seed in 0..100 {
        match split_dataset(&scans, seed, DEFAULT_MAX_ATTEMPTS) {
            Ok(a) => {
                let v = split_violations(&a, &scans);
                if !v.is_empty() {
                    failures.push(format!("seed {seed}: {}", v.join("; ")));
                }
            }
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    Check::new(
        failures.is_empty(),
        if failures.is_empty() {
            "100 of 100 splits valid".to_string()
        } else {
            format!("{} failures, first: {}", failures.len(), failures[0])
        },
    )
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Criterion 5: five-seed synthetic benchmark of all six methods.
pub fn criterion_benchmark(seeds: u64) -> Check {
    let start = std::time::Instant::now();
    let mut accs: BTreeMap<MethodId, Vec<f64>> = BTreeMap::new();
    let mut errors = Vec::new();
    for seed in 0..seeds {
        let scans = default_dataset(100 * seed);
        let split = split_dataset(&scans, seed, DEFAULT_MAX_ATTEMPTS).and_then(|a| {
            let s = a.apply(&scans)?;
            Ok(DataSplit { train: s.train, val: s.val, test: s.test })
        });
        let split = match split {
            Ok(s) => s,
            Err(e) => {
                errors.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let cfg = MethodConfig { seed, ..MethodConfig::default() };
        for m in MethodId::ALL {
            match run_method(m, &cfg, &split) {
                Ok(r) => accs.entry(m).or_default().push(r.report.meanacc),
                Err(e) => errors.push(format!("seed {seed} {m}: {e}")),
            }
        }
    }
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let med: BTreeMap<MethodId, f64> = accs.iter().map(|(m, v)| (*m, median(&mut v.clone()))).collect();
    let get = |m| med.get(&m).copied().unwrap_or(f64::NAN);
    let (two, fou, c3, s2) = (
        get(MethodId::Twostage3d),
        get(MethodId::Fourier2d),
        get(MethodId::Classify3d),
        get(MethodId::Segment2d),
    );
    let pass = errors.is_empty() && two >= 0.85 && fou >= 0.45 && two > fou && two >= c3 && c3 >= s2 && minutes <= 60.0;
    let medians: Vec<String> = MethodId::ALL.iter().map(|m| format!("{m} {:.3}", get(*m))).collect();
    let mut detail = format!("medians: {}; {minutes:.1} min", medians.join(", "));
    if !errors.is_empty() {
        detail.push_str(&format!("; errors: {}", errors.join(" | ")));
    }
    Check::new(pass, detail)
}

/// Criterion 6: paired seeds, transferred vs random initialization of the
/// 3D classifier under a 10-epoch budget, compared on validation meanacc.
pub fn criterion_transfer_benefit(seeds: u64) -> Check {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..seeds {
        let scans = default_dataset(100 * seed);
        let a = split_dataset(&scans, seed, DEFAULT_MAX_ATTEMPTS).expect("split");
        let s = a.apply(&scans).expect("apply");
        let mut vals = Vec::new();
        for init in [Init::Pretrained, Init::Random] {
            let mut cfg = MethodConfig { seed, ..MethodConfig::default() };
            cfg.classify3d.init = init;
            cfg.classify3d.train.epochs = 10;
            let (_, h) = fit(MethodId::Classify3d, &cfg, &s.train, &s.val).expect("fit");
            let best = h
                .iter()
                .flat_map(|(_, h)| h.records.iter().filter_map(|r| r.val_meanacc))
                .fold(0.0, f64::max);
            vals.push(best);
        }
        if vals[0] >= vals[1] {
            wins += 1;
        }
        pairs.push(format!("{:.2}/{:.2}", vals[0], vals[1]));
    }
    Check::new(
        wins >= 4,
        format!("transferred >= random in {wins} of {seeds} seeds (transferred/random: {})", pairs.join(" ")),
    )
}

fn read_outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Criterion 7: two `crossval --k 2` runs with the same seed write identical
/// report records (timings excluded).
pub fn criterion_determinism(bin: &str) -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let gen = Command::new(bin)
        .args(["generate", "--spec", "default", "--seeds", "0..11", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    if !gen.status.success() {
        return Check::new(false, format!("generate failed: {}", String::from_utf8_lossy(&gen.stderr)));
    }
    let mut runs = Vec::new();
    for method in ["twostage3d", "fourier2d"] {
        for rep in 0..2 {
            let out = tmp.path().join(format!("cv_{method}_{rep}"));
            let st = Command::new(bin)
                .args(["crossval", "--method", method, "--k", "2", "--seed", "7", "--data"])
                .arg(&data)
                .arg("--out")
                .arg(&out)
                .output()
                .unwrap();
            if !st.status.success() {
                return Check::new(false, format!("crossval {method} failed: {}", String::from_utf8_lossy(&st.stderr)));
            }
            let mut files = read_outputs(&out);
            files.remove("timings.csv");
            runs.push((method, files));
        }
    }
    let mut diffs = Vec::new();
    let mut compared = 0;
    for pair in runs.chunks(2) {
        let (a, b) = (&pair[0].1, &pair[1].1);
        if a.keys().ne(b.keys()) {
            diffs.push(format!("{}: different file sets", pair[0].0));
        }
        for (name, bytes) in a {
            compared += 1;
            if b.get(name) != Some(bytes) {
                diffs.push(format!("{}: {name}", pair[0].0));
            }
        }
    }
    Check::new(
        diffs.is_empty() && compared > 0,
        if diffs.is_empty() {
            format!("{compared} record files byte-identical across repeated runs")
        } else {
            format!("differences: {}", diffs.join(", "))
        },
    )
}

/// Reference cell shapes (x, y, z) of the six methods.
pub const REFERENCE_RESOLUTIONS: [(MethodId, [usize; 3]); 6] = [
    (MethodId::Fourier2d, [16, 16, 1]),
    (MethodId::Classify2d, [64, 64, 1]),
    (MethodId::Segment2d, [40, 40, 1]),
    (MethodId::Combine3d, [64, 64, 16]),
    (MethodId::Classify3d, [128, 128, 64]),
    (MethodId::Twostage3d, [64, 64, 16]),
];

/// Criterion 8: emitted grid geometry under default configurations. Training
/// budgets are cut to one epoch; they do not affect geometry.
pub fn criterion_geometry() -> Check {
    let scans = default_dataset(0);
    let a = split_dataset(&scans, 0, DEFAULT_MAX_ATTEMPTS).expect("split");
    let s = a.apply(&scans).expect("apply");
    let mut cfg = MethodConfig::default();
    for t in [
        &mut cfg.classify2d.train,
        &mut cfg.segment2d.train,
        &mut cfg.classify3d.train,
        &mut cfg.twostage3d.train,
    ] {
        t.epochs = 1;
    }
    let mut bad = Vec::new();
    for (m, want) in REFERENCE_RESOLUTIONS {
        match run_method(m, &cfg, &s) {
            Ok(run) => {
                for (id, g) in &run.grids {
                    let dims = g.dims();
                    let vol = g.geometry().volume_dims;
                    let ceil = [0, 1, 2].map(|a| vol[a].div_ceil(want[a]));
                    if g.cell_shape() != want || dims != ceil {
                        bad.push(format!("{m} {id}: cells {:?} grid {dims:?}", g.cell_shape()));
                    }
                    if g.cells().iter().any(|p| (p.iter().sum::<f64>() - 1.0).abs() > 1e-9) {
                        bad.push(format!("{m} {id}: probabilities do not sum to one"));
                    }
                }
            }
            Err(e) => bad.push(format!("{m}: {e}")),
        }
    }
    Check::new(
        bad.is_empty(),
        if bad.is_empty() {
            "all six methods emit their reference cell shapes".to_string()
        } else {
            bad.join("; ")
        },
    )
}
