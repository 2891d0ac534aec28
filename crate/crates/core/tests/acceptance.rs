//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! when a criterion outside `KNOWN_FAILURES` fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use clab::analysis::{knn_purity, penalty_distribution};
use clab::checks::random_similarity;
use clab::io::{decode_dump, encode_dump, read_dump, write_dump, EmbeddingDump};
use clab::losses::{contrastive_loss, hard_contrastive_loss, loss_gradients, LossConfig, Variant};
use clab::synth::{make_dataset, sample_vmf, Dataset, SynthConfig};
use clab::trainer::{sweep_tau, Snapshot, TrainConfig};
use clab::{Error, SimilarityMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that fail on this model; see the project notes. They are reported
/// but do not fail the run.
const KNOWN_FAILURES: &[&str] = &["10"];

const SWEEP_TAUS: [f64; 7] = [0.07, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0];
const HARD_ALPHA: f64 = 0.0819;

struct Verdict {
    id: &'static str,
    passed: bool,
    detail: String,
}

fn verdict(id: &'static str, passed: bool, detail: String) -> Verdict {
    println!("{} {id:>2}  {detail}", if passed { "PASS" } else { "FAIL" });
    Verdict { id, passed, detail }
}

// ---------------------------------------------------------------- oracles

fn naive_contrastive(row: &[f64], i: usize, tau: f64) -> f64 {
    let z: f64 = row.iter().map(|s| (s / tau).exp()).sum();
    z.ln() - row[i] / tau
}

fn naive_hard(row: &[f64], i: usize, tau: f64, alpha: f64) -> f64 {
    let mut neg: Vec<f64> = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .collect();
    neg.sort_by(|a, b| b.total_cmp(a));
    let k = (alpha * neg.len() as f64).ceil() as usize;
    let thr = neg[k.max(1) - 1];
    let z: f64 = (row[i] / tau).exp()
        + row
            .iter()
            .enumerate()
            .filter(|&(j, &v)| j != i && v >= thr)
            .map(|(_, &v)| (v / tau).exp())
            .sum::<f64>();
    z.ln() - row[i] / tau
}

fn naive_simple(row: &[f64], i: usize) -> f64 {
    let n = row.len() as f64;
    let neg: f64 = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .sum();
    -row[i] + neg / (n - 1.0)
}

fn naive_taylor(row: &[f64], i: usize, tau: f64) -> f64 {
    // first-order expansion of log Σ exp(s/τ) around s = 0
    let n = row.len() as f64;
    let mean: f64 = row.iter().sum::<f64>() / n;
    n.ln() + mean / tau - row[i] / tau
}

fn naive_loss(variant: Variant, row: &[f64], i: usize, tau: f64) -> f64 {
    match variant {
        Variant::Contrastive => naive_contrastive(row, i, tau),
        Variant::Hard => naive_hard(row, i, tau, HARD_ALPHA),
        Variant::Simple => naive_simple(row, i),
        Variant::TaylorLimit => naive_taylor(row, i, tau),
        _ => unreachable!(),
    }
}

fn naive_entropy(neg: &[f64], tau: f64) -> f64 {
    let m = neg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = neg.iter().map(|s| ((s - m) / tau).exp()).collect();
    let z: f64 = w.iter().sum();
    -w.iter()
        .map(|x| x / z)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn instances(seed: u64, count: usize) -> Vec<SimilarityMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(4..=64);
            random_similarity(n, &mut rng)
        })
        .collect()
}

// ---------------------------------------------------------------- 1–6

fn criteria_1_and_2() -> Vec<Verdict> {
    let start = Instant::now();
    let taus = [0.05, 0.07, 0.2, 0.5, 1.0];
    let variants = [
        Variant::Contrastive,
        Variant::Simple,
        Variant::Hard,
        Variant::TaylorLimit,
    ];
    let h = 1e-6;
    let mut worst_fd = 0.0f64;
    let mut worst_ratio = 0.0f64;
    let mut grad_time = 0.0;
    let set = instances(2024, 200);
    for s in &set {
        let n = s.n();
        for &tau in &taus {
            for v in variants {
                let t0 = Instant::now();
                let g = loss_gradients(s, &LossConfig::new(v, tau).with_alpha(HARD_ALPHA)).unwrap();
                grad_time += t0.elapsed().as_secs_f64();
                for i in 0..n {
                    let mut row = s.row(i).to_vec();
                    let mut neg_sum = 0.0;
                    for j in 0..n {
                        let x = row[j];
                        row[j] = x + h;
                        let up = naive_loss(v, &row, i, tau);
                        row[j] = x - h;
                        let down = naive_loss(v, &row, i, tau);
                        row[j] = x;
                        worst_fd =
                            worst_fd.max(relative_error(g.get(i, j), (up - down) / (2.0 * h)));
                        if j != i {
                            neg_sum += g.get(i, j).abs();
                        }
                    }
                    worst_ratio = worst_ratio.max((g.get(i, i).abs() - neg_sum).abs());
                }
            }
        }
    }
    let total = start.elapsed().as_secs_f64();
    vec![
        verdict(
            "1",
            worst_fd < 1e-6 && grad_time < 10.0,
            format!(
                "gradient vs central difference: max rel err {worst_fd:.2e} (< 1e-6), analytic gradients {grad_time:.2}s, whole check {total:.1}s"
            ),
        ),
        verdict(
            "2",
            worst_ratio < 1e-10,
            format!("|g_ii| vs Σ_j≠i |g_ij|: max diff {worst_ratio:.2e} (< 1e-10)"),
        ),
    ]
}

fn criterion_3() -> Verdict {
    let taus = [0.05, 0.07, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut worst_oracle = 0.0f64;
    let mut worst_flat = 0.0f64;
    for _ in 0..1000 {
        let m = rng.random_range(2..=64);
        let neg: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let h: Vec<f64> = taus
            .iter()
            .map(|&t| penalty_distribution(&neg, t).unwrap().entropy)
            .collect();
        violations += h
            .windows(2)
            .filter(|w| w[1] <= w[0] || w[1].is_nan())
            .count();
        for (&t, &e) in taus.iter().zip(&h) {
            worst_oracle = worst_oracle.max((e - naive_entropy(&neg, t)).abs());
        }
        let flat = vec![rng.random_range(-1.0..=1.0); m];
        for &t in &taus {
            let e = penalty_distribution(&flat, t).unwrap().entropy;
            worst_flat = worst_flat.max((e - (m as f64).ln()).abs());
        }
    }
    verdict(
        "3",
        violations == 0 && worst_flat <= 1e-12 && worst_oracle < 1e-9,
        format!(
            "entropy: {violations} non-increasing steps over 1000 rows, constant-row |H − ln M| {worst_flat:.1e} (≤ 1e-12), vs direct entropy {worst_oracle:.1e}"
        ),
    )
}

fn criterion_4() -> Verdict {
    let tau = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut rows = 0;
    while rows < 1000 {
        let n = rng.random_range(4..=64);
        let s = random_similarity(n, &mut rng);
        let c = contrastive_loss(&s, tau).unwrap();
        for i in 0..n {
            let row = s.row(i);
            let mut sorted = row.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            if sorted[0] - sorted[1] < 0.05 {
                continue;
            }
            let s_max = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max((tau * c.per_anchor[i] - (s_max - row[i]).max(0.0)).abs());
            rows += 1;
        }
    }
    verdict(
        "4",
        worst < 1e-4,
        format!("τ=1e-3: max |τ·L − max(s_max − s_ii, 0)| {worst:.2e} over {rows} rows (< 1e-4)"),
    )
}

fn criterion_5() -> Verdict {
    let set = instances(5, 200);
    let mut worst_abs = 0.0f64;
    let mut worst_ratio = 0.0f64;
    for s in &set {
        let (c1, c2) = (
            contrastive_loss(s, 100.0).unwrap(),
            contrastive_loss(s, 200.0).unwrap(),
        );
        for i in 0..s.n() {
            let e1 = (c1.per_anchor[i] - naive_taylor(s.row(i), i, 100.0)).abs();
            let e2 = (c2.per_anchor[i] - naive_taylor(s.row(i), i, 200.0)).abs();
            worst_abs = worst_abs.max(e1);
            worst_ratio = worst_ratio.max(e2 / e1);
        }
    }
    verdict(
        "5",
        worst_abs < 1e-3 && worst_ratio <= 1.0 / 3.0,
        format!("err(100) max {worst_abs:.2e} (< 1e-3), worst err(200)/err(100) {worst_ratio:.4} (≤ 1/3)"),
    )
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(4..=64);
        let tau = rng.random_range(0.05..=1.0);
        let s = random_similarity(n, &mut rng);
        let c = contrastive_loss(&s, tau).unwrap();
        let h = hard_contrastive_loss(&s, tau, 1.0).unwrap();
        for (a, b) in c.per_anchor.iter().zip(&h.per_anchor) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(
        "6",
        worst <= 1e-12,
        format!("α=1 hard vs contrastive: max diff {worst:.1e} (≤ 1e-12)"),
    )
}

// ---------------------------------------------------------------- 7–12

fn config(variant: Variant, tau: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        loss: LossConfig::new(variant, tau).with_alpha(HARD_ALPHA),
        seed,
        ..TrainConfig::default()
    }
}

fn final_snapshot(ds: &Dataset, variant: Variant, tau: f64, seed: u64) -> Snapshot {
    sweep_tau(ds, &config(variant, tau, seed), &[tau], Some(1))
        .unwrap()
        .entries
        .remove(0)
        .snapshot
}

fn range(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - v.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn criteria_7_to_12() -> Vec<Verdict> {
    let ds = make_dataset(&SynthConfig::default()).unwrap();
    let mut out = Vec::new();

    let t0 = Instant::now();
    let contrastive = sweep_tau(
        &ds,
        &config(Variant::Contrastive, 0.2, 0),
        &SWEEP_TAUS,
        Some(1),
    )
    .unwrap();
    let sweep_secs = t0.elapsed().as_secs_f64();
    let c_snap: Vec<&Snapshot> = contrastive.entries.iter().map(|e| &e.snapshot).collect();
    let c_neg_u: Vec<f64> = c_snap.iter().map(|s| -s.uniformity).collect();
    let c_tol: Vec<f64> = c_snap.iter().map(|s| s.tolerance).collect();

    let rho_u = spearman(&SWEEP_TAUS, &c_neg_u);
    out.push(verdict(
        "7",
        rho_u <= -0.9 && sweep_secs < 300.0,
        format!("Spearman(τ, −L_uniformity) = {rho_u:.3} (≤ −0.9), values {c_neg_u:.4?}, sweep {sweep_secs:.0}s single-threaded"),
    ));
    let rho_t = spearman(&SWEEP_TAUS, &c_tol);
    out.push(verdict(
        "8",
        rho_t >= 0.9,
        format!("Spearman(τ, tolerance) = {rho_t:.3} (≥ 0.9), values {c_tol:.4?}"),
    ));

    let hard = sweep_tau(&ds, &config(Variant::Hard, 0.2, 0), &SWEEP_TAUS, None).unwrap();
    let h_neg_u: Vec<f64> = hard
        .entries
        .iter()
        .map(|e| -e.snapshot.uniformity)
        .collect();
    let (rh, rc) = (range(&h_neg_u), range(&c_neg_u));
    out.push(verdict(
        "9",
        rh < rc,
        format!("−L_uniformity range: hard {rh:.4} < contrastive {rc:.4}"),
    ));

    let c02 = c_snap[SWEEP_TAUS.iter().position(|&t| t == 0.2).unwrap()].clone();
    let mut simple_votes = 0;
    let mut hard_votes = 0;
    let mut rows = Vec::new();
    for seed in 0..3u64 {
        let base = if seed == 0 {
            c02.clone()
        } else {
            final_snapshot(&ds, Variant::Contrastive, 0.2, seed)
        };
        let simple = final_snapshot(&ds, Variant::Simple, 0.2, seed);
        let hard_simple = final_snapshot(&ds, Variant::HardSimple, 0.2, seed);
        simple_votes += (simple.knn_purity < base.knn_purity - 0.05) as usize;
        hard_votes += (hard_simple.knn_purity >= base.knn_purity - 0.03) as usize;
        rows.push(format!(
            "seed {seed}: C {:.4} S {:.4} HS {:.4}",
            base.knn_purity, simple.knn_purity, hard_simple.knn_purity
        ));
    }
    let (a, b) = (simple_votes >= 2, hard_votes >= 2);
    out.push(verdict(
        "10",
        a && b,
        format!(
            "simple < C(0.2) − 0.05: {} ({simple_votes}/3); hard-simple ≥ C(0.2) − 0.03: {} ({hard_votes}/3); {}",
            if a { "pass" } else { "fail" },
            if b { "pass" } else { "fail" },
            rows.join("; ")
        ),
    ));
    if !b {
        // only the simple half is a known failure
        out.push(verdict("10b", false, "hard-simple half failed".into()));
    }

    let baseline = knn_purity(&ds.directions, &ds.labels, 10).unwrap();
    let triplet = final_snapshot(&ds, Variant::TripletLimit, 0.2, 0);
    out.push(verdict(
        "11",
        triplet.knn_purity < baseline + 0.05,
        format!(
            "triplet-limit purity {:.4} < baseline {baseline:.4} + 0.05",
            triplet.knn_purity
        ),
    ));

    let at = |t: f64| &c_snap[SWEEP_TAUS.iter().position(|&x| x == t).unwrap()];
    let (lo, hi) = (at(0.07), at(0.5));
    let gap = |s: &Snapshot| s.mean_pos_sim - s.top_neg_sim[0];
    out.push(verdict(
        "12",
        gap(lo) > gap(hi) && hi.mean_pos_sim > lo.mean_pos_sim,
        format!(
            "gap τ=0.07 {:.4} > τ=0.5 {:.4}; pos sim τ=0.5 {:.4} > τ=0.07 {:.4}",
            gap(lo),
            gap(hi),
            hi.mean_pos_sim,
            lo.mean_pos_sim
        ),
    ));
    out
}

// ---------------------------------------------------------------- 13–14

fn clab(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_clab"))
        .args(args)
        .env_remove("CLAB_SEED")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn criterion_13() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let small = [
        "--steps",
        "200",
        "--points-per-class",
        "60",
        "--classes",
        "5",
        "--dim",
        "16",
        "--batch-size",
        "64",
        "--metric-every",
        "50",
    ];
    let mut checked = Vec::new();
    let mut ok = true;
    for (cmd, extra) in [
        ("train", vec!["--variant", "hard", "--tau", "0.1"]),
        ("sweep", vec!["--taus", "0.1,0.5", "--format", "json"]),
    ] {
        let (a, b) = (p(&format!("{cmd}-a")), p(&format!("{cmd}-b")));
        let mut args = vec![cmd, "--seed", "11", "--out", &a];
        args.extend(&extra);
        args.extend(&small);
        let manifest = format!("{a}/manifest.json");
        ok &= clab(&args) && clab(&[cmd, "--from-manifest", &manifest, "--out", &b]);
        let (fa, fb) = (files(Path::new(&a)), files(Path::new(&b)));
        ok &= !fa.is_empty() && fa == fb;
        checked.extend(fa.keys().map(|k| format!("{cmd}/{k}")));
    }
    verdict(
        "13",
        ok,
        format!("manifest reruns bitwise identical: {}", checked.join(", ")),
    )
}

fn criterion_14() -> Verdict {
    let mu: Vec<f64> = (0..16).map(|i| (i == 3) as u8 as f64).collect();
    let x = sample_vmf(&mu, 2.0, 100, 14).unwrap();
    let labels: Vec<u32> = (0..100).map(|i| i % 7).collect();
    let dump = EmbeddingDump::new(x, Some(labels)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rt.clab");
    write_dump(&path, &dump).unwrap();
    let back = read_dump(&path).unwrap();
    let round_trip = back.labels == dump.labels
        && back
            .embeddings
            .as_slice()
            .iter()
            .zip(dump.embeddings.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits());

    let golden_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden.clab");
    let golden = read_dump(&golden_path).unwrap();
    let h = 0.5f64.sqrt();
    let expected = [
        1.0, 0.0, 0.0, 0.0, 0.0, 0.6, 0.8, 0.0, 0.5, -0.5, 0.5, -0.5, h, 0.0, 0.0, -h,
    ];
    let golden_ok = golden.embeddings.shape() == (4, 4)
        && golden
            .embeddings
            .as_slice()
            .iter()
            .zip(&expected)
            .all(|(a, b)| a.to_bits() == b.to_bits())
        && golden.labels.as_deref() == Some(&[7, 0, u32::MAX, 3][..]);

    let bytes = encode_dump(&dump);
    let mut magic = bytes.clone();
    magic[1] = b'X';
    let mut version = bytes.clone();
    version[4] = b'9';
    let typed = matches!(
        decode_dump(&bytes[..bytes.len() - 1]),
        Err(Error::TruncatedPayload { .. })
    ) && matches!(decode_dump(&magic), Err(Error::CorruptHeader(_)))
        && matches!(decode_dump(&version), Err(Error::UnsupportedVersion('9')));
    verdict(
        "14",
        round_trip && golden_ok && typed,
        format!("round trip {round_trip}, golden fixture {golden_ok}, typed errors {typed}"),
    )
}

fn main() {
    // `cargo test -- <filter>` and `--list` style invocations pass arguments we ignore.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut verdicts = criteria_1_and_2();
    verdicts.push(criterion_3());
    verdicts.push(criterion_4());
    verdicts.push(criterion_5());
    verdicts.push(criterion_6());
    verdicts.extend(criteria_7_to_12());
    verdicts.push(criterion_13());
    verdicts.push(criterion_14());

    let failed: Vec<&Verdict> = verdicts.iter().filter(|v| !v.passed).collect();
    let unexpected: Vec<&&Verdict> = failed
        .iter()
        .filter(|v| !KNOWN_FAILURES.contains(&v.id))
        .collect();
    let passed = verdicts.len() - failed.len();
    println!(
        "acceptance: {passed} passed, {} failed ({} known)",
        failed.len(),
        failed.len() - unexpected.len()
    );
    for v in &verdicts {
        if v.passed && KNOWN_FAILURES.contains(&v.id) {
            println!(
                "note: criterion {} is listed as a known failure but passed",
                v.id
            );
        }
    }
    if !unexpected.is_empty() {
        for v in unexpected {
            eprintln!("unexpected failure {}: {}", v.id, v.detail);
        }
        std::process::exit(1);
    }
}
