//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails the
//! target if any criterion fails.
//!
//! `ACAI_ACCEPTANCE=1,2,8` restricts the run to the listed criteria.

use std::time::Instant;

use acai_core::color::{compute_brightness, lightness};
use acai_core::generative::{
    code_recovery, counterfactual, draw_code, gan_step_gradients, gan_step_losses, info_loss, info_loss_grad, info_trend,
    train_infogan, CodeDistribution, GeneratorHandle, InfoGanConfig, OracleGenerator,
};
use acai_core::harness::{acai_select, EvalReport, Setting};
use acai_core::interventions::{consistency_pair, InterventionKind};
use acai_core::metrics::{acc_gap, cai, cai_pair, AccGapPair, CaiInputs};
use acai_core::rng::Rng;
use acai_core::world::{generate_dataset, DatasetSpec, Image, RenderEffect};
use acai_workbench::config::ExperimentConfig;
use acai_workbench::pipeline::{Run, Stage};
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 1. Published CAI values recomputed from (accuracy, gap) rows.

struct Row {
    table: &'static str,
    label: &'static str,
    acc: f64,
    gap: f64,
    cai_05: f64,
    cai_075: f64,
}

const fn row(table: &'static str, label: &'static str, acc: f64, gap: f64, cai_05: f64, cai_075: f64) -> Row {
    Row { table, label, acc, gap, cai_05, cai_075 }
}

/// Baselines per table block: (block, acc, gap).
const BASELINES: [(&str, f64, f64); 8] = [
    ("T1/unsup", 98.49, 22.93),
    ("T1/gen", 98.49, 3.33),
    ("T2/unsup", 98.49, 18.46),
    ("T2/gen", 98.49, 2.10),
    ("T3/unsup", 81.34, 8.77),
    ("T3/gen", 81.34, 6.07),
    ("T4/unsup", 81.34, 7.20),
    ("T4/gen", 81.34, 5.27),
];

/// Semi-supervised rows are scored against the generalization baseline.
const ROWS: [Row; 28] = [
    row("T1/unsup", "DA-1", 98.66, 4.12, 9.49, 14.17),
    row("T1/unsup", "AA-1", 97.99, 10.84, 5.80, 8.96),
    row("T1/unsup", "SC-1", 96.31, 34.85, -7.05, -9.52),
    row("T1/gen", "DA-1", 98.66, 2.83, 0.34, 0.42),
    row("T1/gen", "AA-1", 97.99, 2.83, 0.00, 0.25),
    row("T1/gen", "SC-1", 96.31, 5.56, -2.20, -2.22),
    row("T1/gen", "ACAI (DA-4)", 99.12, 1.42, 1.27, 1.59),
    row("T2/unsup", "DA-7", 99.06, 2.81, 8.09, 11.87),
    row("T2/unsup", "AA-7", 98.01, 4.45, 6.74, 10.38),
    row("T2/unsup", "SC-7", 95.96, 15.65, 0.10, 1.46),
    row("T2/gen", "DA-7", 99.06, 3.32, -0.33, -0.78),
    row("T2/gen", "AA-7", 98.01, 3.13, -0.75, -0.89),
    row("T2/gen", "SC-7", 95.96, 3.81, -2.12, -1.91),
    row("T2/gen", "ACAI (DA-9)", 98.93, 1.67, 0.44, 0.43),
    row("T3/unsup", "DA-5", 79.45, 1.02, 2.93, 5.30),
    row("T3/unsup", "AA-5", 74.11, 1.36, 0.15, 3.79),
    row("T3/unsup", "SC-5", 80.38, 7.86, 0.02, 0.47),
    row("T3/gen", "DA-5", 79.45, 6.86, -1.34, -1.06),
    row("T3/gen", "AA-5", 74.11, 10.41, -5.78, -5.06),
    row("T3/gen", "SC-5", 80.38, 4.64, 0.23, 0.83),
    row("T3/gen", "ACAI (DA-2)", 82.53, 5.41, 0.92, 0.79),
    row("T4/unsup", "DA-4", 82.53, 1.05, 3.72, 4.92),
    row("T4/unsup", "AA-4", 80.12, 3.99, 0.99, 2.10),
    row("T4/unsup", "SC-4", 81.48, 2.12, 2.58, 3.83),
    row("T4/gen", "DA-4", 82.53, 5.32, 0.57, 0.26),
    row("T4/gen", "AA-4", 80.12, 2.86, 0.59, 1.50),
    row("T4/gen", "SC-4", 81.48, 3.96, 0.72, 1.02),
    row("T4/gen", "ACAI (SC-1)", 81.94, 3.07, 1.40, 1.80),
];

fn criterion_1() -> Outcome {
    // Printed values come from unrounded inputs; 0.06 plus float slack.
    let tol = 0.06 + 1e-9;
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for r in &ROWS {
        let &(_, acc, gap) = BASELINES.iter().find(|b| b.0 == r.table).unwrap();
        let (c05, c075) = cai_pair(AccGapPair { acc, acc_gap: gap }, AccGapPair { acc: r.acc, acc_gap: r.gap });
        let err = (c05 - r.cai_05).abs().max((c075 - r.cai_075).abs());
        worst = worst.max(err);
        if err > tol {
            bad.push(format!("{} {}: {c05:.3}/{c075:.3} vs {}/{}", r.table, r.label, r.cai_05, r.cai_075));
        }
    }
    let detail = format!("{} rows, max |err| {worst:.4}", ROWS.len());
    check(bad.is_empty(), if bad.is_empty() { detail } else { format!("{detail}; {}", bad.join("; ")) })
}

// ---------------------------------------------------------------------------
// 2. Gap and CAI identities on random inputs.

fn criterion_2() -> Outcome {
    let mut rng = Rng::new(2, 0);
    for case in 0..1000 {
        let n = 2 + rng.below(9);
        let bins: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.0, 100.0)).collect();
        let gap = acc_gap(&bins).unwrap();
        let mut sorted = bins.clone();
        sorted.sort_by(f64::total_cmp);
        if gap < 0.0 || gap != sorted[n - 1] - sorted[0] {
            return Err(format!("case {case}: gap {gap} of {bins:?}"));
        }
        if acc_gap(&vec![bins[0]; n]).unwrap() != 0.0 {
            return Err(format!("case {case}: constant bins have a gap"));
        }
        let pair = |rng: &mut Rng| AccGapPair { acc: rng.uniform_in(0.0, 100.0), acc_gap: rng.uniform_in(0.0, 100.0) };
        let (b, i) = (pair(&mut rng), pair(&mut rng));
        let lambda = rng.uniform();
        let at = |b, i, lambda| cai(&CaiInputs::new(b, i, lambda).unwrap());
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs()));
        let (d_acc, d_gap) = (rng.uniform_in(-5.0, 5.0), rng.uniform_in(-5.0, 5.0));
        let shifted = AccGapPair { acc: i.acc + d_acc, acc_gap: i.acc_gap + d_gap };
        let ok = close(at(b, i, 0.0), i.acc - b.acc)
            && close(at(b, i, 1.0), b.acc_gap - i.acc_gap)
            && at(b, b, lambda) == 0.0
            && close(at(b, shifted, lambda) - at(b, i, lambda), (1.0 - lambda) * d_acc - lambda * d_gap);
        if !ok {
            return Err(format!("case {case}: identity violated for {b:?} {i:?} λ={lambda}"));
        }
    }
    Ok("1000 cases".into())
}

// ---------------------------------------------------------------------------
// 3. Oracle end to end: scan, DA, AA and SC on an injected brightness
// sensitivity.

const SENSITIVE_CODE: usize = 3;

fn oracle_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { seed, ..ExperimentConfig::default() };
    cfg.interventions.kinds = InterventionKind::ALL.to_vec();
    cfg.interventions.codes = Some(vec![SENSITIVE_CODE]);
    cfg.stages.acai = false;
    cfg.stages.figures = false;
    cfg
}

fn row_pair(report: &EvalReport, setting: Setting, label: &str) -> AccGapPair {
    let r = report.rows().find(|r| r.setting == setting && r.label == label).unwrap();
    AccGapPair::from(&r.bundle)
}

struct SeedResult {
    ranked_first: bool,
    da_ok: bool,
    aa_ok: bool,
    sc_ok: bool,
    line: String,
}

fn oracle_seed(seed: u64) -> SeedResult {
    let dir = tempfile::tempdir().unwrap();
    let cfg = oracle_config(seed);
    let run = Run::open(dir.path(), cfg).unwrap();
    let report = run.run_until(Stage::Report).unwrap().unwrap();
    let first = report.ranking[0].code;
    let label = |k: &str| format!("{k}-{}", SENSITIVE_CODE + 1);
    let g_base = row_pair(&report, Setting::Generalization, "Base");
    let g_da = row_pair(&report, Setting::Generalization, &label("DA"));
    let u_base = row_pair(&report, Setting::Unsupervised, "Base");
    let u_aa = row_pair(&report, Setting::Unsupervised, &label("AA"));
    let u_sc = row_pair(&report, Setting::Unsupervised, &label("SC"));
    let da_ok = g_da.acc_gap <= 0.5 * g_base.acc_gap && g_base.acc - g_da.acc <= 2.0;
    SeedResult {
        ranked_first: first == SENSITIVE_CODE,
        da_ok,
        aa_ok: u_aa.acc_gap < u_base.acc_gap,
        sc_ok: u_sc.acc_gap < u_base.acc_gap,
        line: format!(
            "seed {seed}: top code {first}; real gap {:.2}->{:.2} (acc {:.2}->{:.2}); synthetic gap {:.2} AA {:.2} SC {:.2}",
            g_base.acc_gap, g_da.acc_gap, g_base.acc, g_da.acc, u_base.acc_gap, u_aa.acc_gap, u_sc.acc_gap
        ),
    }
}

fn criterion_3() -> Outcome {
    let results: Vec<SeedResult> = (1..=5u64).into_par_iter().map(oracle_seed).collect();
    for r in &results {
        println!("    {}", r.line);
    }
    let count = |f: fn(&SeedResult) -> bool| results.iter().filter(|r| f(r)).count();
    let (first, da, aa, sc) = (count(|r| r.ranked_first), count(|r| r.da_ok), count(|r| r.aa_ok), count(|r| r.sc_ok));
    check(
        first == 5 && da >= 4 && aa >= 3 && sc >= 3,
        format!("ranked first {first}/5, DA {da}/5 (need 4), AA {aa}/5 (need 3), SC {sc}/5 (need 3)"),
    )
}

// ---------------------------------------------------------------------------
// 4. InfoGAN discovers at least one code.

fn gan_seed(seed: u64) -> (bool, String) {
    let data = generate_dataset(&DatasetSpec::desk(), 5000, seed, None).unwrap();
    let cfg = InfoGanConfig { steps: 3000, seed, ..InfoGanConfig::default() };
    let out = train_infogan(&data, &cfg).unwrap();
    let (initial, last) = info_trend(&out.log, 100);
    let rho = code_recovery(&out.generator, &out.q, 1000, seed + 100).unwrap();
    let best = rho.iter().map(|r| r.abs()).fold(0.0, f64::max);
    let ok = last < 0.5 * initial && best >= 0.5;
    (ok, format!("seed {seed}: info {initial:.3}->{last:.3}, best |rho| {best:.2}"))
}

fn criterion_4() -> Outcome {
    let results: Vec<(bool, String)> = (1..=3u64).into_par_iter().map(gan_seed).collect();
    for (_, line) in &results {
        println!("    {line}");
    }
    let passed = results.iter().filter(|r| r.0).count();
    check(passed >= 2, format!("{passed}/3 seeds (need 2)"))
}

// ---------------------------------------------------------------------------
// 5. Analytic loss gradients against central differences.

fn grads_close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-4 * numeric.abs().max(analytic.abs()) + 1e-8
}

fn central(x: &[f64], k: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let h = 1e-6;
    let (mut a, mut b) = (x.to_vec(), x.to_vec());
    a[k] += h;
    b[k] -= h;
    (f(&a) - f(&b)) / (2.0 * h)
}

fn uniform_vec(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_in(lo, hi)).collect()
}

fn criterion_5() -> Outcome {
    let mut checked = 0usize;
    for case in 0..100 {
        let mut rng = Rng::new(case, 50);
        let d = 1 + rng.below(10);
        let c = uniform_vec(&mut rng, d, -2.0, 2.0);
        let q = uniform_vec(&mut rng, d, -3.0, 3.0);
        let g = info_loss_grad(&c, &q).unwrap();
        for k in 0..d {
            checked += 1;
            if !grads_close(g[k], central(&q, k, |q| info_loss(&c, q).unwrap())) {
                return Err(format!("info_loss case {case} coord {k}"));
            }
        }

        let (nr, nf, d) = (1 + rng.below(6), 1 + rng.below(6), 1 + rng.below(4));
        let w = rng.uniform_in(0.0, 2.0);
        let real = uniform_vec(&mut rng, nr, 0.02, 0.98);
        let fake = uniform_vec(&mut rng, nf, 0.02, 0.98);
        let codes: Vec<Vec<f64>> = (0..nf).map(|_| uniform_vec(&mut rng, d, -2.0, 2.0)).collect();
        let q: Vec<Vec<f64>> = (0..nf).map(|_| uniform_vec(&mut rng, d, -2.0, 2.0)).collect();
        let g = gan_step_gradients(&real, &fake, &q, &codes, w).unwrap();
        for k in 0..nr {
            checked += 1;
            let n = central(&real, k, |r| gan_step_losses(r, &fake, &q, &codes, w).unwrap().d_loss);
            if !grads_close(g.d_loss_real[k], n) {
                return Err(format!("gan d_loss/real case {case}"));
            }
        }
        for k in 0..nf {
            checked += 2;
            let nd = central(&fake, k, |f| gan_step_losses(&real, f, &q, &codes, w).unwrap().d_loss);
            let ng = central(&fake, k, |f| gan_step_losses(&real, f, &q, &codes, w).unwrap().g_loss);
            if !grads_close(g.d_loss_fake[k], nd) || !grads_close(g.g_loss_fake[k], ng) {
                return Err(format!("gan fake gradients case {case}"));
            }
        }
        for r in 0..nf {
            for k in 0..d {
                checked += 1;
                let n = central(&q[r], k, |qr| {
                    let mut q2 = q.clone();
                    q2[r] = qr.to_vec();
                    gan_step_losses(&real, &fake, &q2, &codes, w).unwrap().g_loss
                });
                if !grads_close(g.info_q[r][k], n) {
                    return Err(format!("gan info/q case {case}"));
                }
            }
        }

        for symmetric in [false, true] {
            let k = 2 + rng.below(5);
            let a = uniform_vec(&mut rng, k, -3.0, 3.0);
            let b = uniform_vec(&mut rng, k, -3.0, 3.0);
            let (_, ga, gb) = consistency_pair(&a, &b, symmetric);
            for j in 0..k {
                checked += 2;
                let na = central(&a, j, |a| consistency_pair(a, &b, symmetric).0);
                let nb = central(&b, j, |b| consistency_pair(&a, b, symmetric).0);
                if !grads_close(ga[j], na) || !grads_close(gb[j], nb) {
                    return Err(format!("sc_loss case {case} symmetric={symmetric}"));
                }
            }
        }
    }
    Ok(format!("100 instances per loss, {checked} partial derivatives"))
}

// ---------------------------------------------------------------------------
// 6. ACAI selection against brute force.

fn criterion_6() -> Outcome {
    let kinds = InterventionKind::ALL;
    for case in 0..500u64 {
        let mut rng = Rng::new(case, 60);
        // Quarter-point values make exact CAI ties common.
        let quarter = |rng: &mut Rng, lo: usize, hi: usize| (lo + rng.below(hi - lo)) as f64 / 4.0;
        let base = AccGapPair { acc: quarter(&mut rng, 320, 400), acc_gap: quarter(&mut rng, 0, 60) };
        let n_codes = 1 + rng.below(10);
        let mut grid = Vec::new();
        for code in 0..n_codes {
            for &kind in &kinds {
                grid.push((kind, code, AccGapPair { acc: quarter(&mut rng, 320, 400), acc_gap: quarter(&mut rng, 0, 60) }));
            }
        }
        rng.shuffle(&mut grid);
        let got = acai_select(&grid, base).unwrap();

        // Brute force: every candidate that no other candidate beats.
        let score = |p: &AccGapPair| 0.5 * (base.acc_gap - p.acc_gap) + 0.5 * (p.acc - base.acc);
        let kind_rank = |k: InterventionKind| kinds.iter().position(|x| *x == k).unwrap();
        let beats = |a: &(InterventionKind, usize, AccGapPair), b: &(InterventionKind, usize, AccGapPair)| {
            let (sa, sb) = (score(&a.2), score(&b.2));
            (sa > sb)
                || (sa == sb && a.2.acc > b.2.acc)
                || (sa == sb && a.2.acc == b.2.acc && a.1 < b.1)
                || (sa == sb && a.2.acc == b.2.acc && a.1 == b.1 && kind_rank(a.0) < kind_rank(b.0))
        };
        let winners: Vec<usize> = (0..grid.len()).filter(|&i| grid.iter().all(|o| !beats(o, &grid[i]))).collect();
        if winners != vec![got.index] || grid[got.index].0 != got.kind || grid[got.index].1 != got.code {
            return Err(format!("case {case}: selected {} but brute force gives {winners:?}", got.index));
        }
    }
    Ok("500 grids with forced ties".into())
}

// ---------------------------------------------------------------------------
// 7. Counterfactual locality and determinism.

fn criterion_7() -> Outcome {
    let spec = DatasetSpec::desk_with_sensitivity(RenderEffect::Brightness, 0.8);
    let bi = spec.factor_index(RenderEffect::Brightness).unwrap();
    let gen = GeneratorHandle::Oracle(OracleGenerator::with_pairs(spec, &[(SENSITIVE_CODE, bi)], 10).unwrap());
    let meta = gen.meta();
    let mut rng = Rng::new(7, 0);
    for k in 0..1000 {
        let code = draw_code(&meta, CodeDistribution::UniformEval, k % meta.num_classes, 70, k);
        let i = rng.below(meta.d_c);
        let c_prime = rng.uniform_in(-2.0, 2.0);
        let cf = counterfactual(&gen, &code, i, c_prime).map_err(|e| e.to_string())?;
        let differing: Vec<usize> = (0..meta.d_c).filter(|&j| cf.edited.c[j].to_bits() != code.c[j].to_bits()).collect();
        if differing != [i] || cf.edited.z != code.z || cf.edited.y != code.y {
            return Err(format!("pair {k}: latent differs in {differing:?}"));
        }
        let again = counterfactual(&gen, &code, i, c_prime).map_err(|e| e.to_string())?;
        if again != cf {
            return Err(format!("pair {k}: regeneration differs"));
        }
    }
    Ok("1000 pairs".into())
}

// ---------------------------------------------------------------------------
// 8. Colorimetry.

fn criterion_8() -> Outcome {
    let solid = |v: f32| Image::from_unit_hwc(4, 4, &[v; 48]);
    let black = compute_brightness(&solid(0.0));
    let white = compute_brightness(&solid(1.0));
    // sRGB 0.5 → linear ((0.5 + 0.055) / 1.055)^2.4 → L* = 116·Y^(1/3) − 16.
    let y = ((0.5f64 + 0.055) / 1.055).powf(2.4);
    let reference = 116.0 * y.cbrt() - 16.0;
    let mid = lightness([0.5, 0.5, 0.5]);
    check(
        black == 0.0 && white == 100.0 && (mid - reference).abs() < 1e-6 && (mid - 53.388_964_741_114_32).abs() < 1e-6,
        format!("black {black}, white {white}, mid-gray {mid:.9} (reference {reference:.9})"),
    )
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("ACAI_ACCEPTANCE").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "CAI golden values", criterion_1),
        (2, "gap and CAI identities", criterion_2),
        (3, "oracle end to end", criterion_3),
        (4, "InfoGAN code discovery", criterion_4),
        (5, "loss gradients", criterion_5),
        (6, "ACAI selection", criterion_6),
        (7, "counterfactual locality", criterion_7),
        (8, "colorimetry", criterion_8),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
