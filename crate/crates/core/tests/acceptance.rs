//! Acceptance runner. Prints one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach the console.
//! The process exits non-zero on a FAIL only when `ACCEPTANCE_STRICT` is set.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use dtitest::dist::{chi2_sf, correction_constant};
use dtitest::pipeline::{analyze, snr_seed, Experiment};
use dtitest::{
    baseline_fa_threshold, fa, fit_volume, isolated_counts, ra, scalar_maps, simulate,
    PhantomConfig, RunConfig, Tissue,
};

const DESK: [usize; 3] = [128, 128, 16];
const SEED: u64 = 7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn config(n: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.phantom = PhantomConfig::with_shape(DESK);
    cfg.seed = SEED;
    if n == 81 {
        cfg.test.neighborhood.cube = [11, 11, 3];
        cfg.test.neighborhood.n = 81;
    }
    cfg
}

/// Desk-scale experiments keyed by (SNR, n), computed on first use.
#[derive(Default)]
struct Runs(BTreeMap<(u32, usize), Experiment>);

impl Runs {
    fn get(&mut self, snr: f64, n: usize) -> &Experiment {
        self.0.entry((snr as u32, n)).or_insert_with(|| {
            analyze(&config(n), snr, snr_seed(SEED, snr))
                .unwrap_or_else(|e| panic!("snr {snr}, n {n}: {e}"))
        })
    }
}

fn close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol
}

fn formulas() -> Outcome {
    let t = Instant::now();
    let cases = [
        ("FA iso", fa([0.7e-3; 3]).unwrap(), 0.0, 1e-12),
        ("RA iso", ra([0.7e-3; 3]).unwrap(), 0.0, 1e-12),
        ("FA line", fa([1.0, 0.0, 0.0]).unwrap(), 1.0, 1e-12),
        ("RA line", ra([1.0, 0.0, 0.0]).unwrap(), 3f64.sqrt(), 1e-12),
        ("FA prolate", fa([1.0, 0.55, 0.55]).unwrap(), 0.35520, 1e-4),
        ("RA prolate", ra([1.0, 0.55, 0.55]).unwrap(), 0.37115, 1e-4),
        ("c(0.01,2)", correction_constant(0.01, 2), 0.94395, 1e-4),
        ("sf(9.21034)", chi2_sf(2, 9.21034), 0.01, 1e-6),
    ];
    let bad: Vec<String> = cases
        .iter()
        .filter(|(_, got, want, tol)| !close(*got, *want, *tol))
        .map(|(name, got, want, _)| format!("{name}={got:.6} want {want}"))
        .collect();
    let secs = t.elapsed().as_secs_f64();
    let pass = bad.is_empty() && secs < 1.0;
    let detail = if bad.is_empty() {
        format!("{} values within tolerance", cases.len())
    } else {
        bad.join(", ")
    };
    outcome(pass, format!("{detail}; {secs:.3} s"))
}

fn zero_noise_roundtrip() -> Outcome {
    let t = Instant::now();
    let cfg = PhantomConfig::with_shape([64, 64, 64]);
    let spec = cfg.build::<f64>(None).unwrap();
    let scheme = RunConfig::default().scheme.scheme().unwrap();
    let dwi = simulate(&spec, &scheme, 1).unwrap();
    let tensors = fit_volume(&dwi, false).unwrap();
    let maps = scalar_maps(&tensors);
    let mut want = BTreeMap::new();
    for (tissue, l) in [
        (Tissue::Isotropic, cfg.isotropic),
        (Tissue::Prolate, cfg.prolate),
        (Tissue::Oblate, cfg.oblate),
        (Tissue::Nondegenerate, cfg.nondegenerate),
    ] {
        let mut s = l.map(|x| x * 1e-3);
        s.sort_by(|a, b| b.total_cmp(a));
        want.insert(tissue as u8, s);
    }
    let mut worst = 0.0f64;
    let mut seen = BTreeMap::new();
    let mut missing = 0;
    for (i, &tissue) in spec.labels.label.iter().enumerate() {
        let Some(s) = want.get(&(tissue as u8)) else {
            continue;
        };
        *seen.entry(tissue as u8).or_insert(0usize) += 1;
        match &maps.eigen[i] {
            Some(e) => (0..3).for_each(|k| worst = worst.max((e.lambdas[k] - s[k]).abs())),
            None => missing += 1,
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst <= 1e-10 && missing == 0 && seen.len() == 4 && secs < 10.0;
    outcome(
        pass,
        format!(
            "{} tissue classes, max eigenvalue error {worst:.2e}, {missing} unfitted; {secs:.2} s",
            seen.len()
        ),
    )
}

fn null_distribution(runs: &mut Runs) -> Outcome {
    let mut worst = 0.0f64;
    let mut ks_better = 0;
    let mut parts = Vec::new();
    for snr in [10.0, 15.0, 20.0] {
        let q25 = runs
            .get(snr, 25)
            .report
            .qq
            .clone()
            .expect("isotropic voxels");
        let q81 = runs
            .get(snr, 81)
            .report
            .qq
            .clone()
            .expect("isotropic voxels");
        worst = worst.max(q25.max_rel_deviation).max(q81.max_rel_deviation);
        if q81.ks <= q25.ks {
            ks_better += 1;
        }
        parts.push(format!(
            "snr {snr}: dev {:.3}/{:.3} ks {:.3}/{:.3}",
            q25.max_rel_deviation, q81.max_rel_deviation, q25.ks, q81.ks
        ));
    }
    outcome(
        worst <= 0.15 && ks_better >= 2,
        format!(
            "max rel deviation {worst:.3} (<= 0.15), KS n81 <= n25 at {ks_better}/3 SNRs; n25/n81 {}",
            parts.join("; ")
        ),
    )
}

fn table_one(runs: &mut Runs) -> Outcome {
    let r = &runs.get(10.0, 25).report;
    let (f, l, a) = (&r.fdr.confusion, &r.fdr_l.confusion, &r.fa.confusion);
    let checks = [
        close(f.sensitivity, 0.7522, 0.10),
        close(f.specificity, 0.9957, 0.01),
        close(l.sensitivity, 0.8845, 0.10),
        close(l.specificity, 0.9982, 0.01),
        a.specificity < 0.75,
    ];
    outcome(
        checks.iter().all(|&c| c),
        format!(
            "FDR se {:.4} sp {:.4}; FDR_L se {:.4} sp {:.4}; FA se {:.4} sp {:.4}; checks {:?}",
            f.sensitivity,
            f.specificity,
            l.sensitivity,
            l.specificity,
            a.sensitivity,
            a.specificity,
            checks
        ),
    )
}

fn roc_ordering(runs: &mut Runs) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for snr in [5.0, 10.0, 15.0, 20.0] {
        let auc = runs
            .get(snr, 25)
            .report
            .auc
            .clone()
            .expect("both classes present");
        pass &= auc.p_smoothed - auc.p > 0.01 && auc.p - auc.fa > 0.01;
        parts.push(format!(
            "snr {snr}: {:.4}/{:.4}/{:.4}",
            auc.p_smoothed, auc.p, auc.fa
        ));
    }
    outcome(pass, format!("AUC p~/p/FA {}", parts.join("; ")))
}

fn fdr_calibration() -> Outcome {
    const REPLICATES: usize = 50;
    let mut cfg = RunConfig::default();
    cfg.phantom = PhantomConfig::with_shape(DESK).isotropic_only();
    let mut fdp = [0.0f64; 2];
    let mut rejections = [0usize; 2];
    for r in 0..REPLICATES {
        let exp = analyze(&cfg, 10.0, snr_seed(1000 + r as u64, 10.0)).unwrap();
        // every rejection is false, so the FDP is 1 whenever anything is rejected
        for (k, m) in [&exp.report.fdr, &exp.report.fdr_l].into_iter().enumerate() {
            rejections[k] += m.rejections;
            if m.rejections > 0 {
                fdp[k] += 1.0;
            }
        }
    }
    let q = cfg.fdr.level;
    let bound = q + 3.0 * (q * (1.0 - q) / REPLICATES as f64).sqrt();
    let mean = fdp.map(|s| s / REPLICATES as f64);
    outcome(
        mean.iter().all(|&m| m <= bound),
        format!(
            "mean FDP fdr {:.3} fdr_l {:.3} (bound {bound:.4}); mean rejections {:.1} / {:.1}",
            mean[0],
            mean[1],
            rejections[0] as f64 / REPLICATES as f64,
            rejections[1] as f64 / REPLICATES as f64
        ),
    )
}

fn power_growth(runs: &mut Runs) -> Outcome {
    let mut mean = |n: usize| {
        let e = runs.get(15.0, n);
        let v: Vec<f64> = (0..e.labels.label.len())
            .filter(|&i| e.test.testable[i] && e.labels.label[i] == Tissue::Nondegenerate)
            .map(|i| e.test.chi_k.data[i])
            .collect();
        (v.iter().sum::<f64>() / v.len() as f64, v.len())
    };
    let (m25, c25) = mean(25);
    let (m81, c81) = mean(81);
    outcome(
        c25 > 0 && m81 >= 2.0 * m25,
        format!(
            "mean chiK n25 {m25:.2} ({c25} voxels), n81 {m81:.2} ({c81} voxels), ratio {:.2}",
            m81 / m25
        ),
    )
}

fn isolated_ordering(runs: &mut Runs) -> Outcome {
    let e = runs.get(10.0, 25);
    let r = &e.report;
    let s = |m: &dtitest::pipeline::MethodReport| m.isolated.s1 + m.isolated.s2;
    let (l, f, a) = (s(&r.fdr_l), s(&r.fdr), s(&r.fa));
    // diagnostic only: the fixed threshold reported for the original phantom
    let mut fixed = baseline_fa_threshold(&e.maps.fa, 0.3003).reject;
    fixed
        .iter_mut()
        .zip(&e.test.testable)
        .for_each(|(x, &t)| *x &= t);
    let iso = isolated_counts(&fixed, &e.test.shape);
    outcome(
        l < f && f < a,
        format!(
            "S1+S2 FDR_L {l}, FDR {f}, calibrated FA {a} (FA rejects {} voxels); FA > 0.3003 gives {}",
            r.fa.rejections,
            iso.s1 + iso.s2
        ),
    )
}

fn oracles() -> Outcome {
    let e = common::eigen_errors(10_000, 2024);
    let bh = common::bh_mismatches(200, 5);
    let anova = common::anova_worst_error(200, 77);
    outcome(
        e.lambda < 1e-9 && e.residual < 1e-9 && bh == 0 && anova < 1e-12,
        format!(
            "eigen {:.1e}, residual {:.1e}, BH mismatches {bh}/200, ANOVA {anova:.1e}",
            e.lambda, e.residual
        ),
    )
}

fn main() {
    // libtest-style flags (e.g. --list from IDEs) are ignored
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut runs = Runs::default();
    let criteria: [(&str, &mut dyn FnMut(&mut Runs) -> Outcome); 9] = [
        ("formula values", &mut |_| formulas()),
        ("zero-noise round trip", &mut |_| zero_noise_roundtrip()),
        ("chiK null distribution", &mut null_distribution),
        ("sensitivity/specificity at SNR 10", &mut table_one),
        ("ROC ordering", &mut roc_ordering),
        ("pure-null FDR calibration", &mut |_| fdr_calibration()),
        ("power growth with n", &mut power_growth),
        ("isolated-finding ordering", &mut isolated_ordering),
        ("oracle equivalences", &mut |_| oracles()),
    ];
    let mut passed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let t = Instant::now();
        let o = f(&mut runs);
        passed += o.pass as usize;
        println!(
            "{} {} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {passed}/9 criteria pass");
    if passed < 9 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
