use std::fs;
use std::path::Path;

use dtitest::fdr::SmoothedNull;
use dtitest::io::read_volume_file;
use dtitest::pipeline::{decision_meta, decision_volume, snr_dir_name, snr_seed};
use dtitest::{
    decide, fit_volume, read_volume, run_pipeline, scalar_maps, simulate, test_volume, Error,
    FdrConfig, FdrMode, PhantomConfig, RunConfig,
};

fn small_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.phantom = PhantomConfig::with_shape([64, 64, 8]);
    cfg.snr = vec![10.0, 20.0];
    cfg.seed = 42;
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn bytes(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p).unwrap()
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[test]
fn same_config_and_seed_give_identical_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b2 = tempfile::tempdir().unwrap();
    let ma = run_pipeline(&small_config(a.path())).unwrap();
    // the same config again, output directory included
    let mb = run_pipeline(&small_config(a.path())).unwrap();
    assert_eq!(ma, mb);
    // a different output directory changes nothing but the recorded path
    let mc = run_pipeline(&small_config(b2.path())).unwrap();
    assert_eq!(ma.reports, mc.reports);
    for name in [
        "dwi.dtv",
        "tensors.dtv",
        "chik.dtv",
        "p.dtv",
        "reject_fdr_l.dtv",
        "report.json",
    ] {
        let dir = snr_dir_name(10.0);
        let same = bytes(a.path().join(&dir).join(name)) == bytes(b2.path().join(&dir).join(name));
        assert!(same, "{name} differs");
    }
    assert_eq!(ma.reports.len(), 2);
    assert!(a.path().join("manifest.json").exists());
    assert!(a.path().join("timings.json").exists());
}

#[test]
fn later_stages_rerun_from_files_match_the_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    run_pipeline(&cfg).unwrap();
    let snr_dir = dir.path().join(snr_dir_name(10.0));

    // simulate again with the derived seed
    let spec = cfg.phantom.build::<f64>(Some(10.0)).unwrap();
    let dwi = simulate(
        &spec,
        &cfg.scheme.scheme().unwrap(),
        snr_seed(cfg.seed, 10.0),
    )
    .unwrap();
    let stored = read_volume(snr_dir.join("dwi.dtv"))
        .unwrap()
        .into_dwi()
        .unwrap();
    assert!(dwi == stored);

    // fit from the stored DWI file
    let tensors = fit_volume(&stored, false).unwrap();
    let stored_t = read_volume(snr_dir.join("tensors.dtv"))
        .unwrap()
        .into_tensor()
        .unwrap();
    assert_eq!(tensors.mask, stored_t.mask);
    assert_eq!(tensors.fit_ok, stored_t.fit_ok);
    let flat = |t: &dtitest::Tensors| t.tensors.iter().flat_map(|d| d.0).collect::<Vec<f64>>();
    assert!(same_bits(&flat(&tensors), &flat(&stored_t)));

    // scalars and test from the stored tensor file
    let maps = scalar_maps(&stored_t);
    let fa = read_volume(snr_dir.join("fa.dtv"))
        .unwrap()
        .into_scalar()
        .unwrap();
    assert!(same_bits(&maps.fa.data, &fa.data));
    let test = test_volume(&stored_t, &maps.eigen, &cfg.test).unwrap();
    let chik = read_volume(snr_dir.join("chik.dtv"))
        .unwrap()
        .into_scalar()
        .unwrap();
    assert!(same_bits(&test.chi_k.data, &chik.data));
    let p = read_volume(snr_dir.join("p.dtv"))
        .unwrap()
        .into_scalar()
        .unwrap();
    assert!(same_bits(&test.p.data, &p.data));

    // FDR_L from the stored p-value file
    let d = decide(
        &p,
        &FdrConfig {
            mode: FdrMode::FdrL,
            ..cfg.fdr.clone()
        },
    )
    .unwrap();
    let stored = read_volume_file(snr_dir.join("reject_fdr_l.dtv")).unwrap();
    assert!(stored.volume.into_mask().unwrap().data == d.reject);
    assert_eq!(stored.meta.get("method").map(String::as_str), Some("fdr_l"));
    let meta = decision_meta(&d, "fdr_l");
    assert!(meta.iter().all(|(k, v)| stored.meta.get(k) == Some(v)));
    assert_eq!(decision_volume(&d).shape(), &p.shape);
}

#[test]
fn failures_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.phantom = PhantomConfig::with_shape([12, 12, 4]);
    match run_pipeline(&cfg) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "simulate"),
        other => panic!("unexpected {other:?}"),
    }

    let mut cfg = small_config(dir.path());
    cfg.test.null_set.min_voxels = 10_000_000;
    match run_pipeline(&cfg) {
        Err(Error::Stage { stage, source }) => {
            assert_eq!(stage, "test");
            assert!(matches!(*source, Error::TooFewVoxels { .. }));
        }
        other => panic!("unexpected {other:?}"),
    }

    let mut cfg = small_config(dir.path());
    cfg.snr = vec![];
    assert!(matches!(
        run_pipeline(&cfg),
        Err(Error::Stage {
            stage: "config",
            ..
        })
    ));

    let file = dir.path().join("not-a-dir");
    fs::write(&file, "x").unwrap();
    let cfg = small_config(&file);
    assert!(matches!(
        run_pipeline(&cfg),
        Err(Error::Stage { stage: "write", .. })
    ));
}

#[test]
fn reports_cover_every_method_and_noise_level() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.snr = vec![5.0, 10.0, 15.0, 20.0];
    cfg.outputs.volumes = false;
    cfg.outputs.dwi = false;
    cfg.fdr.smoothed_null = SmoothedNull::Dependent;
    let m = run_pipeline(&cfg).unwrap();
    assert_eq!(m.reports.len(), 4);
    for r in &m.reports {
        assert!(r.auc.is_some());
        assert!(r.null_set.converged);
        assert!(r.qq.is_some());
        let tot = r.fdr.confusion.total();
        assert_eq!(tot, r.testable_voxels);
        assert_eq!(r.fdr_l.confusion.total(), tot);
        assert_eq!(r.fa.confusion.total(), tot);
        assert!(dir
            .path()
            .join(snr_dir_name(r.snr))
            .join("report.json")
            .exists());
        assert!(!dir.path().join(snr_dir_name(r.snr)).join("p.dtv").exists());
    }
    // more signal, more detections
    let se: Vec<f64> = m
        .reports
        .iter()
        .map(|r| r.fdr.confusion.sensitivity)
        .collect();
    assert!(se.windows(2).all(|w| w[0] <= w[1]), "{se:?}");
    assert_ne!(m.config_sha256, RunConfig::default().sha256());
}
