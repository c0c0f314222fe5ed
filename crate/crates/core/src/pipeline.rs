//! End-to-end experiment: simulate, fit, scalar maps, local test, FDR and
//! evaluation, driven by one TOML config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eigen::{scalar_maps, ScalarMaps};
use crate::error::{Error, Result};
use crate::eval::{
    confusion, isolated_counts, qq_chi2, roc, ConfusionSummary, Direction, IsolatedCounts,
};
use crate::fdr::{decide, DecisionMask, FdrConfig, FdrMode, Threshold};
use crate::fit::{fit_volume, TensorField};
use crate::io::{write_volume_with_meta, AnyVolume};
use crate::local_test::{test_volume, NullSetState, TestConfig, TestField, UntestableCounts};
use crate::sim::{simulate, AcquisitionScheme, DwiVolume, PhantomConfig, DEFAULT_B};
use crate::volume::{BoolVolume, LabelVolume, ScalarVolume, Tissue};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub b: f64,
    /// Unit gradient directions; the 12-direction default when absent.
    pub gradients: Option<Vec<[f64; 3]>>,
    /// Fit `log phi0` as a free intercept instead of using the measured
    /// reference signal.
    pub intercept: bool,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            b: DEFAULT_B,
            gradients: None,
            intercept: false,
        }
    }
}

impl SchemeConfig {
    pub fn scheme(&self) -> Result<AcquisitionScheme<f64>> {
        let s = AcquisitionScheme {
            b: self.b,
            gradients: self
                .gradients
                .clone()
                .unwrap_or_else(|| AcquisitionScheme::<f64>::default_12().gradients),
        };
        s.validate()?;
        Ok(s)
    }
}

/// Which volumes `run_pipeline` writes besides the reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dwi: bool,
    pub volumes: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dwi: true,
            volumes: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub phantom: PhantomConfig,
    pub scheme: SchemeConfig,
    pub snr: Vec<f64>,
    /// Root seed; each SNR derives its own simulation seed from it.
    pub seed: u64,
    pub test: TestConfig,
    /// Level, lambda and smoothing settings shared by both FDR modes.
    pub fdr: FdrConfig,
    pub output_dir: PathBuf,
    pub outputs: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            phantom: PhantomConfig::default(),
            scheme: SchemeConfig::default(),
            snr: vec![10.0],
            seed: 1,
            test: TestConfig::default(),
            fdr: FdrConfig::default(),
            output_dir: PathBuf::from("out"),
            outputs: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.scheme()?;
        self.test.validate()?;
        self.fdr.validate()?;
        self.phantom.grid()?;
        if self.snr.is_empty() {
            return Err(Error::Config("snr list is empty".into()));
        }
        if let Some(s) = self.snr.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Config(format!("snr {s} must be positive")));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the effective config.
    pub fn sha256(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Simulation seed for one SNR, split from the root seed.
pub fn snr_seed(root: u64, snr: f64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(snr.to_bits());
    rng.next_u64()
}

/// Rejects voxels with FA strictly above `threshold`. Voxels without a finite
/// FA are not tested.
pub fn baseline_fa_threshold(fa: &ScalarVolume<f64>, threshold: f64) -> DecisionMask {
    let tested: Vec<bool> = fa
        .data
        .iter()
        .zip(&fa.mask)
        .map(|(v, &m)| m && v.is_finite())
        .collect();
    let reject: Vec<bool> = fa
        .data
        .iter()
        .zip(&tested)
        .map(|(&v, &t)| t && v > threshold)
        .collect();
    let rejections = reject.iter().filter(|&&r| r).count();
    DecisionMask {
        reject,
        tested,
        statistic: fa.clone(),
        threshold: Threshold {
            cutoff: Some(threshold),
            rejections,
        },
        pi0: f64::NAN,
    }
}

/// FA threshold whose rejections reach `target` sensitivity over the
/// evaluated voxels, rounded to the nearest whole positive voxel.
pub fn calibrate_fa_threshold(
    fa: &ScalarVolume<f64>,
    evaluated: &[bool],
    truth: &LabelVolume,
    target: f64,
) -> Result<f64> {
    let mut pos: Vec<f64> = (0..fa.data.len())
        .filter(|&i| evaluated[i] && fa.data[i].is_finite() && truth.truth(i) == Some(true))
        .map(|i| fa.data[i])
        .collect();
    if pos.is_empty() {
        return Err(Error::SingleClass);
    }
    pos.sort_by(|a, b| b.total_cmp(a));
    let k = (target.clamp(0.0, 1.0) * pos.len() as f64).round() as usize;
    Ok(if k == 0 {
        pos[0]
    } else if k >= pos.len() {
        pos[pos.len() - 1].next_down()
    } else {
        // midway between the k-th and (k+1)-th largest positive FA
        0.5 * (pos[k - 1] + pos[k])
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub confusion: ConfusionSummary,
    pub isolated: IsolatedCounts,
    pub rejections: usize,
    pub cutoff: Option<f64>,
    pub pi0: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub p_smoothed: f64,
    pub p: f64,
    pub fa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QqSummary {
    pub isotropic_voxels: usize,
    pub max_rel_deviation: f64,
    pub ks: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    pub snr: f64,
    pub seed: u64,
    pub mask_voxels: usize,
    pub testable_voxels: usize,
    pub untestable: UntestableCounts,
    pub null_set: NullSetState,
    pub fdr: MethodReport,
    pub fdr_l: MethodReport,
    /// FA thresholded to match the FDR_L sensitivity.
    pub fa: MethodReport,
    pub auc: Option<AucReport>,
    pub qq: Option<QqSummary>,
}

/// Every intermediate of one simulated acquisition.
pub struct Experiment {
    pub labels: LabelVolume,
    pub dwi: DwiVolume<f64>,
    pub tensors: TensorField<f64>,
    pub maps: ScalarMaps<f64>,
    pub test: TestField,
    pub fdr: DecisionMask,
    pub fdr_l: DecisionMask,
    pub fa: DecisionMask,
    pub report: SnrReport,
    pub timings: BTreeMap<&'static str, f64>,
    pub warnings: Vec<String>,
}

fn timed<R>(
    timings: &mut BTreeMap<&'static str, f64>,
    stage: &'static str,
    f: impl FnOnce() -> Result<R>,
) -> Result<R> {
    let t = Instant::now();
    let r = f().map_err(|e| e.in_stage(stage))?;
    *timings.entry(stage).or_default() += t.elapsed().as_secs_f64();
    Ok(r)
}

fn method_report(
    d: &DecisionMask,
    evaluated: &[bool],
    labels: &LabelVolume,
) -> Result<MethodReport> {
    Ok(MethodReport {
        confusion: confusion(&d.reject, evaluated, &labels.shape, labels)?,
        isolated: isolated_counts(&d.reject, &labels.shape),
        rejections: d.rejected_count(),
        cutoff: d.threshold.cutoff,
        pi0: d.pi0.is_finite().then_some(d.pi0),
    })
}

/// Runs every stage in memory for one SNR and seed.
pub fn analyze(cfg: &RunConfig, snr: f64, seed: u64) -> Result<Experiment> {
    let mut timings = BTreeMap::new();
    let mut warnings = Vec::new();
    let scheme = cfg.scheme.scheme()?;
    let spec = timed(&mut timings, "simulate", || {
        cfg.phantom.build::<f64>(Some(snr))
    })?;
    let dwi = timed(&mut timings, "simulate", || simulate(&spec, &scheme, seed))?;
    let labels = spec.labels;
    let tensors = timed(&mut timings, "fit", || {
        fit_volume(&dwi, cfg.scheme.intercept)
    })?;
    let maps = timed(&mut timings, "scalars", || Ok(scalar_maps(&tensors)))?;
    let test = timed(&mut timings, "test", || {
        test_volume(&tensors, &maps.eigen, &cfg.test)
    })?;
    if !test.state.converged {
        warnings.push(format!(
            "snr {snr}: isotropic-set iteration stopped after {} iterations without converging",
            test.state.iterations
        ));
    }
    if let Some(r) = test.state.ridge {
        warnings.push(format!(
            "snr {snr}: ridge {r:e} added to the null covariance"
        ));
    }
    let (fdr, fdr_l) = timed(&mut timings, "fdr", || {
        let mut c = cfg.fdr.clone();
        c.mode = FdrMode::Fdr;
        let a = decide(&test.p, &c)?;
        c.mode = FdrMode::FdrL;
        Ok((a, decide(&test.p, &c)?))
    })?;

    let (report, fa) = timed(&mut timings, "evaluate", || {
        let evaluated = &test.testable;
        let fdr_r = method_report(&fdr, evaluated, &labels)?;
        let fdr_l_r = method_report(&fdr_l, evaluated, &labels)?;
        let has_both =
            labels.count(Tissue::Isotropic) > 0 && labels.label.iter().any(|l| l.is_anisotropic());
        let fa_threshold = if has_both && fdr_l_r.confusion.sensitivity.is_finite() {
            calibrate_fa_threshold(&maps.fa, evaluated, &labels, fdr_l_r.confusion.sensitivity)?
        } else {
            f64::INFINITY
        };
        let mut fa = baseline_fa_threshold(&maps.fa, fa_threshold);
        // compare on the same voxel set as the local test
        for (r, &e) in fa.reject.iter_mut().zip(evaluated) {
            *r &= e;
        }
        fa.threshold.rejections = fa.rejected_count();
        let fa_r = method_report(&fa, evaluated, &labels)?;
        let auc = if has_both {
            let p_s = roc(&fdr_l.statistic.data, evaluated, &labels, Direction::Less)?;
            let p = roc(&test.p.data, evaluated, &labels, Direction::Less)?;
            let f = roc(&maps.fa.data, evaluated, &labels, Direction::Greater)?;
            Some(AucReport {
                p_smoothed: p_s.auc,
                p: p.auc,
                fa: f.auc,
            })
        } else {
            None
        };
        let iso_chi: Vec<f64> = (0..labels.label.len())
            .filter(|&i| evaluated[i] && labels.label[i] == Tissue::Isotropic)
            .map(|i| test.chi_k.data[i])
            .collect();
        let qq = qq_chi2(&iso_chi, cfg.test.contrast.rank())
            .ok()
            .map(|q| QqSummary {
                isotropic_voxels: q.count,
                max_rel_deviation: q.max_rel_deviation,
                ks: q.ks,
            });
        let report = SnrReport {
            snr,
            seed,
            mask_voxels: tensors.mask.iter().filter(|&&m| m).count(),
            testable_voxels: test.testable_count(),
            untestable: test.untestable,
            null_set: test.state.clone(),
            fdr: fdr_r,
            fdr_l: fdr_l_r,
            fa: fa_r,
            auc,
            qq,
        };
        Ok((report, fa))
    })?;
    Ok(Experiment {
        labels,
        dwi,
        tensors,
        maps,
        test,
        fdr,
        fdr_l,
        fa,
        report,
        timings,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_sha256: String,
    pub config: RunConfig,
    pub reports: Vec<SnrReport>,
    pub warnings: Vec<String>,
}

/// Directory name used for one SNR's outputs.
pub fn snr_dir_name(snr: f64) -> String {
    format!("snr_{snr}")
}

pub fn decision_volume(d: &DecisionMask) -> AnyVolume {
    AnyVolume::Mask(BoolVolume {
        shape: d.statistic.shape,
        data: d.reject.clone(),
        mask: d.tested.clone(),
    })
}

pub fn decision_meta(d: &DecisionMask, method: &str) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("method".to_string(), method.to_string());
    if let Some(c) = d.threshold.cutoff {
        m.insert("cutoff".to_string(), format!("{c:?}"));
    }
    if d.pi0.is_finite() {
        m.insert("pi0".to_string(), format!("{:?}", d.pi0));
    }
    m
}

fn write_experiment(exp: &Experiment, dir: &Path, outputs: &OutputConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut meta = BTreeMap::new();
    meta.insert("seed".to_string(), exp.report.seed.to_string());
    meta.insert("snr".to_string(), format!("{:?}", exp.report.snr));
    let w = |name: &str, vol: AnyVolume, meta: &BTreeMap<String, String>| {
        write_volume_with_meta(&vol, meta, dir.join(name))
    };
    w("labels.dtv", AnyVolume::Label(exp.labels.clone()), &meta)?;
    if outputs.dwi {
        w("dwi.dtv", AnyVolume::Dwi(exp.dwi.clone()), &meta)?;
    }
    if outputs.volumes {
        w("tensors.dtv", AnyVolume::Tensor(exp.tensors.clone()), &meta)?;
        w("fa.dtv", AnyVolume::Scalar(exp.maps.fa.clone()), &meta)?;
        w("ra.dtv", AnyVolume::Scalar(exp.maps.ra.clone()), &meta)?;
        w("md.dtv", AnyVolume::Scalar(exp.maps.md.clone()), &meta)?;
        w("chik.dtv", AnyVolume::Scalar(exp.test.chi_k.clone()), &meta)?;
        w("p.dtv", AnyVolume::Scalar(exp.test.p.clone()), &meta)?;
        w(
            "p_smoothed.dtv",
            AnyVolume::Scalar(exp.fdr_l.statistic.clone()),
            &meta,
        )?;
        let testable = BoolVolume {
            shape: exp.test.shape,
            data: exp.test.testable.clone(),
            mask: exp.tensors.mask.clone(),
        };
        w("testable.dtv", AnyVolume::Mask(testable), &meta)?;
        for (name, d, method) in [
            ("reject_fdr.dtv", &exp.fdr, "fdr"),
            ("reject_fdr_l.dtv", &exp.fdr_l, "fdr_l"),
            ("reject_fa.dtv", &exp.fa, "fa"),
        ] {
            let mut m = meta.clone();
            m.extend(decision_meta(d, method));
            w(name, decision_volume(d), &m)?;
        }
    }
    let report = serde_json::to_string_pretty(&exp.report).expect("report serializes");
    fs::write(dir.join("report.json"), report + "\n")?;
    Ok(())
}

/// Runs the experiment for every configured SNR and writes all outputs,
/// `manifest.json` and `timings.json` under the output directory.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::from(e).in_stage("write"))?;
    let mut reports = Vec::new();
    let mut warnings = Vec::new();
    let mut timings: BTreeMap<String, BTreeMap<&'static str, f64>> = BTreeMap::new();
    for &snr in &cfg.snr {
        let seed = snr_seed(cfg.seed, snr);
        let exp = analyze(cfg, snr, seed)?;
        let dir = cfg.output_dir.join(snr_dir_name(snr));
        let t = Instant::now();
        write_experiment(&exp, &dir, &cfg.outputs).map_err(|e| e.in_stage("write"))?;
        let mut stage_times = exp.timings;
        stage_times.insert("write", t.elapsed().as_secs_f64());
        timings.insert(snr_dir_name(snr), stage_times);
        warnings.extend(exp.warnings);
        reports.push(exp.report);
    }
    let manifest = RunManifest {
        version: VERSION.to_string(),
        config_sha256: cfg.sha256(),
        config: cfg.clone(),
        reports,
        warnings,
    };
    let write = || -> Result<()> {
        let m = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(cfg.output_dir.join("manifest.json"), m + "\n")?;
        let t = serde_json::to_string_pretty(&timings).expect("timings serialize");
        fs::write(cfg.output_dir.join("timings.json"), t + "\n")?;
        Ok(())
    };
    write().map_err(|e| e.in_stage("write"))?;
    Ok(manifest)
}
