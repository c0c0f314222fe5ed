use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dtitest::eval::{QqTable, RocCurve};
use dtitest::fdr::SmoothedNull;
use dtitest::io::{read_volume_file, write_volume_with_meta};
use dtitest::local_test::{NullSetState, UntestableCounts};
use dtitest::pipeline::{decision_meta, decision_volume, SchemeConfig, VERSION};
use dtitest::{
    confusion, decide, fit_volume, isolated_counts, qq_chi2, read_volume, roc, run_pipeline,
    scalar_maps, simulate, test_volume, write_volume, AnyVolume, BoolVolume, ConfusionSummary,
    Direction, Error, FdrConfig, FdrMode, IsolatedCounts, PhantomConfig, RunConfig, TestConfig,
    Tissue,
};

#[derive(Parser)]
#[command(
    name = "dti-chik",
    version,
    about = "Local chi-square test for anisotropic diffusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a DWI phantom with Rician noise.
    Simulate {
        /// Phantom TOML; the default phantom when absent.
        #[arg(long)]
        phantom: Option<PathBuf>,
        /// Acquisition TOML (b, gradients).
        #[arg(long)]
        scheme: Option<PathBuf>,
        /// Omit for noiseless signals.
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit diffusion tensors by log-linear least squares.
    Fit {
        #[arg(long)]
        dwi: PathBuf,
        /// Replaces the acquisition stored in the DWI file.
        #[arg(long)]
        scheme: Option<PathBuf>,
        /// Estimate log(phi0) instead of using the measured reference signal.
        #[arg(long)]
        intercept: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// FA, RA and MD maps from a tensor file.
    Scalars {
        #[arg(long)]
        tensors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// chiK statistic and p-values.
    Test {
        #[arg(long)]
        tensors: PathBuf,
        /// Test TOML (neighborhood, contrast, null_set).
        #[arg(long)]
        cfg: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// FDR or FDR_L rejection mask from a p-value volume.
    Fdr {
        #[arg(long)]
        p: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Fdr)]
        mode: ModeArg,
        #[arg(long, default_value_t = 0.01)]
        level: f64,
        #[arg(long, default_value_t = 0.2)]
        lambda: f64,
        #[arg(long, value_enum, default_value_t = NullArg::Independent)]
        smoothed_null: NullArg,
        /// Also write the smoothed p-values here (fdr_l only).
        #[arg(long)]
        smoothed_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sensitivity, specificity, isolated findings and ROC against truth.
    Evaluate {
        #[arg(long)]
        decision: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Statistic for the ROC curve.
        #[arg(long)]
        stat: Option<PathBuf>,
        /// Whether small (`less`) or large (`greater`) values of the statistic
        /// indicate anisotropy.
        #[arg(long, value_enum, default_value_t = DirArg::Less)]
        direction: DirArg,
        /// chiK volume for the QQ table over isotropic voxels.
        #[arg(long)]
        chik: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        df: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        roc_csv: Option<PathBuf>,
        #[arg(long)]
        qq_csv: Option<PathBuf>,
    },
    /// Full experiment from one config.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the SNR list.
        #[arg(long, value_delimiter = ',')]
        snr: Option<Vec<f64>>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Percentile table of chiK over isotropic voxels against chi-square.
    Qq {
        #[arg(long)]
        chik: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 2)]
        df: usize,
        /// CSV output; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fdr,
    #[value(name = "fdr_l")]
    FdrL,
}

#[derive(Clone, Copy, ValueEnum)]
enum NullArg {
    Independent,
    Dependent,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirArg {
    Less,
    Greater,
}

type Res<T> = Result<T, Error>;

fn staged<T>(stage: &'static str, r: Res<T>) -> Res<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => e.in_stage(stage),
    })
}

fn load_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Res<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Res<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n")?;
    Ok(())
}

fn cmd_simulate(
    phantom: Option<&Path>,
    scheme: Option<&Path>,
    snr: Option<f64>,
    seed: u64,
    out: &Path,
) -> Res<()> {
    let phantom: PhantomConfig = staged("config", load_toml(phantom))?;
    let scheme_cfg: SchemeConfig = staged("config", load_toml(scheme))?;
    let scheme = staged("config", scheme_cfg.scheme())?;
    let spec = staged("simulate", phantom.build::<f64>(snr))?;
    let dwi = staged("simulate", simulate(&spec, &scheme, seed))?;
    staged(
        "write",
        (|| {
            fs::create_dir_all(out)?;
            write_volume(&AnyVolume::Dwi(dwi), out.join("dwi.dtv"))?;
            write_volume(
                &AnyVolume::Label(spec.labels.clone()),
                out.join("labels.dtv"),
            )?;
            let mut m = String::new();
            let _ = writeln!(m, "version = {VERSION}");
            let _ = writeln!(m, "seed = {seed}");
            let _ = writeln!(
                m,
                "snr = {}",
                snr.map_or("inf".to_string(), |s| format!("{s:?}"))
            );
            let _ = writeln!(m, "shape = {:?}", phantom.shape);
            let _ = writeln!(m, "b = {:?}", scheme.b);
            let _ = writeln!(m, "gradients = {}", scheme.len());
            for t in Tissue::ALL_INSIDE {
                let _ = writeln!(m, "voxels.{} = {}", t.name(), spec.labels.count(t));
            }
            fs::write(out.join("manifest.txt"), m)?;
            Ok(())
        })(),
    )
}

fn cmd_fit(dwi: &Path, scheme: Option<&Path>, intercept: bool, out: &Path) -> Res<()> {
    let mut dwi = staged("read", read_volume(dwi).and_then(|v| v.into_dwi()))?;
    if let Some(path) = scheme {
        let cfg: SchemeConfig = staged("config", load_toml(Some(path)))?;
        let s = staged("config", cfg.scheme())?;
        if s.len() != dwi.scheme.len() {
            return Err(Error::Config(format!(
                "scheme has {} gradients but the DWI file holds {}",
                s.len(),
                dwi.scheme.len()
            ))
            .in_stage("config"));
        }
        dwi.scheme = s;
    }
    let tensors = staged("fit", fit_volume(&dwi, intercept))?;
    staged("write", write_volume(&AnyVolume::Tensor(tensors), out))
}

fn cmd_scalars(tensors: &Path, out: &Path) -> Res<()> {
    let tensors = staged("read", read_volume(tensors).and_then(|v| v.into_tensor()))?;
    let maps = scalar_maps(&tensors);
    staged(
        "write",
        (|| {
            fs::create_dir_all(out)?;
            write_volume(&AnyVolume::Scalar(maps.fa), out.join("fa.dtv"))?;
            write_volume(&AnyVolume::Scalar(maps.ra), out.join("ra.dtv"))?;
            write_volume(&AnyVolume::Scalar(maps.md), out.join("md.dtv"))
        })(),
    )
}

#[derive(Serialize)]
struct TestManifest<'a> {
    version: &'a str,
    config: &'a TestConfig,
    testable_voxels: usize,
    untestable: UntestableCounts,
    null_set: &'a NullSetState,
}

fn cmd_test(tensors: &Path, cfg: Option<&Path>, out: &Path) -> Res<()> {
    let cfg: TestConfig = staged("config", load_toml(cfg))?;
    let tensors = staged("read", read_volume(tensors).and_then(|v| v.into_tensor()))?;
    let maps = scalar_maps(&tensors);
    let test = staged("test", test_volume(&tensors, &maps.eigen, &cfg))?;
    staged(
        "write",
        (|| {
            fs::create_dir_all(out)?;
            write_volume(&AnyVolume::Scalar(test.chi_k.clone()), out.join("chik.dtv"))?;
            write_volume(&AnyVolume::Scalar(test.p.clone()), out.join("p.dtv"))?;
            let testable = BoolVolume {
                shape: test.shape,
                data: test.testable.clone(),
                mask: tensors.mask.clone(),
            };
            write_volume(&AnyVolume::Mask(testable), out.join("testable.dtv"))?;
            write_json(
                &out.join("test.json"),
                &TestManifest {
                    version: VERSION,
                    config: &cfg,
                    testable_voxels: test.testable_count(),
                    untestable: test.untestable,
                    null_set: &test.state,
                },
            )
        })(),
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_fdr(
    p: &Path,
    mode: ModeArg,
    level: f64,
    lambda: f64,
    null: NullArg,
    smoothed_out: Option<&Path>,
    out: &Path,
) -> Res<()> {
    let p = staged("read", read_volume(p).and_then(|v| v.into_scalar()))?;
    let cfg = FdrConfig {
        level,
        lambda,
        mode: match mode {
            ModeArg::Fdr => FdrMode::Fdr,
            ModeArg::FdrL => FdrMode::FdrL,
        },
        smoothed_null: match null {
            NullArg::Independent => SmoothedNull::Independent,
            NullArg::Dependent => SmoothedNull::Dependent,
        },
        ..FdrConfig::default()
    };
    let d = staged("fdr", decide(&p, &cfg))?;
    let method = match mode {
        ModeArg::Fdr => "fdr",
        ModeArg::FdrL => "fdr_l",
    };
    staged(
        "write",
        (|| {
            write_volume_with_meta(&decision_volume(&d), &decision_meta(&d, method), out)?;
            if let Some(path) = smoothed_out {
                write_volume(&AnyVolume::Scalar(d.statistic.clone()), path)?;
            }
            Ok(())
        })(),
    )?;
    println!(
        "{method}: {} of {} voxels rejected",
        d.rejected_count(),
        d.tested.iter().filter(|&&t| t).count()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvaluateReport {
    method: Option<String>,
    confusion: ConfusionSummary,
    isolated: IsolatedCounts,
    auc: Option<f64>,
    qq: Option<QqTable>,
}

fn roc_csv(curve: &RocCurve) -> String {
    let mut s = String::from("fpr,tpr\n");
    for (x, y) in &curve.points {
        let _ = writeln!(s, "{x},{y}");
    }
    s
}

fn qq_csv(table: &QqTable) -> String {
    let mut s = String::from("percentile,empirical,theoretical\n");
    for r in &table.rows {
        let _ = writeln!(s, "{},{},{}", r.percentile, r.empirical, r.theoretical);
    }
    s
}

fn isotropic_values(chik: &dtitest::Scalars, truth: &dtitest::LabelVolume) -> Res<Vec<f64>> {
    if !chik.shape.same_grid(&truth.shape) {
        return Err(Error::ShapeMismatch("chiK and truth grids differ".into()));
    }
    Ok((0..chik.data.len())
        .filter(|&i| {
            chik.mask[i] && truth.label[i] == Tissue::Isotropic && chik.data[i].is_finite()
        })
        .map(|i| chik.data[i])
        .collect())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    decision: &Path,
    truth: &Path,
    stat: Option<&Path>,
    direction: DirArg,
    chik: Option<&Path>,
    df: usize,
    out: &Path,
    roc_out: Option<&Path>,
    qq_out: Option<&Path>,
) -> Res<()> {
    let file = staged("read", read_volume_file(decision))?;
    let method = file.meta.get("method").cloned();
    let decision = staged("read", file.volume.into_mask())?;
    let truth = staged("read", read_volume(truth).and_then(|v| v.into_label()))?;
    let evaluated = &decision.mask;
    let conf = staged(
        "evaluate",
        confusion(&decision.data, evaluated, &decision.shape, &truth),
    )?;
    let isolated = isolated_counts(&decision.data, &decision.shape);
    let curve = match stat {
        Some(path) => {
            let s = staged("read", read_volume(path).and_then(|v| v.into_scalar()))?;
            if !s.shape.same_grid(&truth.shape) {
                return Err(
                    Error::ShapeMismatch("statistic and truth grids differ".into())
                        .in_stage("evaluate"),
                );
            }
            let dir = match direction {
                DirArg::Less => Direction::Less,
                DirArg::Greater => Direction::Greater,
            };
            let ev: Vec<bool> = (0..s.data.len())
                .map(|i| evaluated[i] && s.data[i].is_finite())
                .collect();
            Some(staged("evaluate", roc(&s.data, &ev, &truth, dir))?)
        }
        None => None,
    };
    let qq = match chik {
        Some(path) => {
            let c = staged("read", read_volume(path).and_then(|v| v.into_scalar()))?;
            let iso = staged("evaluate", isotropic_values(&c, &truth))?;
            Some(staged("evaluate", qq_chi2(&iso, df))?)
        }
        None => None,
    };
    staged(
        "write",
        (|| {
            if let (Some(path), Some(c)) = (roc_out, &curve) {
                fs::write(path, roc_csv(c))?;
            }
            if let (Some(path), Some(q)) = (qq_out, &qq) {
                fs::write(path, qq_csv(q))?;
            }
            write_json(
                out,
                &EvaluateReport {
                    method,
                    confusion: conf,
                    isolated,
                    auc: curve.as_ref().map(|c| c.auc),
                    qq,
                },
            )
        })(),
    )?;
    println!(
        "sensitivity {:.4} specificity {:.4} S1 {} S2 {}{}",
        conf.sensitivity,
        conf.specificity,
        isolated.s1,
        isolated.s2,
        curve
            .map(|c| format!(" AUC {:.4}", c.auc))
            .unwrap_or_default()
    );
    Ok(())
}

fn cmd_run(
    config: Option<&Path>,
    out: Option<PathBuf>,
    snr: Option<Vec<f64>>,
    seed: Option<u64>,
) -> Res<()> {
    let mut cfg = match config {
        Some(p) => staged("config", RunConfig::load(p))?,
        None => RunConfig::default(),
    };
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    if let Some(s) = snr {
        cfg.snr = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let manifest = run_pipeline(&cfg)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    for r in &manifest.reports {
        let mut line = format!(
            "snr {:>5}: fdr se {:.4} sp {:.4} | fdr_l se {:.4} sp {:.4} | fa se {:.4} sp {:.4}",
            r.snr,
            r.fdr.confusion.sensitivity,
            r.fdr.confusion.specificity,
            r.fdr_l.confusion.sensitivity,
            r.fdr_l.confusion.specificity,
            r.fa.confusion.sensitivity,
            r.fa.confusion.specificity,
        );
        if let Some(a) = &r.auc {
            let _ = write!(
                line,
                " | auc p~ {:.4} p {:.4} fa {:.4}",
                a.p_smoothed, a.p, a.fa
            );
        }
        println!("{line}");
    }
    println!("outputs in {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_qq(chik: &Path, truth: &Path, df: usize, out: Option<&Path>) -> Res<()> {
    let c = staged("read", read_volume(chik).and_then(|v| v.into_scalar()))?;
    let truth = staged("read", read_volume(truth).and_then(|v| v.into_label()))?;
    let iso = staged("qq", isotropic_values(&c, &truth))?;
    let table = staged("qq", qq_chi2(&iso, df))?;
    let csv = qq_csv(&table);
    match out {
        Some(p) => staged("write", fs::write(p, csv).map_err(Error::from))?,
        None => print!("{csv}"),
    }
    eprintln!(
        "{}",
        serde_json::json!({
            "isotropic_voxels": table.count,
            "max_rel_deviation": table.max_rel_deviation,
            "ks": table.ks,
        })
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Res<()> {
    match cli.command {
        Command::Simulate {
            phantom,
            scheme,
            snr,
            seed,
            out,
        } => cmd_simulate(phantom.as_deref(), scheme.as_deref(), snr, seed, &out),
        Command::Fit {
            dwi,
            scheme,
            intercept,
            out,
        } => cmd_fit(&dwi, scheme.as_deref(), intercept, &out),
        Command::Scalars { tensors, out } => cmd_scalars(&tensors, &out),
        Command::Test { tensors, cfg, out } => cmd_test(&tensors, cfg.as_deref(), &out),
        Command::Fdr {
            p,
            mode,
            level,
            lambda,
            smoothed_null,
            smoothed_out,
            out,
        } => cmd_fdr(
            &p,
            mode,
            level,
            lambda,
            smoothed_null,
            smoothed_out.as_deref(),
            &out,
        ),
        Command::Evaluate {
            decision,
            truth,
            stat,
            direction,
            chik,
            df,
            out,
            roc_csv,
            qq_csv,
        } => cmd_evaluate(
            &decision,
            &truth,
            stat.as_deref(),
            direction,
            chik.as_deref(),
            df,
            &out,
            roc_csv.as_deref(),
            qq_csv.as_deref(),
        ),
        Command::Run {
            config,
            out,
            snr,
            seed,
        } => cmd_run(config.as_deref(), out, snr, seed),
        Command::Qq {
            chik,
            truth,
            df,
            out,
        } => cmd_qq(&chik, &truth, df, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
