use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use fscil_core::classifier::HeadKind;
use fscil_core::data::{
    generate_synthetic, read_archive, write_archive, write_atomic, ArchiveManifest, CenterRule, EmbeddingSet,
    SessionLayout, SyntheticSpec,
};
use fscil_core::gradcheck::{run_gradcheck, run_sigma_zero, GradcheckConfig, SIGMA_ZERO_TOLERANCE};
use fscil_core::metrics::{render, ReportFormat, RunReport};
use fscil_core::numeric::OptimizerConfig;
use fscil_core::session::{regroup_incremental, run_full_protocol, session_sets, RunOutput, SessionPlan};
use fscil_core::Error;

use crate::config::{resolve_seed, ConfigError, RunConfig};
use crate::{GradcheckArgs, ReportArgs, RunArgs, SweepArgs, SynthArgs, ValidateArgs};

/// Raised when a diagnostic finishes but its tolerance is breached.
#[derive(Debug)]
pub struct ToleranceBreach(pub String);

impl std::fmt::Display for ToleranceBreach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ToleranceBreach {}

pub fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    let seed = resolve_seed(args.seed, None)?;
    let center_rule = match args.center_rule.as_str() {
        "random-unit" => CenterRule::RandomUnit {
            max_cosine: args.max_cosine,
        },
        "orthogonal" => CenterRule::Orthogonal,
        other => bail!(ConfigError(format!(
            "unknown center rule {other:?} (expected random-unit or orthogonal)"
        ))),
    };
    let spec = SyntheticSpec {
        num_classes: args.classes,
        samples_per_class: args.per_class,
        dim: args.dim,
        intra_class_noise: args.noise,
        seed,
        center_rule,
        layout: SessionLayout {
            base_classes: args.base_classes,
            way: args.way,
            train_per_class: args.train_per_class,
        },
    };
    let (set, manifest) = generate_synthetic(&spec)?;
    write_archive(&set, &manifest, &args.out)?;
    println!(
        "wrote {} records (dim {}, {} classes, {} sessions) to {}",
        set.len(),
        set.dim(),
        manifest.classes.len(),
        manifest.sessions.len(),
        args.out.display()
    );
    Ok(())
}

fn merged_config(args: &RunArgs) -> anyhow::Result<(RunConfig, u64)> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(a) = &args.archive {
        cfg.archive = Some(a.clone());
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    if let Some(c) = args.classifier {
        cfg.classifier = c;
    }
    if let Some(l) = args.lambda {
        cfg.training.lambda = l;
    }
    if let Some(k) = args.k_shot {
        cfg.k_shot = k;
    }
    if args.n_way.is_some() {
        cfg.n_way = args.n_way;
    }
    if args.sessions.is_some() {
        cfg.sessions = args.sessions;
    }
    if let Some(e) = args.base_epochs {
        cfg.base_epochs = e;
    }
    if let Some(e) = args.incremental_epochs {
        cfg.incremental_epochs = e;
    }
    if let Some(v) = args.lr {
        match &mut cfg.training.optimizer {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Momentum { lr, .. } | OptimizerConfig::Adam { lr, .. } => {
                *lr = v
            }
        }
    }
    if let Some(s) = args.logit_scale {
        cfg.training.logit_scale = s;
    }
    if let Some(s) = args.sigma_init {
        cfg.training.sigma_init = s;
    }
    if !args.format.is_empty() {
        cfg.formats = args.format.clone();
    }
    let seed = resolve_seed(args.seed, cfg.seed)?;
    cfg.seed = Some(seed);
    cfg.validate()?;
    Ok((cfg, seed))
}

/// Plan and per-session data for one (N, K) choice.
pub struct Prepared {
    pub plan: SessionPlan,
    pub train: Vec<EmbeddingSet>,
    pub test: Vec<EmbeddingSet>,
}

pub fn prepare(
    cfg: &RunConfig,
    set: &EmbeddingSet,
    manifest: &ArchiveManifest,
    n_way: Option<usize>,
    k_shot: usize,
) -> Result<Prepared, Error> {
    let mut labels: Vec<BTreeSet<_>> = manifest.session_labels(set)?;
    if let Some(b) = cfg.base_classes {
        if labels[0].len() != b {
            return Err(Error::PlanViolation(format!(
                "archive base session has {} classes, config expects {b}",
                labels[0].len()
            )));
        }
    }
    let archive_way = labels.get(1).map(BTreeSet::len);
    if let Some(n) = n_way {
        if Some(n) != archive_way && labels.len() > 1 {
            labels = regroup_incremental(&labels, n)?;
        }
    }
    if let Some(m) = cfg.sessions {
        if m > labels.len() {
            return Err(Error::PlanViolation(format!(
                "{m} sessions requested, the archive provides {}",
                labels.len()
            )));
        }
        labels.truncate(m);
    }
    let n = n_way.or(archive_way).unwrap_or(5);
    let plan = SessionPlan::new(labels, n, k_shot, cfg.training.clone())?
        .with_head(cfg.classifier)
        .with_epochs(cfg.base_epochs, cfg.incremental_epochs);
    let (train, test) = session_sets(set, manifest, plan.labels())?;
    Ok(Prepared { plan, train, test })
}

fn loss_trace_csv(out: &RunOutput) -> String {
    let mut s = String::from("session,step,loss\n");
    for (m, trace) in out.traces.iter().enumerate() {
        for (i, l) in trace.losses.iter().enumerate() {
            let _ = writeln!(s, "{m},{i},{l}");
        }
    }
    s
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn run(args: &RunArgs) -> anyhow::Result<()> {
    let (cfg, seed) = merged_config(args)?;
    let archive = cfg.archive.clone().expect("validated");
    let (set, manifest) = read_archive(&archive)?;
    let prepared = prepare(&cfg, &set, &manifest, cfg.n_way, cfg.k_shot)?;
    let out = run_full_protocol(&prepared.plan, &prepared.train, &prepared.test, seed)?;
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    for f in &cfg.formats {
        files.push((cfg.output_dir.join(format!("report.{}", f.extension())), render(&out.report, *f)?));
    }
    files.push((cfg.output_dir.join("loss_trace.csv"), loss_trace_csv(&out)));
    create_dir(&cfg.output_dir)?;
    for (path, text) in &files {
        write_atomic(path, text.as_bytes())?;
    }
    print!("{}", render(&out.report, ReportFormat::Table)?);
    Ok(())
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let (cfg, seed) = merged_config(&args.run)?;
    if args.n_list.is_empty() || args.k_list.is_empty() {
        bail!(ConfigError("--n-list and --k-list must not be empty".into()));
    }
    let archive = cfg.archive.clone().expect("validated");
    let (set, manifest) = read_archive(&archive)?;
    let has_incremental = manifest.sessions.len() > 1;
    let mut grid: Vec<Vec<Option<f64>>> = Vec::new();
    for &k in &args.k_list {
        let mut row = Vec::new();
        for &n in &args.n_list {
            let cell = match prepare(&cfg, &set, &manifest, Some(n), k) {
                Ok(p) if has_incremental && p.plan.num_sessions() == 1 => {
                    log::warn!("N={n} K={k}: no incremental session can be formed");
                    None
                }
                Ok(p) => match run_full_protocol(&p.plan, &p.train, &p.test, seed) {
                    Ok(out) => Some(out.report.last_all_accuracy()),
                    Err(e @ (Error::PlanViolation(_) | Error::LabelOverlap { .. })) => {
                        log::warn!("N={n} K={k}: {e}");
                        None
                    }
                    Err(e) => return Err(e.into()),
                },
                Err(e @ (Error::PlanViolation(_) | Error::LabelOverlap { .. })) => {
                    log::warn!("N={n} K={k}: {e}");
                    None
                }
                Err(e) => return Err(e.into()),
            };
            row.push(cell);
        }
        grid.push(row);
    }
    let mut csv = String::from("k_shot\\n_way");
    for n in &args.n_list {
        let _ = write!(csv, ",{n}");
    }
    csv.push('\n');
    for (k, row) in args.k_list.iter().zip(&grid) {
        let cells: Vec<String> = row.iter().map(|c| fmt_cell(*c)).collect();
        let _ = writeln!(csv, "{k},{}", cells.join(","));
    }
    create_dir(&cfg.output_dir)?;
    write_atomic(&cfg.output_dir.join("sweep.csv"), csv.as_bytes())?;
    print!("{csv}");
    for (j, n) in args.n_list.iter().enumerate() {
        let mut prev: Option<(usize, f64)> = None;
        for (i, k) in args.k_list.iter().enumerate() {
            if let Some(acc) = grid[i][j] {
                if let Some((pk, pa)) = prev {
                    if *k > pk && acc < pa {
                        eprintln!("note: N={n}: accuracy fell from {pa:.2} at K={pk} to {acc:.2} at K={k}");
                    }
                }
                prev = Some((*k, acc));
            }
        }
    }
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> anyhow::Result<()> {
    let seed = resolve_seed(args.seed, None)?;
    if args.sigma_zero {
        let r = run_sigma_zero(args.instances.unwrap_or(100), seed)?;
        println!(
            "sigma=0 agreement over {} configurations: worst loss difference {:e}, worst mu-gradient difference {:e} (tolerance {:e})",
            r.configurations, r.worst_loss_difference, r.worst_gradient_difference, SIGMA_ZERO_TOLERANCE
        );
        if !r.passed() {
            bail!(ToleranceBreach("stochastic and deterministic losses disagree at sigma = 0".into()));
        }
        return Ok(());
    }
    let defaults = GradcheckConfig::default();
    let cfg = GradcheckConfig {
        instances: args.instances.unwrap_or(defaults.instances),
        max_dim: args.max_dim,
        max_classes: args.max_classes,
        max_batch: args.max_batch,
        seed,
        step: args.step.unwrap_or(defaults.step),
    };
    let report = run_gradcheck(&cfg)?;
    println!("{:<20} {:>8} {:>9} {:>14} {:>14}", "loss", "entries", "failures", "worst_rel", "worst_abs_small");
    for c in &report.checks {
        println!(
            "{:<20} {:>8} {:>9} {:>14.3e} {:>14.3e}",
            c.loss, c.entries, c.failures, c.worst_relative, c.worst_absolute_small
        );
    }
    if !report.passed() {
        bail!(ToleranceBreach("analytic gradients disagree with finite differences".into()));
    }
    println!("all gradients within tolerance over {} instances", report.instances);
    Ok(())
}

pub fn report(args: &ReportArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&args.input).map_err(|e| Error::Io {
        path: args.input.clone(),
        source: e,
    })?;
    let report = RunReport::from_json(&text)?;
    let rendered = render(&report, args.format)?;
    match &args.out {
        Some(p) => write_atomic(p, rendered.as_bytes())?,
        None => print!("{rendered}"),
    }
    Ok(())
}

pub fn validate(args: &ValidateArgs) -> anyhow::Result<()> {
    let (set, manifest) =
        read_archive(&args.archive).with_context(|| format!("validating {}", args.archive.display()))?;
    println!(
        "ok: {} records, dim {}, {} classes, {} sessions",
        set.len(),
        set.dim(),
        manifest.classes.len(),
        manifest.sessions.len()
    );
    for (m, labels) in manifest.session_labels(&set)?.iter().enumerate() {
        let s = &manifest.sessions[m];
        println!(
            "session {m}: {} classes, {} train, {} test",
            labels.len(),
            s.train.len(),
            s.test.len()
        );
    }
    Ok(())
}

pub fn head_kind(s: &str) -> Result<HeadKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn report_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}
