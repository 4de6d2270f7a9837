//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use fscil_core::classifier::{HeadKind, TrainingConfig, LAMBDA_INSTRUMENTS};
use fscil_core::data::{
    encode_payload, generate_synthetic, manifest_path, read_archive, write_archive, ArchiveManifest, CenterRule,
    EmbeddingRecord, EmbeddingSet, SessionLayout, SessionSplit, SyntheticSpec,
};
use fscil_core::episode::epoch_episodes;
use fscil_core::gradcheck::{run_gradcheck, run_sigma_zero, GradcheckConfig};
use fscil_core::metrics::{average_accuracy, performance_dropping, Group, RunReport};
use fscil_core::numeric::{sample_stochastic_weights, DenseVector, RngState};
use fscil_core::session::{run_full_protocol, session_sets, SessionPlan};
use fscil_core::{ClassId, Error, FormatError};
use ndarray::array;

type Check = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn defined(series: &[f64]) -> Vec<Option<f64>> {
    series.iter().map(|v| Some(*v)).collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn pick(rng: &mut RngState, n: usize) -> usize {
    ((rng.uniform() * n as f64) as usize).min(n - 1)
}

fn speech_all() -> Outcome {
    let series = [92.73, 92.27, 91.42, 89.53, 88.10, 87.56, 86.43, 84.00, 83.45];
    let start = Instant::now();
    let aa = average_accuracy(&series).unwrap();
    let pd = performance_dropping(&defined(&series), Group::All).unwrap();
    let elapsed = start.elapsed();
    outcome(
        within(aa, 88.39, 0.01) && within(pd, 9.28, 0.01) && elapsed < Duration::from_millis(1),
        format!("AA {aa:.4} (88.39), PD {pd:.4} (9.28), {elapsed:?}"),
    )
}

fn speech_incremental_and_base() -> Outcome {
    let incr = [86.84, 84.26, 77.74, 74.99, 75.79, 74.60, 72.45, 72.64];
    let base = [92.73, 92.72, 92.62, 92.48, 92.48, 92.47, 92.34, 90.74, 90.67];
    let mut incr_series = vec![None];
    incr_series.extend(defined(&incr));
    let aa = average_accuracy(&incr).unwrap();
    let pd = performance_dropping(&incr_series, Group::Incremental).unwrap();
    let base_pd = performance_dropping(&defined(&base), Group::Base).unwrap();
    outcome(
        within(aa, 77.41, 0.01) && within(pd, 14.20, 0.01) && within(base_pd, 2.06, 0.01),
        format!("Incr AA {aa:.4} (77.41), Incr PD {pd:.4} (14.20), Base PD {base_pd:.4} (2.06)"),
    )
}

fn instruments_all() -> Outcome {
    let series = [99.98, 97.88, 98.08, 96.53, 95.55, 93.61, 91.54, 90.13, 89.09, 88.29];
    let aa = average_accuracy(&series).unwrap();
    let pd = performance_dropping(&defined(&series), Group::All).unwrap();
    outcome(
        within(aa, 94.07, 0.01) && within(pd, 11.69, 0.01),
        format!("AA {aa:.4} (94.07), PD {pd:.4} (11.69)"),
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let report = run_gradcheck(&GradcheckConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let worst = report.checks.iter().map(|c| c.worst_relative).fold(0.0, f64::max);
    let failures: usize = report.checks.iter().map(|c| c.failures).sum();
    let entries: usize = report.checks.iter().map(|c| c.entries).sum();
    outcome(
        report.passed() && elapsed < Duration::from_secs(30),
        format!(
            "{} instances, {} losses, {entries} entries, {failures} failures, worst relative error {worst:.2e}, {elapsed:.1?}",
            report.instances,
            report.checks.len()
        ),
    )
}

fn sigma_zero() -> Outcome {
    let r = run_sigma_zero(100, 5).unwrap();
    outcome(
        r.passed(),
        format!(
            "{} configurations, worst loss diff {:.2e}, worst mu-gradient diff {:.2e}",
            r.configurations, r.worst_loss_difference, r.worst_gradient_difference
        ),
    )
}

fn reparameterization_statistics() -> Outcome {
    let mu = array![[2.0, -1.5, 0.0], [0.25, 4.0, -3.0]];
    let sigma = array![[3.0, 0.5, 1.0], [-2.0, 0.0, 0.1]];
    let draws = 100_000;
    let mut rng = RngState::new(17);
    let mut sum = ndarray::Array2::<f64>::zeros(mu.dim());
    let mut sq = ndarray::Array2::<f64>::zeros(mu.dim());
    for _ in 0..draws {
        let w = sample_stochastic_weights(&mu, &sigma, &mut rng).unwrap();
        sum += &w;
        sq += &(&w * &w);
    }
    let mut worst_mean: f64 = 0.0;
    let mut worst_std: f64 = 0.0;
    for ((idx, m), s) in mu.indexed_iter().zip(sigma.iter()) {
        let mean = sum[idx] / draws as f64;
        let var = sq[idx] / draws as f64 - mean * mean;
        worst_mean = worst_mean.max((mean - m).abs());
        worst_std = worst_std.max((var.max(0.0).sqrt() - s.abs()).abs());
    }
    outcome(
        worst_mean <= 0.05 && worst_std <= 0.05,
        format!("{draws} draws per entry, worst |mean - mu| {worst_mean:.4}, worst |std - |sigma|| {worst_std:.4}"),
    )
}

fn desk_spec(seed: u64, noise: f64) -> SyntheticSpec {
    SyntheticSpec {
        num_classes: 40,
        samples_per_class: 40,
        dim: 64,
        intra_class_noise: noise,
        seed,
        center_rule: CenterRule::Orthogonal,
        layout: SessionLayout {
            base_classes: Some(20),
            way: 5,
            train_per_class: Some(20),
        },
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Nearest class mean by cosine, means from every training sample.
fn ncm_accuracy(train: &[EmbeddingSet], test: &[EmbeddingSet]) -> f64 {
    let mut sums: BTreeMap<ClassId, (Vec<f64>, usize)> = BTreeMap::new();
    for r in train.iter().flat_map(|s| s.iter()) {
        let e = sums.entry(r.class_id).or_insert_with(|| (vec![0.0; r.vector.dim()], 0));
        for (acc, v) in e.0.iter_mut().zip(r.vector.as_slice()) {
            *acc += v;
        }
        e.1 += 1;
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for r in test.iter().flat_map(|s| s.iter()) {
        let best = sums
            .iter()
            .map(|(c, (s, _))| (*c, cosine(r.vector.as_slice(), s)))
            .fold((ClassId::MAX, f64::NEG_INFINITY), |b, x| if x.1 > b.1 { x } else { b });
        hits += usize::from(best.0 == r.class_id);
        total += 1;
    }
    100.0 * hits as f64 / total as f64
}

fn end_to_end() -> Outcome {
    let mut finals = Vec::new();
    let mut drops = Vec::new();
    let mut ncm_min = f64::INFINITY;
    let mut slowest = Duration::ZERO;
    for seed in 1..=10 {
        let start = Instant::now();
        let (set, manifest) = generate_synthetic(&desk_spec(seed, 0.05)).unwrap();
        let training = TrainingConfig {
            lambda: LAMBDA_INSTRUMENTS,
            ..TrainingConfig::default()
        };
        let plan = SessionPlan::from_manifest(&set, &manifest, 5, training).unwrap();
        let (train, test) = session_sets(&set, &manifest, plan.labels()).unwrap();
        let out = run_full_protocol(&plan, &train, &test, seed).unwrap();
        slowest = slowest.max(start.elapsed());
        finals.push(out.report.last_all_accuracy());
        drops.push(out.report.pd.all);
        ncm_min = ncm_min.min(ncm_accuracy(&train, &test));
    }
    let med_final = median(&mut finals);
    let med_pd = median(&mut drops);
    outcome(
        med_final >= 95.0 && med_pd <= 5.0 && ncm_min >= 99.0 && slowest < Duration::from_secs(60),
        format!(
            "10 seeds: median final All {med_final:.2}% (>= 95), median PD(All) {med_pd:.2} (<= 5), NCM min {ncm_min:.2}% (>= 99), slowest seed {slowest:.1?}"
        ),
    )
}

fn random_dataset(rng: &mut RngState, per_class: &[usize]) -> EmbeddingSet {
    let mut set = EmbeddingSet::new(2).unwrap();
    let mut id = 0u64;
    for (c, &count) in per_class.iter().enumerate() {
        for _ in 0..count {
            set.push(EmbeddingRecord {
                sample_id: id,
                class_id: c as ClassId,
                vector: DenseVector::new(vec![rng.standard_normal(), 1.0]).unwrap(),
            })
            .unwrap();
            id += 1;
        }
    }
    set
}

fn sampler_counting() -> Outcome {
    let mut rng = RngState::new(23);
    let data = random_dataset(&mut rng, &[20; 5]);
    let epoch = epoch_episodes(&data, 5, 5, &mut rng).unwrap();
    let mut seen = HashSet::new();
    let disjoint = epoch
        .episodes
        .iter()
        .flat_map(|e| e.support.iter().chain(e.query.iter()))
        .all(|r| seen.insert(r.sample_id));
    let exact = epoch.episodes.len() == 2 && disjoint && seen.len() == 100;

    let mut violations = 0;
    for _ in 0..100 {
        let classes = 2 + pick(&mut rng, 9);
        let per: Vec<usize> = (0..classes).map(|_| 1 + pick(&mut rng, 30)).collect();
        let n_way = 1 + pick(&mut rng, classes);
        let k_shot = 1 + pick(&mut rng, 5);
        let data = random_dataset(&mut rng, &per);
        let epoch = epoch_episodes(&data, n_way, k_shot, &mut rng).unwrap();
        let mut ids = HashSet::new();
        for e in &epoch.episodes {
            let shape_ok = e.way_classes.len() == n_way
                && e.support.len() == n_way * k_shot
                && e.query.len() == n_way * k_shot
                && e.support.class_ids() == e.query.class_ids();
            let unique = e.support.iter().chain(e.query.iter()).all(|r| ids.insert(r.sample_id));
            if !shape_ok || !unique {
                violations += 1;
            }
        }
        if ids.len() + epoch.unused_samples != data.len() {
            violations += 1;
        }
    }
    outcome(
        exact && violations == 0,
        format!(
            "5x20 at 5-way 5-shot: {} episodes, disjoint {disjoint}; 100 random datasets: {violations} violations",
            epoch.episodes.len()
        ),
    )
}

/// Random label groups with one class copied into a second group.
fn overlapping_groups(rng: &mut RngState) -> (Vec<BTreeSet<ClassId>>, ClassId) {
    let sessions = 2 + pick(rng, 5);
    let way = 1 + pick(rng, 4);
    let base = 1 + pick(rng, 6);
    let mut next: ClassId = 0;
    let mut groups: Vec<BTreeSet<ClassId>> = Vec::new();
    for m in 0..sessions {
        let size = if m == 0 { base } else { way };
        groups.push((next..next + size as ClassId).collect());
        next += size as ClassId;
    }
    let a = pick(rng, sessions);
    let b = (a + 1 + pick(rng, sessions - 1)) % sessions;
    let shared = *groups[a].iter().nth(pick(rng, groups[a].len())).unwrap();
    let victim = *groups[b].iter().next().unwrap();
    groups[b].remove(&victim);
    groups[b].insert(shared);
    (groups, shared)
}

fn write_raw_archive(dir: &Path, name: &str, groups: &[BTreeSet<ClassId>]) -> PathBuf {
    let mut set = EmbeddingSet::new(3).unwrap();
    let mut sessions = Vec::new();
    let mut id = 0u64;
    for g in groups {
        let mut split = SessionSplit {
            train: vec![],
            test: vec![],
        };
        for &c in g {
            for part in 0..2 {
                set.push(EmbeddingRecord {
                    sample_id: id,
                    class_id: c,
                    vector: DenseVector::new(vec![1.0, c as f64, id as f64]).unwrap(),
                })
                .unwrap();
                if part == 0 {
                    split.train.push(id);
                } else {
                    split.test.push(id);
                }
                id += 1;
            }
        }
        sessions.push(split);
    }
    let manifest = ArchiveManifest {
        version: 1,
        dim: 3,
        classes: set.class_ids().into_iter().map(|c| (c, format!("class-{c}"))).collect(),
        sessions,
        provenance: "adversarial".into(),
    };
    let path = dir.join(name);
    fs::write(&path, encode_payload(&set).unwrap()).unwrap();
    fs::write(manifest_path(&path), serde_json::to_vec(&manifest).unwrap()).unwrap();
    path
}

fn disjointness() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = RngState::new(31);
    let mut rejected = 0;
    for case in 0..50 {
        let (groups, shared) = overlapping_groups(&mut rng);
        let ok = if case % 2 == 0 {
            let n_way = groups[1].len();
            matches!(
                SessionPlan::new(groups, n_way, 1, TrainingConfig::default()),
                Err(Error::LabelOverlap { class_id, .. }) if class_id == shared
            )
        } else {
            let path = write_raw_archive(dir.path(), &format!("case{case}.fcae"), &groups);
            matches!(
                read_archive(&path),
                Err(Error::Format(FormatError::Disjointness { class_id, .. })) if class_id == shared
            )
        };
        rejected += usize::from(ok);
    }
    outcome(rejected == 50, format!("{rejected}/50 overlapping plans and archives rejected"))
}

fn fscil(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fscil"))
        .args(args)
        .env_remove("FSCIL_SEED")
        .output()
        .expect("fscil binary runs")
}

fn synth_archive(dir: &Path, name: &str, seed: u64, noise: f64) -> PathBuf {
    let (set, manifest) = generate_synthetic(&desk_spec(seed, noise)).unwrap();
    let path = dir.join(name);
    write_archive(&set, &manifest, &path).unwrap();
    path
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let archive = synth_archive(dir.path(), "det.fcae", 4, 0.1);
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = fscil(&[
            "run",
            "--archive",
            archive.to_str().unwrap(),
            "--seed",
            "99",
            "--out",
            out.to_str().unwrap(),
        ]);
        if !o.status.success() {
            return outcome(false, format!("run failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
        reports.push(fs::read(out.join("report.json")).unwrap());
    }
    let same = reports[0] == reports[1];
    outcome(same, format!("report.json of two seeded runs byte-identical: {same} ({} bytes)", reports[0].len()))
}

fn ablation() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut diffs = Vec::new();
    let mut emitted = 0;
    for seed in 1..=10u64 {
        let archive = synth_archive(dir.path(), &format!("noisy{seed}.fcae"), seed, 0.25);
        let mut aa = Vec::new();
        for head in [HeadKind::Stochastic, HeadKind::Deterministic] {
            let out = dir.path().join(format!("{seed}-{head}"));
            let o = fscil(&[
                "run",
                "--archive",
                archive.to_str().unwrap(),
                "--seed",
                &seed.to_string(),
                "--lambda",
                "0.6",
                "--classifier",
                head.as_str(),
                "--out",
                out.to_str().unwrap(),
            ]);
            if !o.status.success() {
                return outcome(false, format!("run failed: {}", String::from_utf8_lossy(&o.stderr)));
            }
            let report = RunReport::from_json(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
            if report.classifier == head && out.join("report.txt").exists() {
                emitted += 1;
            }
            aa.push(report.aa.all);
        }
        diffs.push(aa[0] - aa[1]);
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let med = median(&mut diffs.clone());
    outcome(
        emitted == 20,
        format!("{emitted}/20 reports emitted; AA(All) stochastic - deterministic: mean {mean:+.3}, median {med:+.3} points (informational)"),
    )
}

fn main() {
    let criteria: [Check; 11] = [
        ("1 metric oracle, speech All series", speech_all),
        ("2 metric oracle, speech Incr. and Base series", speech_incremental_and_base),
        ("3 metric oracle, instruments All series", instruments_all),
        ("4 gradient check", gradient_check),
        ("5 sigma = 0 reduction", sigma_zero),
        ("6 reparameterization statistics", reparameterization_statistics),
        ("7 end-to-end synthetic protocol", end_to_end),
        ("8 episode sampler counting", sampler_counting),
        ("9 disjointness enforcement", disjointness),
        ("10 determinism", determinism),
        ("11 ablation report", ablation),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let o = check();
        println!("[{}] criterion {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        if !o.passed {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 11 criteria passed");
    } else {
        println!("acceptance: {} failed: {}", failed.len(), failed.join("; "));
        std::process::exit(1);
    }
}
