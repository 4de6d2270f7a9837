//! The multi-session protocol: base training, incremental expansion with
//! the joint loss, prototype maintenance, and cumulative evaluation.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::classifier::{train, Classifier, HeadKind, PrototypeSet, TrainingConfig, TrainingData, TrainingTrace};
use crate::data::{ArchiveManifest, EmbeddingSet};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, RunConfigEcho, RunReport, SessionAccuracyRecord};
use crate::numeric::{streams, RngState};
use crate::ClassId;

pub const DEFAULT_BASE_EPOCHS: usize = 50;
pub const DEFAULT_INCREMENTAL_EPOCHS: usize = 100;

/// The session schedule: `labels[0]` is the base label set, `labels[m]` the
/// classes introduced in session `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    labels: Vec<BTreeSet<ClassId>>,
    pub n_way: usize,
    pub k_shot: usize,
    pub head: HeadKind,
    /// Shared by both phases; `epochs` is replaced by the per-phase counts.
    pub training: TrainingConfig,
    pub base_epochs: usize,
    pub incremental_epochs: usize,
}

impl SessionPlan {
    pub fn new(labels: Vec<BTreeSet<ClassId>>, n_way: usize, k_shot: usize, training: TrainingConfig) -> Result<Self> {
        let plan = Self {
            labels,
            n_way,
            k_shot,
            head: HeadKind::Stochastic,
            training,
            base_epochs: DEFAULT_BASE_EPOCHS,
            incremental_epochs: DEFAULT_INCREMENTAL_EPOCHS,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn with_head(mut self, head: HeadKind) -> Self {
        self.head = head;
        self
    }

    pub fn with_epochs(mut self, base: usize, incremental: usize) -> Self {
        self.base_epochs = base;
        self.incremental_epochs = incremental;
        self
    }

    /// Session label sets as declared by an archive manifest.
    pub fn from_manifest(
        set: &EmbeddingSet,
        manifest: &ArchiveManifest,
        k_shot: usize,
        training: TrainingConfig,
    ) -> Result<Self> {
        let labels = manifest.session_labels(set)?;
        let n_way = labels.get(1).map_or(1, BTreeSet::len);
        Self::new(labels, n_way, k_shot, training)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() || self.labels[0].is_empty() {
            return Err(Error::PlanViolation("the base label set is empty".into()));
        }
        if self.n_way == 0 || self.k_shot == 0 {
            return Err(Error::PlanViolation(format!(
                "n_way and k_shot must be >= 1, got {} and {}",
                self.n_way, self.k_shot
            )));
        }
        let mut owner: BTreeMap<ClassId, usize> = BTreeMap::new();
        for (m, set) in self.labels.iter().enumerate() {
            if m > 0 && set.len() != self.n_way {
                return Err(Error::PlanViolation(format!(
                    "session {m} has {} classes, expected {}",
                    set.len(),
                    self.n_way
                )));
            }
            for &c in set {
                if let Some(first) = owner.insert(c, m) {
                    return Err(Error::LabelOverlap {
                        class_id: c,
                        context: format!("sessions {first} and {m}"),
                    });
                }
            }
        }
        self.training.validate()
    }

    pub fn num_sessions(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[BTreeSet<ClassId>] {
        &self.labels
    }

    pub fn base_labels(&self) -> &BTreeSet<ClassId> {
        &self.labels[0]
    }

    fn phase_config(&self, epochs: usize) -> TrainingConfig {
        TrainingConfig {
            epochs,
            ..self.training.clone()
        }
    }

    pub fn echo(&self) -> RunConfigEcho {
        RunConfigEcho {
            classifier: self.head,
            num_sessions: self.num_sessions(),
            base_classes: self.labels[0].len(),
            n_way: self.n_way,
            k_shot: self.k_shot,
            base_epochs: self.base_epochs,
            incremental_epochs: self.incremental_epochs,
            training: self.training.clone(),
        }
    }
}

/// Keeps the base set and regroups the incremental classes, in ascending
/// order, into sessions of `n_way`. Leftover classes are dropped.
pub fn regroup_incremental(labels: &[BTreeSet<ClassId>], n_way: usize) -> Result<Vec<BTreeSet<ClassId>>> {
    if n_way == 0 {
        return Err(Error::InvalidArgument("n_way must be >= 1".into()));
    }
    let Some((base, rest)) = labels.split_first() else {
        return Err(Error::PlanViolation("no sessions".into()));
    };
    let pool: BTreeSet<ClassId> = rest.iter().flatten().copied().collect();
    let pool: Vec<ClassId> = pool.into_iter().collect();
    let mut out = vec![base.clone()];
    out.extend(pool.chunks_exact(n_way).map(|c| c.iter().copied().collect()));
    Ok(out)
}

/// Splits a pooled set into one set per label group.
pub fn split_by_labels(pool: &EmbeddingSet, labels: &[BTreeSet<ClassId>]) -> Result<Vec<EmbeddingSet>> {
    labels
        .iter()
        .map(|ls| {
            let idx: Vec<usize> = pool
                .iter()
                .enumerate()
                .filter(|(_, r)| ls.contains(&r.class_id))
                .map(|(i, _)| i)
                .collect();
            pool.select(&idx)
        })
        .collect()
}

/// Per-session train and test sets from an archive, grouped by `labels`.
pub fn session_sets(
    set: &EmbeddingSet,
    manifest: &ArchiveManifest,
    labels: &[BTreeSet<ClassId>],
) -> Result<(Vec<EmbeddingSet>, Vec<EmbeddingSet>)> {
    manifest.validate(set)?;
    let train_ids: Vec<u64> = manifest.sessions.iter().flat_map(|s| s.train.iter().copied()).collect();
    let test_ids: Vec<u64> = manifest.sessions.iter().flat_map(|s| s.test.iter().copied()).collect();
    let train = set.select_ids(&train_ids)?;
    let test = set.select_ids(&test_ids)?;
    Ok((split_by_labels(&train, labels)?, split_by_labels(&test, labels)?))
}

/// Independent random streams for one protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolRngs {
    pub episodes: RngState,
    pub sigma_noise: RngState,
    pub support: RngState,
}

impl ProtocolRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            episodes: RngState::with_stream(seed, streams::EPISODES),
            sigma_noise: RngState::with_stream(seed, streams::SIGMA_NOISE),
            support: RngState::with_stream(seed, streams::SUPPORT_SELECT),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub session: usize,
    pub classifier: Classifier,
    pub prototypes: PrototypeSet,
    /// Label sets of sessions `0..=session`.
    pub seen_labels: Vec<BTreeSet<ClassId>>,
    pub history: Vec<SessionAccuracyRecord>,
}

impl SessionState {
    pub fn seen_classes(&self) -> BTreeSet<ClassId> {
        self.seen_labels.iter().flatten().copied().collect()
    }
}

fn per_class_counts(set: &EmbeddingSet) -> BTreeMap<ClassId, usize> {
    set.indices_by_class().into_iter().map(|(c, v)| (c, v.len())).collect()
}

/// Class-mean initialization followed by episodic training on `train`.
pub fn run_base_session(
    train_set: &EmbeddingSet,
    plan: &SessionPlan,
    rngs: &mut ProtocolRngs,
) -> Result<(SessionState, TrainingTrace)> {
    plan.validate()?;
    let expected = plan.base_labels();
    let counts = per_class_counts(train_set);
    let found: BTreeSet<ClassId> = counts.keys().copied().collect();
    if &found != expected {
        return Err(Error::PlanViolation(format!(
            "base training data covers {} classes, the plan expects {}",
            found.len(),
            expected.len()
        )));
    }
    if let Some((c, n)) = counts.iter().find(|(_, n)| **n < 2 * plan.k_shot) {
        return Err(Error::PlanViolation(format!(
            "base class {c} has {n} samples, episodes need {}",
            2 * plan.k_shot
        )));
    }
    let cfg = plan.phase_config(plan.base_epochs);
    let mut classifier = Classifier::init(plan.head, train_set, cfg.sigma_init)?;
    let trace = train(
        &mut classifier,
        TrainingData::Episodic {
            data: train_set,
            n_way: plan.n_way.min(expected.len()),
            k_shot: plan.k_shot,
            sampler_rng: &mut rngs.episodes,
        },
        &cfg,
        &mut rngs.sigma_noise,
    )?;
    let prototypes = classifier.prototypes()?;
    Ok((
        SessionState {
            session: 0,
            classifier,
            prototypes,
            seen_labels: vec![expected.clone()],
            history: Vec::new(),
        },
        trace,
    ))
}

/// Picks `k_shot` samples per class, uniformly, when a class has more.
pub fn select_support(train_set: &EmbeddingSet, k_shot: usize, rng: &mut RngState) -> Result<EmbeddingSet> {
    let mut keep = Vec::new();
    for (c, idx) in train_set.indices_by_class() {
        if idx.len() < k_shot {
            return Err(Error::PlanViolation(format!(
                "class {c} has {} training samples, {k_shot} shots required",
                idx.len()
            )));
        }
        if idx.len() == k_shot {
            keep.extend(idx);
        } else {
            keep.extend(index::sample(rng, idx.len(), k_shot).into_iter().map(|i| idx[i]));
        }
    }
    keep.sort_unstable();
    train_set.select(&keep)
}

/// Expands the classifier with the support means of the next session's
/// classes and trains it with the joint loss against the stored prototypes.
pub fn run_incremental_session(
    state: SessionState,
    support: &EmbeddingSet,
    plan: &SessionPlan,
    rngs: &mut ProtocolRngs,
) -> Result<(SessionState, TrainingTrace)> {
    let m = state.session + 1;
    if m >= plan.num_sessions() {
        return Err(Error::PlanViolation(format!(
            "session {m} requested but the plan has {} sessions",
            plan.num_sessions()
        )));
    }
    let seen = state.seen_classes();
    let counts = per_class_counts(support);
    if let Some(c) = counts.keys().find(|c| seen.contains(c)) {
        return Err(Error::LabelOverlap {
            class_id: *c,
            context: format!("session {m} support reuses a class already learned"),
        });
    }
    let expected = &plan.labels()[m];
    let found: BTreeSet<ClassId> = counts.keys().copied().collect();
    if &found != expected {
        return Err(Error::PlanViolation(format!(
            "session {m} support covers {:?}, the plan expects {:?}",
            found, expected
        )));
    }
    if let Some((c, n)) = counts.iter().find(|(_, n)| **n != plan.k_shot) {
        return Err(Error::PlanViolation(format!(
            "session {m} class {c} has {n} support samples, expected {}",
            plan.k_shot
        )));
    }
    let cfg = plan.phase_config(plan.incremental_epochs);
    let mut classifier = state.classifier.expand(&support.class_means()?, cfg.sigma_init)?;
    let trace = train(
        &mut classifier,
        TrainingData::Joint {
            support,
            prototypes: &state.prototypes,
        },
        &cfg,
        &mut rngs.sigma_noise,
    )?;
    let prototypes = classifier.prototypes()?;
    let mut seen_labels = state.seen_labels;
    seen_labels.push(expected.clone());
    Ok((
        SessionState {
            session: m,
            classifier,
            prototypes,
            seen_labels,
            history: state.history,
        },
        trace,
    ))
}

/// Accuracy over the union of the test sets of sessions `0..=m`, split into
/// base classes, incremental classes, and everything.
pub fn evaluate_session(state: &SessionState, test_sets: &[EmbeddingSet]) -> Result<SessionAccuracyRecord> {
    let m = state.session;
    if test_sets.len() <= m {
        return Err(Error::Data(format!(
            "evaluation after session {m} needs {} test sets, got {}",
            m + 1,
            test_sets.len()
        )));
    }
    let base = &state.seen_labels[0];
    let known: BTreeSet<ClassId> = state.classifier.class_ids().iter().copied().collect();
    let (mut base_p, mut base_t, mut incr_p, mut incr_t) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, set) in test_sets[..=m].iter().enumerate() {
        for r in set {
            if !known.contains(&r.class_id) || !state.seen_labels[i].contains(&r.class_id) {
                return Err(Error::Data(format!(
                    "test sample {} of session {i} has class {} outside that session",
                    r.sample_id, r.class_id
                )));
            }
            let p = state.classifier.predict(r.vector.view())?;
            if base.contains(&r.class_id) {
                base_p.push(p);
                base_t.push(r.class_id);
            } else {
                incr_p.push(p);
                incr_t.push(r.class_id);
            }
        }
    }
    let hits = |p: &[ClassId], t: &[ClassId]| p.iter().zip(t).filter(|(a, b)| a == b).count();
    let total = base_t.len() + incr_t.len();
    if total == 0 {
        return Err(Error::Data(format!("no test samples for sessions 0..={m}")));
    }
    let all_acc = 100.0 * (hits(&base_p, &base_t) + hits(&incr_p, &incr_t)) as f64 / total as f64;
    let base_acc = if base_t.is_empty() { None } else { Some(accuracy(&base_p, &base_t)?) };
    let incr_acc = if m == 0 {
        None
    } else if incr_t.is_empty() {
        return Err(Error::Data(format!("no incremental test samples up to session {m}")));
    } else {
        Some(accuracy(&incr_p, &incr_t)?)
    };
    Ok(SessionAccuracyRecord {
        session_index: m,
        base_acc,
        incr_acc,
        all_acc,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    /// One trace per session.
    pub traces: Vec<TrainingTrace>,
    pub state: SessionState,
}

/// Base session, then every incremental session, evaluating after each.
///
/// `train_sets[m]` may hold more than `k_shot` samples per class for
/// `m >= 1`; the support set is then a seeded uniform pick.
pub fn run_full_protocol(
    plan: &SessionPlan,
    train_sets: &[EmbeddingSet],
    test_sets: &[EmbeddingSet],
    seed: u64,
) -> Result<RunOutput> {
    plan.validate()?;
    let m_total = plan.num_sessions();
    if train_sets.len() != m_total || test_sets.len() != m_total {
        return Err(Error::PlanViolation(format!(
            "plan has {m_total} sessions but got {} train and {} test sets",
            train_sets.len(),
            test_sets.len()
        )));
    }
    let mut rngs = ProtocolRngs::new(seed);
    let (mut state, trace) = run_base_session(&train_sets[0], plan, &mut rngs)?;
    let mut traces = vec![trace];
    let record = evaluate_session(&state, test_sets)?;
    log::info!("session 0: all {:.2}", record.all_acc);
    state.history.push(record);
    for train_set in &train_sets[1..] {
        let support = select_support(train_set, plan.k_shot, &mut rngs.support)?;
        let (next, trace) = run_incremental_session(state, &support, plan, &mut rngs)?;
        state = next;
        traces.push(trace);
        let record = evaluate_session(&state, test_sets)?;
        log::info!("session {}: all {:.2}", state.session, record.all_acc);
        state.history.push(record);
    }
    let report = RunReport::new(state.history.clone(), plan.echo(), seed)?;
    Ok(RunOutput { report, traces, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::StochasticClassifier;
    use crate::data::{generate_synthetic, CenterRule, EmbeddingRecord, SessionLayout, SyntheticSpec};
    use crate::numeric::DenseVector;
    use ndarray::{array, Array2};

    fn labels(groups: &[&[ClassId]]) -> Vec<BTreeSet<ClassId>> {
        groups.iter().map(|g| g.iter().copied().collect()).collect()
    }

    fn synthetic(classes: usize, base: usize, per: usize, noise: f64, seed: u64) -> (EmbeddingSet, ArchiveManifest) {
        generate_synthetic(&SyntheticSpec {
            num_classes: classes,
            samples_per_class: per,
            dim: 32,
            intra_class_noise: noise,
            seed,
            center_rule: CenterRule::Orthogonal,
            layout: SessionLayout {
                base_classes: Some(base),
                way: 5,
                train_per_class: None,
            },
        })
        .unwrap()
    }

    fn protocol_inputs(
        classes: usize,
        base: usize,
        training: TrainingConfig,
    ) -> (SessionPlan, Vec<EmbeddingSet>, Vec<EmbeddingSet>) {
        let (set, manifest) = synthetic(classes, base, 24, 0.05, 3);
        let plan = SessionPlan::from_manifest(&set, &manifest, 5, training).unwrap();
        let (tr, te) = session_sets(&set, &manifest, plan.labels()).unwrap();
        (plan, tr, te)
    }

    fn record(id: u64, class_id: ClassId, v: Vec<f64>) -> EmbeddingRecord {
        EmbeddingRecord {
            sample_id: id,
            class_id,
            vector: DenseVector::new(v).unwrap(),
        }
    }

    #[test]
    fn plan_validation() {
        let cfg = TrainingConfig::default();
        assert!(SessionPlan::new(labels(&[&[0, 1], &[2, 3]]), 2, 1, cfg.clone()).is_ok());
        assert!(matches!(
            SessionPlan::new(labels(&[&[0, 1], &[1, 3]]), 2, 1, cfg.clone()),
            Err(Error::LabelOverlap { class_id: 1, .. })
        ));
        assert!(matches!(
            SessionPlan::new(labels(&[&[0, 1], &[2, 3, 4]]), 2, 1, cfg.clone()),
            Err(Error::PlanViolation(_))
        ));
        assert!(SessionPlan::new(labels(&[&[]]), 2, 1, cfg.clone()).is_err());
        assert!(SessionPlan::new(vec![], 2, 1, cfg).is_err());
    }

    #[test]
    fn regrouping() {
        let l = labels(&[&[0, 1, 2], &[3, 4], &[5, 6], &[7]]);
        assert_eq!(regroup_incremental(&l, 2).unwrap(), labels(&[&[0, 1, 2], &[3, 4], &[5, 6]]));
        assert_eq!(regroup_incremental(&l, 3).unwrap(), labels(&[&[0, 1, 2], &[3, 4, 5]]));
        assert_eq!(regroup_incremental(&l, 9).unwrap(), labels(&[&[0, 1, 2]]));
    }

    #[test]
    fn zero_epoch_base_equals_class_means() {
        let (plan, tr, _) = protocol_inputs(10, 10, TrainingConfig::default());
        let plan = plan.with_epochs(0, 0);
        let (state, trace) = run_base_session(&tr[0], &plan, &mut ProtocolRngs::new(1)).unwrap();
        assert!(trace.losses.is_empty());
        let init = StochasticClassifier::init_mu_from_class_means(&tr[0], plan.training.sigma_init).unwrap();
        assert_eq!(state.classifier.means(), init.mu());
        let protos = state.prototypes;
        for (i, c) in state.classifier.class_ids().iter().enumerate() {
            let row: Vec<f64> = state.classifier.means().row(i).to_vec();
            assert_eq!(protos.get(*c).unwrap().as_slice(), row.as_slice());
        }
    }

    #[test]
    fn base_prototypes_are_mu_rows_after_training() {
        let (plan, tr, te) = protocol_inputs(10, 10, TrainingConfig::default());
        let plan = plan.with_epochs(3, 0);
        let (state, trace) = run_base_session(&tr[0], &plan, &mut ProtocolRngs::new(1)).unwrap();
        assert!(!trace.losses.is_empty());
        assert_eq!(state.prototypes, state.classifier.prototypes().unwrap());
        let rec = evaluate_session(&state, &te).unwrap();
        assert_eq!(rec.base_acc, Some(rec.all_acc));
        assert_eq!(rec.incr_acc, None);
        assert!(rec.all_acc >= 99.0, "{rec:?}");
    }

    #[test]
    fn base_session_rejects_mismatched_data() {
        let (plan, tr, _) = protocol_inputs(15, 10, TrainingConfig::default());
        let both = EmbeddingSet::union(32, [&tr[0], &tr[1]]).unwrap();
        assert!(matches!(
            run_base_session(&both, &plan, &mut ProtocolRngs::new(0)),
            Err(Error::PlanViolation(_))
        ));
        let few = select_support(&tr[0], 3, &mut RngState::new(0)).unwrap();
        assert!(matches!(
            run_base_session(&few, &plan, &mut ProtocolRngs::new(0)),
            Err(Error::PlanViolation(_))
        ));
    }

    #[test]
    fn pure_prototype_loss_with_no_steps_keeps_old_rows() {
        let cfg = TrainingConfig {
            lambda: 1.0,
            ..TrainingConfig::default()
        };
        let (plan, tr, _) = protocol_inputs(15, 10, cfg);
        let plan = plan.with_epochs(2, 0);
        let mut rngs = ProtocolRngs::new(4);
        let (state, _) = run_base_session(&tr[0], &plan, &mut rngs).unwrap();
        let before = state.classifier.means().clone();
        let support = select_support(&tr[1], 5, &mut rngs.support).unwrap();
        let (after, trace) = run_incremental_session(state, &support, &plan, &mut rngs).unwrap();
        assert!(trace.losses.is_empty());
        assert_eq!(after.classifier.means().slice(ndarray::s![..10, ..]), before);
        assert_eq!(after.classifier.class_ids().len(), 15);
        assert_eq!(after.prototypes.len(), 15);
    }

    #[test]
    fn incremental_session_errors() {
        let (plan, tr, _) = protocol_inputs(20, 10, TrainingConfig::default());
        let plan = plan.with_epochs(1, 1);
        let mut rngs = ProtocolRngs::new(4);
        let (state, _) = run_base_session(&tr[0], &plan, &mut rngs).unwrap();
        let overlap = select_support(&tr[0], 5, &mut rngs.support).unwrap();
        assert!(matches!(
            run_incremental_session(state.clone(), &overlap, &plan, &mut rngs),
            Err(Error::LabelOverlap { .. })
        ));
        let wrong_shots = select_support(&tr[1], 4, &mut rngs.support).unwrap();
        assert!(matches!(
            run_incremental_session(state.clone(), &wrong_shots, &plan, &mut rngs),
            Err(Error::PlanViolation(_))
        ));
        let skip = select_support(&tr[2], 5, &mut rngs.support).unwrap();
        assert!(matches!(
            run_incremental_session(state, &skip, &plan, &mut rngs),
            Err(Error::PlanViolation(_))
        ));
    }

    #[test]
    fn support_selection() {
        let (_, tr, _) = protocol_inputs(15, 10, TrainingConfig::default());
        let s = select_support(&tr[1], 5, &mut RngState::new(9)).unwrap();
        assert_eq!(s.len(), 25);
        assert!(per_class_counts(&s).values().all(|n| *n == 5));
        assert_eq!(s, select_support(&tr[1], 5, &mut RngState::new(9)).unwrap());
        assert!(select_support(&tr[1], 13, &mut RngState::new(9)).is_err());
    }

    fn hand_state() -> SessionState {
        let sc = StochasticClassifier::from_parts(
            vec![0, 1, 2],
            array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            Array2::from_elem((3, 3), 0.1),
        )
        .unwrap();
        let classifier = Classifier::Stochastic(sc);
        SessionState {
            session: 1,
            prototypes: classifier.prototypes().unwrap(),
            classifier,
            seen_labels: labels(&[&[0, 1], &[2]]),
            history: vec![],
        }
    }

    #[test]
    fn evaluation_by_enumeration() {
        let state = hand_state();
        let t0 = EmbeddingSet::from_records(
            3,
            [record(0, 0, vec![1.0, 0.1, 0.0]), record(1, 1, vec![0.1, 1.0, 0.0])],
        )
        .unwrap();
        let t1 = EmbeddingSet::from_records(
            3,
            [record(2, 2, vec![0.0, 0.0, 1.0]), record(3, 2, vec![1.0, 0.0, 0.2])],
        )
        .unwrap();
        let rec = evaluate_session(&state, &[t0.clone(), t1]).unwrap();
        assert_eq!(rec.base_acc, Some(100.0));
        assert_eq!(rec.incr_acc, Some(50.0));
        assert_eq!(rec.all_acc, 75.0);

        let unseen = EmbeddingSet::from_records(3, [record(9, 7, vec![1.0, 0.0, 0.0])]).unwrap();
        assert!(matches!(evaluate_session(&state, &[t0.clone(), unseen]), Err(Error::Data(_))));
        assert!(matches!(evaluate_session(&state, &[t0]), Err(Error::Data(_))));
    }

    #[test]
    fn perfect_predictions() {
        let state = hand_state();
        let t0 = EmbeddingSet::from_records(3, [record(0, 0, vec![1.0, 0.0, 0.0]), record(1, 1, vec![0.0, 1.0, 0.0])])
            .unwrap();
        let t1 = EmbeddingSet::from_records(3, [record(2, 2, vec![0.0, 0.0, 1.0])]).unwrap();
        let rec = evaluate_session(&state, &[t0, t1]).unwrap();
        assert_eq!((rec.base_acc, rec.incr_acc, rec.all_acc), (Some(100.0), Some(100.0), 100.0));
    }

    #[test]
    fn full_protocol_shapes() {
        let cfg = TrainingConfig {
            lambda: 0.6,
            ..TrainingConfig::default()
        };
        let (plan, tr, te) = protocol_inputs(25, 10, cfg);
        let plan = plan.with_epochs(2, 5);
        let out = run_full_protocol(&plan, &tr, &te, 11).unwrap();
        assert_eq!(out.report.records.len(), 4);
        assert_eq!(out.traces.len(), 4);
        assert_eq!(out.state.classifier.class_ids().len(), 25);
        assert_eq!(out.state.seen_classes().len(), 25);
        assert_eq!(out.report.records[0].base_acc, Some(out.report.records[0].all_acc));
        out.report.verify().unwrap();

        let again = run_full_protocol(&plan, &tr, &te, 11).unwrap();
        assert_eq!(out.report.to_json().unwrap(), again.report.to_json().unwrap());
    }

    #[test]
    fn single_session_protocol() {
        let (plan, tr, te) = protocol_inputs(10, 10, TrainingConfig::default());
        let plan = plan.with_epochs(1, 1);
        let out = run_full_protocol(&plan, &tr, &te, 0).unwrap();
        assert_eq!(out.report.records.len(), 1);
        assert_eq!(out.report.pd.all, 0.0);
    }

    #[test]
    fn deterministic_head_protocol() {
        let (plan, tr, te) = protocol_inputs(20, 10, TrainingConfig::default());
        let plan = plan.with_epochs(2, 3).with_head(HeadKind::Deterministic);
        let out = run_full_protocol(&plan, &tr, &te, 5).unwrap();
        assert_eq!(out.report.classifier, HeadKind::Deterministic);
        assert!(matches!(out.state.classifier, Classifier::Deterministic(_)));
    }
}
