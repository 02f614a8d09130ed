//! Adaptation of the modulator by entropy minimization (or, optionally,
//! cross entropy against labels) over reconstruction trajectories.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{cross_entropy, Backbone, BackboneWeights, ProbMap};
use crate::error::{Error, Result};
use crate::modulator::{ModulationSet, ModulatorCache, ModulatorGrads, ModulatorParams};
use crate::nn::Adam;
use crate::recon::{Trajectory, TrajectoryStep};
use crate::volume::{Image, SegmentationMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Each case starts from the given modulator and gets its own copy.
    PerCase,
    /// One modulator shared by all cases.
    PerDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Full,
    OnlyLast,
    WithoutFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossReduction {
    #[serde(rename = "mean_over_S", alias = "mean_over_s", alias = "mean")]
    MeanOverS,
    #[serde(rename = "sum_over_S", alias = "sum_over_s", alias = "sum")]
    SumOverS,
}

impl std::str::FromStr for Granularity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_case" => Ok(Self::PerCase),
            "per_dataset" => Ok(Self::PerDataset),
            _ => Err(Error::Config(format!("unknown granularity '{s}'"))),
        }
    }
}

impl std::str::FromStr for Subset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "only_last" => Ok(Self::OnlyLast),
            "without_first" => Ok(Self::WithoutFirst),
            _ => Err(Error::Config(format!("unknown trajectory subset '{s}'"))),
        }
    }
}

impl std::str::FromStr for LossReduction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_over_S" | "mean_over_s" | "mean" => Ok(Self::MeanOverS),
            "sum_over_S" | "sum_over_s" | "sum" => Ok(Self::SumOverS),
            _ => Err(Error::Config(format!("unknown loss reduction '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub steps: usize,
    pub lr: f64,
    pub granularity: Granularity,
    pub subset: Subset,
    pub loss_reduction: LossReduction,
    /// Recorded for provenance; the loop itself is deterministic.
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            lr: 1e-5,
            granularity: Granularity::PerCase,
            subset: Subset::Full,
            loss_reduction: LossReduction::MeanOverS,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("adaptation lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    /// Loss before each update, plus the loss after the final update at index `steps`.
    pub loss_curve: Vec<(usize, f64)>,
    pub final_loss: f64,
    pub steps_run: usize,
    pub clamp_events: usize,
}

impl AdaptReport {
    pub fn initial_loss(&self) -> f64 {
        self.loss_curve.first().map(|(_, l)| *l).unwrap_or(self.final_loss)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Adapted modulators and their optimization reports.
#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub granularity: Granularity,
    /// One entry per case (per-case) or a single shared entry (per-dataset).
    pub params: Vec<ModulatorParams>,
    pub reports: Vec<AdaptReport>,
}

impl AdaptOutcome {
    pub fn params_for(&self, case: usize) -> &ModulatorParams {
        match self.granularity {
            Granularity::PerCase => &self.params[case],
            Granularity::PerDataset => &self.params[0],
        }
    }
}

/// Spatial mean entropy of one map and its gradient w.r.t. the pixel-major logits.
pub fn map_entropy_with_grad(map: &ProbMap) -> (f64, Vec<f64>) {
    let c = map.num_classes();
    let d = map.num_pixels() as f64;
    let p = map.probs();
    let lp = map.log_probs();
    let mut total = 0.0;
    let mut grad = vec![0.0; p.len()];
    for (px, (pr, lr)) in p.chunks_exact(c).zip(lp.chunks_exact(c)).enumerate() {
        let h: f64 = pr
            .iter()
            .zip(lr)
            .map(|(&a, &b)| if a > 0.0 { -a * b } else { 0.0 })
            .sum();
        total += h;
        for k in 0..c {
            if pr[k] > 0.0 {
                grad[px * c + k] = -pr[k] * (lr[k] + h) / d;
            }
        }
    }
    (total / d, grad)
}

fn reduction_weight(reduction: LossReduction, count: usize) -> f64 {
    match reduction {
        LossReduction::MeanOverS => 1.0 / count as f64,
        LossReduction::SumOverS => 1.0,
    }
}

/// Entropy objective over a trajectory's predictions (natural log, `0 log 0 = 0`).
pub fn entropy_loss(maps: &[ProbMap], reduction: LossReduction) -> Result<f64> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Argument("entropy loss of an empty list".into()))?;
    if maps
        .iter()
        .any(|m| m.num_pixels() != first.num_pixels() || m.num_classes() != first.num_classes())
    {
        return Err(Error::Shape("probability maps differ in size".into()));
    }
    let sum: f64 = maps.iter().map(|m| map_entropy_with_grad(m).0).sum();
    Ok(sum * reduction_weight(reduction, maps.len()))
}

/// Trajectory steps used for adaptation under `subset`.
pub fn select_steps(traj: &Trajectory, subset: Subset) -> Result<Vec<&TrajectoryStep>> {
    let steps = traj.steps();
    match subset {
        Subset::Full => Ok(steps.iter().collect()),
        Subset::OnlyLast => Ok(vec![traj.last()]),
        Subset::WithoutFirst if steps.len() >= 2 => Ok(steps[1..].iter().collect()),
        Subset::WithoutFirst => Err(Error::Config(format!(
            "subset without_first needs at least 2 trajectory steps, '{}' has {}",
            traj.case_id(),
            steps.len()
        ))),
    }
}

/// Predictions of the (optionally modulated) backbone for the given steps.
pub fn predict_steps(
    backbone: &Backbone,
    weights: &BackboneWeights,
    params: Option<&ModulatorParams>,
    steps: &[&TrajectoryStep],
) -> Result<Vec<ProbMap>> {
    let images: Vec<&Image> = steps.iter().map(|s| &s.image).collect();
    match params {
        None => backbone.forward_batch(weights, &images, None),
        Some(p) => {
            check_registry(backbone, p)?;
            let sets = steps
                .iter()
                .map(|s| p.forward(s.time).map(|(set, _)| set))
                .collect::<Result<Vec<_>>>()?;
            backbone.forward_batch(weights, &images, Some(&sets))
        }
    }
}

/// Entropy objective of one case over `steps` and its gradient w.r.t. every
/// modulator parameter, grouped like [`ModulatorParams::params`].
pub fn entropy_objective(
    backbone: &Backbone,
    weights: &BackboneWeights,
    params: &ModulatorParams,
    steps: &[&TrajectoryStep],
    reduction: LossReduction,
) -> Result<(f64, ModulatorGrads)> {
    check_registry(backbone, params)?;
    if steps.is_empty() {
        return Err(Error::Argument("entropy objective of an empty step list".into()));
    }
    let mut grads = params.zero_grads();
    let eval = case_objective(
        backbone,
        weights,
        params,
        steps,
        reduction,
        &|_, m| map_entropy_with_grad(m),
        Some(&mut grads),
    )?;
    Ok((eval.loss, grads))
}

fn check_registry(backbone: &Backbone, params: &ModulatorParams) -> Result<()> {
    if &params.registry != backbone.registry() {
        return Err(Error::Modulation(
            "modulator was built for a different normalization registry".into(),
        ));
    }
    Ok(())
}

/// Per-map objective: `(loss, d loss / d logits)` for map `index` of a case.
type MapObjective<'a> = dyn Fn(usize, &ProbMap) -> (f64, Vec<f64>) + Sync + 'a;

struct CaseEval {
    loss: f64,
    clamps: usize,
}

/// Loss for one case; accumulates `d loss / d Psi` into `grads` when given.
fn case_objective(
    backbone: &Backbone,
    weights: &BackboneWeights,
    params: &ModulatorParams,
    steps: &[&TrajectoryStep],
    reduction: LossReduction,
    objective: &MapObjective<'_>,
    grads: Option<&mut ModulatorGrads>,
) -> Result<CaseEval> {
    let mut sets = Vec::with_capacity(steps.len());
    let mut caches: Vec<ModulatorCache> = Vec::with_capacity(steps.len());
    let mut clamps = 0;
    for s in steps {
        let (set, cache) = params.forward_cached(s.time)?;
        clamps += cache.clamp_count();
        sets.push(set);
        caches.push(cache);
    }
    let images: Vec<&Image> = steps.iter().map(|s| &s.image).collect();
    let (logits, fcache) = backbone.run(weights, &images, Some(&sets), false)?;
    let maps = backbone.to_probmaps(&logits)?;
    let w = reduction_weight(reduction, steps.len());
    let mut loss = 0.0;
    let mut logit_grads = Vec::with_capacity(maps.len());
    for (i, map) in maps.iter().enumerate() {
        let (l, g) = objective(i, map);
        loss += w * l;
        logit_grads.push(g.into_iter().map(|v| v * w).collect::<Vec<_>>());
    }
    if let Some(grads) = grads {
        if loss.is_finite() {
            let gl = backbone.pack_logit_grads(&logit_grads);
            let out = backbone.backward(weights, &fcache, &gl, Some(&sets), false, true);
            let mod_grads: Vec<ModulationSet> = out.modulation.expect("modulation gradients requested");
            for (cache, mg) in caches.iter().zip(&mod_grads) {
                params.backward(cache, mg, grads)?;
            }
        }
    }
    Ok(CaseEval { loss, clamps })
}

/// Optimizes one modulator over a group of cases, averaging their losses.
fn optimize(
    backbone: &Backbone,
    weights: &BackboneWeights,
    init: &ModulatorParams,
    cases: &[Vec<&TrajectoryStep>],
    objectives: &[Box<MapObjective<'_>>],
    cfg: &AdaptConfig,
) -> Result<(ModulatorParams, AdaptReport)> {
    let mut params = init.clone();
    let mut opt = Adam::new(cfg.lr);
    let mut curve = Vec::with_capacity(cfg.steps + 1);
    let mut clamp_events = 0;
    let scale = 1.0 / cases.len() as f64;
    for step in 0..=cfg.steps {
        let last = step == cfg.steps;
        let mut grads = params.zero_grads();
        let mut loss = 0.0;
        for (case, objective) in cases.iter().zip(objectives) {
            let eval = case_objective(
                backbone,
                weights,
                &params,
                case,
                cfg.loss_reduction,
                objective.as_ref(),
                (!last).then_some(&mut grads),
            )?;
            loss += scale * eval.loss;
            clamp_events += eval.clamps;
        }
        if !loss.is_finite() {
            return Err(Error::Adaptation {
                step,
                reason: format!("loss became {loss}"),
            });
        }
        curve.push((step, loss));
        if last {
            break;
        }
        grads.scale(scale);
        opt.step(
            params.params_mut(),
            grads.groups.iter().map(|g| g.as_slice()).collect(),
        );
    }
    let final_loss = curve.last().map(|(_, l)| *l).unwrap_or(f64::NAN);
    Ok((
        params,
        AdaptReport {
            loss_curve: curve,
            final_loss,
            steps_run: cfg.steps,
            clamp_events,
        },
    ))
}

fn run_adaptation<'a>(
    backbone: &Backbone,
    weights: &BackboneWeights,
    init: &ModulatorParams,
    trajectories: &'a [Trajectory],
    objectives: Vec<Box<MapObjective<'a>>>,
    cfg: &AdaptConfig,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    check_registry(backbone, init)?;
    if trajectories.is_empty() {
        return Err(Error::Argument("no trajectories to adapt on".into()));
    }
    let checksum = weights.checksum();
    let cases = trajectories
        .iter()
        .map(|t| select_steps(t, cfg.subset))
        .collect::<Result<Vec<_>>>()?;
    let outcome = match cfg.granularity {
        Granularity::PerCase => {
            let results = cases
                .par_iter()
                .zip(objectives.par_iter())
                .map(|(case, obj)| {
                    optimize(
                        backbone,
                        weights,
                        init,
                        std::slice::from_ref(case),
                        std::slice::from_ref(obj),
                        cfg,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let (params, reports) = results.into_iter().unzip();
            AdaptOutcome {
                granularity: Granularity::PerCase,
                params,
                reports,
            }
        }
        Granularity::PerDataset => {
            let (p, r) = optimize(backbone, weights, init, &cases, &objectives, cfg)?;
            AdaptOutcome {
                granularity: Granularity::PerDataset,
                params: vec![p],
                reports: vec![r],
            }
        }
    };
    debug_assert_eq!(checksum, weights.checksum());
    Ok(outcome)
}

/// Unsupervised adaptation: Adam over the modulator only, minimizing the
/// prediction entropy across each trajectory. The backbone is never written.
pub fn adapt(
    backbone: &Backbone,
    weights: &BackboneWeights,
    init: &ModulatorParams,
    trajectories: &[Trajectory],
    cfg: &AdaptConfig,
) -> Result<AdaptOutcome> {
    let objectives: Vec<Box<MapObjective<'_>>> = trajectories
        .iter()
        .map(|_| Box::new(|_: usize, m: &ProbMap| map_entropy_with_grad(m)) as Box<MapObjective<'_>>)
        .collect();
    run_adaptation(backbone, weights, init, trajectories, objectives, cfg)
}

/// Same loop as [`adapt`] with per-pixel cross entropy against `labels`
/// (one mask per trajectory) replacing the entropy.
pub fn supervised_adapt(
    backbone: &Backbone,
    weights: &BackboneWeights,
    init: &ModulatorParams,
    trajectories: &[Trajectory],
    labels: &[SegmentationMask],
    cfg: &AdaptConfig,
) -> Result<AdaptOutcome> {
    if labels.len() != trajectories.len() {
        return Err(Error::Argument(format!(
            "{} label masks for {} trajectories",
            labels.len(),
            trajectories.len()
        )));
    }
    let arch = backbone.arch();
    for (traj, mask) in trajectories.iter().zip(labels) {
        let dims = traj.last().image.dims();
        if mask.dims() != dims {
            return Err(Error::Shape(format!(
                "labels {:?} do not match images {:?} in '{}'",
                mask.dims(),
                dims,
                traj.case_id()
            )));
        }
        if mask.num_classes() != arch.num_classes {
            return Err(Error::Shape(format!(
                "labels have {} classes, backbone predicts {}",
                mask.num_classes(),
                arch.num_classes
            )));
        }
    }
    let ones = vec![1.0; arch.num_classes];
    let objectives: Vec<Box<MapObjective<'_>>> = labels
        .iter()
        .map(|mask| {
            let ones = ones.clone();
            Box::new(move |_: usize, m: &ProbMap| cross_entropy(m, mask.labels(), &ones))
                as Box<MapObjective<'_>>
        })
        .collect();
    run_adaptation(backbone, weights, init, trajectories, objectives, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{build_backbone, ArchConfig};
    use crate::modulator::init_modulator;
    use crate::recon::TrajectoryStep;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(c: usize, d: usize) -> ProbMap {
        ProbMap::from_probs(1, d, c, vec![1.0 / c as f64; c * d]).unwrap()
    }

    #[test]
    fn entropy_loss_examples() {
        let onehot = ProbMap::from_probs(1, 2, 4, vec![1., 0., 0., 0., 0., 0., 1., 0.]).unwrap();
        assert_eq!(entropy_loss(&[onehot], LossReduction::MeanOverS).unwrap(), 0.0);
        let u = uniform(4, 3);
        let l = entropy_loss(&[u.clone()], LossReduction::MeanOverS).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let l2 = entropy_loss(&[u.clone(), u], LossReduction::SumOverS).unwrap();
        assert!((l2 - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert!(matches!(
            entropy_loss(&[], LossReduction::MeanOverS),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn reduction_names_parse() {
        assert_eq!("mean_over_S".parse::<LossReduction>().unwrap(), LossReduction::MeanOverS);
        assert_eq!("sum".parse::<LossReduction>().unwrap(), LossReduction::SumOverS);
        assert!("median".parse::<LossReduction>().is_err());
        assert_eq!("only_last".parse::<Subset>().unwrap(), Subset::OnlyLast);
        assert_eq!("per_dataset".parse::<Granularity>().unwrap(), Granularity::PerDataset);
    }

    fn tiny_setup(s: usize) -> (Backbone, BackboneWeights, ModulatorParams, Vec<Trajectory>) {
        let arch = ArchConfig {
            height: 8,
            width: 8,
            num_classes: 3,
            base_width: 4,
            max_width: 8,
            depth: 2,
            ..Default::default()
        };
        let (bb, reg) = build_backbone(&arch).unwrap();
        let w = bb.init_weights(1);
        let psi = init_modulator(&reg, 8, 16, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trajs = (0..2)
            .map(|k| {
                let steps = (0..s)
                    .map(|i| TrajectoryStep {
                        image: Image::new(8, 8, (0..64).map(|_| rng.gen_range(0.0..1.0)).collect())
                            .unwrap(),
                        time: (s - 1 - i) as f64 / s as f64,
                    })
                    .collect();
                Trajectory::new(format!("c{k}"), 1.0, steps).unwrap()
            })
            .collect();
        (bb, w, psi, trajs)
    }

    #[test]
    fn zero_steps_return_the_initial_modulator() {
        let (bb, w, psi, trajs) = tiny_setup(3);
        let cfg = AdaptConfig {
            steps: 0,
            ..Default::default()
        };
        let out = adapt(&bb, &w, &psi, &trajs, &cfg).unwrap();
        assert_eq!(out.params.len(), 2);
        assert!(out.params.iter().all(|p| *p == psi));
        assert_eq!(out.reports[0].loss_curve.len(), 1);
    }

    #[test]
    fn adaptation_lowers_entropy_and_keeps_backbone() {
        let (bb, w, psi, trajs) = tiny_setup(3);
        let before = w.checksum();
        let cfg = AdaptConfig {
            steps: 20,
            lr: 1e-2,
            ..Default::default()
        };
        let out = adapt(&bb, &w, &psi, &trajs, &cfg).unwrap();
        assert_eq!(before, w.checksum());
        for r in &out.reports {
            assert_eq!(r.loss_curve.len(), 21);
            assert!(r.final_loss < r.initial_loss());
        }
        let shared = adapt(
            &bb,
            &w,
            &psi,
            &trajs,
            &AdaptConfig {
                granularity: Granularity::PerDataset,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(shared.params.len(), 1);
        assert!(shared.reports[0].final_loss < shared.reports[0].initial_loss());
    }

    #[test]
    fn only_last_matches_full_for_single_step_trajectories() {
        let (bb, w, psi, trajs) = tiny_setup(1);
        let base = AdaptConfig {
            steps: 5,
            lr: 1e-3,
            ..Default::default()
        };
        let a = adapt(&bb, &w, &psi, &trajs, &base).unwrap();
        let b = adapt(
            &bb,
            &w,
            &psi,
            &trajs,
            &AdaptConfig {
                subset: Subset::OnlyLast,
                ..base.clone()
            },
        )
        .unwrap();
        assert_eq!(a.params, b.params);
        assert!(adapt(
            &bb,
            &w,
            &psi,
            &trajs,
            &AdaptConfig {
                subset: Subset::WithoutFirst,
                ..base
            }
        )
        .is_err());
    }

    #[test]
    fn mismatched_registry_is_rejected() {
        let (bb, w, _, trajs) = tiny_setup(2);
        let (_, other) = build_backbone(&ArchConfig::default()).unwrap();
        let psi = init_modulator(&other, 8, 16, 0).unwrap();
        let err = adapt(&bb, &w, &psi, &trajs, &AdaptConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Modulation(_)));
    }

    #[test]
    fn supervised_labels_must_align() {
        let (bb, w, psi, trajs) = tiny_setup(2);
        let mask = SegmentationMask::background(4, 4, 3).unwrap();
        let err = supervised_adapt(&bb, &w, &psi, &trajs, &[mask.clone(), mask], &AdaptConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        let err = supervised_adapt(&bb, &w, &psi, &trajs, &[], &AdaptConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn report_serializes() {
        let r = AdaptReport {
            loss_curve: vec![(0, 1.0), (1, 0.5)],
            final_loss: 0.5,
            steps_run: 1,
            clamp_events: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        r.save(&p).unwrap();
        let back: AdaptReport = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
