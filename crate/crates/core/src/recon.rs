//! Iterative reconstruction: forward operators, time schedules, a reference
//! denoiser and the denoise / data-consistency / re-noise loop.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arrays;
use crate::error::{Error, Result};
use crate::volume::{Image, Measurement};

/// Ratio of the shifted geometric progression used by [`make_schedule`].
const SCHEDULE_RATIO: f64 = 0.7;

/// Strictly decreasing reconstruction times in `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSchedule {
    times: Vec<f64>,
    horizon: f64,
}

impl TimeSchedule {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Geometric spacing from `horizon` down to exactly 0 at the last step:
/// `t_i = T (q^i - q^(S-1)) / (1 - q^(S-1))`.
pub fn make_schedule(steps: usize, horizon: f64) -> Result<TimeSchedule> {
    if steps == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!(
            "schedule horizon must be positive, got {horizon}"
        )));
    }
    if steps == 1 {
        return Ok(TimeSchedule {
            times: vec![0.0],
            horizon,
        });
    }
    let tail = SCHEDULE_RATIO.powi(steps as i32 - 1);
    let mut times: Vec<f64> = (0..steps)
        .map(|i| horizon * (SCHEDULE_RATIO.powi(i as i32) - tail) / (1.0 - tail))
        .collect();
    times[0] = horizon;
    times[steps - 1] = 0.0;
    Ok(TimeSchedule { times, horizon })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OperatorKind {
    Identity,
    AvgPool(usize),
}

/// Linear measurement operator `A` with its adjoint and pseudoinverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOperator {
    kind: OperatorKind,
}

pub const OPERATOR_IDS: [&str; 3] = ["identity", "avgpool2", "avgpool4"];

impl ForwardOperator {
    pub fn from_id(id: &str) -> Result<Self> {
        let kind = match id {
            "identity" => OperatorKind::Identity,
            "avgpool2" => OperatorKind::AvgPool(2),
            "avgpool4" => OperatorKind::AvgPool(4),
            other => {
                return Err(Error::Config(format!(
                    "unknown forward operator '{other}', expected one of {OPERATOR_IDS:?}"
                )))
            }
        };
        Ok(Self { kind })
    }

    pub fn all() -> Vec<ForwardOperator> {
        OPERATOR_IDS
            .iter()
            .map(|id| Self::from_id(id).expect("registered"))
            .collect()
    }

    pub fn id(&self) -> &'static str {
        match self.kind {
            OperatorKind::Identity => "identity",
            OperatorKind::AvgPool(2) => "avgpool2",
            OperatorKind::AvgPool(_) => "avgpool4",
        }
    }

    fn factor(&self) -> usize {
        match self.kind {
            OperatorKind::Identity => 1,
            OperatorKind::AvgPool(k) => k,
        }
    }

    pub fn measurement_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let k = self.factor();
        if height % k != 0 || width % k != 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "{} needs image dims divisible by {k}, got {height}x{width}",
                self.id()
            )));
        }
        Ok((height / k, width / k))
    }

    fn check_measurement(&self, m: &Measurement) -> Result<()> {
        if m.operator_id() != self.id() {
            return Err(Error::Shape(format!(
                "measurement was produced by '{}', not '{}'",
                m.operator_id(),
                self.id()
            )));
        }
        Ok(())
    }

    /// `A x`: block averaging over `k x k` tiles (identity for `k = 1`).
    pub fn apply(&self, x: &Image) -> Result<Measurement> {
        let (mh, mw) = self.measurement_dims(x.height(), x.width())?;
        let k = self.factor();
        let w = x.width();
        let scale = 1.0 / (k * k) as f64;
        let mut out = vec![0.0; mh * mw];
        for (i, row) in out.chunks_exact_mut(mw).enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for a in 0..k {
                    let base = (i * k + a) * w + j * k;
                    acc += x.data()[base..base + k].iter().sum::<f64>();
                }
                *v = acc * scale;
            }
        }
        Measurement::new(mh, mw, out, self.id())
    }

    /// `A^T m`: spreads each measurement over its tile with weight `1/k^2`.
    pub fn adjoint(&self, m: &Measurement) -> Result<Image> {
        self.check_measurement(m)?;
        let k = self.factor();
        Ok(self.upsample(m, 1.0 / (k * k) as f64))
    }

    /// `A^+ m = A^T (A A^T)^-1 m`: nearest-neighbour replication.
    pub fn pseudoinverse(&self, m: &Measurement) -> Result<Image> {
        self.check_measurement(m)?;
        Ok(self.upsample(m, 1.0))
    }

    fn upsample(&self, m: &Measurement, scale: f64) -> Image {
        let k = self.factor();
        let (mh, mw) = m.dims();
        let (h, w) = (mh * k, mw * k);
        let mut out = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                out[r * w + c] = m.data()[(r / k) * mw + c / k] * scale;
            }
        }
        Image::from_raw(h, w, out)
    }
}

/// Gradient of the data-consistency term `D(x, m) = 0.5 ||A x - m||^2`,
/// i.e. `A^T (A x - m)`.
pub fn data_consistency_grad(x: &Image, m: &Measurement, op: &ForwardOperator) -> Result<Image> {
    op.check_measurement(m)?;
    let ax = op.apply(x)?;
    if ax.dims() != m.dims() {
        return Err(Error::Shape(format!(
            "A x has dims {:?} but measurement has {:?}",
            ax.dims(),
            m.dims()
        )));
    }
    let resid: Vec<f64> = ax.data().iter().zip(m.data()).map(|(a, b)| a - b).collect();
    let resid = Measurement::new(m.height(), m.width(), resid, op.id())?;
    op.adjoint(&resid)
}

/// `D(x, m) = 0.5 ||A x - m||^2`.
pub fn data_consistency(x: &Image, m: &Measurement, op: &ForwardOperator) -> Result<f64> {
    op.check_measurement(m)?;
    let ax = op.apply(x)?;
    if ax.dims() != m.dims() {
        return Err(Error::Shape("A x and measurement dims differ".into()));
    }
    Ok(0.5
        * ax
            .data()
            .iter()
            .zip(m.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>())
}

/// Denoising model queried at each reconstruction time.
pub trait Denoiser: Sync {
    fn predict(&self, z: &Image, t: f64) -> Result<Image>;
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (h, w) = img.dims();
    let src = img.data();
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let cc = (c as isize + ki as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += kv * src[r * w + cc];
            }
            tmp[r * w + c] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let rr = (r as isize + ki as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[rr * w + c];
            }
            out[r * w + c] = acc;
        }
    }
    Image::from_raw(h, w, out)
}

pub const REFERENCE_BLUR_SIGMA: f64 = 1.0;

/// Stand-in for a learned diffusion denoiser: a convex blend between the
/// current iterate and a blurred pseudoinverse of the measurement,
/// `(1 - t/T) z + (t/T) blur(A^+ m)`. Identity at `t = 0`.
#[derive(Debug, Clone)]
pub struct ReferenceDenoiser {
    anchor: Image,
    horizon: f64,
}

impl ReferenceDenoiser {
    pub fn new(m: &Measurement, op: &ForwardOperator, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::Config("denoiser horizon must be positive".into()));
        }
        let anchor = gaussian_blur(&op.pseudoinverse(m)?, REFERENCE_BLUR_SIGMA);
        Ok(Self { anchor, horizon })
    }

    pub fn anchor(&self) -> &Image {
        &self.anchor
    }
}

impl Denoiser for ReferenceDenoiser {
    fn predict(&self, z: &Image, t: f64) -> Result<Image> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Domain(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        if z.dims() != self.anchor.dims() {
            return Err(Error::Shape(format!(
                "denoiser input {:?} does not match {:?}",
                z.dims(),
                self.anchor.dims()
            )));
        }
        if t == 0.0 {
            return Ok(z.clone());
        }
        let w = t / self.horizon;
        let out = z
            .data()
            .iter()
            .zip(self.anchor.data())
            .map(|(zv, av)| (1.0 - w) * zv + w * av)
            .collect();
        Ok(Image::from_raw(z.height(), z.width(), out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Noise,
    Pseudoinverse,
    Mixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub steps: usize,
    pub horizon: f64,
    /// Data-consistency step size.
    pub step_size: f64,
    pub init_mode: InitMode,
    pub noise_seed: u64,
    /// Standard deviation of re-injected noise at `t = T`.
    pub noise_scale: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            horizon: 1.0,
            step_size: 0.5,
            init_mode: InitMode::Pseudoinverse,
            noise_seed: 0,
            noise_scale: 0.1,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("reconstruction needs at least one step".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config("step size must be positive".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::Config("noise scale must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub image: Image,
    pub time: f64,
}

/// Post-data-consistency iterates paired with their schedule times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    case_id: String,
    horizon: f64,
    steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn new(case_id: impl Into<String>, horizon: f64, steps: Vec<TrajectoryStep>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Validation("trajectory must contain at least one step".into()));
        }
        if steps.windows(2).any(|w| w[1].time >= w[0].time) {
            return Err(Error::Validation("trajectory times must strictly decrease".into()));
        }
        if steps.iter().any(|s| !(0.0..=horizon).contains(&s.time)) {
            return Err(Error::Validation(format!("trajectory times must lie in [0, {horizon}]")));
        }
        let dims = steps[0].image.dims();
        if steps.iter().any(|s| s.image.dims() != dims) {
            return Err(Error::Shape("trajectory images differ in size".into()));
        }
        Ok(Self {
            case_id: case_id.into(),
            horizon,
            steps,
        })
    }

    pub fn case_id(&self) -> &str {
        &self.case_id
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> &[TrajectoryStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last(&self) -> &TrajectoryStep {
        self.steps.last().expect("non-empty trajectory")
    }

    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.time).collect()
    }
}

/// Runs the reconstruction loop, returning one trajectory entry per schedule
/// time. Each entry is the iterate right after the data-consistency step.
pub fn reconstruct(
    case_id: &str,
    m: &Measurement,
    op: &ForwardOperator,
    denoiser: &dyn Denoiser,
    cfg: &ReconConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let schedule = make_schedule(cfg.steps, cfg.horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let pinv = op.pseudoinverse(m)?;
    let (h, w) = pinv.dims();

    let mut z = match cfg.init_mode {
        InitMode::Pseudoinverse => pinv,
        InitMode::Noise => {
            let data = (0..h * w)
                .map(|_| cfg.noise_scale * normal.sample(&mut rng))
                .collect();
            Image::from_raw(h, w, data)
        }
        InitMode::Mixture => {
            let data = pinv
                .data()
                .iter()
                .map(|v| v + cfg.noise_scale * normal.sample(&mut rng))
                .collect();
            Image::from_raw(h, w, data)
        }
    };

    let times = schedule.times();
    let mut steps = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let denoised = denoiser.predict(&z, t)?;
        let grad = data_consistency_grad(&denoised, m, op)?;
        let x: Vec<f64> = denoised
            .data()
            .iter()
            .zip(grad.data())
            .map(|(d, g)| d - cfg.step_size * g)
            .collect();
        let x = Image::new(h, w, x)?;
        if let Some(&next_t) = times.get(i + 1) {
            let sigma = cfg.noise_scale * next_t / cfg.horizon;
            let data = x
                .data()
                .iter()
                .map(|v| v + sigma * normal.sample(&mut rng))
                .collect();
            z = Image::from_raw(h, w, data);
        }
        steps.push(TrajectoryStep { image: x, time: t });
    }
    Trajectory::new(case_id, cfg.horizon, steps)
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryManifest {
    case_id: String,
    horizon: f64,
    steps: Vec<StepEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StepEntry {
    index: usize,
    time: f64,
    file: String,
}

pub fn save_trajectory(traj: &Trajectory, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(traj.len());
    for (index, step) in traj.steps().iter().enumerate() {
        let file = format!("step_{index:03}.bin");
        let (h, w) = step.image.dims();
        arrays::write_f64(&dir.join(&file), &[h, w], step.image.data())?;
        entries.push(StepEntry {
            index,
            time: step.time,
            file,
        });
    }
    let manifest = TrajectoryManifest {
        case_id: traj.case_id().to_string(),
        horizon: traj.horizon(),
        steps: entries,
    };
    let path = dir.join("trajectory.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_trajectory(dir: &Path) -> Result<Trajectory> {
    let path = dir.join("trajectory.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: TrajectoryManifest = serde_json::from_str(&text)
        .map_err(|e| Error::corrupt(&path, format!("bad trajectory manifest: {e}")))?;
    let mut steps = Vec::with_capacity(manifest.steps.len());
    for (expected, entry) in manifest.steps.iter().enumerate() {
        if entry.index != expected {
            return Err(Error::corrupt(&path, "step indices out of order"));
        }
        let file = dir.join(&entry.file);
        let (dims, data) = arrays::read_f64(&file)?;
        if dims.len() != 2 {
            return Err(Error::corrupt(&file, "trajectory image must be 2D"));
        }
        steps.push(TrajectoryStep {
            image: Image::new(dims[0], dims[1], data)?,
            time: entry.time,
        });
    }
    Trajectory::new(manifest.case_id, manifest.horizon, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
        Image::new(h, w, (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_step_schedule_is_zero() {
        assert_eq!(make_schedule(1, 1.0).unwrap().times(), &[0.0]);
    }

    #[test]
    fn ten_step_schedule_descends_to_zero() {
        let s = make_schedule(10, 1.0).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s.times()[0], 1.0);
        assert_eq!(s.times()[9], 0.0);
        assert!(s.times().windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn schedule_rejects_bad_arguments() {
        assert!(matches!(make_schedule(0, 1.0), Err(Error::Config(_))));
        assert!(matches!(make_schedule(3, 0.0), Err(Error::Config(_))));
        assert!(matches!(make_schedule(3, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn identity_gradient_vanishes_on_measurement() {
        let op = ForwardOperator::from_id("identity").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_image(&mut rng, 4, 4);
        let m = op.apply(&x).unwrap();
        let g = data_consistency_grad(&x, &m, &op).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_gradient_returns_offset() {
        let op = ForwardOperator::from_id("identity").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m_img = random_image(&mut rng, 4, 4);
        let v = random_image(&mut rng, 4, 4);
        let m = op.apply(&m_img).unwrap();
        let x = Image::new(
            4,
            4,
            m_img.data().iter().zip(v.data()).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let g = data_consistency_grad(&x, &m, &op).unwrap();
        for ((gv, vv), (xv, mv)) in g.data().iter().zip(v.data()).zip(x.data().iter().zip(m.data())) {
            assert_eq!(*gv, xv - mv);
            assert!((gv - vv).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_rejects_mismatched_shapes() {
        let op = ForwardOperator::from_id("avgpool2").unwrap();
        let x = Image::zeros(8, 8);
        let m = Measurement::new(2, 2, vec![0.0; 4], "avgpool2").unwrap();
        assert!(matches!(
            data_consistency_grad(&x, &m, &op),
            Err(Error::Shape(_))
        ));
        let wrong_op = Measurement::new(4, 4, vec![0.0; 16], "identity").unwrap();
        assert!(data_consistency_grad(&x, &wrong_op, &op).is_err());
    }

    #[test]
    fn operator_rejects_indivisible_dims() {
        let op = ForwardOperator::from_id("avgpool4").unwrap();
        assert!(op.apply(&Image::zeros(6, 8)).is_err());
    }

    #[test]
    fn denoiser_endpoints_and_midpoint() {
        let op = ForwardOperator::from_id("avgpool2").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = op.apply(&random_image(&mut rng, 8, 8)).unwrap();
        let den = ReferenceDenoiser::new(&m, &op, 2.0).unwrap();
        let z = random_image(&mut rng, 8, 8);
        assert_eq!(den.predict(&z, 0.0).unwrap(), z);
        assert_eq!(den.predict(&z, 2.0).unwrap(), *den.anchor());
        let mid = den.predict(&z, 1.0).unwrap();
        for ((o, a), b) in mid.data().iter().zip(z.data()).zip(den.anchor().data()) {
            assert_eq!(*o, (a + b) / 2.0);
        }
        assert!(matches!(den.predict(&z, 2.5), Err(Error::Domain(_))));
        assert!(matches!(den.predict(&z, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn one_step_reconstruction_returns_measurement() {
        let op = ForwardOperator::from_id("identity").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = op.apply(&random_image(&mut rng, 6, 6)).unwrap();
        let den = ReferenceDenoiser::new(&m, &op, 1.0).unwrap();
        let cfg = ReconConfig {
            steps: 1,
            step_size: 1.0,
            ..Default::default()
        };
        let traj = reconstruct("c", &m, &op, &den, &cfg).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.steps()[0].time, 0.0);
        assert_eq!(traj.steps()[0].image.data(), m.data());
    }

    #[test]
    fn reconstruction_is_deterministic_for_every_init_mode() {
        let op = ForwardOperator::from_id("avgpool2").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = op.apply(&random_image(&mut rng, 8, 8)).unwrap();
        let den = ReferenceDenoiser::new(&m, &op, 1.0).unwrap();
        for init_mode in [InitMode::Noise, InitMode::Pseudoinverse, InitMode::Mixture] {
            let cfg = ReconConfig {
                init_mode,
                noise_seed: 9,
                ..Default::default()
            };
            let a = reconstruct("c", &m, &op, &den, &cfg).unwrap();
            let b = reconstruct("c", &m, &op, &den, &cfg).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 10);
            assert!(a.times().windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn trajectory_roundtrip() {
        let op = ForwardOperator::from_id("identity").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = op.apply(&random_image(&mut rng, 5, 7)).unwrap();
        let den = ReferenceDenoiser::new(&m, &op, 1.0).unwrap();
        let traj = reconstruct("case-x", &m, &op, &den, &ReconConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_trajectory(&traj, dir.path()).unwrap();
        assert_eq!(load_trajectory(dir.path()).unwrap(), traj);
    }

    #[test]
    fn trajectory_rejects_non_decreasing_times() {
        let step = |t| TrajectoryStep {
            image: Image::zeros(2, 2),
            time: t,
        };
        assert!(Trajectory::new("c", 1.0, vec![step(0.5), step(0.5)]).is_err());
        assert!(Trajectory::new("c", 1.0, vec![]).is_err());
    }
}
