//! Run configuration: defaults, key=value config files, and command-line
//! overrides. Every flag mirrors a config key of the same name, and the
//! command line wins over the file. Two runs with equal configurations
//! produce identical output files.

use anyhow::{bail, Context, Result};
use clap::Args;
use lincert::trainer::{LossKind, LossSpec};
use std::path::{Path, PathBuf};

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    /// Hyperplane-arrangement labels; a low-norm interpolant exists.
    Separable,
    /// Labels independent of the inputs.
    Random,
    /// IDX image/label file pair.
    Idx,
}

impl DatasetSource {
    fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "separable" => Ok(DatasetSource::Separable),
            "random" => Ok(DatasetSource::Random),
            "idx" => Ok(DatasetSource::Idx),
            other => bail!("unknown dataset source {other:?} (want separable | random | idx)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossChoice {
    Squared,
    Logistic,
}

impl LossChoice {
    fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "squared" => Ok(LossChoice::Squared),
            "logistic" => Ok(LossChoice::Logistic),
            other => bail!("unknown loss {other:?} (want squared | logistic)"),
        }
    }

    pub fn spec(self) -> LossSpec {
        match self {
            LossChoice::Squared => LossSpec::squared(),
            LossChoice::Logistic => LossSpec::logistic(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossChoice::Squared => "squared",
            LossChoice::Logistic => "logistic",
        }
    }
}

/// Everything a run needs. See `RunConfig::default` for the desk-scale
/// defaults; `experiment` widens the feature layer to 4n when no explicit
/// width is given.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub limit: usize,
    pub n: usize,
    pub test_n: usize,
    pub m_x: usize,
    pub m_y: usize,
    pub planes: Option<usize>,
    pub corrupt_p: f64,
    pub depth: usize,
    pub delta: f64,
    pub c_schedule: f64,
    pub alpha: f64,
    pub c_w: f64,
    pub c_b: f64,
    pub feature_width: Option<usize>,
    pub loss: LossChoice,
    pub epsilon: f64,
    pub max_steps: u64,
    pub record_stride: Option<u64>,
    pub rho: f64,
    pub varsigma: f64,
    pub delta_prime: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub trials: usize,
    pub mc_samples: usize,
    pub pairs: usize,
    pub widths: Vec<usize>,
    pub conc_trials: usize,
    pub radius: f64,
    pub ball_samples: usize,
    pub beta: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSource::Separable,
            images: None,
            labels: None,
            limit: 0,
            n: 64,
            test_n: 256,
            m_x: 16,
            m_y: 4,
            planes: None,
            corrupt_p: 0.0,
            depth: 2,
            delta: 0.1,
            c_schedule: lincert::architect::DEFAULT_C,
            alpha: lincert::architect::DEFAULT_ALPHA,
            c_w: lincert::architect::DEFAULT_CW,
            c_b: lincert::architect::DEFAULT_CB,
            feature_width: None,
            loss: LossChoice::Squared,
            epsilon: 1e-3,
            max_steps: u64::MAX,
            record_stride: None,
            rho: 0.5,
            varsigma: 1.0,
            delta_prime: 0.01,
            seed: 0,
            out_dir: PathBuf::from("lincert_out"),
            trials: 100,
            mc_samples: 200_000,
            pairs: 100,
            widths: vec![64, 256, 1024, 4096],
            conc_trials: 1000,
            radius: 1.0,
            ball_samples: 100,
            beta: 100.0,
        }
    }
}

/// Command-line overrides; every field mirrors a config-file key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Flat key=value file supplying any of the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset source: separable | random | idx. `--synthetic` is an alias.
    #[arg(long, alias = "synthetic")]
    pub dataset: Option<String>,
    /// IDX images file (dataset = idx).
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// IDX labels file (dataset = idx).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Cap on samples read from IDX files (0 reads everything).
    #[arg(long)]
    pub limit: Option<usize>,
    /// Training sample count.
    #[arg(long)]
    pub n: Option<usize>,
    /// Held-out sample count.
    #[arg(long)]
    pub test_n: Option<usize>,
    /// Input width.
    #[arg(long)]
    pub m_x: Option<usize>,
    /// Output width (class count).
    #[arg(long)]
    pub m_y: Option<usize>,
    /// Hyperplane count for the separable synthesizer.
    #[arg(long)]
    pub planes: Option<usize>,
    /// Label corruption probability.
    #[arg(long)]
    pub corrupt_p: Option<f64>,
    /// Hidden depth H.
    #[arg(long = "H")]
    pub depth: Option<usize>,
    /// Width-schedule failure budget.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Width-schedule constant.
    #[arg(long = "C")]
    pub c_schedule: Option<f64>,
    /// Softplus sharpness.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight init variance.
    #[arg(long)]
    pub c_w: Option<f64>,
    /// Bias init variance.
    #[arg(long)]
    pub c_b: Option<f64>,
    /// Feature-layer width override (schedule default is n).
    #[arg(long)]
    pub feature_width: Option<usize>,
    /// Loss: squared | logistic.
    #[arg(long)]
    pub loss: Option<String>,
    /// Certificate slack: stop once J <= L(f*) + epsilon.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Hard cap on gradient steps.
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Trace stride in steps (0 picks one automatically).
    #[arg(long)]
    pub record_stride: Option<u64>,
    /// Margin scale for the ramp loss.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Norm-ceiling granularity in the generalization bound.
    #[arg(long)]
    pub varsigma: Option<f64>,
    /// Confidence budget in the generalization bound.
    #[arg(long)]
    pub delta_prime: Option<f64>,
    /// Root seed for every stream in the run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (falls back to LINCERT_OUT_DIR, then lincert_out).
    #[arg(long = "out")]
    pub out_dir: Option<PathBuf>,
    /// Repetition count for verify suites.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Monte-Carlo sample count for the moment check.
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Output-layer pair count for the smoothness probe.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Comma-separated width sweep for the concentration suite.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    /// Trials per width in the concentration suite.
    #[arg(long)]
    pub conc_trials: Option<usize>,
    /// Ball radius for parameter sampling in bound checks.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Parameter samples per radius in bound checks.
    #[arg(long)]
    pub ball_samples: Option<usize>,
    /// Witness sharpness.
    #[arg(long)]
    pub beta: Option<f64>,
}

impl RunConfig {
    /// Defaults, then the config file (if any), then the flags, then the
    /// output-directory environment fallback.
    pub fn resolve(over: &Overrides) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut out_dir_set = false;
        if let Some(path) = &over.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line
                    .split_once('=')
                    .with_context(|| format!("{}:{}: expected key=value", path.display(), lineno + 1))?;
                if key.trim() == "out" {
                    out_dir_set = true;
                }
                cfg.set(key.trim(), value.trim())
                    .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
            }
        }
        cfg.apply_overrides(over, &mut out_dir_set)?;
        if !out_dir_set {
            if let Ok(env_dir) = std::env::var("LINCERT_OUT_DIR") {
                if !env_dir.is_empty() {
                    cfg.out_dir = PathBuf::from(env_dir);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("bad value for {key}: {e}"))
        }
        match key {
            "dataset" => self.dataset = DatasetSource::parse(value)?,
            "images" => self.images = Some(PathBuf::from(value)),
            "labels" => self.labels = Some(PathBuf::from(value)),
            "limit" => self.limit = p(key, value)?,
            "n" => self.n = p(key, value)?,
            "test_n" => self.test_n = p(key, value)?,
            "m_x" => self.m_x = p(key, value)?,
            "m_y" => self.m_y = p(key, value)?,
            "planes" => self.planes = Some(p(key, value)?),
            "corrupt_p" => self.corrupt_p = p(key, value)?,
            "H" => self.depth = p(key, value)?,
            "delta" => self.delta = p(key, value)?,
            "C" => self.c_schedule = p(key, value)?,
            "alpha" => self.alpha = p(key, value)?,
            "c_w" => self.c_w = p(key, value)?,
            "c_b" => self.c_b = p(key, value)?,
            "feature_width" => self.feature_width = Some(p(key, value)?),
            "loss" => self.loss = LossChoice::parse(value)?,
            "epsilon" => self.epsilon = p(key, value)?,
            "max_steps" => self.max_steps = p(key, value)?,
            "record_stride" => {
                let v: u64 = p(key, value)?;
                self.record_stride = if v == 0 { None } else { Some(v) };
            }
            "rho" => self.rho = p(key, value)?,
            "varsigma" => self.varsigma = p(key, value)?,
            "delta_prime" => self.delta_prime = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "out" => self.out_dir = PathBuf::from(value),
            "trials" => self.trials = p(key, value)?,
            "mc_samples" => self.mc_samples = p(key, value)?,
            "pairs" => self.pairs = p(key, value)?,
            "widths" => {
                self.widths = value
                    .split(',')
                    .map(|w| p::<usize>("widths", w.trim()))
                    .collect::<Result<Vec<_>>>()?;
            }
            "conc_trials" => self.conc_trials = p(key, value)?,
            "radius" => self.radius = p(key, value)?,
            "ball_samples" => self.ball_samples = p(key, value)?,
            "beta" => self.beta = p(key, value)?,
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    fn apply_overrides(&mut self, over: &Overrides, out_dir_set: &mut bool) -> Result<()> {
        if let Some(v) = &over.dataset {
            self.dataset = DatasetSource::parse(v)?;
        }
        if let Some(v) = &over.images {
            self.images = Some(v.clone());
        }
        if let Some(v) = &over.labels {
            self.labels = Some(v.clone());
        }
        if let Some(v) = over.limit {
            self.limit = v;
        }
        if let Some(v) = over.n {
            self.n = v;
        }
        if let Some(v) = over.test_n {
            self.test_n = v;
        }
        if let Some(v) = over.m_x {
            self.m_x = v;
        }
        if let Some(v) = over.m_y {
            self.m_y = v;
        }
        if let Some(v) = over.planes {
            self.planes = Some(v);
        }
        if let Some(v) = over.corrupt_p {
            self.corrupt_p = v;
        }
        if let Some(v) = over.depth {
            self.depth = v;
        }
        if let Some(v) = over.delta {
            self.delta = v;
        }
        if let Some(v) = over.c_schedule {
            self.c_schedule = v;
        }
        if let Some(v) = over.alpha {
            self.alpha = v;
        }
        if let Some(v) = over.c_w {
            self.c_w = v;
        }
        if let Some(v) = over.c_b {
            self.c_b = v;
        }
        if let Some(v) = over.feature_width {
            self.feature_width = Some(v);
        }
        if let Some(v) = &over.loss {
            self.loss = LossChoice::parse(v)?;
        }
        if let Some(v) = over.epsilon {
            self.epsilon = v;
        }
        if let Some(v) = over.max_steps {
            self.max_steps = v;
        }
        if let Some(v) = over.record_stride {
            self.record_stride = if v == 0 { None } else { Some(v) };
        }
        if let Some(v) = over.rho {
            self.rho = v;
        }
        if let Some(v) = over.varsigma {
            self.varsigma = v;
        }
        if let Some(v) = over.delta_prime {
            self.delta_prime = v;
        }
        if let Some(v) = over.seed {
            self.seed = v;
        }
        if let Some(v) = &over.out_dir {
            self.out_dir = v.clone();
            *out_dir_set = true;
        }
        if let Some(v) = over.trials {
            self.trials = v;
        }
        if let Some(v) = over.mc_samples {
            self.mc_samples = v;
        }
        if let Some(v) = over.pairs {
            self.pairs = v;
        }
        if let Some(v) = &over.widths {
            self.widths = v.clone();
        }
        if let Some(v) = over.conc_trials {
            self.conc_trials = v;
        }
        if let Some(v) = over.radius {
            self.radius = v;
        }
        if let Some(v) = over.ball_samples {
            self.ball_samples = v;
        }
        if let Some(v) = over.beta {
            self.beta = v;
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.dataset == DatasetSource::Idx && (self.images.is_none() || self.labels.is_none()) {
            bail!("dataset = idx needs --images and --labels");
        }
        if !(self.epsilon > 0.0) {
            bail!("epsilon must be positive, got {}", self.epsilon);
        }
        if !(0.0..=1.0).contains(&self.corrupt_p) {
            bail!("corrupt_p must lie in [0, 1], got {}", self.corrupt_p);
        }
        Ok(())
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss.spec().kind
    }

    /// The run's effective hyperplane count for the separable synthesizer.
    pub fn planes_or_default(&self) -> usize {
        self.planes
            .unwrap_or_else(|| lincert::data::default_planes(self.m_y))
    }

    /// Records the resolved configuration so a run can be reproduced.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let f = lincert::report::fmt_f64;
        let mut kv: Vec<(String, String)> = Vec::new();
        let dataset = match self.dataset {
            DatasetSource::Separable => "separable",
            DatasetSource::Random => "random",
            DatasetSource::Idx => "idx",
        };
        kv.push(("dataset".into(), dataset.into()));
        if let Some(p) = &self.images {
            kv.push(("images".into(), p.display().to_string()));
        }
        if let Some(p) = &self.labels {
            kv.push(("labels".into(), p.display().to_string()));
        }
        kv.push(("n".into(), self.n.to_string()));
        kv.push(("test_n".into(), self.test_n.to_string()));
        kv.push(("m_x".into(), self.m_x.to_string()));
        kv.push(("m_y".into(), self.m_y.to_string()));
        kv.push(("planes".into(), self.planes_or_default().to_string()));
        kv.push(("corrupt_p".into(), f(self.corrupt_p)));
        kv.push(("H".into(), self.depth.to_string()));
        kv.push(("delta".into(), f(self.delta)));
        kv.push(("C".into(), f(self.c_schedule)));
        kv.push(("alpha".into(), f(self.alpha)));
        kv.push(("c_w".into(), f(self.c_w)));
        kv.push(("c_b".into(), f(self.c_b)));
        if let Some(w) = self.feature_width {
            kv.push(("feature_width".into(), w.to_string()));
        }
        kv.push(("loss".into(), self.loss.name().into()));
        kv.push(("epsilon".into(), f(self.epsilon)));
        kv.push(("rho".into(), f(self.rho)));
        kv.push(("varsigma".into(), f(self.varsigma)));
        kv.push(("delta_prime".into(), f(self.delta_prime)));
        kv.push(("seed".into(), self.seed.to_string()));
        kv
    }
}

/// Creates `dir` (and parents) and returns it as a path buffer.
pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}
