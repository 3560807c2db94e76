//! Run configuration in a flat `key = value` text format.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. Unknown
//! and repeated keys are errors. `model` and `family` have no default.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `model` | required | `synth_logistic`, `synth_frisk`, `synth_regression`, `logistic`, `frisk`, `bnn`, `gaussian` |
//! | `data` | none | dataset path for `logistic` (libsvm), `frisk` (CSV) and `bnn` (CSV) |
//! | `target_column` | `quality` | regression target column for `bnn` |
//! | `delimiter` | `,` | CSV delimiter for `bnn` (`;` for the wine files, `tab` accepted) |
//! | `synth_n` | 200 | rows for synthetic data |
//! | `synth_p` | 19 | features (precincts for `synth_frisk`, dimension for `gaussian`) |
//! | `data_seed` | 0 | seed for synthetic data |
//! | `family` | required | `diag`, `diag_lr`, `full` |
//! | `r_w` | 2 | rank of the variational low-rank factor (`diag_lr`) |
//! | `cv` | `quadratic_m2` | `none`, `quadratic_m1`, `quadratic_m2`, `taylor` |
//! | `r_v` | 10, or 20 for `full` | rank of the surrogate curvature factor |
//! | `m` | 10 | samples per step |
//! | `iterations` | 1000 | optimization steps |
//! | `alpha_w`, `alpha_v` | 0.01, 0.01 | Adam step sizes |
//! | `gamma_decay` | 0.9 | EMA decay of the control-variate weight statistics |
//! | `seed` | 0 | training seed |
//! | `out` | `trace.csv` | output path |
//! | `probe_interval`, `probe_samples` | 500, 1000 | variance/ELBO probe schedule |
//! | `timing` | false | record elapsed milliseconds (otherwise 0, for reproducible files) |
//! | `hidden` | 50 | hidden units for the network models |
//! | `init_scale` | 0.1 | initial posterior standard deviation |
//! | `sigmas` | `0.1,0.3,1` | σ grid for `sweep-sigma` |
//! | `fit_iters` | 20000 | surrogate fitting steps per σ in `sweep-sigma` |
//! | `step_sizes` | `1e-4,1e-3,1e-2` | `alpha_w` grid for `sweep-stepsize` |

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::families::FamilyKind;
use crate::models::{data, BnnModel, GaussianModel, HierarchicalModel, LogJointModel, LogisticModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    SynthLogistic,
    SynthFrisk,
    SynthRegression,
    Logistic,
    Frisk,
    Bnn,
    Gaussian,
}

impl ModelKind {
    const ALL: [ModelKind; 7] = [
        ModelKind::SynthLogistic,
        ModelKind::SynthFrisk,
        ModelKind::SynthRegression,
        ModelKind::Logistic,
        ModelKind::Frisk,
        ModelKind::Bnn,
        ModelKind::Gaussian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SynthLogistic => "synth_logistic",
            ModelKind::SynthFrisk => "synth_frisk",
            ModelKind::SynthRegression => "synth_regression",
            ModelKind::Logistic => "logistic",
            ModelKind::Frisk => "frisk",
            ModelKind::Bnn => "bnn",
            ModelKind::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CvKind {
    None,
    QuadraticM1,
    QuadraticM2,
    Taylor,
}

impl CvKind {
    pub fn name(self) -> &'static str {
        match self {
            CvKind::None => "none",
            CvKind::QuadraticM1 => "quadratic_m1",
            CvKind::QuadraticM2 => "quadratic_m2",
            CvKind::Taylor => "taylor",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [CvKind::None, CvKind::QuadraticM1, CvKind::QuadraticM2, CvKind::Taylor]
            .into_iter()
            .find(|k| k.name() == s)
    }

    pub fn is_quadratic(self) -> bool {
        matches!(self, CvKind::QuadraticM1 | CvKind::QuadraticM2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub data: Option<PathBuf>,
    pub target_column: String,
    pub delimiter: u8,
    pub synth_n: usize,
    pub synth_p: usize,
    pub data_seed: u64,
    pub family: FamilyKind,
    pub r_w: usize,
    pub cv: CvKind,
    pub r_v: usize,
    pub m: usize,
    pub iterations: usize,
    pub alpha_w: f64,
    pub alpha_v: f64,
    pub gamma_decay: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub probe_interval: usize,
    pub probe_samples: usize,
    pub timing: bool,
    pub hidden: usize,
    pub init_scale: f64,
    pub sigmas: Vec<f64>,
    pub fit_iters: usize,
    pub step_sizes: Vec<f64>,
}

const KEYS: [&str; 26] = [
    "model",
    "data",
    "target_column",
    "delimiter",
    "synth_n",
    "synth_p",
    "data_seed",
    "family",
    "r_w",
    "cv",
    "r_v",
    "m",
    "iterations",
    "alpha_w",
    "alpha_v",
    "gamma_decay",
    "seed",
    "out",
    "probe_interval",
    "probe_samples",
    "timing",
    "hidden",
    "init_scale",
    "sigmas",
    "fit_iters",
    "step_sizes",
];

impl RunConfig {
    /// Configuration with every documented default.
    pub fn new(model: ModelKind, family: FamilyKind) -> Self {
        Self {
            model,
            data: None,
            target_column: "quality".into(),
            delimiter: b',',
            synth_n: 200,
            synth_p: 19,
            data_seed: 0,
            family,
            r_w: 2,
            cv: CvKind::QuadraticM2,
            r_v: default_r_v(family),
            m: 10,
            iterations: 1000,
            alpha_w: 1e-2,
            alpha_v: 1e-2,
            gamma_decay: 0.9,
            seed: 0,
            out: PathBuf::from("trace.csv"),
            probe_interval: 500,
            probe_samples: 1000,
            timing: false,
            hidden: 50,
            init_scale: 0.1,
            sigmas: vec![0.1, 0.3, 1.0],
            fit_iters: 20_000,
            step_sizes: vec![1e-4, 1e-3, 1e-2],
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text, &path.display().to_string())
    }

    /// Parses config text; `origin` names the source in error messages.
    pub fn parse_str(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse { path: origin.to_string(), line, msg };
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(line_no, format!("expected key=value, got {line:?}")));
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(err(line_no, format!("unknown key {key:?}")));
            }
            if !seen.insert(key) {
                return Err(err(line_no, format!("duplicate key {key:?}")));
            }
            entries.push((line_no, key, value));
        }
        let find = |key: &str| entries.iter().find(|e| e.1 == key).map(|e| (e.0, e.2));
        let last_line = text.lines().count().max(1);
        let (line, model) = find("model").ok_or_else(|| err(last_line, "missing required key \"model\"".into()))?;
        let model = ModelKind::parse(model).ok_or_else(|| err(line, format!("unknown model {model:?}")))?;
        let (line, family) =
            find("family").ok_or_else(|| err(last_line, "missing required key \"family\"".into()))?;
        let family =
            FamilyKind::parse(family).ok_or_else(|| err(line, format!("unknown family {family:?}")))?;

        let mut cfg = Self::new(model, family);
        for &(line, key, value) in &entries {
            cfg.apply(key, value).map_err(|msg| err(line, msg))?;
        }
        cfg.validate().map_err(|e| err(last_line, e.to_string()))?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value.parse().map_err(|_| format!("invalid value {value:?} for {key}"))
        }
        fn list(key: &str, value: &str) -> std::result::Result<Vec<f64>, String> {
            value.split(',').map(|v| num(key, v.trim())).collect()
        }
        match key {
            "model" | "family" => {}
            "data" => self.data = Some(PathBuf::from(value)),
            "target_column" => self.target_column = value.to_string(),
            "delimiter" => {
                self.delimiter = match value {
                    "tab" | "\\t" => b'\t',
                    v if v.len() == 1 => v.as_bytes()[0],
                    v => return Err(format!("delimiter must be one character, got {v:?}")),
                }
            }
            "synth_n" => self.synth_n = num(key, value)?,
            "synth_p" => self.synth_p = num(key, value)?,
            "data_seed" => self.data_seed = num(key, value)?,
            "r_w" => self.r_w = num(key, value)?,
            "cv" => self.cv = CvKind::parse(value).ok_or_else(|| format!("unknown cv {value:?}"))?,
            "r_v" => self.r_v = num(key, value)?,
            "m" => self.m = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "alpha_w" => self.alpha_w = num(key, value)?,
            "alpha_v" => self.alpha_v = num(key, value)?,
            "gamma_decay" => self.gamma_decay = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "probe_interval" => self.probe_interval = num(key, value)?,
            "probe_samples" => self.probe_samples = num(key, value)?,
            "timing" => self.timing = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "init_scale" => self.init_scale = num(key, value)?,
            "sigmas" => self.sigmas = list(key, value)?,
            "fit_iters" => self.fit_iters = num(key, value)?,
            "step_sizes" => self.step_sizes = list(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.m == 0 {
            return bad("m must be at least 1");
        }
        if self.probe_interval == 0 {
            return bad("probe_interval must be at least 1");
        }
        if self.probe_samples < 2 {
            return bad("probe_samples must be at least 2");
        }
        if !(self.alpha_w > 0.0 && self.alpha_v > 0.0) {
            return bad("step sizes must be positive");
        }
        if !(self.gamma_decay > 0.0 && self.gamma_decay < 1.0) {
            return bad("gamma_decay must lie in (0,1)");
        }
        if !(self.init_scale > 0.0) {
            return bad("init_scale must be positive");
        }
        if self.sigmas.iter().any(|s| !(*s > 0.0)) {
            return bad("sigmas must be positive");
        }
        if self.step_sizes.iter().any(|s| !(*s > 0.0)) {
            return bad("step_sizes must be positive");
        }
        if matches!(self.model, ModelKind::Logistic | ModelKind::Frisk | ModelKind::Bnn) && self.data.is_none() {
            return bad("this model needs a data path");
        }
        Ok(())
    }

    /// Serializes every key; parsing the result gives back an equal config.
    pub fn to_config_string(&self) -> String {
        fn list(xs: &[f64]) -> String {
            xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        }
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("model", self.model.name().into());
        if let Some(d) = &self.data {
            put("data", d.display().to_string());
        }
        put("target_column", self.target_column.clone());
        put("delimiter", if self.delimiter == b'\t' { "tab".into() } else { (self.delimiter as char).to_string() });
        put("synth_n", self.synth_n.to_string());
        put("synth_p", self.synth_p.to_string());
        put("data_seed", self.data_seed.to_string());
        put("family", self.family.name().into());
        put("r_w", self.r_w.to_string());
        put("cv", self.cv.name().into());
        put("r_v", self.r_v.to_string());
        put("m", self.m.to_string());
        put("iterations", self.iterations.to_string());
        put("alpha_w", self.alpha_w.to_string());
        put("alpha_v", self.alpha_v.to_string());
        put("gamma_decay", self.gamma_decay.to_string());
        put("seed", self.seed.to_string());
        put("out", self.out.display().to_string());
        put("probe_interval", self.probe_interval.to_string());
        put("probe_samples", self.probe_samples.to_string());
        put("timing", self.timing.to_string());
        put("hidden", self.hidden.to_string());
        put("init_scale", self.init_scale.to_string());
        put("sigmas", list(&self.sigmas));
        put("fit_iters", self.fit_iters.to_string());
        put("step_sizes", list(&self.step_sizes));
        s
    }

    /// Loads or generates the data and builds the target log-joint.
    pub fn build_model(&self) -> Result<Box<dyn LogJointModel>> {
        let path = || self.data.as_ref().ok_or_else(|| Error::InvalidArgument("missing data path".into()));
        Ok(match self.model {
            ModelKind::SynthLogistic => {
                Box::new(LogisticModel::new(data::synth_logistic(self.synth_n, self.synth_p, self.data_seed)?))
            }
            ModelKind::SynthFrisk => {
                Box::new(HierarchicalModel::new(data::synth_frisk(3, self.synth_p, self.data_seed)?))
            }
            ModelKind::SynthRegression => Box::new(BnnModel::new(
                data::synth_regression(self.synth_n, self.synth_p, self.data_seed)?,
                self.hidden,
            )),
            ModelKind::Logistic => Box::new(LogisticModel::new(data::load_libsvm(path()?, None)?)),
            ModelKind::Frisk => Box::new(HierarchicalModel::new(data::load_frisk(path()?)?)),
            ModelKind::Bnn => Box::new(BnnModel::new(
                data::load_csv(path()?, &self.target_column, self.delimiter)?,
                self.hidden,
            )),
            ModelKind::Gaussian => Box::new(GaussianModel::standard(self.synth_p)),
        })
    }
}

fn default_r_v(family: FamilyKind) -> usize {
    match family {
        FamilyKind::MeanCholesky => 20,
        _ => 10,
    }
}
