//! Run configuration: dataset-profile presets, precedence resolution, and
//! the resolved-config echo record.
//!
//! Profiles are `key=value` data files shipped in `profiles/` so the preset
//! hyperparameters stay auditable. Precedence, lowest to highest: built-in
//! defaults, profile values, explicit flags.

use std::path::{Path, PathBuf};

use crate::cluster::EpsSetting;
use crate::error::{Error, Result};
use crate::train::TrainConfig;

/// Values a profile file may set; anything absent falls back to defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Profile {
    pub name: String,
    pub tau: Option<f64>,
    pub lambda: Option<f64>,
    pub seq_len: Option<usize>,
    pub masks_x: Option<usize>,
    pub samplings_q: Option<usize>,
    pub hidden: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub min_pts: Option<usize>,
    pub eps_percentile: Option<f64>,
}

impl Profile {
    /// Parses the `key=value` file format; unknown keys are errors so typos
    /// in shipped presets cannot pass silently.
    pub fn parse(name: &str, text: &str) -> Result<Profile> {
        let mut profile = Profile {
            name: name.to_string(),
            ..Profile::default()
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!(
                    "profile {name}: line {}: expected key=value, got '{line}'",
                    lineno + 1
                ))
            })?;
            let bad = |what: &str| {
                Error::Format(format!(
                    "profile {name}: line {}: invalid {what} '{value}'",
                    lineno + 1
                ))
            };
            match key.trim() {
                "tau" => profile.tau = Some(value.parse().map_err(|_| bad("tau"))?),
                "lambda" => profile.lambda = Some(value.parse().map_err(|_| bad("lambda"))?),
                "f" => profile.seq_len = Some(value.parse().map_err(|_| bad("f"))?),
                "x" => profile.masks_x = Some(value.parse().map_err(|_| bad("x"))?),
                "q" => profile.samplings_q = Some(value.parse().map_err(|_| bad("q"))?),
                "hidden" => profile.hidden = Some(value.parse().map_err(|_| bad("hidden"))?),
                "lr" => profile.learning_rate = Some(value.parse().map_err(|_| bad("lr"))?),
                "batch" => profile.batch_size = Some(value.parse().map_err(|_| bad("batch"))?),
                "epochs" => profile.epochs = Some(value.parse().map_err(|_| bad("epochs"))?),
                "min_pts" => profile.min_pts = Some(value.parse().map_err(|_| bad("min_pts"))?),
                "eps_percentile" => {
                    profile.eps_percentile =
                        Some(value.parse().map_err(|_| bad("eps_percentile"))?)
                }
                other => {
                    return Err(Error::Format(format!(
                        "profile {name}: unknown key '{other}'"
                    )));
                }
            }
        }
        Ok(profile)
    }

    /// Loads a profile by name or path. Bare names are searched in
    /// `$SIMMC_PROFILE_DIR`, `./profiles/`, and the crate's own `profiles/`.
    pub fn load(name_or_path: &str) -> Result<Profile> {
        let mut candidates: Vec<PathBuf> = Vec::new();
        let direct = Path::new(name_or_path);
        if name_or_path.contains('/') || name_or_path.ends_with(".profile") {
            candidates.push(direct.to_path_buf());
        } else {
            if let Ok(dir) = std::env::var("SIMMC_PROFILE_DIR") {
                candidates.push(Path::new(&dir).join(format!("{name_or_path}.profile")));
            }
            candidates.push(PathBuf::from(format!("profiles/{name_or_path}.profile")));
            candidates.push(
                Path::new(env!("CARGO_MANIFEST_DIR"))
                    .join("profiles")
                    .join(format!("{name_or_path}.profile")),
            );
        }
        for path in &candidates {
            if path.is_file() {
                let text = std::fs::read_to_string(path)?;
                return Profile::parse(name_or_path, &text);
            }
        }
        Err(Error::InvalidArgument(format!(
            "unknown profile '{name_or_path}' (searched: {})",
            candidates
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(", ")
        )))
    }
}

/// Radius flag value: `auto` or a literal radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsArg {
    Auto,
    Fixed(f64),
}

impl EpsArg {
    pub fn parse(s: &str) -> Result<EpsArg> {
        if s == "auto" {
            return Ok(EpsArg::Auto);
        }
        s.parse::<f64>()
            .map(EpsArg::Fixed)
            .map_err(|_| Error::InvalidArgument(format!("--eps expects a number or 'auto', got '{s}'")))
    }
}

/// Explicitly supplied flag values; `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seq_len: Option<usize>,
    pub stride: Option<usize>,
    pub masks_x: Option<usize>,
    pub samplings_q: Option<usize>,
    pub hidden: Option<usize>,
    pub tau: Option<f64>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub eps: Option<EpsArg>,
    pub eps_percentile: Option<f64>,
    pub min_pts: Option<usize>,
    pub cluster_every: Option<usize>,
    pub seed: Option<u64>,
    pub no_normalize: bool,
    pub bias: bool,
}

/// A fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub train: TrainConfig,
    pub seq_len: usize,
    /// Window stride; defaults to `seq_len` (non-overlapping windows).
    pub stride: usize,
    pub profile: Option<String>,
}

impl ResolvedConfig {
    /// Applies defaults <- profile <- flags, then validates.
    pub fn resolve(profile: Option<&Profile>, flags: &Overrides) -> Result<ResolvedConfig> {
        let mut train = TrainConfig::default();
        let mut seq_len = 6usize;

        if let Some(p) = profile {
            if let Some(v) = p.tau {
                train.loss.tau = v;
            }
            if let Some(v) = p.lambda {
                train.loss.lambda = v;
            }
            if let Some(v) = p.seq_len {
                seq_len = v;
            }
            if let Some(v) = p.masks_x {
                train.masks_x = v;
            }
            if let Some(v) = p.samplings_q {
                train.samplings_q = v;
            }
            if let Some(v) = p.hidden {
                train.hidden = v;
            }
            if let Some(v) = p.learning_rate {
                train.learning_rate = v;
            }
            if let Some(v) = p.batch_size {
                train.batch_size = v;
            }
            if let Some(v) = p.epochs {
                train.epochs = v;
            }
            if let Some(v) = p.min_pts {
                train.min_pts = v;
            }
            if let Some(v) = p.eps_percentile {
                train.eps = EpsSetting::Auto { percentile: v };
            }
        }

        if let Some(v) = flags.epochs {
            train.epochs = v;
        }
        if let Some(v) = flags.batch_size {
            train.batch_size = v;
        }
        if let Some(v) = flags.learning_rate {
            train.learning_rate = v;
        }
        if let Some(v) = flags.seq_len {
            seq_len = v;
        }
        if let Some(v) = flags.masks_x {
            train.masks_x = v;
        }
        if let Some(v) = flags.samplings_q {
            train.samplings_q = v;
        }
        if let Some(v) = flags.hidden {
            train.hidden = v;
        }
        if let Some(v) = flags.tau {
            train.loss.tau = v;
        }
        if let Some(v) = flags.lambda {
            train.loss.lambda = v;
        }
        if let Some(v) = flags.alpha {
            train.loss.alpha = v;
        }
        if let Some(v) = flags.beta {
            train.loss.beta = v;
        }
        if let Some(v) = flags.min_pts {
            train.min_pts = v;
        }
        if let Some(v) = flags.cluster_every {
            train.cluster_every = v;
        }
        if let Some(v) = flags.seed {
            train.seed = v;
        }
        match (flags.eps, flags.eps_percentile) {
            (Some(EpsArg::Fixed(v)), _) => train.eps = EpsSetting::Fixed(v),
            (Some(EpsArg::Auto), Some(p)) | (None, Some(p)) => {
                train.eps = EpsSetting::Auto { percentile: p }
            }
            (Some(EpsArg::Auto), None) => {
                if !matches!(train.eps, EpsSetting::Auto { .. }) {
                    train.eps = EpsSetting::default();
                }
            }
            (None, None) => {}
        }
        if flags.no_normalize {
            train.loss.normalize = false;
        }
        if flags.bias {
            train.bias = true;
        }

        let stride = flags.stride.unwrap_or(seq_len);
        if stride < 1 {
            return Err(Error::InvalidArgument("stride must be >= 1".into()));
        }
        train.validate(seq_len)?;
        Ok(ResolvedConfig {
            train,
            seq_len,
            stride,
            profile: profile.map(|p| p.name.clone()),
        })
    }

    /// One-line echo of the fully resolved configuration; re-running with
    /// these values reproduces the run bit-for-bit.
    pub fn echo(&self, subcommand: &str) -> String {
        let eps = match self.train.eps {
            EpsSetting::Auto { percentile } => format!("auto eps_percentile={percentile}"),
            EpsSetting::Fixed(v) => format!("{v} eps_percentile=-"),
        };
        format!(
            "record=config sub={subcommand} profile={} seed={} f={} stride={} x={} q={} hidden={} \
             tau={} lambda={} alpha={} beta={} lr={} batch={} epochs={} eps={eps} min_pts={} \
             cluster_every={} normalize={} bias={}",
            self.profile.as_deref().unwrap_or("-"),
            self.train.seed,
            self.seq_len,
            self.stride,
            self.train.masks_x,
            self.train.samplings_q,
            self.train.hidden,
            self.train.loss.tau,
            self.train.loss.lambda,
            self.train.loss.alpha,
            self.train.loss.beta,
            self.train.learning_rate,
            self.train.batch_size,
            self.train.epochs,
            self.train.min_pts,
            self.train.cluster_every,
            self.train.loss.normalize,
            self.train.bias,
        )
    }
}
