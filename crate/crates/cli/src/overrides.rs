//! Command-line flags that override fields of a loaded [`RunConfig`].

use std::path::PathBuf;

use clap::Args;
use subspacenet::inference::SelectMethod;
use subspacenet::losses::LossKind;

use crate::config::{parse_schedule, RunConfig};
use crate::error::CliError;

/// Which seed `--seed` replaces; each command owns one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedTarget {
    Gen,
    Train,
    Inference,
    Baseline,
}

/// `--k N` or `--k auto`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KArg {
    Fixed(usize),
    Auto,
}

impl std::str::FromStr for KArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(KArg::Auto);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(KArg::Fixed(k)),
            _ => Err(format!("expected a positive integer or `auto`, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON run configuration; flags below override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for this command's randomness.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of clusters, or `auto` for automatic selection.
    #[arg(long, global = true)]
    pub k: Option<KArg>,
    /// Automatic K selection method: sod or silh.
    #[arg(long, global = true)]
    pub method: Option<SelectMethod>,
    /// Largest K considered by automatic selection.
    #[arg(long, global = true)]
    pub k_max: Option<usize>,
    /// K-means restarts.
    #[arg(long, global = true)]
    pub restarts: Option<usize>,
    /// Training loss: l2, ce, mimi, maxinter, minintra, skm.
    #[arg(long, global = true)]
    pub loss: Option<LossKind>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    /// Fraction of points per instance whose labels are used in training.
    #[arg(long, global = true)]
    pub label_fraction: Option<f64>,
    /// Number of residual blocks.
    #[arg(long, global = true)]
    pub depth: Option<usize>,
    /// Hidden width.
    #[arg(long, global = true)]
    pub width: Option<usize>,
    /// Embedding dimension.
    #[arg(long, global = true)]
    pub embed_dim: Option<usize>,
    /// Disable the unit-norm output layer.
    #[arg(long, global = true)]
    pub no_l2norm: bool,
    /// Save a checkpoint every N epochs (0: final only).
    #[arg(long, global = true)]
    pub checkpoint_every: Option<usize>,
    /// Baseline model schedule, e.g. `line:1,circle:1,ellipse:2`.
    #[arg(long, global = true)]
    pub schedule: Option<String>,
}

impl Overrides {
    /// Loads the config file (or defaults) and applies every flag given.
    pub fn resolve(&self, seed_target: SeedTarget) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::load_or_default(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            match seed_target {
                SeedTarget::Gen => c.gen.seed = seed,
                SeedTarget::Train => {
                    c.train.seed = seed;
                    c.network.seed = seed;
                }
                SeedTarget::Inference => c.inference.seed = seed,
                SeedTarget::Baseline => c.baseline.seed = seed,
            }
        }
        match self.k {
            Some(KArg::Fixed(k)) => c.inference.k = Some(k),
            Some(KArg::Auto) => c.inference.k = None,
            None => {}
        }
        if let Some(m) = self.method {
            c.inference.method = m;
        }
        if let Some(k) = self.k_max {
            c.inference.k_max = k;
        }
        if let Some(r) = self.restarts {
            c.inference.restarts = r;
        }
        if let Some(l) = self.loss {
            c.train.loss = l;
        }
        if let Some(e) = self.epochs {
            c.train.epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            c.train.learning_rate = lr;
        }
        if let Some(f) = self.label_fraction {
            c.train.label_fraction = f;
        }
        if let Some(d) = self.depth {
            c.network.num_blocks = d;
        }
        if let Some(w) = self.width {
            c.network.hidden_width = w;
        }
        if let Some(k) = self.embed_dim {
            c.network.output_dim = k;
        }
        if self.no_l2norm {
            c.network.use_l2norm_output = false;
        }
        if let Some(n) = self.checkpoint_every {
            c.train.checkpoint_every = n;
        }
        if let Some(s) = &self.schedule {
            c.baseline.schedule = parse_schedule(s)?;
        }
        if c.inference.restarts == 0 {
            return Err(CliError::Validation("restarts must be positive".into()));
        }
        if c.inference.k_max < 2 {
            return Err(CliError::Validation("k_max must be at least 2".into()));
        }
        Ok(c)
    }
}
