use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::engine::{next_feasible_capacity, BlockMaskKind, TileOverrides};
use crate::io_model::Algo;
use crate::numeric::{AttnConfig, MaskSpec};

#[derive(Debug, Parser)]
#[command(
    name = "tattn",
    version,
    about = "Tiled attention: equivalence checks, gradient checks, IO sweeps and predictions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Randomized equivalence suite: forward, backward, block-sparse,
    /// prefix snapshots, schedule invariance and counter exactness.
    Verify(CommonArgs),
    /// Central finite differences against the tiled backward pass.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        extra: GradcheckArgs,
    },
    /// Counted-IO sweep written as CSV, one row per configuration.
    Sweep(CommonArgs),
    /// Closed-form traffic next to instrumented counts.
    Predict(CommonArgs),
}

/// Flags shared by every subcommand. List-valued flags take comma-separated values.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Sequence length(s).
    #[arg(long)]
    pub n: Option<String>,
    /// Head dimension(s).
    #[arg(long)]
    pub d: Option<String>,
    /// SRAM capacity(ies) in elements. Default: smallest feasible M >= n*d.
    #[arg(long)]
    pub m: Option<String>,
    /// Key/value block length override(s).
    #[arg(long)]
    pub bc: Option<String>,
    /// Query block length override(s).
    #[arg(long)]
    pub br: Option<String>,
    /// Softmax scale. Default 1/sqrt(d).
    #[arg(long)]
    pub tau: Option<f64>,
    /// none | causal | padding:<len>
    #[arg(long)]
    pub mask: Option<String>,
    #[arg(long = "p-drop")]
    pub p_drop: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Block density list for block-sparse runs.
    #[arg(long)]
    pub sparsity: Option<String>,
    /// random | butterfly | local:<window>+<globals>
    #[arg(long)]
    pub pattern: Option<String>,
    /// Timed repeats per sweep point (one extra warmup is discarded).
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// key=value file; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Algorithms for sweep: standard, standard_bwd, flash, flash_bwd,
    /// blocksparse, blocksparse_bwd.
    #[arg(long)]
    pub algo: Option<String>,
    /// Largest n compared against the materialized oracle.
    #[arg(long = "oracle-cap")]
    pub oracle_cap: Option<usize>,
    /// Bytes per element in byte-denominated reports.
    #[arg(long = "element-bytes")]
    pub element_bytes: Option<u64>,
    /// Batch * heads multiplier for byte reports.
    #[arg(long)]
    pub multiplier: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GradcheckArgs {
    /// Finite-difference step.
    #[arg(long)]
    pub h: Option<f64>,
    /// Largest n accepted for finite differences.
    #[arg(long = "fd-cap")]
    pub fd_cap: Option<usize>,
    /// Use an all-zero cotangent.
    #[arg(long = "zero-do")]
    pub zero_do: bool,
}

/// Config files are parsed by the same flag grammar.
#[derive(Debug, Parser)]
#[command(no_binary_name = true)]
struct FileArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    extra: GradcheckArgs,
}

const FILE_KEYS: &[&str] = &[
    "n",
    "d",
    "m",
    "bc",
    "br",
    "tau",
    "mask",
    "p-drop",
    "seed",
    "sparsity",
    "pattern",
    "repeats",
    "out",
    "algo",
    "oracle-cap",
    "element-bytes",
    "multiplier",
    "h",
    "fd-cap",
    "zero-do",
];

/// Reads `key=value` lines (`#` starts a comment). Unknown keys are errors.
fn read_config(path: &Path) -> Result<(CommonArgs, GradcheckArgs), String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut entries = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected key=value", path.display(), lineno + 1))?;
        let key = key.trim().replace('_', "-");
        if !FILE_KEYS.contains(&key.as_str()) {
            return Err(format!("{}:{}: unknown key `{key}`", path.display(), lineno + 1));
        }
        entries.insert(key, value.trim().to_string());
    }
    let mut argv = Vec::new();
    for (key, value) in entries {
        if key == "zero-do" {
            match value.as_str() {
                "true" | "1" | "yes" => argv.push("--zero-do".to_string()),
                "false" | "0" | "no" => {}
                _ => return Err(format!("zero-do expects true or false, got `{value}`")),
            }
        } else {
            argv.push(format!("--{key}={value}"));
        }
    }
    let parsed = FileArgs::try_parse_from(argv).map_err(|e| format!("config {}: {e}", path.display()))?;
    Ok((parsed.common, parsed.extra))
}

impl CommonArgs {
    fn or(self, file: CommonArgs) -> CommonArgs {
        CommonArgs {
            n: self.n.or(file.n),
            d: self.d.or(file.d),
            m: self.m.or(file.m),
            bc: self.bc.or(file.bc),
            br: self.br.or(file.br),
            tau: self.tau.or(file.tau),
            mask: self.mask.or(file.mask),
            p_drop: self.p_drop.or(file.p_drop),
            seed: self.seed.or(file.seed),
            sparsity: self.sparsity.or(file.sparsity),
            pattern: self.pattern.or(file.pattern),
            repeats: self.repeats.or(file.repeats),
            out: self.out.or(file.out),
            config: self.config,
            algo: self.algo.or(file.algo),
            oracle_cap: self.oracle_cap.or(file.oracle_cap),
            element_bytes: self.element_bytes.or(file.element_bytes),
            multiplier: self.multiplier.or(file.multiplier),
        }
    }
}

impl GradcheckArgs {
    fn or(self, file: GradcheckArgs) -> GradcheckArgs {
        GradcheckArgs {
            h: self.h.or(file.h),
            fd_cap: self.fd_cap.or(file.fd_cap),
            zero_do: self.zero_do || file.zero_do,
        }
    }
}

/// Block pattern selected by `--pattern`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pattern {
    Random,
    Butterfly,
    Local { window: usize, globals: usize },
}

impl Pattern {
    pub fn kind(&self, density: f64, seed: u64) -> BlockMaskKind {
        match *self {
            Pattern::Random => BlockMaskKind::Random { density, seed },
            Pattern::Butterfly => BlockMaskKind::Butterfly,
            Pattern::Local { window, globals } => BlockMaskKind::LocalPlusGlobal { window, globals },
        }
    }
}

impl FromStr for Pattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "random" => Ok(Pattern::Random),
            "butterfly" => Ok(Pattern::Butterfly),
            other => {
                let bad = || format!("unknown pattern `{other}` (expected random, butterfly, or local:<w>+<g>)");
                let rest = other.strip_prefix("local:").ok_or_else(bad)?;
                let (w, g) = rest.split_once('+').ok_or_else(bad)?;
                Ok(Pattern::Local {
                    window: w.trim().parse().map_err(|_| bad())?,
                    globals: g.trim().parse().map_err(|_| bad())?,
                })
            }
        }
    }
}

/// Fully resolved settings after merging flags, config file and defaults.
#[derive(Debug, Clone)]
pub struct Settings {
    pub n: Vec<usize>,
    pub d: Vec<usize>,
    pub m: Option<Vec<usize>>,
    pub bc: Vec<Option<usize>>,
    pub br: Vec<Option<usize>>,
    pub tau: Option<f64>,
    pub mask: MaskSpec,
    pub p_drop: f64,
    pub seed: u64,
    pub sparsity: Vec<f64>,
    pub pattern: Pattern,
    pub repeats: usize,
    pub out: Option<PathBuf>,
    /// `None` when `--algo` was not given.
    pub algos: Option<Vec<Algo>>,
    pub oracle_cap: usize,
    pub fd_cap: usize,
    pub h: f64,
    pub zero_do: bool,
    pub element_bytes: u64,
    pub multiplier: u64,
}

/// Default sizes differ between subcommands.
#[derive(Debug, Clone, Copy)]
pub struct Defaults {
    pub n: usize,
    pub d: usize,
}

fn parse_list<T: FromStr>(flag: &str, raw: &str) -> Result<Vec<T>, String> {
    let items: Vec<&str> = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(format!("--{flag} needs at least one value"));
    }
    items
        .into_iter()
        .map(|s| s.parse::<T>().map_err(|_| format!("--{flag}: cannot parse `{s}`")))
        .collect()
}

fn positive(flag: &str, xs: &[usize]) -> Result<(), String> {
    if let Some(bad) = xs.iter().find(|&&x| x == 0) {
        return Err(format!("--{flag} must be at least 1 (got {bad})"));
    }
    Ok(())
}

impl Settings {
    pub fn resolve(common: CommonArgs, extra: GradcheckArgs, defaults: Defaults) -> Result<Settings, String> {
        let (common, extra) = match common.config.clone() {
            Some(path) => {
                let (fc, fe) = read_config(&path)?;
                (common.or(fc), extra.or(fe))
            }
            None => (common, extra),
        };

        let n = match &common.n {
            Some(raw) => parse_list("n", raw)?,
            None => vec![defaults.n],
        };
        let d = match &common.d {
            Some(raw) => parse_list("d", raw)?,
            None => vec![defaults.d],
        };
        positive("n", &n)?;
        positive("d", &d)?;
        let m = common.m.as_deref().map(|raw| parse_list("m", raw)).transpose()?;
        if let Some(m) = &m {
            positive("m", m)?;
        }
        let opt_list = |flag: &str, raw: &Option<String>| -> Result<Vec<Option<usize>>, String> {
            match raw {
                Some(raw) => {
                    let xs: Vec<usize> = parse_list(flag, raw)?;
                    positive(flag, &xs)?;
                    Ok(xs.into_iter().map(Some).collect())
                }
                None => Ok(vec![None]),
            }
        };
        let bc = opt_list("bc", &common.bc)?;
        let br = opt_list("br", &common.br)?;

        let mask = match &common.mask {
            Some(raw) => raw.parse::<MaskSpec>().map_err(|e| e.to_string())?,
            None => MaskSpec::None,
        };
        let p_drop = common.p_drop.unwrap_or(0.0);
        if !(0.0..1.0).contains(&p_drop) {
            return Err(format!("--p-drop {p_drop} outside the valid range [0,1)"));
        }
        if let Some(tau) = common.tau {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(format!("--tau must be positive and finite (got {tau})"));
            }
        }
        let sparsity = match &common.sparsity {
            Some(raw) => parse_list("sparsity", raw)?,
            None => vec![1.0],
        };
        if let Some(bad) = sparsity.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(format!("--sparsity {bad} outside [0,1]"));
        }
        let pattern = match &common.pattern {
            Some(raw) => raw.parse()?,
            None => Pattern::Random,
        };
        let repeats = common.repeats.unwrap_or(3);
        if repeats == 0 {
            return Err("--repeats must be at least 1".into());
        }
        let algos = match &common.algo {
            Some(raw) => Some(
                parse_list::<String>("algo", raw)?
                    .iter()
                    .map(|s| s.parse::<Algo>().map_err(|e| e.to_string()))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            None => None,
        };
        let h = extra.h.unwrap_or(1e-5);
        if !(h > 0.0 && h.is_finite()) {
            return Err(format!("--h must be positive (got {h})"));
        }
        let element_bytes = common.element_bytes.unwrap_or(2);
        let multiplier = common.multiplier.unwrap_or(1);
        if element_bytes == 0 || multiplier == 0 {
            return Err("--element-bytes and --multiplier must be at least 1".into());
        }

        Ok(Settings {
            n,
            d,
            m,
            bc,
            br,
            tau: common.tau,
            mask,
            p_drop,
            seed: common.seed.unwrap_or(0),
            sparsity,
            pattern,
            repeats,
            out: common.out,
            algos,
            oracle_cap: common.oracle_cap.unwrap_or(4096),
            fd_cap: extra.fd_cap.unwrap_or(512),
            h,
            zero_do: extra.zero_do,
            element_bytes,
            multiplier,
        })
    }

    pub fn config(&self, n: usize, d: usize) -> AttnConfig {
        let mut cfg = AttnConfig::new(n, d).with_mask(self.mask.clone()).with_dropout(self.p_drop, self.seed);
        if let Some(tau) = self.tau {
            cfg = cfg.with_tau(tau);
        }
        cfg
    }

    /// Capacities to run for `(n, d)`; without `--m`, the smallest feasible M >= n*d.
    pub fn capacities(&self, n: usize, d: usize, ov: TileOverrides) -> Vec<usize> {
        match &self.m {
            Some(m) => m.clone(),
            None => vec![next_feasible_capacity(n, d, ov, (n * d).max(4 * d))],
        }
    }

    pub fn overrides(&self) -> Vec<TileOverrides> {
        let mut out = Vec::new();
        for &bc in &self.bc {
            for &br in &self.br {
                out.push(TileOverrides { br, bc });
            }
        }
        out
    }
}
