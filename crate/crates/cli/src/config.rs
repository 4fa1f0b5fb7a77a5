//! Run configuration: command-line flags over an optional TOML file over
//! built-in defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use covrf::{ForestParams, NodesizeChoice, SplitSearch};
use serde::Deserialize;

use crate::failure::{Failure, Kind};

/// `auto`, `exhaustive` or a positive cut count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NsplitArg(pub SplitSearch);

impl FromStr for NsplitArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(NsplitArg(SplitSearch::Auto)),
            "exhaustive" => Ok(NsplitArg(SplitSearch::Exhaustive)),
            _ => match s.parse::<usize>() {
                Ok(k) if k > 0 => Ok(NsplitArg(SplitSearch::Random(k))),
                _ => Err(format!(
                    "expected 'auto', 'exhaustive' or a positive integer, got '{s}'"
                )),
            },
        }
    }
}

/// `tune` or a positive nodesize.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodesizeArg(pub NodesizeChoice);

impl FromStr for NodesizeArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tune" => Ok(NodesizeArg(NodesizeChoice::Tune)),
            _ => match s.parse::<usize>() {
                Ok(k) if k > 0 => Ok(NodesizeArg(NodesizeChoice::Fixed(k))),
                _ => Err(format!("expected 'tune' or a positive integer, got '{s}'")),
            },
        }
    }
}

/// Either a number or one of the keyword spellings, as written in TOML.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum NumOrWord {
    Num(usize),
    Word(String),
}

impl NumOrWord {
    fn text(&self) -> String {
        match self {
            NumOrWord::Num(n) => n.to_string(),
            NumOrWord::Word(w) => w.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    seed: Option<u64>,
    threads: Option<usize>,
    ntree: Option<usize>,
    mtry: Option<usize>,
    nsplit: Option<NumOrWord>,
    nodesize: Option<NumOrWord>,
    sampfrac: Option<f64>,
    min_child: Option<usize>,
    permutations: Option<usize>,
    alpha: Option<f64>,
    reps: Option<usize>,
    out_dir: Option<PathBuf>,
    h0_sigma: Option<Vec<Vec<f64>>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::new(Kind::Io, format!("{}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Failure::new(Kind::Params, format!("{}: {e}", path.display())))
    }
}

/// Forest knobs as given on the command line.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct ForestArgs {
    /// Number of trees [default: 1000]
    #[arg(long)]
    pub ntree: Option<usize>,
    /// Covariates tried per split [default: ceil(p/3)]
    #[arg(long)]
    pub mtry: Option<usize>,
    /// Random cuts per covariate: auto, exhaustive or a count [default: auto]
    #[arg(long)]
    pub nsplit: Option<NsplitArg>,
    /// Target terminal-node size, or `tune` [default: tune]
    #[arg(long)]
    pub nodesize: Option<NodesizeArg>,
    /// Subsample fraction per tree [default: 0.632]
    #[arg(long)]
    pub sampfrac: Option<f64>,
    /// Minimum rows per child [default: 2]
    #[arg(long)]
    pub min_child: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub params: ForestParams,
    pub nodesize: NodesizeChoice,
    pub permutations: usize,
    pub alpha: f64,
    pub reps: usize,
    pub out_dir: Option<PathBuf>,
    pub h0_sigma: Option<Vec<Vec<f64>>>,
}

pub struct Overrides<'a> {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub forest: Option<&'a ForestArgs>,
    pub permutations: Option<usize>,
    pub alpha: Option<f64>,
    pub reps: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

fn parse_word<T: FromStr<Err = String>>(key: &str, v: &NumOrWord) -> Result<T, Failure> {
    v.text()
        .parse()
        .map_err(|e| Failure::new(Kind::Params, format!("config '{key}': {e}")))
}

impl RunConfig {
    pub fn resolve(file: &FileConfig, o: Overrides<'_>) -> Result<Self, Failure> {
        let empty = ForestArgs::default();
        let f = o.forest.unwrap_or(&empty);
        let defaults = ForestParams::default();
        let nsplit = match (f.nsplit, &file.nsplit) {
            (Some(a), _) => a.0,
            (None, Some(v)) => parse_word::<NsplitArg>("nsplit", v)?.0,
            (None, None) => defaults.nsplit,
        };
        let nodesize = match (f.nodesize, &file.nodesize) {
            (Some(a), _) => a.0,
            (None, Some(v)) => parse_word::<NodesizeArg>("nodesize", v)?.0,
            (None, None) => NodesizeChoice::Tune,
        };
        let seed = o.seed.or(file.seed).unwrap_or(0);
        let params = ForestParams {
            ntree: f.ntree.or(file.ntree).unwrap_or(defaults.ntree),
            mtry: f.mtry.or(file.mtry),
            nsplit,
            nodesize: match nodesize {
                NodesizeChoice::Fixed(s) => s,
                NodesizeChoice::Tune => defaults.nodesize,
            },
            sampfrac: f.sampfrac.or(file.sampfrac).unwrap_or(defaults.sampfrac),
            min_child: f.min_child.or(file.min_child).unwrap_or(defaults.min_child),
            seed,
        };
        let cfg = RunConfig {
            seed,
            threads: o.threads.or(file.threads),
            params,
            nodesize,
            permutations: o.permutations.or(file.permutations).unwrap_or(500),
            alpha: o.alpha.or(file.alpha).unwrap_or(0.05),
            reps: o.reps.or(file.reps).unwrap_or(100),
            out_dir: o.out_dir.or_else(|| file.out_dir.clone()),
            h0_sigma: file.h0_sigma.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), Failure> {
        let bad = |m: String| Err(Failure::new(Kind::Params, m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.params.ntree == 0 {
            return bad("ntree must be positive".into());
        }
        if !(self.params.sampfrac > 0.0 && self.params.sampfrac <= 1.0) {
            return bad(format!(
                "sampfrac must lie in (0, 1], got {}",
                self.params.sampfrac
            ));
        }
        if self.params.min_child < 2 {
            return bad("min_child must be at least 2".into());
        }
        if self.params.mtry == Some(0) {
            return bad("mtry must be positive".into());
        }
        if self.permutations == 0 {
            return bad("permutations must be positive".into());
        }
        if self.reps == 0 {
            return bad("reps must be positive".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        Ok(())
    }
}
