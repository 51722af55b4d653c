use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use charmt_core::{ModelConfig, ModelKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Word,
    Char,
}

impl From<Mode> for ModelKind {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Word => ModelKind::Word,
            Mode::Char => ModelKind::Char,
        }
    }
}

/// Everything a training run needs. Relative paths are resolved against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub model: ModelConfig,
    pub train_source: PathBuf,
    pub train_target: PathBuf,
    pub dev_source: PathBuf,
    pub dev_target: PathBuf,
    /// One line per training pair of `source-target` index links.
    #[serde(default)]
    pub alignments: Option<PathBuf>,
    /// Where `build-vocab` writes, and `train` reads, vocabulary files.
    #[serde(default)]
    pub vocab_dir: Option<PathBuf>,
    pub checkpoint_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.train_source);
        fix(&mut self.train_target);
        fix(&mut self.dev_source);
        fix(&mut self.dev_target);
        fix(&mut self.checkpoint_dir);
        if let Some(p) = &mut self.alignments {
            fix(p);
        }
        if let Some(p) = &mut self.vocab_dir {
            fix(p);
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.model.validate()?;
        let mut inputs = vec![
            ("train_source", &self.train_source),
            ("train_target", &self.train_target),
            ("dev_source", &self.dev_source),
            ("dev_target", &self.dev_target),
        ];
        if let Some(p) = &self.alignments {
            inputs.push(("alignments", p));
        }
        for (name, p) in inputs {
            if !p.is_file() {
                bail!("{name}: {} does not exist", p.display());
            }
        }
        Ok(())
    }
}
