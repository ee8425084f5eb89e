use std::path::Path;

use serde::{Deserialize, Serialize};

use super::io::read_to_string;
use crate::began::BeganConfig;
use crate::error::{Error, Result};
use crate::inversion::InversionConfig;
use crate::lgen::LGenConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n: 2000,
            image_size: 32,
            seed: 0,
        }
    }
}

/// Top-level run configuration; every section is optional and unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub began: BeganConfig,
    pub inversion: InversionConfig,
    pub lgen: LGenConfig,
    pub corpus: CorpusConfig,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.began.validate()?;
        self.inversion.validate()?;
        self.lgen.validate()?;
        if self.corpus.image_size != self.began.image_size {
            return Err(Error::Config(format!(
                "corpus image_size {} differs from began image_size {}",
                self.corpus.image_size, self.began.image_size
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_unknown_keys() {
        let cfg =
            PipelineConfig::from_json(r#"{"began": {"total_steps": 10}, "lgen": {"epochs": 5}}"#)
                .unwrap();
        assert_eq!(cfg.began.total_steps, 10);
        assert_eq!(cfg.lgen.epochs, 5);
        assert_eq!(cfg.lgen.batch_size, 16);
        assert_eq!(cfg.inversion.max_steps, 500);
        for bad in [
            r#"{"extra": {}}"#,
            r#"{"lgen": {"epochz": 1}}"#,
            r#"{"inversion": {"max_steps": 0}}"#,
        ] {
            let e = PipelineConfig::from_json(bad).unwrap_err();
            assert_eq!(e.exit_code(), 1, "{bad}");
        }
        let text = serde_json::to_string(&PipelineConfig::default()).unwrap();
        assert_eq!(
            PipelineConfig::from_json(&text).unwrap(),
            PipelineConfig::default()
        );
    }
}
