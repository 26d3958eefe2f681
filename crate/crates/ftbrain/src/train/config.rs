//! Training knobs and the binary task definitions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataio::Label;
use crate::error::{Error, Result};
use crate::model::FreezeGroup;

/// How the per-subject slice subset is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Top slices by histogram entropy.
    Entropy,
    /// Seeded uniform draw without replacement.
    Random,
}

impl SelectionMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(SelectionMode::Entropy),
            "random" => Ok(SelectionMode::Random),
            other => Err(Error::Config(format!("unknown selection mode {other:?}, expected entropy|random"))),
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMode::Entropy => "entropy",
            SelectionMode::Random => "random",
        })
    }
}

/// The three binary problems. The first-named class is the positive one:
/// AD against anything, otherwise MCI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "ad-nc")]
    AdVsNc,
    #[serde(rename = "ad-mci")]
    AdVsMci,
    #[serde(rename = "mci-nc")]
    MciVsNc,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::AdVsNc, Task::AdVsMci, Task::MciVsNc];

    /// (positive, negative) class labels.
    pub fn classes(self) -> (Label, Label) {
        match self {
            Task::AdVsNc => (Label::Ad, Label::Nc),
            Task::AdVsMci => (Label::Ad, Label::Mci),
            Task::MciVsNc => (Label::Mci, Label::Nc),
        }
    }

    pub fn positive(self) -> Label {
        self.classes().0
    }

    /// 1 for the positive class, 0 for the negative, None for the third.
    pub fn target(self, label: Label) -> Option<u8> {
        let (pos, neg) = self.classes();
        if label == pos {
            Some(1)
        } else if label == neg {
            Some(0)
        } else {
            None
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ad-nc" => Ok(Task::AdVsNc),
            "ad-mci" => Ok(Task::AdVsMci),
            "mci-nc" => Ok(Task::MciVsNc),
            other => Err(Error::Config(format!(
                "unknown task {other:?}, expected ad-nc|ad-mci|mci-nc"
            ))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::AdVsNc => "ad-nc",
            Task::AdVsMci => "ad-mci",
            Task::MciVsNc => "mci-nc",
        })
    }
}

/// Everything one training run depends on besides the data and the model
/// architecture. Serialized verbatim into run summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub freeze_group: FreezeGroup,
    /// Slices kept per subject; one of 8, 16, 32.
    pub images_per_subject: usize,
    pub selection_mode: SelectionMode,
    pub k_folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 25,
            lr: 1e-6,
            seed: 0,
            freeze_group: FreezeGroup::All,
            images_per_subject: 8,
            selection_mode: SelectionMode::Entropy,
            k_folds: 5,
        }
    }
}

impl TrainConfig {
    /// Settings sized for the small preset: fewer epochs, a learning rate
    /// that converges within them.
    pub fn desk() -> Self {
        TrainConfig { epochs: 10, lr: 1e-4, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.k_folds < 2 {
            return Err(Error::Config(format!("fold count {} must be at least 2", self.k_folds)));
        }
        if !matches!(self.images_per_subject, 8 | 16 | 32) {
            return Err(Error::Config(format!(
                "images per subject must be 8, 16 or 32, got {}",
                self.images_per_subject
            )));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config(format!("learning rate {} must be positive and finite", self.lr)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_reference_settings() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.batch_size, 25);
        assert_eq!(cfg.lr, 1e-6);
        assert_eq!(cfg.k_folds, 5);
        assert_eq!(cfg.images_per_subject, 8);
        assert_eq!(cfg.selection_mode, SelectionMode::Entropy);
        assert_eq!(cfg.freeze_group, FreezeGroup::All);
        cfg.validate().unwrap();
        TrainConfig::desk().validate().unwrap();
    }

    #[test]
    fn validate_rejects_out_of_range_settings() {
        for bad in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { k_folds: 1, ..TrainConfig::default() },
            TrainConfig { images_per_subject: 7, ..TrainConfig::default() },
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
            TrainConfig { lr: -1e-4, ..TrainConfig::default() },
            TrainConfig { lr: f64::NAN, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?} should fail validation");
        }
    }

    #[test]
    fn task_positive_class_rule() {
        assert_eq!(Task::AdVsNc.target(Label::Ad), Some(1));
        assert_eq!(Task::AdVsNc.target(Label::Nc), Some(0));
        assert_eq!(Task::AdVsNc.target(Label::Mci), None);
        assert_eq!(Task::AdVsMci.target(Label::Ad), Some(1));
        assert_eq!(Task::AdVsMci.target(Label::Mci), Some(0));
        assert_eq!(Task::MciVsNc.target(Label::Mci), Some(1));
        assert_eq!(Task::MciVsNc.target(Label::Nc), Some(0));
        assert_eq!(Task::MciVsNc.positive(), Label::Mci);
    }

    #[test]
    fn enums_round_trip_through_text_and_json() {
        for task in Task::ALL {
            assert_eq!(Task::parse(&task.to_string()).unwrap(), task);
            let json = serde_json::to_string(&task).unwrap();
            assert_eq!(serde_json::from_str::<Task>(&json).unwrap(), task);
        }
        for mode in [SelectionMode::Entropy, SelectionMode::Random] {
            assert_eq!(SelectionMode::parse(&mode.to_string()).unwrap(), mode);
        }
        assert_eq!(serde_json::to_string(&SelectionMode::Random).unwrap(), "\"random\"");
        assert_eq!(serde_json::to_string(&Task::AdVsNc).unwrap(), "\"ad-nc\"");
        assert!(Task::parse("advsnc").is_err());
        assert!(SelectionMode::parse("Entropy").is_err());

        let cfg = TrainConfig::desk();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), cfg);
    }
}
