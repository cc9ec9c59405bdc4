use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Difficulty, PromptError, QuestionDraft, TaskKind};
use crate::text::Lang;

/// Example questions per task, each labelled with a difficulty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExemplarBank {
    entries: BTreeMap<TaskKind, Vec<QuestionDraft>>,
}

impl ExemplarBank {
    pub fn builtin(lang: Lang) -> Self {
        let raw = match lang {
            Lang::En => include_str!("../../data/exemplars_en.json"),
            Lang::Zh => include_str!("../../data/exemplars_zh.json"),
        };
        Self::from_json(raw).expect("bundled exemplar bank is valid")
    }

    pub fn from_json(raw: &str) -> Result<Self, PromptError> {
        let entries: BTreeMap<String, Vec<QuestionDraft>> =
            serde_json::from_str(raw).map_err(|e| PromptError::InvalidBank(e.to_string()))?;
        let mut bank = BTreeMap::new();
        for (name, drafts) in entries {
            let task: TaskKind = name.parse().map_err(PromptError::InvalidBank)?;
            bank.insert(task, drafts);
        }
        let bank = Self { entries: bank };
        bank.check_coverage()?;
        Ok(bank)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let raw = std::fs::read_to_string(path).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&raw)
    }

    /// Every task needs at least three exemplars spanning all difficulties.
    pub fn check_coverage(&self) -> Result<(), PromptError> {
        for task in TaskKind::ALL {
            let drafts = self.entries.get(&task).map(Vec::as_slice).unwrap_or(&[]);
            if drafts.len() < 3 {
                return Err(PromptError::InvalidBank(format!(
                    "task {task} has {} exemplars, need at least 3",
                    drafts.len()
                )));
            }
            for d in Difficulty::ALL {
                if !drafts.iter().any(|q| q.difficulty == d) {
                    return Err(PromptError::InvalidBank(format!(
                        "task {task} has no {d} exemplar"
                    )));
                }
            }
            if let Some(q) = drafts.iter().find(|q| q.text.trim().is_empty()) {
                return Err(PromptError::InvalidBank(format!(
                    "task {task} has an empty {} exemplar",
                    q.difficulty
                )));
            }
        }
        Ok(())
    }

    pub fn exemplars(&self, task: TaskKind) -> &[QuestionDraft] {
        self.entries.get(&task).map(Vec::as_slice).unwrap_or(&[])
    }

    /// One exemplar per difficulty (Easy, Medium, Hard order), each drawn
    /// uniformly from the task's pool for that level.
    pub fn select<R: Rng + ?Sized>(&self, task: TaskKind, rng: &mut R) -> Vec<QuestionDraft> {
        let pool = self.exemplars(task);
        Difficulty::ALL
            .into_iter()
            .filter_map(|d| {
                let level: Vec<&QuestionDraft> =
                    pool.iter().filter(|q| q.difficulty == d).collect();
                if level.is_empty() {
                    None
                } else {
                    Some(level[rng.random_range(0..level.len())].clone())
                }
            })
            .collect()
    }
}

/// Banks for both languages; a missing zh bank falls back to en.
#[derive(Debug, Clone)]
pub struct ExemplarBanks {
    pub en: ExemplarBank,
    pub zh: ExemplarBank,
}

impl Default for ExemplarBanks {
    fn default() -> Self {
        Self {
            en: ExemplarBank::builtin(Lang::En),
            zh: ExemplarBank::builtin(Lang::Zh),
        }
    }
}

impl ExemplarBanks {
    pub fn for_lang(&self, lang: Lang) -> &ExemplarBank {
        match lang {
            Lang::En => &self.en,
            Lang::Zh => &self.zh,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bundled_banks_cover_every_task() {
        for lang in Lang::ALL {
            ExemplarBank::builtin(lang).check_coverage().unwrap();
        }
    }

    #[test]
    fn selection_is_one_per_difficulty_and_seeded() {
        let bank = ExemplarBank::builtin(Lang::En);
        let a = bank.select(TaskKind::Creation, &mut ChaCha8Rng::seed_from_u64(9));
        let b = bank.select(TaskKind::Creation, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let levels: Vec<_> = a.iter().map(|q| q.difficulty).collect();
        assert_eq!(levels, Difficulty::ALL.to_vec());
    }

    #[test]
    fn coverage_failure_names_the_gap() {
        let raw = r#"{"role_playing": [{"difficulty": "easy", "text": "a"}]}"#;
        let err = ExemplarBank::from_json(raw).unwrap_err();
        assert!(matches!(err, PromptError::InvalidBank(m) if m.contains("role_playing")));
    }

    #[test]
    fn unknown_task_name_is_rejected() {
        let err = ExemplarBank::from_json(r#"{"juggling": []}"#).unwrap_err();
        assert!(matches!(err, PromptError::InvalidBank(m) if m.contains("juggling")));
    }
}
