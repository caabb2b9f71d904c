//! Prompt templates. Defaults are compiled in; any of them can be
//! overridden by a same-named `.txt` file in a template directory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub decompose: String,
    pub repair: String,
    pub judge: String,
    pub judge_retry: String,
    pub vlm_attribute: String,
    pub vlm_spatial: String,
    pub spatial_plan: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            decompose: include_str!("../prompts/decompose.txt").into(),
            repair: include_str!("../prompts/repair.txt").into(),
            judge: include_str!("../prompts/judge.txt").into(),
            judge_retry: include_str!("../prompts/judge_retry.txt").into(),
            vlm_attribute: include_str!("../prompts/vlm_attribute.txt").trim_end().into(),
            vlm_spatial: include_str!("../prompts/vlm_spatial.txt").trim_end().into(),
            spatial_plan: include_str!("../prompts/spatial_plan.txt").into(),
        }
    }
}

impl PromptSet {
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut set = Self::default();
        let slots: [(&str, &mut String); 7] = [
            ("decompose", &mut set.decompose),
            ("repair", &mut set.repair),
            ("judge", &mut set.judge),
            ("judge_retry", &mut set.judge_retry),
            ("vlm_attribute", &mut set.vlm_attribute),
            ("vlm_spatial", &mut set.vlm_spatial),
            ("spatial_plan", &mut set.spatial_plan),
        ];
        for (name, slot) in slots {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = std::fs::read_to_string(&path)?;
            }
        }
        if count_slots(&set.decompose, "description") != 1 {
            return Err(Error::InvalidConfig(
                "decompose template must contain exactly one {description} slot".into(),
            ));
        }
        Ok(set)
    }
}

pub fn count_slots(template: &str, name: &str) -> usize {
    template.matches(&format!("{{{name}}}")).count()
}

/// Substitutes `{key}` slots.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

/// Value of the first `NAME: value` line in a prompt.
pub fn field<'a>(prompt: &'a str, name: &str) -> Option<&'a str> {
    let prefix = format!("{name}:");
    prompt
        .lines()
        .find_map(|l| l.trim_start().strip_prefix(prefix.as_str()))
        .map(str::trim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_have_slots() {
        let p = PromptSet::default();
        assert_eq!(count_slots(&p.decompose, "description"), 1);
        let q = render(&p.vlm_attribute, &[("category", "color"), ("object", "deer")]);
        assert_eq!(q, "What is the color of the deer?");
        assert_eq!(field(&render(&p.judge, &[("target", "x"), ("answer", "y")]), "TARGET"), Some("x"));
    }

    #[test]
    fn override_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("judge.txt"), "TASK: judge\nT={target}").unwrap();
        let p = PromptSet::load_dir(dir.path()).unwrap();
        assert_eq!(p.judge, "TASK: judge\nT={target}");
        std::fs::write(dir.path().join("decompose.txt"), "no slot").unwrap();
        assert!(PromptSet::load_dir(dir.path()).is_err());
    }
}
