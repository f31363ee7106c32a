//! Shipped prompt templates and loading of operator overrides.

use std::fs;
use std::io;
use std::path::Path;

use raicl_core::{PromptConfig, Tier};

/// Bump whenever a shipped template changes; recorded in every report.
pub const TEMPLATE_VERSION: &str = "raicl-templates/1";
pub const DEFAULT_CLASS_NAMES: [&str; 2] = ["NON-SEIZURE", "SEIZURE"];

const TASK: &str = include_str!("../templates/task_description.txt");
const CRITERIA: &str = include_str!("../templates/diagnostic_criteria.txt");
const PROTOCOL: &str = include_str!("../templates/analysis_protocol.txt");
const CONSTRAINTS: &str = include_str!("../templates/output_constraints.txt");

pub const FILE_NAMES: [&str; 4] = [
    "task_description.txt",
    "diagnostic_criteria.txt",
    "analysis_protocol.txt",
    "output_constraints.txt",
];

pub fn default_prompt_config(tier: Tier, class_names: &[String]) -> PromptConfig {
    PromptConfig {
        tier,
        task_description: TASK.trim_end().to_owned(),
        diagnostic_criteria: CRITERIA.trim_end().to_owned(),
        analysis_protocol: PROTOCOL.trim_end().to_owned(),
        output_constraints: CONSTRAINTS.trim_end().to_owned(),
        class_names: class_names.to_vec(),
    }
}

/// Shipped templates with any of the four files present in `dir` replacing
/// the corresponding part.
pub fn load_prompt_config(dir: Option<&Path>, tier: Tier, class_names: &[String]) -> io::Result<PromptConfig> {
    let mut cfg = default_prompt_config(tier, class_names);
    let Some(dir) = dir else { return Ok(cfg) };
    let slots = [
        &mut cfg.task_description,
        &mut cfg.diagnostic_criteria,
        &mut cfg.analysis_protocol,
        &mut cfg.output_constraints,
    ];
    for (slot, name) in slots.into_iter().zip(FILE_NAMES) {
        match fs::read_to_string(dir.join(name)) {
            Ok(text) => *slot = text.trim_end().to_owned(),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_replaces_only_present_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("output_constraints.txt"), "Be brief.\n").unwrap();
        let names: Vec<String> = DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect();
        let c = load_prompt_config(Some(dir.path()), Tier::Base, &names).unwrap();
        assert_eq!(c.output_constraints, "Be brief.");
        assert_eq!(c.task_description, TASK.trim_end());
        assert!(c.task_description.contains("{class_names}"));
        c.normalized().unwrap();
    }
}
