//! Merges prior `verify` and `simulate` outputs into per-criterion verdicts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use hmlab_core::{Criterion, Suite};
use serde::{Deserialize, Serialize};

use crate::commands::{SimulateOutput, VerifyOutput, REPORT_FILE};
use crate::config::CommandName;
use crate::output::write_json;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsolidatedReport {
    pub command: CommandName,
    pub inputs: Vec<String>,
    /// `false` when any contributing check failed, `true` when every suite
    /// of the criterion ran and passed, `null` otherwise.
    pub criteria: BTreeMap<String, Option<bool>>,
    /// Suites of each criterion absent from the inputs.
    pub missing: BTreeMap<String, Vec<String>>,
    pub suites: BTreeMap<String, bool>,
    pub simulations: BTreeMap<String, bool>,
    pub passed: bool,
}

/// Name of the sensitivity check recorded for `suite`.
fn fault_check(suite: Suite) -> String {
    format!("{}_fault_residual", suite.name())
}

#[derive(Deserialize)]
struct Tag {
    command: Option<CommandName>,
}

pub fn merge(dir: &Path) -> Result<ConsolidatedReport> {
    if !dir.is_dir() {
        bail!("output directory {} does not exist", dir.display());
    }
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != REPORT_FILE))
        .collect();
    paths.sort();

    let mut inputs = Vec::new();
    let mut suites: BTreeMap<Suite, bool> = BTreeMap::new();
    let mut faults: BTreeMap<String, bool> = BTreeMap::new();
    let mut simulations = BTreeMap::new();
    for p in paths {
        let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        let Ok(tag) = serde_json::from_str::<Tag>(&text) else { continue };
        match tag.command {
            Some(CommandName::Verify) => {
                let v: VerifyOutput = serde_json::from_str(&text).with_context(|| format!("parsing {name}"))?;
                for s in &v.suites {
                    let e = suites.entry(s.suite).or_insert(true);
                    *e &= s.passed;
                }
                for c in v.sensitivity.iter().flatten() {
                    let e = faults.entry(c.name.clone()).or_insert(true);
                    *e &= c.passed;
                }
            }
            Some(CommandName::Simulate) => {
                let s: SimulateOutput = serde_json::from_str(&text).with_context(|| format!("parsing {name}"))?;
                simulations.insert(name.clone(), s.passed);
            }
            _ => continue,
        }
        inputs.push(name);
    }
    if inputs.is_empty() {
        bail!("no verify or simulate outputs found in {}", dir.display());
    }

    let mut criteria = BTreeMap::new();
    let mut missing = BTreeMap::new();
    for c in Criterion::ALL {
        let verdict = if c == Criterion::Sensitivity {
            let absent: Vec<String> = Suite::ALL
                .iter()
                .filter(|s| !faults.contains_key(&fault_check(**s)))
                .map(|s| s.to_string())
                .collect();
            let v = if faults.values().any(|&b| !b) {
                Some(false)
            } else if absent.is_empty() {
                Some(true)
            } else {
                None
            };
            if !absent.is_empty() {
                missing.insert(c.name().to_string(), absent);
            }
            v
        } else {
            let absent: Vec<String> = c.suites().iter().filter(|s| !suites.contains_key(s)).map(|s| s.to_string()).collect();
            let any_failed = c.suites().iter().any(|s| suites.get(s) == Some(&false));
            let v = if any_failed {
                Some(false)
            } else if absent.is_empty() {
                Some(true)
            } else {
                None
            };
            if !absent.is_empty() {
                missing.insert(c.name().to_string(), absent);
            }
            v
        };
        criteria.insert(c.name().to_string(), verdict);
    }
    let passed = criteria.values().all(|v| v.unwrap_or(true)) && simulations.values().all(|&b| b)
        && suites.values().all(|&b| b)
        && faults.values().all(|&b| b);
    Ok(ConsolidatedReport {
        command: CommandName::Report,
        inputs,
        criteria,
        missing,
        suites: suites.into_iter().map(|(s, b)| (s.to_string(), b)).collect(),
        simulations,
        passed,
    })
}

pub fn report(dir: &Path) -> Result<bool> {
    let r = merge(dir)?;
    for (name, v) in &r.criteria {
        let tag = match v {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "----",
        };
        println!("{tag} {name}");
    }
    for (name, ok) in &r.simulations {
        println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
    }
    write_json(&dir.join(REPORT_FILE), &r)?;
    Ok(r.passed)
}
