//! Structured command reports: one record, two encodings (human text and
//! machine JSON). The JSON round-trips losslessly and its bytes are stable
//! for a fixed seed because every map is ordered.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub command: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub results: BTreeMap<String, f64>,
    pub findings: Vec<String>,
}

impl ReportRecord {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            seed,
            inputs: BTreeMap::new(),
            results: BTreeMap::new(),
            findings: Vec::new(),
        }
    }

    pub fn input(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.inputs.insert(key.to_string(), value.to_string());
        self
    }

    pub fn result(&mut self, key: &str, value: f64) -> &mut Self {
        self.results.insert(key.to_string(), value);
        self
    }

    pub fn finding(&mut self, text: impl Into<String>) -> &mut Self {
        self.findings.push(text.into());
        self
    }

    pub fn findings(&mut self, items: &[String]) -> &mut Self {
        self.findings.extend_from_slice(items);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

impl fmt::Display for ReportRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "command: {}", self.command)?;
        writeln!(f, "seed: {}", self.seed)?;
        if !self.inputs.is_empty() {
            writeln!(f, "inputs:")?;
            for (k, v) in &self.inputs {
                writeln!(f, "  {k}: {v}")?;
            }
        }
        if !self.results.is_empty() {
            writeln!(f, "results:")?;
            for (k, v) in &self.results {
                writeln!(f, "  {k}: {v}")?;
            }
        }
        if !self.findings.is_empty() {
            writeln!(f, "findings:")?;
            for item in &self.findings {
                writeln!(f, "  - {item}")?;
            }
        }
        Ok(())
    }
}
