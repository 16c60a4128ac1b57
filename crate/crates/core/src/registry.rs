//! Server-side agent registry with deterministic lexical discovery.
//!
//! Matching is TF-IDF cosine over lowercased alphanumeric tokens drawn from
//! an agent's name, type, and description. No stemming, no stopwords, no
//! model: the same registry and query always produce the same ranked list.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A registered agent's public card: the searchable unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentProfile {
    pub agent_name: String,
    pub agent_type: String,
    pub agent_description: String,
}

impl AgentProfile {
    pub fn new(
        name: impl Into<String>,
        agent_type: impl Into<String>,
        description: impl Into<String>,
    ) -> Self {
        AgentProfile {
            agent_name: name.into(),
            agent_type: agent_type.into(),
            agent_description: description.into(),
        }
    }
}

/// Stored registry entry: profile plus its precomputed token bag.
#[derive(Debug, Clone)]
pub struct RegistryRecord {
    pub profile: AgentProfile,
    pub token_counts: BTreeMap<String, u32>,
    pub registered_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchQuery {
    /// Desired characteristics, each matched independently and summed.
    pub characteristics: Vec<String>,
    pub limit: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("agent {0} is already registered")]
    DuplicateName(String),
    #[error("agent {0} is not registered")]
    NotFound(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

/// Lowercase, split on non-alphanumeric, drop empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

fn token_bag(text: &str) -> BTreeMap<String, u32> {
    let mut bag = BTreeMap::new();
    for tok in tokenize(text) {
        *bag.entry(tok).or_insert(0) += 1;
    }
    bag
}

/// Registration and deregistration events, persisted one JSON line each so
/// that registry state is a pure fold over the log.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RegistryEvent {
    Register { profile: AgentProfile },
    Deregister { agent_name: String },
}

/// In-memory registry, optionally mirrored to an append-only event log.
#[derive(Debug, Default)]
pub struct Registry {
    records: BTreeMap<String, RegistryRecord>,
    /// Number of records containing each token; kept in sync so idf is a
    /// lookup instead of a scan.
    doc_freq: BTreeMap<String, u32>,
    next_registration: u64,
    log: Option<(PathBuf, File)>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    /// Opens (or creates) a registry backed by `path`, replaying any events
    /// already in the log. Replay reproduces identical search results.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut registry = Registry::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                if line.is_empty() {
                    continue;
                }
                let event: RegistryEvent = serde_json::from_str(&line).map_err(|e| {
                    std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string())
                })?;
                registry.apply(event).map_err(|e| {
                    std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string())
                })?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        registry.log = Some((path.to_path_buf(), file));
        Ok(registry)
    }

    fn apply(&mut self, event: RegistryEvent) -> Result<(), RegistryError> {
        match event {
            RegistryEvent::Register { profile } => {
                self.insert(profile)?;
            }
            RegistryEvent::Deregister { agent_name } => {
                self.remove(&agent_name)?;
            }
        }
        Ok(())
    }

    fn append_log(&mut self, event: &RegistryEvent) {
        if let Some((_, file)) = self.log.as_mut() {
            let mut line = serde_json::to_value(event)
                .expect("registry events serialize")
                .to_string();
            line.push('\n');
            let _ = file.write_all(line.as_bytes());
        }
    }

    fn insert(&mut self, profile: AgentProfile) -> Result<(), RegistryError> {
        if profile.agent_name.is_empty() {
            return Err(RegistryError::InvalidProfile("agent_name must be non-empty".into()));
        }
        if profile.agent_name.starts_with('@') {
            return Err(RegistryError::InvalidProfile(
                "agent_name must not start with '@' (reserved)".into(),
            ));
        }
        if profile.agent_description.is_empty() {
            return Err(RegistryError::InvalidProfile("agent_description must be non-empty".into()));
        }
        if self.records.contains_key(&profile.agent_name) {
            return Err(RegistryError::DuplicateName(profile.agent_name));
        }
        let text = format!(
            "{} {} {}",
            profile.agent_name, profile.agent_type, profile.agent_description
        );
        let record = RegistryRecord {
            token_counts: token_bag(&text),
            registered_at: self.next_registration,
            profile: profile.clone(),
        };
        self.next_registration += 1;
        for tok in record.token_counts.keys() {
            *self.doc_freq.entry(tok.clone()).or_insert(0) += 1;
        }
        self.records.insert(profile.agent_name, record);
        Ok(())
    }

    fn remove(&mut self, agent_name: &str) -> Result<RegistryRecord, RegistryError> {
        let record = self
            .records
            .remove(agent_name)
            .ok_or_else(|| RegistryError::NotFound(agent_name.to_string()))?;
        for tok in record.token_counts.keys() {
            if let Some(df) = self.doc_freq.get_mut(tok) {
                *df -= 1;
                if *df == 0 {
                    self.doc_freq.remove(tok);
                }
            }
        }
        Ok(record)
    }

    pub fn register_agent(&mut self, profile: AgentProfile) -> Result<&RegistryRecord, RegistryError> {
        let name = profile.agent_name.clone();
        self.insert(profile.clone())?;
        self.append_log(&RegistryEvent::Register { profile });
        Ok(&self.records[&name])
    }

    pub fn deregister_agent(&mut self, agent_name: &str) -> Result<(), RegistryError> {
        self.remove(agent_name)?;
        self.append_log(&RegistryEvent::Deregister { agent_name: agent_name.to_string() });
        Ok(())
    }

    pub fn get_profile(&self, agent_name: &str) -> Result<&AgentProfile, RegistryError> {
        self.records
            .get(agent_name)
            .map(|r| &r.profile)
            .ok_or_else(|| RegistryError::NotFound(agent_name.to_string()))
    }

    pub fn contains(&self, agent_name: &str) -> bool {
        self.records.contains_key(agent_name)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// idf(tok) = ln((N + 1) / (df(tok) + 1)) + 1 over the N registry records.
    fn idf(&self, token: &str) -> f64 {
        let n = self.records.len() as f64;
        let df = self.doc_freq.get(token).copied().unwrap_or(0) as f64;
        ((n + 1.0) / (df + 1.0)).ln() + 1.0
    }

    /// Ranked discovery: per characteristic, TF-IDF cosine between the
    /// characteristic's token bag and each record's token bag; total score
    /// is the sum over characteristics. Records with zero score are dropped;
    /// ties break on agent_name ascending.
    pub fn search_agents(&self, query: &SearchQuery) -> Vec<(AgentProfile, f64)> {
        let char_bags: Vec<(BTreeMap<String, f64>, f64)> = query
            .characteristics
            .iter()
            .map(|c| token_bag(c))
            .filter(|b| !b.is_empty())
            .map(|bag| {
                let weights: BTreeMap<String, f64> = bag
                    .iter()
                    .map(|(tok, &tf)| (tok.clone(), tf as f64 * self.idf(tok)))
                    .collect();
                let norm = weights.values().map(|w| w * w).sum::<f64>().sqrt();
                (weights, norm)
            })
            .collect();

        let mut scored: Vec<(f64, &RegistryRecord)> = Vec::new();
        for record in self.records.values() {
            let doc_weights: BTreeMap<&str, f64> = record
                .token_counts
                .iter()
                .map(|(tok, &tf)| (tok.as_str(), tf as f64 * self.idf(tok)))
                .collect();
            let doc_norm = doc_weights.values().map(|w| w * w).sum::<f64>().sqrt();
            if doc_norm == 0.0 {
                continue;
            }
            let mut total = 0.0;
            for (weights, qnorm) in &char_bags {
                if *qnorm == 0.0 {
                    continue;
                }
                let dot: f64 = weights
                    .iter()
                    .filter_map(|(tok, w)| doc_weights.get(tok.as_str()).map(|dw| w * dw))
                    .sum();
                total += dot / (qnorm * doc_norm);
            }
            if total > 0.0 {
                scored.push((total, record));
            }
        }
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.1.profile.agent_name.cmp(&b.1.profile.agent_name))
        });
        scored
            .into_iter()
            .take(query.limit)
            .map(|(score, r)| (r.profile.clone(), score))
            .collect()
    }
}
