//! Model pools with strong/weak tier partitions, routing decisions, and the
//! per-model cost table.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of a candidate model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelId(pub String);

impl ModelId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ModelId {
    fn from(s: &str) -> Self {
        ModelId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tier {
    Strong,
    Weak,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Strong => "strong",
            Tier::Weak => "weak",
        }
    }
}

/// Ordered candidate models partitioned into disjoint strong and weak tiers.
///
/// Both tiers are non-empty and together cover the pool exactly; membership
/// is strong XOR weak for every model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPool {
    ids: Vec<ModelId>,
    tiers: Vec<Tier>,
}

impl ModelPool {
    pub fn new(entries: Vec<(ModelId, Tier)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (id, _) in &entries {
            if !seen.insert(id.clone()) {
                return Err(Error::contract(format!("duplicate model id `{id}` in pool")));
            }
        }
        let (ids, tiers): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let pool = ModelPool { ids, tiers };
        if pool.strong_indices().next().is_none() {
            return Err(Error::contract("pool has no strong-tier model"));
        }
        if pool.weak_indices().next().is_none() {
            return Err(Error::contract("pool has no weak-tier model"));
        }
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[ModelId] {
        &self.ids
    }

    pub fn id(&self, index: usize) -> &ModelId {
        &self.ids[index]
    }

    pub fn tier(&self, index: usize) -> Tier {
        self.tiers[index]
    }

    pub fn index_of(&self, id: &ModelId) -> Option<usize> {
        self.ids.iter().position(|m| m == id)
    }

    pub fn is_strong(&self, index: usize) -> bool {
        self.tiers[index] == Tier::Strong
    }

    pub fn is_strong_id(&self, id: &ModelId) -> Option<bool> {
        self.index_of(id).map(|i| self.is_strong(i))
    }

    pub fn strong_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.tiers
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == Tier::Strong)
            .map(|(i, _)| i)
    }

    pub fn weak_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.tiers
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == Tier::Weak)
            .map(|(i, _)| i)
    }

    /// Pool file: one `model_id<TAB>strong|weak` line per model, in order.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for (id, tier) in self.ids.iter().zip(&self.tiers) {
            text.push_str(&format!("{id}\t{}\n", tier.as_str()));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            let id = parts.next().unwrap_or_default().trim();
            let tier = parts.next().map(str::trim);
            let tier = match tier {
                Some("strong") => Tier::Strong,
                Some("weak") => Tier::Weak,
                other => {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: n + 1,
                        message: format!("expected `strong` or `weak`, got {other:?}"),
                    })
                }
            };
            entries.push((ModelId(id.to_string()), tier));
        }
        ModelPool::new(entries)
    }
}

/// The router's observable answer. Targets never expose logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub chosen: ModelId,
    pub logits: Option<Vec<f64>>,
}

/// Lowest-index argmax over logits, as a decision on `pool`.
///
/// The single global tie rule: ties break toward the lowest pool index.
pub fn argmax_decision(logits: &[f64], pool: &ModelPool) -> Result<RoutingDecision> {
    if logits.len() != pool.len() {
        return Err(Error::contract(format!(
            "logit vector length {} does not match pool of {} models",
            logits.len(),
            pool.len()
        )));
    }
    let idx = argmax_index(logits);
    Ok(RoutingDecision {
        chosen: pool.id(idx).clone(),
        logits: Some(logits.to_vec()),
    })
}

/// Index of the greatest value; ties break toward the lowest index.
pub fn argmax_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Price per million tokens for each model id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostTable {
    prices: BTreeMap<String, f64>,
}

impl CostTable {
    pub fn new(entries: impl IntoIterator<Item = (ModelId, f64)>) -> Self {
        CostTable {
            prices: entries.into_iter().map(|(id, p)| (id.0, p)).collect(),
        }
    }

    pub fn price(&self, id: &ModelId) -> Result<f64> {
        self.prices.get(&id.0).copied().ok_or_else(|| {
            Error::Config(vec![format!("cost table has no price for model `{id}`")])
        })
    }

    pub fn covers(&self, pool: &ModelPool) -> bool {
        pool.ids().iter().all(|id| self.prices.contains_key(&id.0))
    }

    /// Cost file: `model_id = price` key/value lines.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for (id, price) in &self.prices {
            text.push_str(&format!("{id} = {price}\n"));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut prices = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, price) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                message: "expected `model_id = price`".into(),
            })?;
            let value: f64 = price.trim().parse().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                message: format!("bad price: {e}"),
            })?;
            prices.insert(id.trim().to_string(), value);
        }
        Ok(CostTable { prices })
    }
}
