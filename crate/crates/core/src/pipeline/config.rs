//! Pipeline configuration file.
//!
//! ```text
//! delimiter = ,                      # single character, or `tab`
//! null_sentinel = NA                 # besides empty fields
//! target = demand
//! fold_key = week
//! numerical = price, promo, returns
//! categorical = product, pos_description
//! group_only = product               # group keys only, never one-hot encoded
//! description_column = pos_description
//! category_column = pos_type
//! grouping_map = grouping_map.conf   # token = Category lines
//! stop_words = stop_words.txt        # one word per line
//! generic_tokens = tienda, local
//! aggregates = pos_type:mean:demand, product:median:returns
//! normalization = standard           # or none
//! log_target = true
//! null_policy = drop
//! train_folds = 1, 2, 3
//! test_folds = 4                     # default: every other fold
//! seed = 0
//! ```
//!
//! Relative file paths are resolved against the directory of the
//! configuration file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conf::ConfMap;
use crate::error::{Error, Result};
use crate::pipeline::table::{ColumnKind, Schema};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Statistic {
    Mean,
    Median,
    Std,
    Sum,
}

impl Statistic {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(Statistic::Mean),
            "median" => Ok(Statistic::Median),
            "std" => Ok(Statistic::Std),
            "sum" => Ok(Statistic::Sum),
            other => Err(Error::config("aggregates", format!("unknown statistic `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Statistic::Mean => "mean",
            Statistic::Median => "median",
            Statistic::Std => "std",
            Statistic::Sum => "sum",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateSpec {
    pub group_column: String,
    pub statistic: Statistic,
    pub source: String,
}

impl AggregateSpec {
    /// `group_col:stat:source`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        if parts.len() != 3 || parts.iter().any(|p| p.is_empty()) {
            return Err(Error::config("aggregates", format!("expected group_col:stat:source, got `{s}`")));
        }
        Ok(Self {
            group_column: parts[0].to_string(),
            statistic: Statistic::parse(parts[1])?,
            source: parts[2].to_string(),
        })
    }

    /// Name of the appended feature column.
    pub fn column_name(&self) -> String {
        format!("{}_{}_by_{}", self.statistic.name(), self.source, self.group_column)
    }

    pub fn to_text(&self) -> String {
        format!("{}:{}:{}", self.group_column, self.statistic.name(), self.source)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NullPolicy {
    Drop,
    Retain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    Standard,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRule {
    pub train_folds: Vec<String>,
    /// `None` sends every row outside `train_folds` to the test side.
    pub test_folds: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryGrouping {
    pub description_column: String,
    pub category_column: String,
    /// Lowercase token to category name.
    pub map: BTreeMap<String, String>,
    pub stop_words: BTreeSet<String>,
    pub generic_tokens: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub delimiter: u8,
    pub null_sentinel: Option<String>,
    pub target: String,
    pub fold_key: Option<String>,
    pub numerical: Vec<String>,
    pub categorical: Vec<String>,
    /// Categorical columns kept only as aggregate group keys; they are
    /// dropped instead of one-hot encoded (high-cardinality identifiers).
    pub group_only: Vec<String>,
    pub grouping: Option<CategoryGrouping>,
    pub aggregates: Vec<AggregateSpec>,
    pub normalization: Normalization,
    pub log_target: bool,
    pub null_policy: NullPolicy,
    pub split: Option<SplitRule>,
    pub seed: u64,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = PathBuf::from(p);
    if path.is_absolute() {
        path
    } else {
        base.join(path)
    }
}

fn read_word_list(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .flat_map(|l| l.split(',').map(|w| w.trim().to_lowercase()).collect::<Vec<_>>())
        .filter(|w| !w.is_empty())
        .collect())
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let conf = ConfMap::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_conf(&conf, base)
    }

    pub fn from_conf(c: &ConfMap, base_dir: &Path) -> Result<Self> {
        let delimiter = match c.get("delimiter").unwrap_or(",") {
            "tab" | "\\t" => b'\t',
            d if d.len() == 1 => d.as_bytes()[0],
            d => return Err(Error::config("delimiter", format!("expected one character, got `{d}`"))),
        };
        let grouping = match c.get("description_column") {
            None => None,
            Some(desc) => {
                let map_conf = match c.get("grouping_map") {
                    Some(p) => ConfMap::load(&resolve(base_dir, p))?,
                    None => ConfMap::new(),
                };
                let mut map = BTreeMap::new();
                for (k, v) in map_conf.iter() {
                    map.insert(k.to_lowercase(), v.to_string());
                }
                let stop_words = match c.get("stop_words") {
                    Some(p) => read_word_list(&resolve(base_dir, p))?,
                    None => BTreeSet::new(),
                };
                Some(CategoryGrouping {
                    description_column: desc.to_string(),
                    category_column: c.get("category_column").unwrap_or("category").to_string(),
                    map,
                    stop_words,
                    generic_tokens: c.list("generic_tokens").iter().map(|s| s.to_lowercase()).collect(),
                })
            }
        };
        let aggregates = c
            .list("aggregates")
            .iter()
            .map(|s| AggregateSpec::parse(s))
            .collect::<Result<Vec<_>>>()?;
        let normalization = match c.get("normalization").unwrap_or("standard") {
            "standard" | "zscore" => Normalization::Standard,
            "none" => Normalization::None,
            other => return Err(Error::config("normalization", format!("unknown method `{other}`"))),
        };
        let null_policy = match c.get("null_policy").unwrap_or("drop") {
            "drop" => NullPolicy::Drop,
            "retain" => NullPolicy::Retain,
            other => return Err(Error::config("null_policy", format!("unknown policy `{other}`"))),
        };
        let split = if c.contains("train_folds") {
            let train_folds = c.list("train_folds");
            if train_folds.is_empty() {
                return Err(Error::config("train_folds", "empty fold list"));
            }
            Some(SplitRule {
                train_folds,
                test_folds: c.contains("test_folds").then(|| c.list("test_folds")),
            })
        } else {
            None
        };
        let cfg = PipelineConfig {
            delimiter,
            null_sentinel: c.get("null_sentinel").filter(|s| !s.is_empty()).map(str::to_string),
            target: c.require("target")?.to_string(),
            fold_key: c.get("fold_key").filter(|s| !s.is_empty()).map(str::to_string),
            numerical: c.list("numerical"),
            categorical: c.list("categorical"),
            group_only: c.list("group_only"),
            grouping,
            aggregates,
            normalization,
            log_target: c.parse_or("log_target", true)?,
            null_policy,
            split,
            seed: c.parse_or("seed", 0u64)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Categorical columns as they exist after category grouping.
    pub fn grouped_categorical(&self) -> Vec<String> {
        self.categorical
            .iter()
            .map(|c| match &self.grouping {
                Some(g) if *c == g.description_column => g.category_column.clone(),
                _ => c.clone(),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for name in self
            .numerical
            .iter()
            .chain(&self.categorical)
            .chain(std::iter::once(&self.target))
            .chain(self.fold_key.iter())
        {
            if !seen.insert(name.as_str()) {
                return Err(Error::config(name.as_str(), "column declared more than once"));
            }
        }
        if let Some(g) = &self.grouping {
            if !self.categorical.contains(&g.description_column) {
                return Err(Error::config(
                    "description_column",
                    format!("`{}` must be listed under categorical", g.description_column),
                ));
            }
        }
        let grouped = self.grouped_categorical();
        if let Some(col) = self.group_only.iter().find(|c| !grouped.contains(c)) {
            return Err(Error::config("group_only", format!("`{col}` is not a declared categorical column")));
        }
        for spec in &self.aggregates {
            if self.numerical.contains(&spec.group_column) || spec.group_column == self.target {
                return Err(Error::config(
                    "aggregates",
                    format!("group column `{}` is numeric; aggregates group by categorical columns", spec.group_column),
                ));
            }
            if !grouped.contains(&spec.group_column) {
                return Err(Error::config(
                    "aggregates",
                    format!("group column `{}` is not a declared categorical column", spec.group_column),
                ));
            }
            if !self.numerical.contains(&spec.source) && spec.source != self.target {
                return Err(Error::config(
                    "aggregates",
                    format!("source `{}` is not a declared numeric column", spec.source),
                ));
            }
        }
        if !self.aggregates.is_empty() && self.fold_key.is_none() {
            return Err(Error::config("fold_key", "aggregate features need a fold key"));
        }
        if self.split.is_some() && self.fold_key.is_none() {
            return Err(Error::config("fold_key", "fold-based splits need a fold key"));
        }
        Ok(())
    }

    /// Ingest schema: numerical, categorical, target, then fold key.
    pub fn schema(&self) -> Schema {
        let mut columns: Vec<(String, ColumnKind)> = Vec::new();
        columns.extend(self.numerical.iter().map(|c| (c.clone(), ColumnKind::Numerical)));
        columns.extend(self.categorical.iter().map(|c| (c.clone(), ColumnKind::Categorical)));
        columns.push((self.target.clone(), ColumnKind::Target));
        if let Some(f) = &self.fold_key {
            columns.push((f.clone(), ColumnKind::FoldKey));
        }
        Schema {
            columns,
            delimiter: self.delimiter,
            null_sentinel: self.null_sentinel.clone(),
        }
    }
}
