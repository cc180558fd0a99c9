use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// A finite partial-monitoring game: `k` actions, `d` outcomes, a loss matrix
/// with entries in `[0, 1]` and a feedback matrix over a symbol alphabet.
///
/// Symbols are interned in order of first appearance (row-major), so the
/// feedback matrix is stored as symbol indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PmGame {
    loss: Vec<Vec<f64>>,
    feedback: Vec<Vec<usize>>,
    symbols: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct GameFile {
    loss: Vec<Vec<f64>>,
    feedback: Vec<Vec<String>>,
}

impl PmGame {
    pub fn new(loss: Vec<Vec<f64>>, feedback: Vec<Vec<String>>) -> Result<Self> {
        let k = loss.len();
        if k < 2 {
            return Err(Error::GameParse("a game needs at least two actions".into()));
        }
        let d = loss[0].len();
        if d < 2 {
            return Err(Error::GameParse("a game needs at least two outcomes".into()));
        }
        if feedback.len() != k {
            return Err(Error::GameParse(format!(
                "loss has {k} rows but feedback has {}",
                feedback.len()
            )));
        }
        for (a, row) in loss.iter().enumerate() {
            if row.len() != d {
                return Err(Error::GameParse(format!(
                    "loss row {a} has {} entries, expected {d}",
                    row.len()
                )));
            }
            for (x, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::GameParse(format!(
                        "loss[{a}][{x}] = {v} is outside [0, 1]"
                    )));
                }
            }
        }
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut symbols = Vec::new();
        let mut fb = Vec::with_capacity(k);
        for (a, row) in feedback.into_iter().enumerate() {
            if row.len() != d {
                return Err(Error::GameParse(format!(
                    "feedback row {a} has {} entries, expected {d}",
                    row.len()
                )));
            }
            let ids = row
                .into_iter()
                .map(|s| {
                    *index.entry(s.clone()).or_insert_with(|| {
                        symbols.push(s);
                        symbols.len() - 1
                    })
                })
                .collect();
            fb.push(ids);
        }
        Ok(Self {
            loss,
            feedback: fb,
            symbols,
        })
    }

    /// Parses the JSON game format `{"loss": [[..]], "feedback": [[..]]}`.
    /// Errors name the offending cell.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::GameParse(format!("line {} column {}: {e}", e.line(), e.column())))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::GameParse("top level must be an object".into()))?;
        let matrix = |key: &str| -> Result<&Vec<Value>> {
            obj.get(key)
                .and_then(Value::as_array)
                .ok_or_else(|| Error::GameParse(format!("missing or non-array field \"{key}\"")))
        };
        let mut loss = Vec::new();
        for (a, row) in matrix("loss")?.iter().enumerate() {
            let row = row
                .as_array()
                .ok_or_else(|| Error::GameParse(format!("loss[{a}] is not an array")))?;
            let mut out = Vec::with_capacity(row.len());
            for (x, v) in row.iter().enumerate() {
                out.push(v.as_f64().ok_or_else(|| {
                    Error::GameParse(format!("loss[{a}][{x}] = {v} is not a number"))
                })?);
            }
            loss.push(out);
        }
        let mut feedback = Vec::new();
        for (a, row) in matrix("feedback")?.iter().enumerate() {
            let row = row
                .as_array()
                .ok_or_else(|| Error::GameParse(format!("feedback[{a}] is not an array")))?;
            let mut out = Vec::with_capacity(row.len());
            for (x, v) in row.iter().enumerate() {
                out.push(match v {
                    Value::String(s) => s.clone(),
                    other => {
                        return Err(Error::GameParse(format!(
                            "feedback[{a}][{x}] = {other} is not a string symbol"
                        )))
                    }
                });
            }
            feedback.push(out);
        }
        Self::new(loss, feedback)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = GameFile {
            loss: self.loss.clone(),
            feedback: self
                .feedback
                .iter()
                .map(|r| r.iter().map(|&s| self.symbols[s].clone()).collect())
                .collect(),
        };
        serde_json::to_string(&file).expect("plain data serializes")
    }

    pub fn k(&self) -> usize {
        self.loss.len()
    }

    pub fn d(&self) -> usize {
        self.loss[0].len()
    }

    pub fn symbol_count(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn loss(&self, a: usize, x: usize) -> f64 {
        self.loss[a][x]
    }

    pub fn loss_row(&self, a: usize) -> &[f64] {
        &self.loss[a]
    }

    pub fn loss_matrix(&self) -> &[Vec<f64>] {
        &self.loss
    }

    /// Symbol index observed when playing `a` under outcome `x`.
    pub fn feedback(&self, a: usize, x: usize) -> usize {
        self.feedback[a][x]
    }

    /// Distinct symbols appearing in row `a`, ascending.
    pub fn row_symbols(&self, a: usize) -> Vec<usize> {
        let mut s = self.feedback[a].clone();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// `m`: the largest number of distinct symbols in a single row.
    pub fn max_row_symbols(&self) -> usize {
        (0..self.k()).map(|a| self.row_symbols(a).len()).max().unwrap_or(0)
    }
}

impl Serialize for PmGame {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        GameFile {
            loss: self.loss.clone(),
            feedback: self
                .feedback
                .iter()
                .map(|r| r.iter().map(|&s| self.symbols[s].clone()).collect())
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PmGame {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let file = GameFile::deserialize(deserializer)?;
        PmGame::new(file.loss, file.feedback).map_err(serde::de::Error::custom)
    }
}

/// Two actions, two outcomes; only the second action is informative.
pub fn apple_tasting() -> PmGame {
    PmGame::new(
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![
            vec!["a".into(), "a".into()],
            vec!["b".into(), "c".into()],
        ],
    )
    .expect("valid game")
}
