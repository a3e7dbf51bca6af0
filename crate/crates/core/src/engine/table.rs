use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prog::{pretty_print, Program};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Method {
    Exact,
    Pce { degree: u32 },
    Simulation { samples: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub n: u64,
    pub monomial: String,
    pub value: f64,
    /// Standard error of a simulated value; NaN when it is undefined (one sample).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub program_hash: String,
    pub method: Method,
    pub rows: Vec<MomentRow>,
}

impl MomentTable {
    pub fn get(&self, n: u64, monomial: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.monomial == monomial)
            .map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,monomial,value,std_error\n");
        for r in &self.rows {
            let se = r.std_error.map_or(String::new(), |s| format!("{s:e}"));
            out.push_str(&format!("{},{},{:e},{}\n", r.n, r.monomial, r.value, se));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tables always serialize")
    }
}

/// FNV-1a of the canonical source, as 16 hex digits.
pub fn program_hash(p: &Program) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in pretty_print(p).bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stats {
    pub n: u64,
    pub variable: String,
    pub mean: f64,
    pub variance: f64,
    pub std_dev: f64,
}

/// Mean, variance and standard deviation of every variable whose first raw
/// moment is in the table.
pub fn derived_stats(t: &MomentTable) -> Result<Vec<Stats>> {
    let mut firsts: BTreeMap<(u64, &str), f64> = BTreeMap::new();
    for r in &t.rows {
        if is_variable(&r.monomial) {
            firsts.insert((r.n, r.monomial.as_str()), r.value);
        }
    }
    let mut out = Vec::new();
    for ((n, v), mean) in firsts {
        let square = format!("{v}^2");
        let second = t
            .get(n, &square)
            .ok_or_else(|| Error::MissingMoment(square.clone()))?;
        let mut variance = second - mean * mean;
        if variance < 0.0 && variance >= -1e-9 * (1.0 + second.abs()) {
            variance = 0.0;
        }
        out.push(Stats {
            n,
            variable: v.to_string(),
            mean,
            variance,
            std_dev: variance.max(0.0).sqrt(),
        });
    }
    Ok(out)
}

fn is_variable(m: &str) -> bool {
    !m.is_empty() && m != "1" && !m.contains(['*', '^'])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&str, f64)]) -> MomentTable {
        MomentTable {
            program_hash: String::new(),
            method: Method::Exact,
            rows: rows
                .iter()
                .map(|(m, v)| MomentRow {
                    n: 1,
                    monomial: m.to_string(),
                    value: *v,
                    std_error: None,
                })
                .collect(),
        }
    }

    #[test]
    fn unit_variance() {
        let s = derived_stats(&table(&[("x", 0.0), ("x^2", 1.0)])).unwrap();
        assert_eq!(s[0].variance, 1.0);
    }

    #[test]
    fn tiny_negative_variance_is_clamped() {
        let s = derived_stats(&table(&[("x", 3.0), ("x^2", 9.0 - 1e-12)])).unwrap();
        assert_eq!(s[0].variance, 0.0);
    }

    #[test]
    fn missing_second_moment() {
        assert!(matches!(
            derived_stats(&table(&[("x", 1.0)])),
            Err(Error::MissingMoment(_))
        ));
    }

    #[test]
    fn csv_header() {
        assert!(table(&[("x", 1.0)]).to_csv().starts_with("n,monomial,value,std_error\n1,x,"));
    }
}
