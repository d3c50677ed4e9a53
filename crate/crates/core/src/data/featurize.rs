use std::collections::BTreeSet;
use std::str::FromStr;

use super::{DataError, Result};
use crate::tensor::Tensor;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Categorical,
    /// Hashed bag-of-words into this many buckets.
    Text(usize),
}

impl FromStr for ColumnKind {
    type Err = DataError;

    /// Accepts `numeric`, `categorical`, `text` (64 buckets) or `text:<buckets>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "numeric" => Ok(ColumnKind::Numeric),
            "categorical" => Ok(ColumnKind::Categorical),
            "text" => Ok(ColumnKind::Text(64)),
            other => match other.strip_prefix("text:").and_then(|b| b.parse().ok()) {
                Some(b) if b > 0 => Ok(ColumnKind::Text(b)),
                _ => Err(DataError::Config(format!("unknown column kind {other:?}"))),
            },
        }
    }
}

/// Column kinds in table order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeSchema {
    pub columns: Vec<(String, ColumnKind)>,
}

impl AttributeSchema {
    /// Parses `name:kind` pairs separated by commas, e.g. `age:numeric,bio:text:32`.
    pub fn parse(schema: &str) -> Result<Self> {
        let columns = schema
            .split(',')
            .filter(|c| !c.trim().is_empty())
            .map(|c| {
                let (name, kind) =
                    c.split_once(':').ok_or_else(|| DataError::Config(format!("column {c:?} lacks a kind")))?;
                Ok((name.trim().to_owned(), kind.parse()?))
            })
            .collect::<Result<_>>()?;
        Ok(Self { columns })
    }
}

/// FNV-1a bucket of a token.
pub fn token_bucket(token: &str, buckets: usize) -> usize {
    let mut h = FNV_OFFSET;
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    (h % buckets as u64) as usize
}

/// Lowercased alphanumeric tokens counted into buckets, then L2-normalized.
/// Text without tokens maps to the zero vector.
pub fn hashed_bag_of_words(text: &str, buckets: usize) -> Vec<f64> {
    let mut v = vec![0.0; buckets];
    if buckets == 0 {
        return v;
    }
    for tok in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        v[token_bucket(&tok.to_lowercase(), buckets)] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Encodes raw attribute rows into `rows × dim` features. Statistics (min/max,
/// category levels) are fitted over all rows together, so entities from both
/// domains passed in one call share a single encoding. The concatenated
/// encoding is zero-padded or truncated to `dim`.
pub fn featurize(schema: &AttributeSchema, rows: &[Vec<String>], dim: usize) -> Result<Tensor> {
    let mut encoders: Vec<Box<dyn Fn(&str) -> Vec<f64>>> = Vec::new();
    for (c, (name, kind)) in schema.columns.iter().enumerate() {
        let values = rows.iter().map(|r| {
            r.get(c).map(String::as_str).ok_or_else(|| DataError::Config(format!("row is missing column {name}")))
        });
        match *kind {
            ColumnKind::Numeric => {
                let nums = values
                    .map(|v| {
                        let v = v?;
                        v.trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|x| x.is_finite())
                            .ok_or_else(|| DataError::Config(format!("column {name}: {v:?} is not numeric")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let lo = nums.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = nums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                encoders.push(Box::new(move |v: &str| {
                    let x: f64 = v.trim().parse().unwrap_or(lo);
                    vec![if hi > lo { (x - lo) / (hi - lo) } else { 0.0 }]
                }));
            }
            ColumnKind::Categorical => {
                let levels: Vec<String> = values
                    .map(|v| v.map(|s| s.trim().to_owned()))
                    .collect::<Result<BTreeSet<_>>>()?
                    .into_iter()
                    .collect();
                encoders.push(Box::new(move |v: &str| {
                    let mut one = vec![0.0; levels.len()];
                    if let Ok(k) = levels.binary_search_by(|l| l.as_str().cmp(v.trim())) {
                        one[k] = 1.0;
                    }
                    one
                }));
            }
            ColumnKind::Text(b) => {
                values.collect::<Result<Vec<_>>>()?;
                encoders.push(Box::new(move |v: &str| hashed_bag_of_words(v, b)));
            }
        }
    }
    let mut data = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        let mut feat: Vec<f64> = encoders.iter().zip(r).flat_map(|(enc, v)| enc(v)).collect();
        feat.resize(dim, 0.0);
        data.extend(feat);
    }
    Ok(Tensor::new([rows.len(), dim], data)?)
}
