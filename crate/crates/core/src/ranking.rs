//! Feature rankings: greedy PG²-based construction, rankings derived from
//! external attribution vectors, and top-k agreement between ranking lists.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::exact::pg2_exact;
use crate::model::TreeEnsemble;
use crate::perturb::PerturbationSpec;

/// A permutation of `0..d`, most important feature first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ranking(Vec<usize>);

impl Ranking {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &f in &order {
            if f >= order.len() || std::mem::replace(&mut seen[f], true) {
                return Err(Error::validation(format!(
                    "{order:?} is not a permutation of 0..{}",
                    order.len()
                )));
            }
        }
        Ok(Self(order))
    }

    pub fn identity(d: usize) -> Self {
        Self((0..d).collect())
    }

    pub fn order(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The `k` top-ranked features, `π[1..k]`.
    pub fn prefix(&self, k: usize) -> &[usize] {
        &self.0[..k]
    }

    pub fn reversed(&self) -> Self {
        Self(self.0.iter().rev().copied().collect())
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}

/// Signed per-feature attributions for one data point.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionVector(Vec<f64>);

impl AttributionVector {
    pub fn new(phi: Vec<f64>) -> Result<Self> {
        if let Some(i) = phi.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("attribution {i} is not finite")));
        }
        Ok(Self(phi))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Greedy ranking: with `S` the features chosen so far, append the unchosen
/// feature `i` maximizing `PG²(x, S ∪ {i})`. Ties go to the lower index.
pub fn greedy_pg2_ranking(
    ensemble: &TreeEnsemble,
    x: &[f64],
    spec: &PerturbationSpec,
) -> Result<Ranking> {
    let d = ensemble.num_features();
    if d == 0 {
        return Err(Error::validation("cannot rank zero features"));
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(d);
    let mut remaining: Vec<usize> = (0..d).collect();
    let mut candidate = Vec::with_capacity(d);
    while !remaining.is_empty() {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &i) in remaining.iter().enumerate() {
            candidate.clear();
            candidate.extend_from_slice(&chosen);
            candidate.push(i);
            let p = pg2_exact(ensemble, x, &candidate, spec)?;
            // `remaining` is ascending, so strict > keeps the lowest index on ties
            if best.is_none_or(|(_, b)| p > b) {
                best = Some((pos, p));
            }
        }
        let (pos, _) = best.expect("remaining is non-empty");
        chosen.push(remaining.remove(pos));
    }
    Ok(Ranking(chosen))
}

/// Sorts features by `|φ_i|` descending; equal magnitudes keep index order.
pub fn ranking_from_attribution(phi: &AttributionVector) -> Ranking {
    let mut order: Vec<usize> = (0..phi.0.len()).collect();
    order.sort_by(|&a, &b| {
        phi.0[b]
            .abs()
            .partial_cmp(&phi.0[a].abs())
            .unwrap_or(Ordering::Equal)
    });
    Ranking(order)
}

/// How two top-k prefixes are compared.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum PrefixMatch {
    /// Same set of `k` features, order ignored.
    #[default]
    Set,
    /// Same `k` features in the same order.
    Sequence,
}

/// Fraction of positions at which the two ranking lists agree on their top `k` features.
pub fn topk_agreement(a: &[Ranking], b: &[Ranking], k: usize, mode: PrefixMatch) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "ranking lists differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::validation("ranking lists are empty"));
    }
    let mut agree = 0usize;
    for (ra, rb) in a.iter().zip(b) {
        if k > ra.len() || k > rb.len() {
            return Err(Error::validation(format!(
                "k = {k} exceeds the number of features"
            )));
        }
        let same = match mode {
            PrefixMatch::Sequence => ra.prefix(k) == rb.prefix(k),
            PrefixMatch::Set => {
                ra.prefix(k).iter().collect::<BTreeSet<_>>()
                    == rb.prefix(k).iter().collect::<BTreeSet<_>>()
            }
        };
        agree += same as usize;
    }
    Ok(agree as f64 / a.len() as f64)
}

/// Reads attribution vectors, one per data point, from a headerless CSV file
/// or a JSON array of arrays (chosen by a `.json` extension).
pub fn load_attributions(path: impl AsRef<Path>) -> Result<Vec<AttributionVector>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<Vec<f64>> = if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
    {
        serde_json::from_str(&text).map_err(|e| {
            Error::parse(format!("{}:{}:{}", path.display(), e.line(), e.column()), e)
        })?
    } else {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (r, record) in reader.records().enumerate() {
            let record =
                record.map_err(|e| Error::parse(format!("{} row {}", path.display(), r + 1), e))?;
            let row = record
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    cell.parse::<f64>().map_err(|_| {
                        Error::parse(
                            format!("{} row {}, column {}", path.display(), r + 1, c + 1),
                            format!("{cell:?} is not a number"),
                        )
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        rows
    };
    if let Some(w) = rows.first().map(Vec::len) {
        if let Some(r) = rows.iter().position(|row| row.len() != w) {
            return Err(Error::validation(format!(
                "attribution row {} has {} entries, expected {w}",
                r + 1,
                rows[r].len()
            )));
        }
    }
    rows.into_iter().map(AttributionVector::new).collect()
}

/// Reads rankings written as one comma-separated permutation per line.
pub fn load_rankings(path: impl AsRef<Path>) -> Result<Vec<Ranking>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let order = line
                .split(',')
                .map(|c| {
                    c.trim().parse::<usize>().map_err(|_| {
                        Error::parse(
                            format!("{} line {}", path.display(), n + 1),
                            format!("{c:?} is not a feature index"),
                        )
                    })
                })
                .collect::<Result<Vec<usize>>>()?;
            Ranking::new(order)
        })
        .collect()
}

pub fn format_ranking(r: &Ranking) -> String {
    r.0.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}
