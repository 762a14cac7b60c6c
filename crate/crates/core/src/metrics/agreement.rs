//! Gwet's chance-corrected agreement for several raters on a four-point
//! ordinal scale, tolerating missing ratings.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{MetricsError, Result};

/// Highest score on the scale; scores are `0..=MAX_SCORE`.
pub const MAX_SCORE: u8 = 3;
const CATEGORIES: usize = MAX_SCORE as usize + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Credit only for exact agreement.
    Identity,
    /// Partial credit decreasing with score distance.
    Ordinal,
}

/// `1 - d(d+1) / (D(D+1))` with `d = |x - y|` and `D` the largest distance.
pub fn ordinal_weight(x: u8, y: u8, max_distance: u8) -> f64 {
    let d = f64::from(x.abs_diff(y));
    let big = f64::from(max_distance);
    1.0 - d * (d + 1.0) / (big * (big + 1.0))
}

fn weight(w: Weighting, x: usize, y: usize) -> f64 {
    match w {
        Weighting::Identity => f64::from(u8::from(x == y)),
        Weighting::Ordinal => ordinal_weight(x as u8, y as u8, MAX_SCORE),
    }
}

/// Per-item category counts. Raters are only used to reject duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    items: Vec<String>,
    counts: Vec<[u32; CATEGORIES]>,
}

#[derive(Deserialize)]
struct RatingRow {
    item: String,
    rater: String,
    score: i64,
}

impl RatingMatrix {
    /// Builds from `(item, rater, score)` triples.
    pub fn from_triples<I, S, R>(triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, R, i64)>,
        S: Into<String>,
        R: Into<String>,
    {
        let mut table: BTreeMap<String, BTreeMap<String, u8>> = BTreeMap::new();
        for (item, rater, score) in triples {
            let (item, rater) = (item.into(), rater.into());
            let score = u8::try_from(score)
                .ok()
                .filter(|&s| s <= MAX_SCORE)
                .ok_or_else(|| MetricsError::ScoreOutOfRange {
                    item: item.clone(),
                    score,
                    max: MAX_SCORE,
                })?;
            let row = table.entry(item.clone()).or_default();
            if row.insert(rater.clone(), score).is_some() {
                return Err(MetricsError::DuplicateRating { item, rater });
            }
        }
        Self::from_rows(
            table
                .into_iter()
                .map(|(item, raters)| (item, raters.into_values().collect())),
        )
    }

    /// Builds from each item's scores, ignoring who gave them.
    pub fn from_rows<I, S>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<u8>)>,
        S: Into<String>,
    {
        let mut items = Vec::new();
        let mut counts = Vec::new();
        for (item, scores) in rows {
            let item = item.into();
            let mut c = [0u32; CATEGORIES];
            for &s in &scores {
                if s > MAX_SCORE {
                    return Err(MetricsError::ScoreOutOfRange {
                        item,
                        score: i64::from(s),
                        max: MAX_SCORE,
                    });
                }
                c[usize::from(s)] += 1;
            }
            if scores.len() < 2 {
                return Err(MetricsError::TooFewRaters(item));
            }
            items.push(item);
            counts.push(c);
        }
        if items.is_empty() {
            return Err(MetricsError::NoRatings);
        }
        Ok(Self { items, counts })
    }

    /// Reads a CSV file with header `item,rater,score`.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let mut triples = Vec::new();
        for row in reader.deserialize::<RatingRow>() {
            let row = row.map_err(|e| csv_error(path, e))?;
            triples.push((row.item, row.rater, row.score));
        }
        Self::from_triples(triples)
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn csv_error(path: &Path, e: csv::Error) -> MetricsError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => MetricsError::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => MetricsError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Gwet's AC1 (identity weights) or AC2 (ordinal weights).
///
/// Degenerate chance agreement (`p_e = 1`) is reported as 1.0.
pub fn gwet_ac1(ratings: &RatingMatrix, weighting: Weighting) -> f64 {
    let q = CATEGORIES;
    let n = ratings.len() as f64;
    let mut w = [[0.0; CATEGORIES]; CATEGORIES];
    let mut t_w = 0.0;
    for (k, row) in w.iter_mut().enumerate() {
        for (l, cell) in row.iter_mut().enumerate() {
            *cell = weight(weighting, k, l);
            t_w += *cell;
        }
    }

    let mut p_a = 0.0;
    let mut pi = [0.0; CATEGORIES];
    for counts in &ratings.counts {
        let r_i: f64 = counts.iter().map(|&c| f64::from(c)).sum();
        let mut agree = 0.0;
        for k in 0..q {
            let r_ik = f64::from(counts[k]);
            if r_ik == 0.0 {
                continue;
            }
            let weighted: f64 = (0..q).map(|l| w[k][l] * f64::from(counts[l])).sum();
            agree += r_ik * (weighted - 1.0);
            pi[k] += r_ik / r_i;
        }
        p_a += agree / (r_i * (r_i - 1.0));
    }
    p_a /= n;

    let spread: f64 = pi.iter().map(|&p| (p / n) * (1.0 - p / n)).sum();
    let p_e = t_w / (q * (q - 1)) as f64 * spread;
    if (1.0 - p_e).abs() < f64::EPSILON {
        return 1.0;
    }
    (p_a - p_e) / (1.0 - p_e)
}
