use std::collections::{HashMap, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::matrix::InteractionMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Rating {
    pub user: String,
    pub item: String,
    pub rating: f64,
}

/// Raw explicit ratings of one domain, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RatingLog {
    pub records: Vec<Rating>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Ratings at or above this value become positives.
    pub positive_threshold: f64,
    /// Users and items with fewer positives are removed.
    pub min_interactions: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            positive_threshold: 4.0,
            min_interactions: 5,
        }
    }
}

impl RatingLog {
    /// Parses `user_id,item_id,rating` CSV (header required, quoted fields allowed).
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        let expected = ["user_id", "item_id", "rating"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header user_id,item_id,rating, got {:?}", headers),
            });
        }

        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = row.position().map_or(0, |p| p.line());
            let bad = |message: String| Error::Parse { line, message };
            if row.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", row.len())));
            }
            let rating: f64 = row[2]
                .parse()
                .map_err(|_| bad(format!("rating {:?} is not a number", &row[2])))?;
            if !(1.0..=5.0).contains(&rating) {
                return Err(bad(format!("rating {rating} outside [1, 5]")));
            }
            if row[0].is_empty() || row[1].is_empty() {
                return Err(bad("empty user or item id".into()));
            }
            records.push(Rating {
                user: row[0].to_string(),
                item: row[1].to_string(),
                rating,
            });
        }
        Ok(RatingLog { records })
    }

    /// Binarizes, filters to the minimum-interaction fixpoint and indexes the log.
    ///
    /// Duplicate (user, item) records keep the last rating. Users and items are
    /// indexed in order of first appearance in the log.
    pub fn preprocess(&self, config: PreprocessConfig) -> Result<InteractionMatrix> {
        let mut last: HashMap<(&str, &str), f64> = HashMap::new();
        for r in &self.records {
            last.insert((r.user.as_str(), r.item.as_str()), r.rating);
        }
        let mut positives: HashSet<(&str, &str)> = last
            .into_iter()
            .filter(|&(_, rating)| rating >= config.positive_threshold)
            .map(|(k, _)| k)
            .collect();

        // Removing a user can push an item under the minimum and vice versa.
        loop {
            let mut user_count: HashMap<&str, usize> = HashMap::new();
            let mut item_count: HashMap<&str, usize> = HashMap::new();
            for &(u, i) in &positives {
                *user_count.entry(u).or_default() += 1;
                *item_count.entry(i).or_default() += 1;
            }
            let before = positives.len();
            positives.retain(|(u, i)| {
                user_count[u] >= config.min_interactions && item_count[i] >= config.min_interactions
            });
            if positives.len() == before {
                break;
            }
        }
        if positives.is_empty() {
            return Err(Error::EmptyDataset);
        }

        let mut user_index: HashMap<&str, u32> = HashMap::new();
        let mut item_index: HashMap<&str, u32> = HashMap::new();
        let mut user_ids = Vec::new();
        let mut item_ids = Vec::new();
        let surviving_users: HashSet<&str> = positives.iter().map(|&(u, _)| u).collect();
        let surviving_items: HashSet<&str> = positives.iter().map(|&(_, i)| i).collect();
        for r in &self.records {
            if surviving_users.contains(r.user.as_str())
                && !user_index.contains_key(r.user.as_str())
            {
                user_index.insert(&r.user, user_ids.len() as u32);
                user_ids.push(r.user.clone());
            }
            if surviving_items.contains(r.item.as_str())
                && !item_index.contains_key(r.item.as_str())
            {
                item_index.insert(&r.item, item_ids.len() as u32);
                item_ids.push(r.item.clone());
            }
        }
        let mut rows = vec![Vec::new(); user_ids.len()];
        for (u, i) in positives {
            rows[user_index[u] as usize].push(item_index[i]);
        }
        InteractionMatrix::new(user_ids, item_ids, rows)
    }
}

/// Reads and preprocesses both domains' rating streams.
pub fn ingest_and_preprocess<R1: Read, R2: Read>(
    source: R1,
    target: R2,
    config: PreprocessConfig,
) -> Result<(InteractionMatrix, InteractionMatrix)> {
    let source = RatingLog::from_csv(source)?.preprocess(config)?;
    let target = RatingLog::from_csv(target)?.preprocess(config)?;
    Ok((source, target))
}
