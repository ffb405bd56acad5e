use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub const BOTH: [Domain; 2] = [Domain::Source, Domain::Target];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }

    pub(crate) fn tag(self) -> u64 {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }
}

/// Binary user x item implicit-feedback matrix.
///
/// Rows hold the sorted item indices of each user's positives. Users and items
/// carry their external identifiers so that the two domains can be joined on
/// user identity.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    rows: Vec<Vec<u32>>,
}

impl InteractionMatrix {
    pub fn new(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        mut rows: Vec<Vec<u32>>,
    ) -> Result<Self> {
        if rows.len() != user_ids.len() {
            return Err(Error::Format(format!(
                "{} rows for {} users",
                rows.len(),
                user_ids.len()
            )));
        }
        let n_items = item_ids.len() as u32;
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            if row.last().is_some_and(|&i| i >= n_items) {
                return Err(Error::Format(format!(
                    "item index out of range for {n_items} items"
                )));
            }
        }
        Ok(InteractionMatrix {
            user_ids,
            item_ids,
            rows,
        })
    }

    /// Matrix with synthetic identifiers `u<index>` / `i<index>`.
    pub fn from_pairs(
        n_users: usize,
        n_items: usize,
        pairs: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self> {
        let mut rows = vec![Vec::new(); n_users];
        for (u, i) in pairs {
            let row = rows.get_mut(u as usize).ok_or_else(|| {
                Error::Format(format!("user index {u} out of range for {n_users} users"))
            })?;
            row.push(i);
        }
        InteractionMatrix::new(
            (0..n_users).map(|u| format!("u{u}")).collect(),
            (0..n_items).map(|i| format!("i{i}")).collect(),
            rows,
        )
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn row(&self, user: usize) -> &[u32] {
        &self.rows[user]
    }

    pub fn contains(&self, user: usize, item: u32) -> bool {
        self.rows[user].binary_search(&item).is_ok()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self) -> HashMap<&str, usize> {
        self.user_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    /// Positives in row-major order. The position of a pair in this sequence
    /// is its positive index, which split files refer to.
    pub fn positives(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&i| (u as u32, i)))
    }

    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_items()];
        for row in &self.rows {
            for &i in row {
                counts[i as usize] += 1;
            }
        }
        counts
    }

    /// Same users and items, keeping only the positives whose index is in `keep`.
    pub fn subset(&self, keep: &[u32]) -> InteractionMatrix {
        let mut mask = vec![false; self.nnz()];
        for &k in keep {
            mask[k as usize] = true;
        }
        let mut rows = vec![Vec::new(); self.n_users()];
        for (k, (u, i)) in self.positives().enumerate() {
            if mask[k] {
                rows[u as usize].push(i);
            }
        }
        InteractionMatrix {
            user_ids: self.user_ids.clone(),
            item_ids: self.item_ids.clone(),
            rows,
        }
    }

    /// Dense 0/1 block with one row per requested user.
    pub fn dense_rows(&self, users: &[u32]) -> Tensor {
        let n = self.n_items();
        let mut data = vec![0.0; users.len() * n];
        for (r, &u) in users.iter().enumerate() {
            for &i in &self.rows[u as usize] {
                data[r * n + i as usize] = 1.0;
            }
        }
        Tensor::new(users.len(), n, data).expect("dense block shape")
    }
}
