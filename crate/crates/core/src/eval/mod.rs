//! Ranking metrics, domain discrepancy, clustering agreement, ablation sweeps
//! and embedding export.

mod ablation;
mod cluster;
mod discrepancy;
mod embed;
mod ranking;

pub use ablation::{
    cell_key, run_ablation, sweep_cells, write_ablation_csv, AblationCell, AblationOptions,
    AblationRow, CellMetrics, SweepAxis,
};
pub use cluster::{adjusted_rand_index, hard_assignments, posterior_means};
pub use discrepancy::{proxy_a_distance, DiscrepancyReport};
pub use embed::{domain_discrepancy, export_embeddings, write_embeddings};
pub(crate) use ranking::csv_err;
pub use ranking::{
    candidate_items, evaluate_domain, evaluate_pairs, evaluate_topk, hit_and_ndcg, rank_of,
    score_users, DomainMetrics, MetricsReport, RankingProtocol,
};
