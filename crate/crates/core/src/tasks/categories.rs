//! Natural Instructions category statistics, bundled for weighting demos.

use serde::Deserialize;

use super::proportional_weights;

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
pub struct CategoryStat {
    pub category: String,
    pub tasks: u32,
    pub instances: u64,
    pub tokens: u64,
}

#[derive(Deserialize)]
struct Bundle {
    categories: Vec<CategoryStat>,
}

const DATA: &str = include_str!("../../data/natural_instructions_categories.json");

pub fn natural_instructions_categories() -> Vec<CategoryStat> {
    serde_json::from_str::<Bundle>(DATA)
        .expect("bundled category data parses")
        .categories
}

/// Instance-proportional weights over the bundled categories, in table order.
pub fn category_instance_weights(stats: &[CategoryStat]) -> Vec<f64> {
    proportional_weights(&stats.iter().map(|s| s.instances as f64).collect::<Vec<_>>())
}
