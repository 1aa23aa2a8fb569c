//! Shared oblivious building blocks.

mod butterfly;
mod consolidate;
mod sort;
mod thinning;

pub use butterfly::{
    butterfly_expand, butterfly_route, butterfly_route_counted, compute_distance_labels,
    compute_distance_labels_by, levels_for, RouteStats,
};
pub use consolidate::{consolidate, consolidate_by, consolidate_multiway, multiway_output_blocks};
pub use sort::{
    cell_order_by, det_oblivious_sort, merge_exchange_pairs, sort_by_key, sort_by_origin,
    sort_cells_by,
};
pub use thinning::thinning_pass;
