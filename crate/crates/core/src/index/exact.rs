use std::cmp::Ordering;

use super::{LabelMatrix, RankedList};
use crate::corpus::LabelId;
use crate::encoder::score;

/// Descending score, then ascending label id.
pub(crate) fn rank_order(a: &(LabelId, f64), b: &(LabelId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Full scan with a partial sort. `k` is clamped to the number of labels.
pub fn exact_topk(labels: &LabelMatrix, query: &[f64], k: usize) -> RankedList {
    assert_eq!(query.len(), labels.dim(), "query dimension does not match the index");
    let k = k.min(labels.len());
    if k == 0 {
        return RankedList::default();
    }
    let mut all: Vec<(LabelId, f64)> = (0..labels.len())
        .map(|i| (i as LabelId, score(labels.row(i), query)))
        .collect();
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, rank_order);
        all.truncate(k);
    }
    all.sort_by(rank_order);
    RankedList::from_sorted(all)
}
