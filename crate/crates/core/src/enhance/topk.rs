//! Top-K selection by overall score.

use std::cmp::Ordering;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scored {
    pub id: String,
    pub overall: u8,
}

fn rank(a: &Scored, b: &Scored) -> Ordering {
    b.overall.cmp(&a.overall).then_with(|| a.id.cmp(&b.id))
}

/// Ids of the `k` best pairs: overall descending, ties by id ascending.
///
/// Returns everything when `k` exceeds the input. The result for `k` is a
/// prefix of the result for any larger `k`.
pub fn filter_topk(scored: &[Scored], k: usize) -> Vec<String> {
    let mut refs: Vec<&Scored> = scored.iter().collect();
    let k = k.min(refs.len());
    if k == 0 {
        return Vec::new();
    }
    if k < refs.len() {
        refs.select_nth_unstable_by(k - 1, |a, b| rank(a, b));
        refs.truncate(k);
    }
    refs.sort_unstable_by(|a, b| rank(a, b));
    refs.into_iter().map(|s| s.id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(id: &str, overall: u8) -> Scored {
        Scored { id: id.into(), overall }
    }

    #[test]
    fn ties_break_by_id() {
        let input = [s("c", 9), s("a", 9), s("b", 10), s("d", 3)];
        assert_eq!(filter_topk(&input, 3), ["b", "a", "c"]);
        assert_eq!(filter_topk(&input, 0), Vec::<String>::new());
        assert_eq!(filter_topk(&input, 99).len(), 4);
    }

    proptest! {
        #[test]
        fn matches_full_sort_and_nests(
            scores in prop::collection::vec(1u8..=10, 0..300),
            k1 in 0usize..320,
            k2 in 0usize..320,
        ) {
            let input: Vec<Scored> = scores
                .iter()
                .enumerate()
                .map(|(i, &o)| s(&format!("{i:05}"), o))
                .collect();
            let mut sorted = input.clone();
            sorted.sort_by(rank);
            let oracle: Vec<String> = sorted.iter().map(|x| x.id.clone()).collect();
            let (lo, hi) = (k1.min(k2), k1.max(k2));
            let a = filter_topk(&input, lo);
            let b = filter_topk(&input, hi);
            prop_assert_eq!(&a[..], &oracle[..lo.min(oracle.len())]);
            prop_assert_eq!(&b[..a.len()], &a[..]);
        }
    }
}
