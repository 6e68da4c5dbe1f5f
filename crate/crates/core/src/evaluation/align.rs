//! Minimum edit-distance alignment with unit costs.

/// One step of an alignment of `a` against `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignOp {
    Match(usize, usize),
    Sub(usize, usize),
    /// `a[i]` has no counterpart.
    Del(usize),
    /// `b[j]` has no counterpart.
    Ins(usize),
}

impl AlignOp {
    pub fn is_edit(self) -> bool {
        !matches!(self, AlignOp::Match(..))
    }
}

/// Aligns `a` to `b` at minimum cost (substitution, insertion and deletion
/// all cost 1). Among optimal alignments, the one chosen walks left to
/// right preferring a match, then a substitution, then a deletion from
/// `a`, then an insertion from `b`.
pub fn align<T: PartialEq>(a: &[T], b: &[T]) -> Vec<AlignOp> {
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    // cost[i * w + j]: distance between a[i..] and b[j..].
    let mut cost = vec![0usize; (n + 1) * w];
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            cost[i * w + j] = if i == n {
                m - j
            } else if j == m {
                n - i
            } else {
                let diag = cost[(i + 1) * w + j + 1] + usize::from(a[i] != b[j]);
                diag.min(cost[(i + 1) * w + j] + 1).min(cost[i * w + j + 1] + 1)
            };
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        let here = cost[i * w + j];
        if i < n && j < m && a[i] == b[j] && cost[(i + 1) * w + j + 1] == here {
            ops.push(AlignOp::Match(i, j));
            i += 1;
            j += 1;
        } else if i < n && j < m && cost[(i + 1) * w + j + 1] + 1 == here {
            ops.push(AlignOp::Sub(i, j));
            i += 1;
            j += 1;
        } else if i < n && cost[(i + 1) * w + j] + 1 == here {
            ops.push(AlignOp::Del(i));
            i += 1;
        } else {
            ops.push(AlignOp::Ins(j));
            j += 1;
        }
    }
    ops
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn distance(a: &[char], b: &[char]) -> usize {
        // Textbook prefix recurrence, independent of the suffix table above.
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for (i, x) in a.iter().enumerate() {
            let mut cur = vec![i + 1; b.len() + 1];
            for (j, y) in b.iter().enumerate() {
                cur[j + 1] = (prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1);
            }
            prev = cur;
        }
        prev[b.len()]
    }

    #[test]
    fn inserted_character_is_a_deletion_from_a() {
        let a: Vec<char> = "bhslm".chars().collect();
        let b: Vec<char> = "bslm".chars().collect();
        assert_eq!(
            align(&a, &b),
            [
                AlignOp::Match(0, 0),
                AlignOp::Del(1),
                AlignOp::Match(2, 1),
                AlignOp::Match(3, 2),
                AlignOp::Match(4, 3)
            ]
        );
    }

    #[test]
    fn ties_prefer_substitution_over_indels() {
        assert_eq!(align(&['x'], &['y']), [AlignOp::Sub(0, 0)]);
        assert_eq!(align::<char>(&[], &['y']), [AlignOp::Ins(0)]);
    }

    proptest! {
        #[test]
        fn alignment_is_optimal_and_covers_both(a in "[abc]{0,8}", b in "[abc]{0,8}") {
            let a: Vec<char> = a.chars().collect();
            let b: Vec<char> = b.chars().collect();
            let ops = align(&a, &b);
            let edits = ops.iter().filter(|o| o.is_edit()).count();
            prop_assert_eq!(edits, distance(&a, &b));
            let (mut ia, mut jb) = (Vec::new(), Vec::new());
            for op in ops {
                match op {
                    AlignOp::Match(i, j) => { prop_assert_eq!(a[i], b[j]); ia.push(i); jb.push(j); }
                    AlignOp::Sub(i, j) => { ia.push(i); jb.push(j); }
                    AlignOp::Del(i) => ia.push(i),
                    AlignOp::Ins(j) => jb.push(j),
                }
            }
            prop_assert_eq!(ia, (0..a.len()).collect::<Vec<_>>());
            prop_assert_eq!(jb, (0..b.len()).collect::<Vec<_>>());
        }
    }
}
