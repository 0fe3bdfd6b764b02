use super::ChartError;

pub const MAX_ENUMERATION_LEN: usize = 8;

/// Every single-root projective tree over `n` tokens, as sorted 1-based head
/// arrays. Used as a brute-force oracle, hence the length guard.
pub fn enumerate_projective_trees(n: usize) -> Result<Vec<Vec<usize>>, ChartError> {
    if n == 0 {
        return Err(ChartError::EmptySentence);
    }
    if n > MAX_ENUMERATION_LEN {
        return Err(ChartError::TooLong {
            n,
            max: MAX_ENUMERATION_LEN,
        });
    }
    let mut out = Vec::new();
    for (root, arcs) in subtrees(1, n) {
        let mut heads = vec![0; n];
        for (h, d) in arcs {
            heads[d - 1] = h;
        }
        heads[root - 1] = 0;
        out.push(heads);
    }
    out.sort();
    Ok(out)
}

type Arcs = Vec<(usize, usize)>;

/// All projective trees spanning exactly `i..=j`, as (root, arcs).
fn subtrees(i: usize, j: usize) -> Vec<(usize, Arcs)> {
    let mut out = Vec::new();
    for h in i..=j {
        let lefts = sequences(i, h - 1);
        let rights = sequences(h + 1, j);
        for l in &lefts {
            for r in &rights {
                let mut arcs = Vec::new();
                for (roots, inner) in [l, r] {
                    arcs.extend(inner.iter().copied());
                    arcs.extend(roots.iter().map(|&d| (h, d)));
                }
                out.push((h, arcs));
            }
        }
    }
    out
}

/// Ways to cover `i..=j` with a left-to-right sequence of adjacent subtrees;
/// returns the subtree roots and the arcs inside them.
fn sequences(i: usize, j: usize) -> Vec<(Vec<usize>, Arcs)> {
    if i > j {
        return vec![(Vec::new(), Vec::new())];
    }
    let mut out = Vec::new();
    for k in i..=j {
        for (root, arcs) in subtrees(i, k) {
            for (roots, rest) in sequences(k + 1, j) {
                let mut all_roots = vec![root];
                all_roots.extend(roots);
                let mut all_arcs = arcs.clone();
                all_arcs.extend(rest);
                out.push((all_roots, all_arcs));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::validate_tree;

    /// Filters every head array in `[0, n]^n` through `validate_tree`.
    fn by_filtering(n: usize) -> Vec<Vec<usize>> {
        let total = (n + 1).pow(n as u32);
        let mut out = Vec::new();
        for code in 0..total {
            let mut c = code;
            let heads: Vec<usize> = (0..n)
                .map(|_| {
                    let h = c % (n + 1);
                    c /= n + 1;
                    h
                })
                .collect();
            if validate_tree(&heads).is_ok() {
                out.push(heads);
            }
        }
        out.sort();
        out
    }

    #[test]
    fn counts() {
        let counts: Vec<usize> = (1..=6).map(|n| enumerate_projective_trees(n).unwrap().len()).collect();
        assert_eq!(counts, vec![1, 2, 7, 30, 143, 728]);
    }

    #[test]
    fn matches_validator_filter() {
        for n in 1..=6 {
            assert_eq!(enumerate_projective_trees(n).unwrap(), by_filtering(n), "n = {n}");
        }
    }

    #[test]
    fn guards() {
        assert!(matches!(enumerate_projective_trees(9), Err(ChartError::TooLong { .. })));
        assert_eq!(enumerate_projective_trees(0), Err(ChartError::EmptySentence));
        assert_eq!(enumerate_projective_trees(8).unwrap().len(), 21318);
    }
}
