use crate::analysis::token_spans;

/// Smallest accepted passage length, in tokens.
pub const MIN_PASSAGE_TOKENS: usize = 16;
pub const DEFAULT_PASSAGE_TOKENS: usize = 400;

/// Split `text` into `ceil(n / max)` contiguous passages of near-equal token
/// counts (sizes differ by at most one, larger ones first). A text of at
/// most `max_tokens` tokens comes back whole. Passages are slices of the
/// original text, so case and punctuation inside a passage survive.
pub fn split_passages(text: &str, max_tokens: usize) -> Vec<String> {
    let max_tokens = max_tokens.max(1);
    let spans = token_spans(text);
    let n = spans.len();
    if n <= max_tokens {
        return vec![text.to_string()];
    }
    passage_sizes(n, max_tokens)
        .into_iter()
        .scan(0usize, |start, size| {
            let first = spans[*start].0;
            let last = spans[*start + size - 1].1;
            *start += size;
            Some(text[first..last].to_string())
        })
        .collect()
}

/// Balanced chunk sizes for `n` tokens with at most `max` per chunk.
pub fn passage_sizes(n: usize, max: usize) -> Vec<usize> {
    if n == 0 {
        return vec![0];
    }
    let parts = n.div_ceil(max);
    let (base, extra) = (n / parts, n % parts);
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::tokenize;
    use proptest::prelude::*;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn examples() {
        let p = split_passages(&words(10), 4);
        let sizes: Vec<_> = p.iter().map(|s| tokenize(s).len()).collect();
        assert_eq!(sizes, [4, 3, 3]);
        assert_eq!(p[0], "w0 w1 w2 w3");
        assert_eq!(split_passages(&words(4), 4), [words(4)]);
        assert_eq!(split_passages("", 16), [""]);
    }

    #[test]
    fn keeps_original_text() {
        let p = split_passages("Masks, Gloves. Gowns; Goggles!", 2);
        assert_eq!(p, ["Masks, Gloves", "Gowns; Goggles"]);
    }

    proptest! {
        #[test]
        fn balanced_and_complete(n in 1usize..2000, max in 1usize..600) {
            let sizes = passage_sizes(n, max);
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert_eq!(sizes.len(), n.div_ceil(max));
            let hi = *sizes.iter().max().unwrap();
            let lo = *sizes.iter().min().unwrap();
            prop_assert!(hi - lo <= 1);
            prop_assert!(hi <= max);
        }
    }
}
