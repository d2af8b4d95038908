//! Exhaustive-recursion Levenshtein oracle.
//!
//! Explores every insert/delete/substitute branch without memoization. Only
//! usable for short strings, which is exactly the regime the checks need.

pub fn edit_distance_exhaustive(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    recurse(&a, &b)
}

fn recurse(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let substitute = recurse(&a[1..], &b[1..]) + usize::from(a[0] != b[0]);
    let delete = recurse(&a[1..], b) + 1;
    let insert = recurse(a, &b[1..]) + 1;
    substitute.min(delete).min(insert)
}

#[cfg(test)]
mod self_checks {
    use super::*;

    #[test]
    fn oracle_known_values() {
        assert_eq!(edit_distance_exhaustive("", ""), 0);
        assert_eq!(edit_distance_exhaustive("", "abc"), 3);
        assert_eq!(edit_distance_exhaustive("abc", "abc"), 0);
        assert_eq!(edit_distance_exhaustive("kitten", "sitting"), 3);
        assert_eq!(edit_distance_exhaustive("flaw", "lawn"), 2);
    }
}
