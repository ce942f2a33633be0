//! Word pool for fresh primitives: common English verbs, consumed in
//! seeded-shuffle order by `extend_with_primitives`.

use std::sync::OnceLock;

static POOL: OnceLock<Vec<&'static str>> = OnceLock::new();

pub fn word_pool() -> &'static [&'static str] {
    POOL.get_or_init(|| {
        include_str!("../../assets/word_pool.txt")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn pool_is_large_unique_lowercase() {
        let pool = word_pool();
        assert!(pool.len() >= 500, "pool has {} words", pool.len());
        let unique: BTreeSet<_> = pool.iter().collect();
        assert_eq!(unique.len(), pool.len());
        assert!(pool
            .iter()
            .all(|w| w.chars().all(|c| c.is_ascii_lowercase())));
        for reserved in super::super::SCAN_FUNCTION_WORDS {
            assert!(!pool.contains(&reserved));
        }
        for reserved in super::super::COLORS_FUNCTION_WORDS {
            assert!(!pool.contains(&reserved));
        }
    }
}
