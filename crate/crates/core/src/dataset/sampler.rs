//! Collision-free per-primitive command sampling.
//!
//! Quotas are drawn uniformly without replacement from each primitive's
//! virtual command inventory (built over the example-primitive grammar, so
//! isolated primitives can never be sampled). A command sampled for one
//! primitive is globally reserved; collisions resample, keeping the total
//! exactly equal to the allocation. When inventories saturate (tiny
//! grammars), the shortfall is topped up from the full compositional pool,
//! which also contains the turn-only commands no primitive quota can reach.

use super::ForgeError;
use crate::grammar::{Command, Grammar, PhraseInventory};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::collections::HashSet;

/// Draws `counts[i]` distinct commands containing `example_grammar`'s i-th
/// lexicographic primitive. Returns the sampled commands (sorted) or an
/// error when a quota exceeds its primitive's inventory.
pub fn sample_compositional(
    example_grammar: &Grammar,
    ordered_surfaces: &[String],
    counts: &[usize],
    seed: u64,
) -> Result<Vec<Command>, ForgeError> {
    assert_eq!(ordered_surfaces.len(), counts.len());
    let inv = PhraseInventory::build(example_grammar);
    let mut taken: HashSet<String> = HashSet::new();
    let mut out: Vec<Command> = Vec::with_capacity(counts.iter().sum());
    let mut deficit = 0usize;

    for (i, (surface, &quota)) in ordered_surfaces.iter().zip(counts).enumerate() {
        if quota == 0 {
            continue;
        }
        let sampler = inv
            .sampler_for_surface(surface)
            .ok_or_else(|| ForgeError::InfeasibleAllocation(format!("unknown '{surface}'")))?;
        let len = sampler.len();
        if quota as u64 > len {
            return Err(ForgeError::InfeasibleAllocation(format!(
                "primitive '{surface}' has {len} compositional commands, quota is {quota}"
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);

        if (quota as u64) * 4 > len {
            // Dense regime: materialize, filter, shuffle.
            let mut avail: Vec<Command> = (0..len)
                .map(|idx| sampler.decode(idx))
                .filter(|c| !taken.contains(&c.joined()))
                .collect();
            avail.shuffle(&mut rng);
            let got = avail.len().min(quota);
            deficit += quota - got;
            for c in avail.into_iter().take(got) {
                taken.insert(c.joined());
                out.push(c);
            }
        } else {
            let mut used: HashSet<u64> = HashSet::with_capacity(quota * 2);
            let mut filled = 0usize;
            let mut misses = 0usize;
            while filled < quota {
                let idx = rng.random_range(0..len);
                if !used.insert(idx) {
                    continue;
                }
                let cmd = sampler.decode(idx);
                if taken.insert(cmd.joined()) {
                    out.push(cmd);
                    filled += 1;
                    misses = 0;
                } else {
                    misses += 1;
                    if misses > 10_000 {
                        // Heavy cross-primitive overlap; fall back to the
                        // dense path for the remainder.
                        let mut avail: Vec<Command> = (0..len)
                            .map(|j| sampler.decode(j))
                            .filter(|c| !taken.contains(&c.joined()))
                            .collect();
                        avail.shuffle(&mut rng);
                        let want = quota - filled;
                        let got = avail.len().min(want);
                        deficit += want - got;
                        for c in avail.into_iter().take(got) {
                            taken.insert(c.joined());
                            out.push(c);
                        }
                        break;
                    }
                }
            }
        }
    }

    if deficit > 0 {
        top_up(example_grammar, &mut out, &mut taken, deficit, seed)?;
    }
    out.sort_unstable();
    Ok(out)
}

/// Fills a shortfall from the whole compositional pool (including turn-only
/// commands). Only reachable for small grammars, where enumeration is cheap.
fn top_up(
    grammar: &Grammar,
    out: &mut Vec<Command>,
    taken: &mut HashSet<String>,
    deficit: usize,
    seed: u64,
) -> Result<(), ForgeError> {
    let mut pool: Vec<Command> = crate::grammar::enumerate_commands(grammar)?
        .into_iter()
        .filter(|c| c.tokens().len() > 1 && !taken.contains(&c.joined()))
        .collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(0);
    pool.shuffle(&mut rng);
    for c in pool.into_iter().take(deficit) {
        taken.insert(c.joined());
        out.push(c);
    }
    Ok(())
}

/// Every compositional command of the grammar (multi-token, all primitives
/// allowed), for the saturated whole-pool regime.
pub fn whole_compositional_pool(grammar: &Grammar) -> Result<Vec<Command>, ForgeError> {
    Ok(crate::grammar::enumerate_commands(grammar)?
        .into_iter()
        .filter(|c| c.tokens().len() > 1)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_grammar() -> Grammar {
        let g = Grammar::scan();
        g.restricted_to(&["walk", "look", "run"]).unwrap()
    }

    #[test]
    fn quotas_exact_and_distinct() {
        let g = example_grammar();
        let surfaces = vec!["look".to_string(), "run".to_string(), "walk".to_string()];
        let counts = vec![50, 10, 25];
        let cmds = sample_compositional(&g, &surfaces, &counts, 7).unwrap();
        assert_eq!(cmds.len(), 85);
        let unique: HashSet<String> = cmds.iter().map(|c| c.joined()).collect();
        assert_eq!(unique.len(), 85);
        // Per-primitive attribution cannot be recovered from the union (a
        // command may contain two primitives), but every command must hold
        // at least one quota primitive and be multi-token.
        for c in &cmds {
            assert!(c.tokens().len() > 1);
            assert!(surfaces.iter().any(|s| c.contains_token(s)));
        }
    }

    #[test]
    fn determinism_across_calls() {
        let g = example_grammar();
        let surfaces = vec!["look".to_string(), "run".to_string(), "walk".to_string()];
        let a = sample_compositional(&g, &surfaces, &[40, 40, 40], 3).unwrap();
        let b = sample_compositional(&g, &surfaces, &[40, 40, 40], 3).unwrap();
        assert_eq!(a, b);
        let c = sample_compositional(&g, &surfaces, &[40, 40, 40], 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn quota_above_inventory_is_infeasible() {
        let g = example_grammar();
        let surfaces = vec!["look".to_string()];
        let err = sample_compositional(&g, &surfaces, &[6_000], 0);
        assert!(matches!(err, Err(ForgeError::InfeasibleAllocation(_))));
    }

    #[test]
    fn saturation_tops_up_from_whole_pool() {
        // 3 x 4,401 = 13,203 demanded, but only 12,534 primitive-containing
        // plus 666 turn-only compositional commands exist: the sampler
        // saturates at the full 13,200-command pool.
        let g = example_grammar();
        let surfaces = vec!["look".to_string(), "run".to_string(), "walk".to_string()];
        let cmds = sample_compositional(&g, &surfaces, &[4_401, 4_401, 4_401], 0).unwrap();
        assert_eq!(cmds.len(), 13_200);
        let unique: HashSet<String> = cmds.iter().map(|c| c.joined()).collect();
        assert_eq!(unique.len(), 13_200);
    }

    #[test]
    fn isolated_primitives_never_sampled() {
        // The inventory is built over the example grammar, so a quota can
        // never produce a command containing an isolated primitive.
        let g = example_grammar();
        assert!(!g.has_primitive("jump"));
        let surfaces = vec!["walk".to_string()];
        let cmds = sample_compositional(&g, &surfaces, &[500], 1).unwrap();
        assert!(cmds.iter().all(|c| !c.contains_token("jump")));
    }
}
