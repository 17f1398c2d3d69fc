use rand::Rng;

use super::CvChain;
use crate::error::{Error, Result};

/// Largest chain the exhaustive search accepts.
pub const ORACLE_MAX_N: usize = 8;

// Lexicographic next permutation; false once the last one is reached.
fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).unwrap();
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Largest number of chain edges that can be resolved inside one cycle of
/// length `max(sum C, sum V)`, found by exhaustive search.
///
/// Both lanes run inside the same window `[0, T]`. The lane with the larger
/// total has no idle time, so each of its orders fixes every start time;
/// for each such order, a subset DP over the other lane picks block order and
/// which adjacent edges (producer before, consumer after) to honour.
pub fn brute_force_oracle(chain: &CvChain) -> Result<usize> {
    let n = chain.n();
    if n > ORACLE_MAX_N {
        return Err(Error::Capacity(format!("oracle handles n <= {ORACLE_MAX_N}, chain has n = {n}")));
    }
    let window = chain.cycle_bound();
    let cube_tight = chain.cube_total() >= chain.vector_total();
    let (tight, loose) = if cube_tight { (chain.cube(), chain.vector()) } else { (chain.vector(), chain.cube()) };
    // 0-based tight indices adjacent to each loose block in the chain.
    let neighbours: Vec<(Option<usize>, Option<usize>)> = (0..n)
        .map(|i| {
            if cube_tight {
                // V_i consumes C_i and feeds C_{i+1}.
                (Some(i), (i + 1 < n).then_some(i + 1))
            } else {
                // C_i consumes V_{i-1} and feeds V_i.
                (i.checked_sub(1), Some(i))
            }
        })
        .collect();

    let max_edges = 2 * n - 1;
    let full = (1usize << n) - 1;
    let mut best = 0usize;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut start = vec![0u64; n];
    let mut end = vec![0u64; n];
    let mut finish = vec![u64::MAX; (full + 1) * (max_edges + 1)];

    loop {
        let mut clock = 0;
        for &i in &perm {
            start[i] = clock;
            clock += tight[i];
            end[i] = clock;
        }

        finish.fill(u64::MAX);
        finish[0] = 0;
        for mask in 0..full {
            for k in 0..=max_edges {
                let f = finish[mask * (max_edges + 1) + k];
                if f == u64::MAX {
                    continue;
                }
                for j in (0..n).filter(|j| mask & (1 << j) == 0) {
                    let (prod, cons) = neighbours[j];
                    for use_prod in [false, true] {
                        if use_prod && prod.is_none() {
                            continue;
                        }
                        for use_cons in [false, true] {
                            if use_cons && cons.is_none() {
                                continue;
                            }
                            let release = if use_prod { end[prod.unwrap()] } else { 0 };
                            let deadline = if use_cons { start[cons.unwrap()] } else { window };
                            let done = f.max(release) + loose[j];
                            if done > deadline {
                                continue;
                            }
                            let slot = (mask | 1 << j) * (max_edges + 1) + k + usize::from(use_prod) + usize::from(use_cons);
                            if done < finish[slot] {
                                finish[slot] = done;
                            }
                        }
                    }
                }
            }
        }
        if let Some(k) = (0..=max_edges).rev().find(|&k| finish[full * (max_edges + 1) + k] <= window) {
            best = best.max(k);
        }
        if best == max_edges || !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(best)
}

/// A chain where one Vector block cannot share the cycle with any complete
/// Cube block: `V_k + C_j > sum C` for every `j`, with `sum V <= sum C`.
/// With `vector_dominated` the roles are swapped via [`CvChain::mirror`].
pub fn adversarial_chain<R: Rng + ?Sized>(n: usize, rng: &mut R, vector_dominated: bool) -> CvChain {
    assert!(n >= 1, "adversarial chain needs n >= 1");
    let c: Vec<u64> = (0..n).map(|_| rng.gen_range(1..=10)).collect();
    let total: u64 = c.iter().sum();
    let min_c = *c.iter().min().unwrap();
    let k = rng.gen_range(0..n);
    let vk = rng.gen_range(total - min_c + 1..=total);
    let mut budget = total - vk;
    let mut v = vec![0u64; n];
    v[k] = vk;
    for (i, slot) in v.iter_mut().enumerate() {
        if i != k && budget > 0 {
            let take = rng.gen_range(0..=budget);
            *slot = take;
            budget -= take;
        }
    }
    let ch = CvChain::new(c, v).expect("valid adversarial chain");
    if vector_dominated {
        ch.mirror()
    } else {
        ch
    }
}
