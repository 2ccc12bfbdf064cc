#![allow(dead_code)]

use conic_psse::netmodel::{BranchRecord, BusKind, BusRecord, NetworkCase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random radial network on `n` buses with bus 0 as slack. Every branch
/// angle difference is drawn from (-85, 85) degrees; `lossy` adds series
/// resistance up to 0.3 x.
pub fn random_tree_case(seed: u64, n: usize, lossy: bool) -> NetworkCase<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut va = vec![0.0f64; n];
    let mut branches = Vec::with_capacity(n - 1);
    for k in 1..n {
        let parent = rng.gen_range(0..k);
        let delta = rng.gen_range(-85.0f64..85.0).to_radians();
        va[k] = va[parent] - delta;
        let x = rng.gen_range(0.05..0.5);
        let r = if lossy { rng.gen_range(0.0..0.3) * x } else { 0.0 };
        let (from, to) = if rng.gen_bool(0.5) { (parent, k) } else { (k, parent) };
        branches.push(BranchRecord { from, to, r, x, b: 0.0, tap: 1.0, shift: 0.0 });
    }
    let buses = (0..n)
        .map(|k| BusRecord {
            id: k + 1,
            kind: if k == 0 { BusKind::Slack } else { BusKind::Pq },
            p_load: 0.0,
            q_load: 0.0,
            g_shunt: 0.0,
            b_shunt: 0.0,
            vm: rng.gen_range(0.9..1.1),
            va: va[k],
        })
        .collect();
    NetworkCase { base_mva: 100.0, buses, branches }
}

