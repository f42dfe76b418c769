//! Class-balanced client shards and per-round client selection.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};

use crate::rng::{self, tag};
use crate::{Error, Result};

/// Split sample indices into `n_clients` disjoint, class-balanced shards.
///
/// Each class is shuffled and dealt round-robin, so when a class count is
/// not divisible by `n_clients` the first `count % n_clients` clients get
/// one extra sample of it. Shards keep dataset order, so a single client
/// receives the dataset exactly as given.
pub fn partition_data(labels: &[usize], n_clients: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_clients == 0 {
        return Err(Error::Config("need at least one client".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut shards = vec![Vec::new(); n_clients];
    for (class, mut idx) in by_class {
        idx.shuffle(&mut rng::rng(rng::derive(seed, &[tag::PARTITION, class as u64])));
        for (j, i) in idx.into_iter().enumerate() {
            shards[j % n_clients].push(i);
        }
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(shards)
}

/// `m` distinct clients drawn uniformly, reproducible from `(seed, round)`,
/// returned in ascending order.
pub fn select_clients(n_clients: usize, m: usize, round: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 || m > n_clients {
        return Err(Error::Config(format!("cannot select {m} of {n_clients} clients")));
    }
    let mut r = rng::rng(rng::derive(seed, &[tag::SELECT, round as u64]));
    let mut ids = index::sample(&mut r, n_clients, m).into_vec();
    ids.sort_unstable();
    Ok(ids)
}
