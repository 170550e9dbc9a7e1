use std::collections::BTreeSet;

use crate::error::{KnError, Result};
use crate::rng::Rng;

use super::Dataset;

/// Split samples among `clients` so each sees exactly `labels_per_client`
/// labels.
///
/// Label slots are dealt cyclically from a shuffled label order, and each
/// label's shuffled samples are divided evenly among the slots holding it.
/// Index sets come back sorted.
pub fn noniid_partition(ds: &Dataset, clients: usize, labels_per_client: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    let by_class: Vec<Vec<usize>> = ds.class_indices().into_iter().filter(|v| !v.is_empty()).collect();
    let classes = by_class.len();
    if clients == 0 || labels_per_client == 0 {
        return Err(KnError::InfeasiblePartition("need at least one client and one label per client".into()));
    }
    if labels_per_client > classes {
        return Err(KnError::InfeasiblePartition(format!("{labels_per_client} labels per client but only {classes} labels present")));
    }
    let slots = clients * labels_per_client;
    if slots < classes {
        return Err(KnError::InfeasiblePartition(format!("{clients} clients x {labels_per_client} labels cannot cover {classes} labels")));
    }
    let mut order: Vec<usize> = (0..classes).collect();
    rng.shuffle(&mut order);
    let slot_label: Vec<usize> = (0..slots).map(|s| order[s % classes]).collect();

    let mut parts = vec![Vec::new(); clients];
    for (class, samples) in by_class.iter().enumerate() {
        let holders: Vec<usize> = (0..slots).filter(|&s| slot_label[s] == class).collect();
        if samples.len() < holders.len() {
            return Err(KnError::InfeasiblePartition(format!(
                "label with {} samples cannot fill {} client slots",
                samples.len(),
                holders.len()
            )));
        }
        let mut shuffled = samples.clone();
        rng.shuffle(&mut shuffled);
        let k = holders.len();
        for (j, &slot) in holders.iter().enumerate() {
            let lo = j * shuffled.len() / k;
            let hi = (j + 1) * shuffled.len() / k;
            parts[slot / labels_per_client].extend_from_slice(&shuffled[lo..hi]);
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

/// `count` indices with classes as balanced as possible, sorted.
pub fn stratified_subset(ds: &Dataset, count: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    Ok(stratified_split(ds, count, 0, rng)?.0)
}

/// Two disjoint stratified index sets of the requested sizes.
pub fn stratified_split(ds: &Dataset, first: usize, second: usize, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if first + second > ds.len() {
        return Err(KnError::Config(format!("requested {} samples from a dataset of {}", first + second, ds.len())));
    }
    let mut pools = ds.class_indices();
    for p in &mut pools {
        rng.shuffle(p);
    }
    let a = take_balanced(&mut pools, first)?;
    let b = take_balanced(&mut pools, second)?;
    Ok((a, b))
}

fn take_balanced(pools: &mut [Vec<usize>], count: usize) -> Result<Vec<usize>> {
    let mut picked = BTreeSet::new();
    while picked.len() < count {
        let before = picked.len();
        for p in pools.iter_mut() {
            if picked.len() == count {
                break;
            }
            if let Some(i) = p.pop() {
                picked.insert(i);
            }
        }
        if picked.len() == before {
            return Err(KnError::Config("not enough samples for stratified subset".into()));
        }
    }
    Ok(picked.into_iter().collect())
}
