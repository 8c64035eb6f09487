//! Test-side oracles, written from the protocol definitions without reusing
//! the library's matching or AP code.

#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::HashMap;

use odas_core::{ASGroundTruth, ASPrediction};
use rand::Rng;

/// Ranking by the documented order: score descending, earlier time, then
/// video id.
pub fn oracle_rank(preds: &[ASPrediction]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    idx.sort_by(|&i, &j| {
        let (a, b) = (&preds[i], &preds[j]);
        match b.score.partial_cmp(&a.score).unwrap() {
            Ordering::Equal => match a.time.partial_cmp(&b.time).unwrap() {
                Ordering::Equal => a.video_id.cmp(&b.video_id),
                o => o,
            },
            o => o,
        }
    });
    idx
}

/// Lexicographically largest true-positive flag vector (in ranking order)
/// over every one-to-one assignment of predictions to same-video,
/// same-class, non-ambiguous ground truths closer than `offset`.
///
/// Exhaustive over matchings: the memo table maps (rank, set of consumed
/// ground truths) to the best suffix, so every assignment is covered.
pub fn oracle_flags(preds: &[ASPrediction], gts: &[ASGroundTruth], offset: f64) -> Vec<bool> {
    let gts: Vec<&ASGroundTruth> = gts.iter().filter(|g| !g.ambiguous).collect();
    assert!(gts.len() <= 16, "oracle limited to 16 ground truths");
    let order = oracle_rank(preds);
    let eligible: Vec<Vec<usize>> = order
        .iter()
        .map(|&i| {
            let p = &preds[i];
            (0..gts.len())
                .filter(|&j| {
                    let g = gts[j];
                    g.video_id == p.video_id && g.action_class == p.action_class && (p.time - g.as_time).abs() < offset
                })
                .collect()
        })
        .collect();
    let mut memo: HashMap<(usize, u32), Vec<bool>> = HashMap::new();
    best_suffix(0, 0, &eligible, &mut memo)
}

fn best_suffix(rank: usize, used: u32, eligible: &[Vec<usize>], memo: &mut HashMap<(usize, u32), Vec<bool>>) -> Vec<bool> {
    if rank == eligible.len() {
        return Vec::new();
    }
    if let Some(v) = memo.get(&(rank, used)) {
        return v.clone();
    }
    let mut best = {
        let mut v = vec![false];
        v.extend(best_suffix(rank + 1, used, eligible, memo));
        v
    };
    for &j in &eligible[rank] {
        if used & (1 << j) != 0 {
            continue;
        }
        let mut v = vec![true];
        v.extend(best_suffix(rank + 1, used | (1 << j), eligible, memo));
        if v > best {
            best = v;
        }
    }
    memo.insert((rank, used), best.clone());
    best
}

/// Largest number of predictions that can be matched at all.
pub fn oracle_max_matching(preds: &[ASPrediction], gts: &[ASGroundTruth], offset: f64) -> usize {
    let gts: Vec<&ASGroundTruth> = gts.iter().filter(|g| !g.ambiguous).collect();
    fn go(i: usize, used: u32, preds: &[ASPrediction], gts: &[&ASGroundTruth], offset: f64, memo: &mut HashMap<(usize, u32), usize>) -> usize {
        if i == preds.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, used)) {
            return v;
        }
        let p = &preds[i];
        let mut best = go(i + 1, used, preds, gts, offset, memo);
        for (j, g) in gts.iter().enumerate() {
            if used & (1 << j) == 0
                && g.video_id == p.video_id
                && g.action_class == p.action_class
                && (p.time - g.as_time).abs() < offset
            {
                best = best.max(1 + go(i + 1, used | (1 << j), preds, gts, offset, memo));
            }
        }
        memo.insert((i, used), best);
        best
    }
    go(0, 0, preds, &gts, offset, &mut HashMap::new())
}

/// AP straight from the definition: the precision at each true positive whose
/// recall does not exceed `depth`, summed over `depth * num_gt`.
pub fn oracle_ap(flags: &[bool], num_gt: usize, depth: f64) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut hits = 0;
    for k in 0..flags.len() {
        if !flags[k] {
            continue;
        }
        hits += 1;
        let recall = hits as f64 / num_gt as f64;
        if recall > depth + 1e-12 {
            break;
        }
        let precision = flags[..=k].iter().filter(|f| **f).count() as f64 / (k + 1) as f64;
        total += precision;
    }
    total / (depth * num_gt as f64)
}

/// A random evaluation instance.
pub struct Instance {
    pub num_classes: usize,
    pub preds: Vec<ASPrediction>,
    pub gts: Vec<ASGroundTruth>,
}

/// Up to `max_classes` classes, `max_preds` predictions and `max_gts` ground
/// truths over two videos of `span` seconds. Times and scores sit on coarse
/// grids so distance and score ties occur.
pub fn random_instance<R: Rng>(rng: &mut R, max_classes: usize, max_preds: usize, max_gts: usize, span: f64) -> Instance {
    let k = rng.random_range(1..=max_classes);
    let videos = ["va", "vb"];
    let t = |rng: &mut R| (rng.random_range(0.0..span) * 4.0).round() / 4.0;
    let gts = (0..rng.random_range(0..=max_gts))
        .map(|_| {
            let v = videos[rng.random_range(0..2)];
            let time = t(rng);
            ASGroundTruth::new(v, time, rng.random_range(1..=k) as u32, rng.random_bool(0.1)).unwrap()
        })
        .collect();
    let preds = (0..rng.random_range(0..=max_preds))
        .map(|_| {
            let v = videos[rng.random_range(0..2)];
            let time = t(rng);
            let score = rng.random_range(0..=10) as f64 / 10.0;
            ASPrediction::new(v, time, rng.random_range(1..=k) as u32, score).unwrap()
        })
        .collect();
    Instance {
        num_classes: k,
        preds,
        gts,
    }
}

pub fn of_class<T: Clone>(items: &[T], class: u32, get: impl Fn(&T) -> u32) -> Vec<T> {
    items.iter().filter(|x| get(x) == class).cloned().collect()
}
