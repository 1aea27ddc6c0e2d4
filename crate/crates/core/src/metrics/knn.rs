use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activity::DailySequence;
use crate::error::{Error, Result};

/// Nearest training days for one generated day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnSample {
    pub day_id: String,
    pub nearest_id: String,
    pub top1: usize,
    pub topk_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnRecord {
    pub k: usize,
    pub exact_matches: usize,
    pub top1_mean: f64,
    pub top1_median: f64,
    pub top1_min: usize,
    pub topk_mean: f64,
    pub samples: Vec<KnnSample>,
}

/// Hamming distance from every generated day to every training day.
/// Ties for the nearest neighbour go to the earliest training day.
pub fn knn_analysis(generated: &[DailySequence], train: &[DailySequence], k: usize) -> Result<KnnRecord> {
    if generated.is_empty() || train.is_empty() {
        return Err(Error::Empty("kNN analysis needs generated and training days".into()));
    }
    if k == 0 || k > train.len() {
        return Err(Error::Config(format!(
            "k must be in 1..={}, got {k}",
            train.len()
        )));
    }
    let train_ids: Vec<Vec<u8>> = train.iter().map(|d| d.ids()).collect();

    let samples: Vec<KnnSample> = generated
        .par_iter()
        .map(|g| {
            let gi = g.ids();
            let mut dists: Vec<(usize, usize)> = train_ids
                .iter()
                .enumerate()
                .map(|(j, t)| (gi.iter().zip(t).filter(|(a, b)| a != b).count(), j))
                .collect();
            dists.sort_unstable();
            let topk = dists[..k].iter().map(|d| d.0).sum::<usize>() as f64 / k as f64;
            KnnSample {
                day_id: g.day_id().to_string(),
                nearest_id: train[dists[0].1].day_id().to_string(),
                top1: dists[0].0,
                topk_mean: topk,
            }
        })
        .collect();

    let mut top1: Vec<usize> = samples.iter().map(|s| s.top1).collect();
    top1.sort_unstable();
    let n = top1.len();
    let median = if n % 2 == 1 {
        top1[n / 2] as f64
    } else {
        (top1[n / 2 - 1] + top1[n / 2]) as f64 / 2.0
    };
    Ok(KnnRecord {
        k,
        exact_matches: top1.iter().filter(|&&d| d == 0).count(),
        top1_mean: top1.iter().sum::<usize>() as f64 / n as f64,
        top1_median: median,
        top1_min: top1[0],
        topk_mean: samples.iter().map(|s| s.topk_mean).sum::<f64>() / n as f64,
        samples,
    })
}

/// Per-sample CSV: `day_id,nearest_id,top1,topk_mean`.
pub fn knn_csv(record: &KnnRecord) -> String {
    let mut out = String::from("day_id,nearest_id,top1,topk_mean\n");
    for s in &record.samples {
        out.push_str(&format!("{},{},{},{}\n", s.day_id, s.nearest_id, s.top1, s.topk_mean));
    }
    out
}
