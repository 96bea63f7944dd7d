//! Split-crowd reliability estimation.
//!
//! The responses of every item are split by submission time into two equal
//! halves. Each half is aggregated on its own, which yields two independent
//! "experts from the crowd" whose agreement can be measured with Cohen's
//! kappa. Sub-sampling `k` responses per item from each half and sweeping the
//! confidence threshold gives agreement curves over crowd size.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::{cohen_kappa, LabelSeriesPair};
use crate::crowd::{mace_fit, threshold_predictions, AggregationConfig, CrowdError, ResponseSet, WorkerResponse};

#[derive(Debug, Error)]
pub enum ReliabilityError {
    #[error("item {item:?} has {count} responses; an even number >= 2 is required")]
    OddResponses { item: String, count: usize },
    #[error("k = {k} exceeds the group size {group} of item {item:?}")]
    KTooLarge { k: usize, group: usize, item: String },
    #[error("k must be >= 1")]
    ZeroK,
    #[error("repeats must be >= 1")]
    ZeroRepeats,
    #[error("no usable repeat for k = {k}, keep fraction {keep_fraction} ({skipped} skipped)")]
    NoUsableRepeat { k: usize, keep_fraction: f64, skipped: usize },
    #[error(transparent)]
    Crowd(#[from] CrowdError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCurvePoint {
    pub crowd_size_k: usize,
    pub keep_fraction: f64,
    pub mean_kappa: f64,
    pub std_kappa: f64,
    pub mean_coverage: f64,
    /// Repeats that produced a kappa value.
    pub repeats: usize,
    /// Repeats without jointly labeled items or with undefined kappa.
    pub skipped: usize,
}

/// Splits every item's responses into the earlier and the later half.
/// Ties in submission time are ordered by worker id.
pub fn split_by_submission_time(
    responses: &[WorkerResponse],
) -> Result<(Vec<WorkerResponse>, Vec<WorkerResponse>), ReliabilityError> {
    let mut by_item: BTreeMap<&str, Vec<&WorkerResponse>> = BTreeMap::new();
    for r in responses {
        by_item.entry(r.item_id.as_str()).or_default().push(r);
    }
    let mut early = Vec::with_capacity(responses.len() / 2);
    let mut late = Vec::with_capacity(responses.len() / 2);
    for (item, mut group) in by_item {
        if group.len() % 2 != 0 {
            return Err(ReliabilityError::OddResponses {
                item: item.to_string(),
                count: group.len(),
            });
        }
        group.sort_by(|a, b| {
            a.submission_time
                .cmp(&b.submission_time)
                .then_with(|| a.worker_id.cmp(&b.worker_id))
        });
        let half = group.len() / 2;
        early.extend(group[..half].iter().map(|r| (*r).clone()));
        late.extend(group[half..].iter().map(|r| (*r).clone()));
    }
    Ok((early, late))
}

#[derive(Debug, Clone)]
pub struct CurveSpec {
    pub k_range: Vec<usize>,
    pub keep_fractions: Vec<f64>,
    pub repeats: usize,
    pub aggregation: AggregationConfig,
    pub labels: Option<Vec<String>>,
}

impl CurveSpec {
    pub fn new(k_range: Vec<usize>, keep_fractions: Vec<f64>, repeats: usize, aggregation: AggregationConfig) -> Self {
        CurveSpec {
            k_range,
            keep_fractions,
            repeats,
            aggregation,
            labels: None,
        }
    }
}

type Groups<'a> = BTreeMap<&'a str, Vec<&'a WorkerResponse>>;

fn group_by_item(responses: &[WorkerResponse]) -> Groups<'_> {
    let mut groups: Groups<'_> = BTreeMap::new();
    for r in responses {
        groups.entry(r.item_id.as_str()).or_default().push(r);
    }
    groups
}

/// Computes one curve point per (k, keep fraction), k-major order.
pub fn reliability_curve(
    responses: &[WorkerResponse],
    spec: &CurveSpec,
) -> Result<Vec<ReliabilityCurvePoint>, ReliabilityError> {
    if spec.repeats == 0 {
        return Err(ReliabilityError::ZeroRepeats);
    }
    let (early, late) = split_by_submission_time(responses)?;
    let groups = [group_by_item(&early), group_by_item(&late)];
    let n_items = groups[0].len();
    for &k in &spec.k_range {
        if k == 0 {
            return Err(ReliabilityError::ZeroK);
        }
        for (item, rs) in &groups[0] {
            if k > rs.len() {
                return Err(ReliabilityError::KTooLarge {
                    k,
                    group: rs.len(),
                    item: item.to_string(),
                });
            }
        }
    }
    let labels = match &spec.labels {
        Some(l) => l.clone(),
        None => {
            let mut l: Vec<String> = responses.iter().map(|r| r.label.clone()).collect();
            l.sort();
            l.dedup();
            l
        }
    };

    let grid: Vec<(usize, usize, f64)> = spec
        .k_range
        .iter()
        .enumerate()
        .flat_map(|(ki, &k)| {
            spec.keep_fractions
                .iter()
                .enumerate()
                .map(move |(fi, &f)| (point_index(ki, fi), k, f))
        })
        .collect();

    grid.par_iter()
        .map(|&(index, k, fraction)| {
            let seed = derive_seed(spec.aggregation.seed, index as u64);
            curve_point(&groups, n_items, k, fraction, spec, &labels, seed)
        })
        .collect()
}

fn point_index(ki: usize, fi: usize) -> usize {
    (ki << 16) | fi
}

/// SplitMix64 finalizer over `base + stream`, giving independent seeds per
/// grid point and repeat.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn curve_point(
    groups: &[Groups<'_>; 2],
    n_items: usize,
    k: usize,
    fraction: f64,
    spec: &CurveSpec,
    labels: &[String],
    seed: u64,
) -> Result<ReliabilityCurvePoint, ReliabilityError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kappas = Vec::with_capacity(spec.repeats);
    let mut coverages = Vec::with_capacity(spec.repeats);
    let mut skipped = 0;
    for repeat in 0..spec.repeats {
        let mut expert = Vec::with_capacity(2);
        for group in groups {
            let sample: Vec<WorkerResponse> = group
                .values()
                .flat_map(|rs| rs.choose_multiple(&mut rng, k).map(|r| (*r).clone()).collect::<Vec<_>>())
                .collect();
            let set = ResponseSet::new(&sample, Some(labels))?;
            let config = AggregationConfig {
                seed: derive_seed(seed, repeat as u64),
                ..spec.aggregation.clone()
            };
            let model = mace_fit(&set, &config)?;
            let kept: BTreeMap<String, String> = threshold_predictions(&model, fraction)?
                .into_iter()
                .map(|(item, p)| (item, p.label))
                .collect();
            expert.push(kept);
        }
        let pair = LabelSeriesPair::from_maps(&expert[0], &expert[1]);
        if pair.is_empty() {
            skipped += 1;
            continue;
        }
        match cohen_kappa(&pair) {
            Ok(kappa) => {
                kappas.push(kappa);
                coverages.push(pair.len() as f64 / n_items as f64);
            }
            Err(_) => skipped += 1,
        }
    }
    if kappas.is_empty() {
        return Err(ReliabilityError::NoUsableRepeat {
            k,
            keep_fraction: fraction,
            skipped,
        });
    }
    let (mean_kappa, std_kappa) = mean_std(&kappas);
    let (mean_coverage, _) = mean_std(&coverages);
    Ok(ReliabilityCurvePoint {
        crowd_size_k: k,
        keep_fraction: fraction,
        mean_kappa,
        std_kappa,
        mean_coverage,
        repeats: kappas.len(),
        skipped,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn write_curve_csv<W: Write>(out: &mut W, points: &[ReliabilityCurvePoint]) -> io::Result<()> {
    writeln!(out, "k,keep_fraction,mean_kappa,std_kappa,mean_coverage,repeats")?;
    for p in points {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{}",
            p.crowd_size_k, p.keep_fraction, p.mean_kappa, p.std_kappa, p.mean_coverage, p.repeats
        )?;
    }
    Ok(())
}

/// Line chart of mean kappa over k, one polyline per keep fraction.
pub fn render_curve_svg(points: &[ReliabilityCurvePoint]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

    let k_max = points.iter().map(|p| p.crowd_size_k).max().unwrap_or(1).max(2) as f64;
    let k_min = points.iter().map(|p| p.crowd_size_k).min().unwrap_or(1) as f64;
    let k_span = (k_max - k_min).max(1.0);
    let y_min = points.iter().map(|p| p.mean_kappa).fold(0.0, f64::min);
    let x = |k: usize| PAD + (k as f64 - k_min) / k_span * (W - 2.0 * PAD);
    let y = |v: f64| H - PAD - (v - y_min) / (1.0 - y_min) * (H - 2.0 * PAD);

    let mut series: BTreeMap<String, Vec<&ReliabilityCurvePoint>> = BTreeMap::new();
    for p in points {
        series.entry(format!("{:.4}", p.keep_fraction)).or_default().push(p);
    }

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{t}\" text-anchor=\"middle\" font-size=\"12\">crowd size per group (k)</text>\n\
         <text x=\"14\" y=\"{cy}\" font-size=\"12\" transform=\"rotate(-90 14 {cy})\" text-anchor=\"middle\">mean kappa</text>\n",
        b = H - PAD,
        r = W - PAD,
        cx = W / 2.0,
        t = H - 12.0,
        cy = H / 2.0,
    );
    for (idx, (label, pts)) in series.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.1},{:.1}", x(p.crowd_size_k), y(p.mean_kappa)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            coords.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"{color}\">keep {label}</text>\n",
            W - PAD - 80.0,
            PAD + 14.0 * idx as f64
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
