//! Feature encoding, peak-balanced dataset construction, a ridge-regression
//! surrogate and a synthetic scoring oracle.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{PredictorError, SpaceError};
use crate::memory::flops_estimate;
use crate::space::{self, rng_from_seed, sample_uniform_with, SubnetConfig, SupernetSpace};

pub const SYNTHETIC_ALPHA: f64 = 1.0;
pub const SYNTHETIC_BETA: f64 = 0.02;
pub const SYNTHETIC_SIGMA: f64 = 0.01;

pub const DEFAULT_BUCKETS: usize = 10;
pub const DEFAULT_PILOT: usize = 1000;
pub const DEFAULT_RETRY_FACTOR: usize = 100;

/// Anything that can rank configurations; higher is better.
pub trait ScorePredictor {
    fn predict_score(&self, config: &SubnetConfig, space: &SupernetSpace) -> Result<f64, PredictorError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

pub fn feature_len(space: &SupernetSpace) -> usize {
    space.resolution_options.len()
        + space.num_stages
            * (space.depth_options.len()
                + space.max_depth() * (space.kernel_options.len() + space.expand_options.len()))
}

fn one_hot(out: &mut Vec<f64>, options: &[u32], value: Option<u32>) {
    let start = out.len();
    out.resize(start + options.len(), 0.0);
    if let Some(v) = value {
        if let Some(i) = options.iter().position(|&o| o == v) {
            out[start + i] = 1.0;
        }
    }
}

/// One-hot blocks: resolution, then per stage its depth followed by a
/// kernel block and an expand block for every slot. Inactive slots stay zero.
pub fn encode(config: &SubnetConfig, space: &SupernetSpace) -> Result<FeatureVector, PredictorError> {
    space::validate(config, space).map_err(SpaceError::Validation)?;
    let mut values = Vec::with_capacity(feature_len(space));
    one_hot(&mut values, &space.resolution_options, Some(config.resolution));
    for stage in &config.stages {
        one_hot(&mut values, &space.depth_options, Some(stage.depth));
        for slot in 0..space.max_depth() {
            let active = slot < stage.depth as usize;
            one_hot(&mut values, &space.kernel_options, active.then(|| stage.kernels[slot]));
            one_hot(&mut values, &space.expand_options, active.then(|| stage.expands[slot]));
        }
    }
    Ok(FeatureVector { values })
}

/// alpha·ln(MFLOPs) + beta·(avg/peak) + sigma·N(0,1), the noise keyed by
/// the active genes and `noise_seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracle {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub noise_seed: u64,
}

impl SyntheticOracle {
    pub fn new(noise_seed: u64) -> Self {
        SyntheticOracle {
            alpha: SYNTHETIC_ALPHA,
            beta: SYNTHETIC_BETA,
            sigma: SYNTHETIC_SIGMA,
            noise_seed,
        }
    }

    pub fn noiseless() -> Self {
        SyntheticOracle {
            sigma: 0.0,
            ..Self::new(0)
        }
    }

    pub fn score(&self, config: &SubnetConfig, space: &SupernetSpace) -> Result<f64, SpaceError> {
        let skeleton = space::resolve(config, space)?;
        let to_err = |source| SpaceError::Resolution {
            resolution: config.resolution,
            source,
        };
        let flops = flops_estimate(&skeleton).map_err(to_err)?;
        let totals = skeleton.layer_totals().map_err(to_err)?;
        let peak = totals.iter().copied().max().unwrap_or(1) as f64;
        let avg = totals.iter().map(|&t| t as f64).sum::<f64>() / totals.len() as f64;
        let mut score = self.alpha * (flops as f64 / 1e6).ln() + self.beta * (avg / peak);
        if self.sigma != 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(gene_hash(config) ^ self.noise_seed);
            let z: f64 = rng.sample(StandardNormal);
            score += self.sigma * z;
        }
        Ok(score)
    }
}

impl ScorePredictor for SyntheticOracle {
    fn predict_score(&self, config: &SubnetConfig, space: &SupernetSpace) -> Result<f64, PredictorError> {
        Ok(self.score(config, space)?)
    }
}

// FNV-1a over the active genes.
fn gene_hash(config: &SubnetConfig) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for g in config.active_genes() {
        for b in g.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Synthetic score with the published constants.
pub fn synthetic_score(config: &SubnetConfig, space: &SupernetSpace, noise_seed: u64) -> Result<f64, SpaceError> {
    SyntheticOracle::new(noise_seed).score(config, space)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub config: SubnetConfig,
    pub peak_items: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub rows: Vec<DatasetRow>,
    pub bucket_edges: Vec<u64>,
}

impl Dataset {
    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for row in &self.rows {
            serde_json::to_writer(&mut writer, row)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads rows back; bucket edges are not stored in the line format.
    pub fn read_jsonl<R: BufRead>(reader: R) -> std::io::Result<Self> {
        let mut rows = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            rows.push(serde_json::from_str(&line)?);
        }
        Ok(Dataset {
            rows,
            bucket_edges: Vec::new(),
        })
    }

    /// Row count per bucket under `edges`.
    pub fn occupancy(&self, edges: &[u64]) -> Vec<usize> {
        let mut counts = vec![0; edges.len().saturating_sub(1).max(1)];
        for row in &self.rows {
            counts[bucket_of(row.peak_items, edges)] += 1;
        }
        counts
    }
}

/// Bucket index under equal-width `edges`; values outside the range are
/// clamped into the end buckets.
pub fn bucket_of(peak: u64, edges: &[u64]) -> usize {
    let buckets = edges.len().saturating_sub(1).max(1);
    let (lo, hi) = match (edges.first(), edges.last()) {
        (Some(&lo), Some(&hi)) if hi > lo => (lo, hi),
        _ => return 0,
    };
    if peak <= lo {
        return 0;
    }
    let idx = ((peak - lo) as u128 * buckets as u128 / (hi - lo) as u128) as usize;
    idx.min(buckets - 1)
}

fn equal_width_edges(lo: u64, hi: u64, buckets: usize) -> Vec<u64> {
    (0..=buckets)
        .map(|i| lo + ((hi - lo) as u128 * i as u128 / buckets as u128) as u64)
        .collect()
}

fn profiled_draw(rng: &mut ChaCha8Rng, space: &SupernetSpace) -> Result<(SubnetConfig, u64), PredictorError> {
    let config = sample_uniform_with(rng, space);
    let skeleton = space::resolve(&config, space)?;
    let peak = skeleton.peak_items().map_err(|source| SpaceError::Resolution {
        resolution: config.resolution,
        source,
    })?;
    Ok((config, peak))
}

fn attach_scores<P: ScorePredictor + ?Sized>(
    drawn: Vec<(SubnetConfig, u64)>,
    space: &SupernetSpace,
    scorer: &P,
) -> Result<Vec<DatasetRow>, PredictorError> {
    drawn
        .into_iter()
        .map(|(config, peak_items)| {
            let score = scorer.predict_score(&config, space)?;
            Ok(DatasetRow {
                config,
                peak_items,
                score,
            })
        })
        .collect()
}

/// Peak-stratified sampling with the default pilot size and retry budget.
pub fn balanced_sample<P: ScorePredictor + ?Sized>(
    space: &SupernetSpace,
    n: usize,
    num_buckets: usize,
    seed: u64,
    scorer: &P,
) -> Result<Dataset, PredictorError> {
    balanced_sample_with(space, n, num_buckets, seed, scorer, DEFAULT_PILOT, DEFAULT_RETRY_FACTOR)
}

/// Draws a pilot to fix equal-width bucket edges over its peak range, then
/// keeps drawing (pilot draws included) until every bucket holds its share.
/// Shares differ by at most one, the remainder going to the lowest buckets.
pub fn balanced_sample_with<P: ScorePredictor + ?Sized>(
    space: &SupernetSpace,
    n: usize,
    num_buckets: usize,
    seed: u64,
    scorer: &P,
    pilot: usize,
    retry_factor: usize,
) -> Result<Dataset, PredictorError> {
    if num_buckets == 0 {
        return Err(PredictorError::InvalidRequest("num_buckets must be positive".into()));
    }
    if n < num_buckets {
        return Err(PredictorError::InvalidRequest(format!(
            "n ({n}) must be at least num_buckets ({num_buckets})"
        )));
    }
    space.validate()?;
    let mut rng = rng_from_seed(seed);
    let pilot = pilot.max(1);
    let mut draws = Vec::with_capacity(pilot);
    for _ in 0..pilot {
        draws.push(profiled_draw(&mut rng, space)?);
    }
    let lo = draws.iter().map(|d| d.1).min().unwrap_or(0);
    let hi = draws.iter().map(|d| d.1).max().unwrap_or(0);
    let edges = equal_width_edges(lo, hi, num_buckets);

    let base = n / num_buckets;
    let rem = n % num_buckets;
    let targets: Vec<usize> = (0..num_buckets).map(|b| base + usize::from(b < rem)).collect();
    let mut occupancy = vec![0usize; num_buckets];
    let mut kept = Vec::with_capacity(n);
    let budget = retry_factor.saturating_mul(n).max(pilot);
    let mut attempts = 0usize;
    let mut pending = draws.into_iter();
    while kept.len() < n {
        let draw = match pending.next() {
            Some(d) => d,
            None => {
                if attempts >= budget {
                    return Err(PredictorError::PartialDataset {
                        attempts,
                        occupancy,
                        target: base,
                    });
                }
                profiled_draw(&mut rng, space)?
            }
        };
        attempts += 1;
        let b = bucket_of(draw.1, &edges);
        if occupancy[b] < targets[b] {
            occupancy[b] += 1;
            kept.push(draw);
        }
    }
    Ok(Dataset {
        rows: attach_scores(kept, space, scorer)?,
        bucket_edges: edges,
    })
}

/// The first `n` uniform draws under `seed`, without stratification.
pub fn uniform_sample<P: ScorePredictor + ?Sized>(
    space: &SupernetSpace,
    n: usize,
    seed: u64,
    scorer: &P,
) -> Result<Dataset, PredictorError> {
    space.validate()?;
    let mut rng = rng_from_seed(seed);
    let drawn = (0..n)
        .map(|_| profiled_draw(&mut rng, space))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        rows: attach_scores(drawn, space, scorer)?,
        bucket_edges: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub l2: f64,
    pub seed: u64,
    pub rows: usize,
}

impl PredictorModel {
    pub fn predict_features(&self, features: &FeatureVector) -> Result<f64, PredictorError> {
        if features.values.len() != self.weights.len() {
            return Err(PredictorError::FeatureLength {
                expected: self.weights.len(),
                got: features.values.len(),
            });
        }
        let dot: f64 = self.weights.iter().zip(&features.values).map(|(w, x)| w * x).sum();
        Ok(dot + self.intercept)
    }
}

impl ScorePredictor for PredictorModel {
    fn predict_score(&self, config: &SubnetConfig, space: &SupernetSpace) -> Result<f64, PredictorError> {
        predict(self, config, space)
    }
}

/// Ridge regression with an unpenalized intercept:
/// minimizes Σ(y − w·x − b)² + l2·|w|².
///
/// Solved through the SVD of the centered design, so rank-deficient designs
/// (one-hot blocks always are) get the minimum-norm solution when `l2 = 0`.
/// `seed` is recorded as metadata only; training itself is deterministic.
pub fn train(dataset: &Dataset, space: &SupernetSpace, l2: f64, seed: u64) -> Result<PredictorModel, PredictorError> {
    if dataset.rows.is_empty() {
        return Err(PredictorError::EmptyDataset);
    }
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(PredictorError::InvalidRequest(format!("l2 must be finite and non-negative, got {l2}")));
    }
    let n = dataset.rows.len();
    let p = feature_len(space);
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut y = DVector::<f64>::zeros(n);
    for (i, row) in dataset.rows.iter().enumerate() {
        let f = encode(&row.config, space)?;
        for (j, v) in f.values.iter().enumerate() {
            x[(i, j)] = *v;
        }
        y[i] = row.score;
    }
    let x_mean: DVector<f64> = DVector::from_iterator(p, x.column_iter().map(|c| c.mean()));
    let y_mean = y.mean();
    for j in 0..p {
        let m = x_mean[j];
        x.column_mut(j).add_scalar_mut(-m);
    }
    y.add_scalar_mut(-y_mean);

    let weights = if p == 0 {
        DVector::zeros(0)
    } else {
        let svd = x.svd(true, true);
        let u = svd.u.as_ref().expect("u requested");
        let v_t = svd.v_t.as_ref().expect("v_t requested");
        let s = &svd.singular_values;
        let s_max = s.max();
        let tol = s_max * (n.max(p) as f64) * f64::EPSILON;
        let rank = s.iter().filter(|&&v| v > tol).count();
        if l2 == 0.0 && rank == 0 {
            return Err(PredictorError::Singular(
                "all rows share one feature vector; use l2 > 0 or a varied dataset".into(),
            ));
        }
        let uty = u.transpose() * &y;
        let mut scaled = DVector::zeros(s.len());
        for k in 0..s.len() {
            if s[k] > tol {
                scaled[k] = s[k] / (s[k] * s[k] + l2) * uty[k];
            }
        }
        v_t.transpose() * scaled
    };
    let intercept = y_mean - weights.dot(&x_mean);
    let weights: Vec<f64> = weights.iter().copied().collect();
    if !intercept.is_finite() || weights.iter().any(|w| !w.is_finite()) {
        return Err(PredictorError::Singular("non-finite weights".into()));
    }
    Ok(PredictorModel {
        weights,
        intercept,
        l2,
        seed,
        rows: n,
    })
}

pub fn predict(model: &PredictorModel, config: &SubnetConfig, space: &SupernetSpace) -> Result<f64, PredictorError> {
    model.predict_features(&encode(config, space)?)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either side is constant or the inputs are shorter than two.
pub fn rank_correlation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "rank_correlation needs equal-length inputs");
    if a.len() < 2 {
        return 0.0;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::sample_uniform;

    fn space() -> SupernetSpace {
        SupernetSpace::moofa()
    }

    #[test]
    fn feature_length_and_blocks() {
        let sp = space();
        assert_eq!(feature_len(&sp), 4 + 5 * (3 + 4 * 6));
        let f = encode(&sp.maximal_config(), &sp).unwrap();
        assert_eq!(f.values.len(), 139);
        // resolution block picks the last option
        assert_eq!(&f.values[..4], &[0.0, 0.0, 0.0, 1.0]);
        for chunk in f.values[4..].chunks(3) {
            assert_eq!(chunk, &[0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn kernel_change_touches_one_block() {
        let sp = space();
        let a = sp.maximal_config();
        let mut b = a.clone();
        b.stages[2].kernels[1] = 3;
        let (fa, fb) = (encode(&a, &sp).unwrap(), encode(&b, &sp).unwrap());
        let diff: Vec<usize> = (0..fa.values.len()).filter(|&i| fa.values[i] != fb.values[i]).collect();
        // stage 2, slot 1 kernel block starts after resolution, two stages and depth + one slot
        let start = 4 + 2 * 27 + 3 + 6;
        assert_eq!(diff.len(), 2);
        assert!(diff.iter().all(|i| (start..start + 3).contains(i)), "{diff:?}");
    }

    #[test]
    fn inert_slots_do_not_encode() {
        let sp = space();
        let mut a = sp.minimal_config();
        let before = encode(&a, &sp).unwrap();
        a.stages[0].kernels[3] = 7;
        a.stages[0].expands[3] = 4;
        assert_eq!(encode(&a, &sp).unwrap(), before);
    }

    #[test]
    fn encode_rejects_invalid() {
        let sp = space();
        let mut a = sp.minimal_config();
        a.stages[1].kernels[0] = 4;
        assert!(matches!(encode(&a, &sp), Err(PredictorError::Space(SpaceError::Validation(_)))));
    }

    #[test]
    fn synthetic_score_deterministic() {
        let sp = space();
        let c = sample_uniform(&sp, 5);
        assert_eq!(synthetic_score(&c, &sp, 9).unwrap(), synthetic_score(&c, &sp, 9).unwrap());
        assert_ne!(synthetic_score(&c, &sp, 9).unwrap(), synthetic_score(&c, &sp, 10).unwrap());
        let quiet = SyntheticOracle::noiseless();
        assert!(quiet.score(&sp.maximal_config(), &sp).unwrap() > quiet.score(&sp.minimal_config(), &sp).unwrap());
    }

    #[test]
    fn synthetic_moments_reproducible() {
        let sp = space();
        let oracle = SyntheticOracle::new(3);
        let moments = |seed| {
            let mut rng = rng_from_seed(seed);
            let xs: Vec<f64> = (0..10_000)
                .map(|_| oracle.score(&sample_uniform_with(&mut rng, &sp), &sp).unwrap())
                .collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
            (m, v)
        };
        let (m, v) = moments(11);
        assert!(m.is_finite() && v.is_finite() && v > 0.0);
        assert_eq!(moments(11), (m, v));
    }

    #[test]
    fn balanced_one_bucket_is_uniform() {
        let sp = space();
        let oracle = SyntheticOracle::noiseless();
        let balanced = balanced_sample(&sp, 50, 1, 4, &oracle).unwrap();
        let uniform = uniform_sample(&sp, 50, 4, &oracle).unwrap();
        assert_eq!(balanced.rows, uniform.rows);
    }

    #[test]
    fn balanced_occupancy_and_peaks() {
        let sp = space();
        let oracle = SyntheticOracle::noiseless();
        let ds = balanced_sample(&sp, 203, 10, 8, &oracle).unwrap();
        assert_eq!(ds.rows.len(), 203);
        let occ = ds.occupancy(&ds.bucket_edges);
        assert_eq!(occ.len(), 10);
        assert!(occ.iter().max().unwrap() - occ.iter().min().unwrap() <= 1);
        for row in &ds.rows {
            let fresh = crate::memory::profile_network(&space::resolve(&row.config, &sp).unwrap()).unwrap();
            assert_eq!(row.peak_items, fresh.peak_items);
        }
    }

    #[test]
    fn balanced_request_errors() {
        let sp = space();
        let oracle = SyntheticOracle::noiseless();
        assert!(matches!(
            balanced_sample(&sp, 3, 10, 0, &oracle),
            Err(PredictorError::InvalidRequest(_))
        ));
        match balanced_sample_with(&sp, 100, 10, 0, &oracle, 50, 1) {
            Err(PredictorError::PartialDataset { occupancy, target, .. }) => {
                assert_eq!(target, 10);
                assert_eq!(occupancy.len(), 10);
                assert!(occupancy.iter().sum::<usize>() < 100);
            }
            other => panic!("expected partial dataset, got {other:?}"),
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let sp = space();
        let ds = uniform_sample(&sp, 5, 2, &SyntheticOracle::new(1)).unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 5);
        let back = Dataset::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back.rows, ds.rows);
    }

    // Scores generated from a known linear function of the features.
    fn linear_dataset(sp: &SupernetSpace, n: usize) -> (Dataset, Vec<f64>) {
        let p = feature_len(sp);
        let truth: Vec<f64> = (0..p).map(|j| ((j * 37 % 11) as f64 - 5.0) * 0.1).collect();
        let mut rng = rng_from_seed(21);
        let rows = (0..n)
            .map(|_| {
                let config = sample_uniform_with(&mut rng, sp);
                let f = encode(&config, sp).unwrap();
                let score = 0.5 + f.values.iter().zip(&truth).map(|(x, w)| x * w).sum::<f64>();
                DatasetRow {
                    config,
                    peak_items: 0,
                    score,
                }
            })
            .collect();
        (Dataset { rows, bucket_edges: vec![] }, truth)
    }

    #[test]
    fn exact_fit_residual() {
        let sp = space();
        let (ds, _) = linear_dataset(&sp, 400);
        let model = train(&ds, &sp, 0.0, 0).unwrap();
        for row in &ds.rows {
            assert!((predict(&model, &row.config, &sp).unwrap() - row.score).abs() <= 1e-6);
        }
        assert_eq!(model.rows, 400);
    }

    #[test]
    fn heavy_ridge_shrinks_to_mean() {
        let sp = space();
        let (ds, _) = linear_dataset(&sp, 300);
        let model = train(&ds, &sp, 1e6, 0).unwrap();
        let mean = ds.rows.iter().map(|r| r.score).sum::<f64>() / ds.rows.len() as f64;
        assert!(model.weights.iter().all(|w| w.abs() < 1e-3));
        for row in ds.rows.iter().take(20) {
            assert!((predict(&model, &row.config, &sp).unwrap() - mean).abs() < 1e-2);
        }
    }

    #[test]
    fn identical_rows_singular() {
        let sp = space();
        let row = DatasetRow {
            config: sp.maximal_config(),
            peak_items: 0,
            score: 1.0,
        };
        let ds = Dataset {
            rows: vec![row; 5],
            bucket_edges: vec![],
        };
        assert!(matches!(train(&ds, &sp, 0.0, 0), Err(PredictorError::Singular(_))));
        let model = train(&ds, &sp, 1.0, 0).unwrap();
        assert!((predict(&model, &sp.maximal_config(), &sp).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(train(&Dataset::default(), &sp, 0.0, 0), Err(PredictorError::EmptyDataset));
    }

    #[test]
    fn train_deterministic() {
        let sp = space();
        let (ds, _) = linear_dataset(&sp, 200);
        assert_eq!(train(&ds, &sp, 0.5, 3).unwrap(), train(&ds, &sp, 0.5, 3).unwrap());
    }

    #[test]
    fn held_out_rank_correlation() {
        let sp = space();
        let oracle = SyntheticOracle::new(7);
        let ds = uniform_sample(&sp, 2000, 1, &oracle).unwrap();
        let (train_rows, test_rows) = ds.rows.split_at(1600);
        let model = train(
            &Dataset {
                rows: train_rows.to_vec(),
                bucket_edges: vec![],
            },
            &sp,
            1e-3,
            1,
        )
        .unwrap();
        let pred: Vec<f64> = test_rows.iter().map(|r| predict(&model, &r.config, &sp).unwrap()).collect();
        let truth: Vec<f64> = test_rows.iter().map(|r| r.score).collect();
        let rho = rank_correlation(&pred, &truth);
        assert!(rho >= 0.8, "rank correlation {rho}");
    }

    #[test]
    fn feature_length_mismatch() {
        let sp = space();
        let model = PredictorModel {
            weights: vec![0.0; 3],
            intercept: 0.0,
            l2: 0.0,
            seed: 0,
            rows: 1,
        };
        assert_eq!(
            predict(&model, &sp.maximal_config(), &sp),
            Err(PredictorError::FeatureLength { expected: 3, got: 139 })
        );
    }

    #[test]
    fn batch_predict_is_fast() {
        let sp = space();
        let (ds, _) = linear_dataset(&sp, 200);
        let model = train(&ds, &sp, 0.1, 0).unwrap();
        let mut rng = rng_from_seed(2);
        let configs: Vec<SubnetConfig> = (0..100_000).map(|_| sample_uniform_with(&mut rng, &sp)).collect();
        let start = std::time::Instant::now();
        let total: f64 = configs.iter().map(|c| predict(&model, c, &sp).unwrap()).sum();
        assert!(total.is_finite());
        assert!(start.elapsed().as_secs_f64() < 5.0, "{:?}", start.elapsed());
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![2.5, 0.0, 2.5, 1.0]);
        assert!((rank_correlation(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((rank_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(rank_correlation(&[1.0, 1.0], &[1.0, 2.0]), 0.0);
    }
}
