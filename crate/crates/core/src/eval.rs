//! Bidirectional 1-NN evaluation: overfitting (generated -> data, precision
//! direction) and mode drop (data -> generated, recall direction), in pixel
//! space and in the feature space of a frozen random embedder, with
//! Avg / top-10% / top-5% statistics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DomainTag, LatentSet, SampleSet};
use crate::error::{Error, Result};
use crate::network::{self, GeneratorSpec, LayerSpec, ParamStore, LEAKY_SLOPE};
use crate::tensor::{Precision, Tensor};

/// Frozen, seeded random-weight MLP mapping data_dim -> 64 features. Stands
/// in for a pretrained vision backbone at desk scale; reports label the
/// space so its numbers are never compared with pretrained-feature results.
#[derive(Clone, Debug)]
pub struct FeatureEmbedder {
    layers: Vec<LayerSpec>,
    params: ParamStore,
    seed: u64,
    data_dim: usize,
}

pub const FEATURE_DIM: usize = 64;

impl FeatureEmbedder {
    pub fn new(data_dim: usize, seed: u64) -> Self {
        let layers = vec![
            LayerSpec::Dense {
                in_dim: data_dim,
                out_dim: FEATURE_DIM,
                spectral_norm: false,
            },
            LayerSpec::LeakyRelu { slope: LEAKY_SLOPE },
            LayerSpec::Dense {
                in_dim: FEATURE_DIM,
                out_dim: FEATURE_DIM,
                spectral_norm: false,
            },
        ];
        let params = network::init_params(&layers, seed);
        FeatureEmbedder {
            layers,
            params,
            seed,
            data_dim,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embed(&self, batch: &Tensor) -> Result<Tensor> {
        let (_, dim) = batch.as_matrix()?;
        if dim != self.data_dim {
            return Err(Error::ShapeMismatch {
                op: "FeatureEmbedder::embed",
                detail: format!("expected dim {}, got {dim}", self.data_dim),
            });
        }
        let spec = GeneratorSpec {
            latent_dim: self.data_dim,
            data_dim: FEATURE_DIM,
            layers: self.layers.clone(),
            image_mode: false,
        };
        network::generator_forward(&spec, &self.params, batch, Precision::F64)
    }
}

#[derive(Clone, Copy, Debug)]
pub enum DistanceSpace<'a> {
    /// Mean absolute difference; image values are rescaled to [0, 255],
    /// planar coordinates are used raw.
    PixelL1,
    /// Euclidean distance between embedder outputs.
    FeatureL2(&'a FeatureEmbedder),
}

impl DistanceSpace<'_> {
    pub fn label(&self) -> String {
        match self {
            DistanceSpace::PixelL1 => "pixel".to_string(),
            DistanceSpace::FeatureL2(e) => format!("feature(random,{})", e.seed()),
        }
    }
}

/// Mean L1 distance between two samples; image mode rescales [-1,1] values
/// to [0,255] before differencing.
pub fn pixel_distance(a: &Tensor, b: &Tensor, domain: DomainTag) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "pixel_distance",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    Ok(pixel_distance_slices(a.data(), b.data(), domain))
}

fn pixel_distance_slices(a: &[f64], b: &[f64], domain: DomainTag) -> f64 {
    let scale = match domain {
        DomainTag::Planar2d => 1.0,
        DomainTag::Image { .. } => 127.5,
    };
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += (x - y).abs();
    }
    scale * acc / a.len() as f64
}

pub fn feature_distance(a: &Tensor, b: &Tensor, embedder: &FeatureEmbedder) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "feature_distance",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let fa = embedder.embed(a)?;
    let fb = embedder.embed(b)?;
    Ok(l2_slices(fa.data(), fb.data()))
}

fn l2_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NNResult {
    pub index: usize,
    pub distance: f64,
}

/// Exact brute-force nearest neighbor of each query row in the corpus rows.
/// Ties break to the lowest corpus index.
pub fn nn_search(
    queries: &Tensor,
    corpus: &Tensor,
    space: DistanceSpace<'_>,
    domain: DomainTag,
) -> Result<Vec<NNResult>> {
    let (nq, dq) = queries.as_matrix()?;
    let (nc, dc) = corpus.as_matrix()?;
    if nc == 0 {
        return Err(Error::InvalidArgument("empty corpus".to_string()));
    }
    if dq != dc {
        return Err(Error::ShapeMismatch {
            op: "nn_search",
            detail: format!("query dim {dq} vs corpus dim {dc}"),
        });
    }
    // precompute embeddings once in feature space
    let (q_rows, c_rows, dim, is_feature) = match space {
        DistanceSpace::PixelL1 => (queries.clone(), corpus.clone(), dq, false),
        DistanceSpace::FeatureL2(e) => (e.embed(queries)?, e.embed(corpus)?, FEATURE_DIM, true),
    };
    let mut out = Vec::with_capacity(nq);
    for qi in 0..nq {
        let q = &q_rows.data()[qi * dim..(qi + 1) * dim];
        let mut best = NNResult {
            index: 0,
            distance: f64::INFINITY,
        };
        for ci in 0..nc {
            let c = &c_rows.data()[ci * dim..(ci + 1) * dim];
            let d = if is_feature {
                l2_slices(q, c)
            } else {
                pixel_distance_slices(q, c, domain)
            };
            if d < best.distance {
                best = NNResult {
                    index: ci,
                    distance: d,
                };
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// avg = mean, topP = mean of the ceil(P * count) largest distances.
pub fn report_stats(distances: &[f64]) -> Result<(f64, f64, f64)> {
    if distances.is_empty() {
        return Err(Error::InvalidArgument("empty distance list".to_string()));
    }
    let n = distances.len();
    let avg = distances.iter().sum::<f64>() / n as f64;
    let mut sorted = distances.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite distances"));
    let top = |p: f64| {
        let count = ((p * n as f64).ceil() as usize).max(1);
        sorted[..count].iter().sum::<f64>() / count as f64
    };
    Ok((avg, top(0.10), top(0.05)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Overfitting,
    ModeDrop,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Direction::Overfitting => write!(f, "overfitting"),
            Direction::ModeDrop => write!(f, "mode_drop"),
        }
    }
}

/// One Table-1-style row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub direction: Direction,
    pub space: String,
    pub avg: f64,
    pub top10: f64,
    pub top5: f64,
    pub query_count: usize,
    pub seed_eval: u64,
}

/// Seeded subsample of `count` indices from 0..total without replacement,
/// in draw order.
pub fn subsample_indices(total: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > total {
        return Err(Error::InvalidArgument(format!(
            "subsample of {count} from population {total}"
        )));
    }
    if count == total {
        return Ok((0..total).collect());
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..total).collect();
    let (head, _) = idx.partial_shuffle(&mut rng, count);
    Ok(head.to_vec())
}

/// Query-vs-corpus report shared by both directions.
pub fn directional_report(
    queries: &Tensor,
    corpus: &Tensor,
    domain: DomainTag,
    space: DistanceSpace<'_>,
    direction: Direction,
    seed_eval: u64,
) -> Result<MetricsReport> {
    let results = nn_search(queries, corpus, space, domain)?;
    let distances: Vec<f64> = results.iter().map(|r| r.distance).collect();
    let (avg, top10, top5) = report_stats(&distances)?;
    Ok(MetricsReport {
        direction,
        space: space.label(),
        avg,
        top10,
        top5,
        query_count: distances.len(),
        seed_eval,
    })
}

/// Precision direction: nearest data sample of each generated query.
/// Queries are generated from a seeded without-replacement subsample of Z
/// (unperturbed latents) using the supplied (EMA) generator parameters.
pub fn overfitting_metric(
    gspec: &GeneratorSpec,
    params: &ParamStore,
    latents: &LatentSet,
    data: &SampleSet,
    space: DistanceSpace<'_>,
    query_count: usize,
    seed_eval: u64,
    precision: Precision,
) -> Result<MetricsReport> {
    let idx = subsample_indices(latents.len(), query_count, seed_eval)?;
    let z = latents.latents().gather_rows(&idx)?;
    let generated = network::generator_forward(gspec, params, &z, precision)?;
    directional_report(
        &generated,
        data.samples(),
        data.domain(),
        space,
        Direction::Overfitting,
        seed_eval,
    )
}

/// Recall direction: nearest generated sample of each data query. The corpus
/// is all k generated samples; queries are a seeded subsample of X.
pub fn mode_drop_metric(
    gspec: &GeneratorSpec,
    params: &ParamStore,
    latents: &LatentSet,
    data: &SampleSet,
    space: DistanceSpace<'_>,
    query_count: usize,
    seed_eval: u64,
    precision: Precision,
) -> Result<MetricsReport> {
    let idx = subsample_indices(data.len(), query_count, seed_eval)?;
    let queries = data.samples().gather_rows(&idx)?;
    let generated = network::generator_forward(gspec, params, latents.latents(), precision)?;
    directional_report(
        &queries,
        &generated,
        data.domain(),
        space,
        Direction::ModeDrop,
        seed_eval,
    )
}

/// Full-population mode-drop average in pixel space; the training stop rule
/// tracks this value.
pub fn mode_drop_avg_full(
    gspec: &GeneratorSpec,
    params: &ParamStore,
    latents: &LatentSet,
    data: &SampleSet,
    precision: Precision,
) -> Result<f64> {
    let generated = network::generator_forward(gspec, params, latents.latents(), precision)?;
    let report = directional_report(
        data.samples(),
        &generated,
        data.domain(),
        DistanceSpace::PixelL1,
        Direction::ModeDrop,
        0,
    )?;
    Ok(report.avg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn planar(rows: Vec<[f64; 2]>) -> Tensor {
        let n = rows.len();
        Tensor::new(vec![n, 2], rows.into_iter().flatten().collect()).unwrap()
    }

    #[test]
    fn pixel_distance_trivial() {
        let a = Tensor::new(vec![1, 4], vec![-1.0; 4]).unwrap();
        let b = Tensor::new(vec![1, 4], vec![1.0; 4]).unwrap();
        let d = pixel_distance(&a, &b, DomainTag::Image { h: 2, w: 2, c: 1 }).unwrap();
        assert_eq!(d, 255.0);
        assert_eq!(
            pixel_distance(&a, &a, DomainTag::Image { h: 2, w: 2, c: 1 }).unwrap(),
            0.0
        );
    }

    #[test]
    fn pixel_distance_matches_scalar_loop() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ta = Tensor::new(vec![1, 6], a.clone()).unwrap();
        let tb = Tensor::new(vec![1, 6], b.clone()).unwrap();
        let mut oracle = 0.0;
        for i in 0..6 {
            let ra = (a[i] + 1.0) * 127.5;
            let rb = (b[i] + 1.0) * 127.5;
            oracle += (ra - rb).abs();
        }
        oracle /= 6.0;
        let d = pixel_distance(&ta, &tb, DomainTag::Image { h: 1, w: 6, c: 1 }).unwrap();
        assert!((d - oracle).abs() < 1e-12);
    }

    #[test]
    fn feature_distance_symmetric_and_zero_on_equal() {
        let e = FeatureEmbedder::new(2, 3);
        let a = planar(vec![[0.3, -0.4]]);
        let b = planar(vec![[1.0, 0.2]]);
        assert_eq!(feature_distance(&a, &a, &e).unwrap(), 0.0);
        assert_eq!(
            feature_distance(&a, &b, &e).unwrap(),
            feature_distance(&b, &a, &e).unwrap()
        );
    }

    #[test]
    fn feature_distance_triangle_inequality() {
        let e = FeatureEmbedder::new(2, 9);
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        for _ in 0..1000 {
            let p = |rng: &mut ChaCha12Rng| {
                planar(vec![[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]])
            };
            let (a, b, c) = (p(&mut rng), p(&mut rng), p(&mut rng));
            let ab = feature_distance(&a, &b, &e).unwrap();
            let bc = feature_distance(&b, &c, &e).unwrap();
            let ac = feature_distance(&a, &c, &e).unwrap();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn nn_finds_self_and_breaks_ties_low() {
        let corpus = planar(vec![[5.0, 5.0], [1.0, 1.0], [1.0, 1.0]]);
        let queries = planar(vec![[1.0, 1.0]]);
        let r = nn_search(&queries, &corpus, DistanceSpace::PixelL1, DomainTag::Planar2d).unwrap();
        assert_eq!(r[0].index, 1);
        assert_eq!(r[0].distance, 0.0);
    }

    #[test]
    fn nn_rejects_empty_corpus() {
        // a zero-row tensor cannot be built; exercise the dim-mismatch path
        let queries = planar(vec![[0.0, 0.0]]);
        let corpus = Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap();
        assert!(nn_search(&queries, &corpus, DistanceSpace::PixelL1, DomainTag::Planar2d).is_err());
    }

    #[test]
    fn report_stats_ceil_rule() {
        let d: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let (avg, top10, top5) = report_stats(&d).unwrap();
        assert_eq!(avg, 5.5);
        assert_eq!(top10, 10.0);
        assert_eq!(top5, 10.0);
        let (a, b, c) = report_stats(&[3.0; 7]).unwrap();
        assert_eq!((a, b, c), (3.0, 3.0, 3.0));
    }

    #[test]
    fn report_stats_matches_sort_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let d: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..10.0)).collect();
        let (avg, top10, top5) = report_stats(&d).unwrap();
        let mut sorted = d.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let oracle_avg = d.iter().sum::<f64>() / 200.0;
        let oracle10 = sorted[..20].iter().sum::<f64>() / 20.0;
        let oracle5 = sorted[..10].iter().sum::<f64>() / 10.0;
        assert!((avg - oracle_avg).abs() < 1e-12);
        assert!((top10 - oracle10).abs() < 1e-12);
        assert!((top5 - oracle5).abs() < 1e-12);
        assert!(top5 >= top10 && top10 >= avg);
    }

    #[test]
    fn subsample_is_seeded_and_distinct() {
        let a = subsample_indices(100, 20, 5).unwrap();
        let b = subsample_indices(100, 20, 5).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 20);
        assert_eq!(subsample_indices(10, 10, 1).unwrap(), (0..10).collect::<Vec<_>>());
        assert!(subsample_indices(5, 6, 1).is_err());
    }

    #[test]
    fn identical_sets_give_zero_overfitting_avg() {
        let corpus = planar(vec![[0.0, 0.0], [1.0, 2.0], [-1.0, 0.5]]);
        let report = directional_report(
            &corpus,
            &corpus,
            DomainTag::Planar2d,
            DistanceSpace::PixelL1,
            Direction::Overfitting,
            0,
        )
        .unwrap();
        assert_eq!(report.avg, 0.0);
    }

    #[test]
    fn collapsed_corpus_mode_drop_is_analytic_mean() {
        let queries = planar(vec![[0.0, 0.0], [2.0, 0.0], [0.0, 4.0]]);
        let corpus = planar(vec![[1.0, 1.0]]);
        let report = directional_report(
            &queries,
            &corpus,
            DomainTag::Planar2d,
            DistanceSpace::PixelL1,
            Direction::ModeDrop,
            0,
        )
        .unwrap();
        // mean L1 per sample: (|1|+|1|)/2, (|1|+|1|)/2, (|1|+|3|)/2 -> 1,1,2
        assert!((report.avg - (1.0 + 1.0 + 2.0) / 3.0).abs() < 1e-12);
    }
}
