//! Embedding-distance reports between the isolated primitive and the example
//! primitives. Conventions: euclidean on unit-L2-normalized vectors,
//! manhattan on unit-L1-normalized vectors, cosine reported as a distance
//! (1 - similarity) so all three shrink as embeddings align.

use super::EvalError;
use crate::model::{EmbeddingSide, Seq2SeqModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceTriple {
    pub euclidean: f64,
    pub manhattan: f64,
    pub cosine_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDistances {
    pub example_primitive: String,
    pub distances: DistanceTriple,
}

/// Distances from one isolated primitive's embedding to each example
/// primitive, plus their arithmetic means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub isolated: String,
    /// Which embedding table was analyzed (always the source side: the
    /// isolated primitive is an input word).
    pub side: EmbeddingSide,
    pub n_example_primitives: usize,
    pub per_example_primitive: Vec<PairDistances>,
    pub average: DistanceTriple,
}

fn l2_normalized(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

fn l1_normalized(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x.abs()).sum::<f64>();
    if norm == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

pub(crate) fn distance_triple(a: &[f64], b: &[f64]) -> DistanceTriple {
    let (a2, b2) = (l2_normalized(a), l2_normalized(b));
    let euclidean = a2
        .iter()
        .zip(&b2)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let (a1, b1) = (l1_normalized(a), l1_normalized(b));
    let manhattan = a1.iter().zip(&b1).map(|(x, y)| (x - y).abs()).sum::<f64>();
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cosine_distance = if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        1.0 - dot / (na * nb)
    };
    DistanceTriple {
        euclidean,
        manhattan,
        cosine_distance,
    }
}

pub fn embedding_distance_report(
    model: &Seq2SeqModel,
    isolated: &str,
    example_primitives: &[String],
) -> Result<EmbeddingReport, EvalError> {
    if example_primitives.is_empty() {
        return Err(EvalError::InvalidConfig(
            "need at least one example primitive".into(),
        ));
    }
    let iso_vec = model
        .token_embedding_of(EmbeddingSide::Source, isolated)
        .map_err(|_| EvalError::UnknownToken(isolated.to_string()))?;
    let mut per = Vec::with_capacity(example_primitives.len());
    for p in example_primitives {
        let v = model
            .token_embedding_of(EmbeddingSide::Source, p)
            .map_err(|_| EvalError::UnknownToken(p.clone()))?;
        per.push(PairDistances {
            example_primitive: p.clone(),
            distances: distance_triple(&iso_vec, &v),
        });
    }
    let n = per.len() as f64;
    let average = DistanceTriple {
        euclidean: per.iter().map(|p| p.distances.euclidean).sum::<f64>() / n,
        manhattan: per.iter().map(|p| p.distances.manhattan).sum::<f64>() / n,
        cosine_distance: per.iter().map(|p| p.distances.cosine_distance).sum::<f64>() / n,
    };
    Ok(EmbeddingReport {
        isolated: isolated.to_string(),
        side: EmbeddingSide::Source,
        n_example_primitives: per.len(),
        per_example_primitive: per,
        average,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_vectors_have_zero_distances() {
        let d = distance_triple(&[1.0, 2.0, -0.5], &[1.0, 2.0, -0.5]);
        assert!(d.euclidean < 1e-12);
        assert!(d.manhattan < 1e-12);
        assert!(d.cosine_distance < 1e-12);
    }

    #[test]
    fn orthogonal_unit_vectors_hit_analytic_values() {
        let d = distance_triple(&[1.0, 0.0], &[0.0, 1.0]);
        assert!((d.euclidean - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!((d.cosine_distance - 1.0).abs() < 1e-12);
        assert!((d.manhattan - 2.0).abs() < 1e-12);
    }

    #[test]
    fn metric_axioms_on_random_vectors() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0);
        for _ in 0..50 {
            let a: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ab = distance_triple(&a, &b);
            let ba = distance_triple(&b, &a);
            assert!((ab.euclidean - ba.euclidean).abs() < 1e-12);
            assert!((ab.manhattan - ba.manhattan).abs() < 1e-12);
            assert!((ab.cosine_distance - ba.cosine_distance).abs() < 1e-12);
            assert!(ab.euclidean >= 0.0 && ab.euclidean <= 2.0 + 1e-12);
            assert!(ab.manhattan >= 0.0 && ab.manhattan <= 2.0 + 1e-12);
            assert!(ab.cosine_distance >= 0.0 && ab.cosine_distance <= 2.0 + 1e-12);
        }
    }
}
