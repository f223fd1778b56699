use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{ArchConfig, Batch, N_OUTCOMES};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Preprocessed, model-ready features for one cohort, split by branch.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub n_continuous: usize,
    pub n_binary: usize,
    /// Row-major `[n × n_continuous]`, values in `[0, 1]`.
    pub continuous: Vec<f64>,
    /// Row-major `[n × n_binary]`, values in `{0, 1}`.
    pub binary: Vec<f64>,
    /// One index column per high-cardinality feature.
    pub high_card: Vec<Vec<usize>>,
    /// Row-major `[n × 4]` outcome labels.
    pub labels: Vec<f64>,
    pub encounter_ids: Vec<u64>,
    pub surgeon_ids: Vec<Option<u32>>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.encounter_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encounter_ids.is_empty()
    }

    /// Gathers the given rows into a model batch.
    pub fn batch<T: Scalar>(&self, rows: &[usize]) -> Batch<T> {
        let (nc, nb) = (self.n_continuous, self.n_binary);
        let mut cont = Vec::with_capacity(rows.len() * nc);
        let mut bin = Vec::with_capacity(rows.len() * nb);
        let mut labels = Vec::with_capacity(rows.len() * N_OUTCOMES);
        for &r in rows {
            cont.extend(self.continuous[r * nc..(r + 1) * nc].iter().map(|&v| T::lit(v)));
            bin.extend(self.binary[r * nb..(r + 1) * nb].iter().map(|&v| T::lit(v)));
            labels.extend(self.labels[r * N_OUTCOMES..(r + 1) * N_OUTCOMES].iter().map(|&v| T::lit(v)));
        }
        let b = rows.len();
        Batch {
            continuous: Tensor::new(vec![b, nc], cont).expect("continuous block"),
            binary: Tensor::new(vec![b, nb], bin).expect("binary block"),
            high_card: self.high_card.iter().map(|col| rows.iter().map(|&r| col[r]).collect()).collect(),
            labels: Tensor::new(vec![b, N_OUTCOMES], labels).expect("label block"),
        }
    }

    pub fn full_batch<T: Scalar>(&self) -> Batch<T> {
        let rows: Vec<usize> = (0..self.len()).collect();
        self.batch(&rows)
    }

    /// Column of labels for one outcome.
    pub fn outcome_labels(&self, outcome: usize) -> Vec<bool> {
        (0..self.len()).map(|r| self.labels[r * N_OUTCOMES + outcome] > 0.5).collect()
    }

    /// Row subset as a new matrix.
    pub fn select(&self, rows: &[usize]) -> FeatureMatrix {
        let (nc, nb) = (self.n_continuous, self.n_binary);
        let mut out = FeatureMatrix {
            n_continuous: nc,
            n_binary: nb,
            continuous: Vec::with_capacity(rows.len() * nc),
            binary: Vec::with_capacity(rows.len() * nb),
            high_card: self.high_card.iter().map(|_| Vec::with_capacity(rows.len())).collect(),
            labels: Vec::with_capacity(rows.len() * N_OUTCOMES),
            encounter_ids: Vec::with_capacity(rows.len()),
            surgeon_ids: Vec::with_capacity(rows.len()),
        };
        for &r in rows {
            out.continuous.extend_from_slice(&self.continuous[r * nc..(r + 1) * nc]);
            out.binary.extend_from_slice(&self.binary[r * nb..(r + 1) * nb]);
            for (dst, src) in out.high_card.iter_mut().zip(&self.high_card) {
                dst.push(src[r]);
            }
            out.labels.extend_from_slice(&self.labels[r * N_OUTCOMES..(r + 1) * N_OUTCOMES]);
            out.encounter_ids.push(self.encounter_ids[r]);
            out.surgeon_ids.push(self.surgeon_ids[r]);
        }
        out
    }

    /// Rows of every part, in order. Parts must share a layout.
    pub fn concat(parts: &[&FeatureMatrix]) -> Result<FeatureMatrix> {
        let first = parts.first().ok_or_else(|| Error::EmptyData("nothing to concatenate".into()))?;
        let mut out = first.select(&[]);
        for p in parts {
            if p.n_continuous != out.n_continuous
                || p.n_binary != out.n_binary
                || p.high_card.len() != out.high_card.len()
            {
                return Err(Error::Dimension("feature matrices with different layouts".into()));
            }
            out.continuous.extend_from_slice(&p.continuous);
            out.binary.extend_from_slice(&p.binary);
            for (dst, src) in out.high_card.iter_mut().zip(&p.high_card) {
                dst.extend_from_slice(src);
            }
            out.labels.extend_from_slice(&p.labels);
            out.encounter_ids.extend_from_slice(&p.encounter_ids);
            out.surgeon_ids.extend_from_slice(&p.surgeon_ids);
        }
        Ok(out)
    }

    /// Seeded random matrix shaped for `arch`. Labels depend on the first
    /// continuous and binary columns so that there is something to learn.
    pub fn random(arch: &ArchConfig, n: usize, seed: u64) -> FeatureMatrix {
        let mut rng = rng::stream(seed, &[rng::label_key("random-matrix")]);
        let (nc, nb) = (arch.n_continuous, arch.n_binary);
        let continuous: Vec<f64> = (0..n * nc).map(|_| rng.random::<f64>()).collect();
        let binary: Vec<f64> = (0..n * nb).map(|_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 }).collect();
        let high_card = arch.high_card.iter().map(|h| (0..n).map(|_| rng.random_range(0..h.vocab)).collect()).collect();
        let mut labels = Vec::with_capacity(n * N_OUTCOMES);
        for r in 0..n {
            let signal = continuous[r * nc] + 0.5 * binary[r * nb];
            for o in 0..N_OUTCOMES {
                let p = 1.0 / (1.0 + (-(3.0 * signal - 2.0 - o as f64 * 0.5)).exp());
                labels.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
            }
        }
        FeatureMatrix {
            n_continuous: nc,
            n_binary: nb,
            continuous,
            binary,
            high_card,
            labels,
            encounter_ids: (0..n as u64).collect(),
            surgeon_ids: (0..n).map(|r| Some((r % 7) as u32)).collect(),
        }
    }
}
