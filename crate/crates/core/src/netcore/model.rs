use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::layers::{RegressionHead, TrunkWeights, UtilityHead};
use super::loss::{pairwise_loss, sigmoid};
use super::{ParamBlock, ParamSet};

/// `Δ(a, b) = u·h_a − u·h_b`. Swapping the arguments negates the result exactly.
pub fn delta(head: &UtilityHead, h_a: &[f64], h_b: &[f64]) -> Result<f64> {
    Ok(head.score(h_a)? - head.score(h_b)?)
}

/// Trunk plus utility head. Both documents of a pair go through the same trunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseModel {
    pub trunk: TrunkWeights,
    pub head: UtilityHead,
}

impl PairwiseModel {
    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        PairwiseModel {
            trunk: TrunkWeights::zeros(input_dim, output_dim),
            head: UtilityHead {
                u: vec![0.0; output_dim],
            },
        }
    }

    pub fn utility(&self, x: &[f64]) -> Result<f64> {
        self.head.score(&self.trunk.forward(x)?)
    }

    pub fn delta(&self, x_a: &[f64], x_b: &[f64]) -> Result<f64> {
        delta(&self.head, &self.trunk.forward(x_a)?, &self.trunk.forward(x_b)?)
    }

    /// Mean pairwise logistic loss over the batch.
    pub fn loss(&self, batch: &[(&[f64], &[f64])]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty pair batch"));
        }
        let mut total = 0.0;
        for (xa, xb) in batch {
            total += pairwise_loss(self.delta(xa, xb)?);
        }
        Ok(total / batch.len() as f64)
    }
}

impl ParamSet for PairwiseModel {
    fn blocks(&self) -> Vec<ParamBlock<'_>> {
        vec![
            ParamBlock { name: "trunk.w", values: &self.trunk.w, decay: true },
            ParamBlock { name: "trunk.b", values: &self.trunk.b, decay: false },
            ParamBlock { name: "utility.u", values: &self.head.u, decay: true },
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.trunk.w, &mut self.trunk.b, &mut self.head.u]
    }
}

/// Mean loss and exact gradient of the pairwise logistic objective.
///
/// Each pair is in canonical orientation (first document should score
/// higher). The trunk gradient sums the contributions of both branches.
pub fn grad_pairwise(model: &PairwiseModel, batch: &[(&[f64], &[f64])]) -> Result<(f64, PairwiseModel)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty pair batch"));
    }
    let d = model.trunk.output_dim;
    let mut grad = PairwiseModel::zeros(model.trunk.input_dim, d);
    let mut total = 0.0;
    let mut dz = vec![0.0; d];
    for (xa, xb) in batch {
        let za = model.trunk.pre_activation(xa)?;
        let zb = model.trunk.pre_activation(xb)?;
        let ha: Vec<f64> = za.iter().map(|v| v.max(0.0)).collect();
        let hb: Vec<f64> = zb.iter().map(|v| v.max(0.0)).collect();
        let diff = delta(&model.head, &ha, &hb)?;
        total += pairwise_loss(diff);
        // dL/dΔ = −σ(−Δ)
        let g = -sigmoid(-diff);
        for j in 0..d {
            grad.head.u[j] += g * (ha[j] - hb[j]);
        }
        for (side, (x, z)) in [(1.0, (xa, &za)), (-1.0, (xb, &zb))] {
            for j in 0..d {
                dz[j] = if z[j] > 0.0 { side * g * model.head.u[j] } else { 0.0 };
            }
            grad.trunk.accumulate(x, &dz);
        }
    }
    let n = batch.len() as f64;
    for block in grad.blocks_mut() {
        block.iter_mut().for_each(|v| *v /= n);
    }
    Ok((total / n, grad))
}

/// Per-document Stage-1 embeddings held fixed during absolute training.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrozenEmbeddings {
    pub dim: usize,
    pub table: BTreeMap<String, Vec<f64>>,
}

impl FrozenEmbeddings {
    pub fn get(&self, doc_id: &str) -> Result<&[f64]> {
        self.table
            .get(doc_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEmbedding(doc_id.to_string()))
    }
}

/// Trainable part of the absolute scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsoluteParams {
    pub trunk: TrunkWeights,
    pub head: RegressionHead,
}

impl AbsoluteParams {
    pub fn zeros_like(&self) -> Self {
        AbsoluteParams {
            trunk: TrunkWeights::zeros(self.trunk.input_dim, self.trunk.output_dim),
            head: RegressionHead::zeros(self.head.input_dim),
        }
    }
}

impl ParamSet for AbsoluteParams {
    fn blocks(&self) -> Vec<ParamBlock<'_>> {
        vec![
            ParamBlock { name: "trunk.w", values: &self.trunk.w, decay: true },
            ParamBlock { name: "trunk.b", values: &self.trunk.b, decay: false },
            ParamBlock { name: "head.w1", values: &self.head.w1, decay: true },
            ParamBlock { name: "head.b1", values: &self.head.b1, decay: false },
            ParamBlock { name: "head.w2", values: &self.head.w2, decay: true },
            ParamBlock { name: "head.b2", values: std::slice::from_ref(&self.head.b2), decay: false },
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.trunk.w,
            &mut self.trunk.b,
            &mut self.head.w1,
            &mut self.head.b1,
            &mut self.head.w2,
            std::slice::from_mut(&mut self.head.b2),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AbsExample<'a> {
    pub doc_id: &'a str,
    pub x: &'a [f64],
    pub y: f64,
}

/// Absolute scorer. With `frozen` set (fusion), the head sees
/// `[trunk(x) ‖ frozen[doc_id]]`; the frozen part is data, not a parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsoluteModel {
    pub params: AbsoluteParams,
    pub frozen: Option<FrozenEmbeddings>,
}

impl AbsoluteModel {
    pub fn head_input(&self, doc_id: &str, h: Vec<f64>) -> Result<Vec<f64>> {
        match &self.frozen {
            None => Ok(h),
            Some(f) => {
                let mut v = h;
                v.extend_from_slice(f.get(doc_id)?);
                Ok(v)
            }
        }
    }

    pub fn predict_one(&self, doc_id: &str, x: &[f64]) -> Result<f64> {
        let h = self.params.trunk.forward(x)?;
        self.params.head.forward(&self.head_input(doc_id, h)?)
    }

    pub fn loss(&self, batch: &[AbsExample<'_>]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut total = 0.0;
        for ex in batch {
            total += (self.predict_one(ex.doc_id, ex.x)? - ex.y).abs();
        }
        Ok(total / batch.len() as f64)
    }
}

/// Mean L1 loss and its exact subgradient (zero where `pred == y`).
/// The frozen fusion inputs receive no gradient: they are not in [`AbsoluteParams`].
pub fn grad_absolute(model: &AbsoluteModel, batch: &[AbsExample<'_>]) -> Result<(f64, AbsoluteParams)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let p = &model.params;
    let d = p.trunk.output_dim;
    let k = p.head.hidden;
    let mut grad = p.zeros_like();
    let mut total = 0.0;
    for ex in batch {
        let z = p.trunk.pre_activation(ex.x)?;
        let h: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
        let input = model.head_input(ex.doc_id, h)?;
        let tr = p.head.trace(&input)?;
        let err = tr.pred - ex.y;
        total += err.abs();
        let g = if err > 0.0 {
            1.0
        } else if err < 0.0 {
            -1.0
        } else {
            0.0
        };
        if g == 0.0 {
            continue;
        }
        grad.head.b2 += g;
        let mut dz1 = vec![0.0; k];
        for j in 0..k {
            grad.head.w2[j] += g * tr.a1[j];
            if tr.z1[j] > 0.0 {
                dz1[j] = g * p.head.w2[j];
            }
        }
        for (i, &xi) in input.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (gw, &dzj) in grad.head.w1[i * k..(i + 1) * k].iter_mut().zip(&dz1) {
                *gw += xi * dzj;
            }
        }
        for (gb, &dzj) in grad.head.b1.iter_mut().zip(&dz1) {
            *gb += dzj;
        }
        // Only the first d head inputs come from the live trunk.
        let mut dz = vec![0.0; d];
        for i in 0..d {
            if z[i] > 0.0 {
                dz[i] = crate::netcore::dot(&p.head.w1[i * k..(i + 1) * k], &dz1);
            }
        }
        grad.trunk.accumulate(ex.x, &dz);
    }
    let n = batch.len() as f64;
    for block in grad.blocks_mut() {
        block.iter_mut().for_each(|v| *v /= n);
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_trunk_gives_zero_embedding() {
        let t = TrunkWeights::zeros(5, 3);
        assert_eq!(t.forward(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn relu_clamps_negative_bias() {
        let mut t = TrunkWeights::zeros(4, 3);
        t.b = vec![0.5, -0.25, 1.0];
        assert_eq!(t.forward(&[1.0; 4]).unwrap(), vec![0.5, 0.0, 1.0]);
    }

    #[test]
    fn trunk_matches_triple_loop() {
        let mut rng = seed::rng(3);
        let (f, d) = (17, 6);
        let t = TrunkWeights {
            input_dim: f,
            output_dim: d,
            w: random_vec(&mut rng, f * d),
            b: random_vec(&mut rng, d),
        };
        for _ in 0..20 {
            let x = random_vec(&mut rng, f);
            let got = t.forward(&x).unwrap();
            for j in 0..d {
                let mut acc = t.b[j];
                for i in 0..f {
                    acc += t.w[i * d + j] * x[i];
                }
                assert!((got[j] - acc.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trunk_dimension_mismatch() {
        let t = TrunkWeights::zeros(4, 2);
        assert!(matches!(t.forward(&[1.0; 3]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn delta_examples() {
        let head = UtilityHead { u: vec![1.0, 0.0, 0.0] };
        assert_eq!(delta(&head, &[2.0, 7.0, 1.0], &[0.5, -3.0, 9.0]).unwrap(), 1.5);
        let h = [0.3, 0.2, 0.1];
        assert_eq!(delta(&head, &h, &h).unwrap(), 0.0);
        assert!(delta(&head, &[1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    proptest! {
        #[test]
        fn delta_antisymmetric(
            u in prop::collection::vec(-10.0f64..10.0, 8),
            a in prop::collection::vec(0.0f64..5.0, 8),
            b in prop::collection::vec(0.0f64..5.0, 8),
        ) {
            let head = UtilityHead { u };
            let ab = delta(&head, &a, &b).unwrap();
            let ba = delta(&head, &b, &a).unwrap();
            prop_assert_eq!(ab.to_bits(), (-ba).to_bits());
        }
    }

    #[test]
    fn saturated_pairs_have_vanishing_gradient() {
        let (f, d) = (6, 4);
        let mut m = PairwiseModel::zeros(f, d);
        m.trunk.b = vec![1.0; d];
        m.trunk.w[0] = 1.0;
        m.trunk.w[1] = 1.0;
        m.head.u = vec![100.0, 100.0, 0.0, 0.0];
        // x_a lights up coordinate 0 strongly; x_b is empty: Δ = 100·(big).
        let xa = [50.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let xb = [0.0; 6];
        let batch = vec![(&xa[..], &xb[..]); 3];
        let (loss, g) = grad_pairwise(&m, &batch).unwrap();
        assert!(loss < 1e-20);
        assert!(g.l2_norm() < 1e-8, "{}", g.l2_norm());
    }

    #[test]
    fn head_gradient_flips_with_reflected_construction() {
        // Model A ranks (x, y) with head u; model B ranks the reflected pair
        // (y, x) with head −u. Δ is identical, so the head gradients are negatives.
        let mut rng = seed::rng(8);
        let (f, d) = (7, 5);
        let trunk = TrunkWeights::init(f, d, &mut rng).unwrap();
        let u = random_vec(&mut rng, d);
        let a = PairwiseModel { trunk: trunk.clone(), head: UtilityHead { u: u.clone() } };
        let b = PairwiseModel { trunk, head: UtilityHead { u: u.iter().map(|v| -v).collect() } };
        let xs: Vec<(Vec<f64>, Vec<f64>)> = (0..4)
            .map(|_| (random_vec(&mut rng, f), random_vec(&mut rng, f)))
            .collect();
        let fwd: Vec<(&[f64], &[f64])> = xs.iter().map(|(p, q)| (p.as_slice(), q.as_slice())).collect();
        let rev: Vec<(&[f64], &[f64])> = xs.iter().map(|(p, q)| (q.as_slice(), p.as_slice())).collect();
        let (la, ga) = grad_pairwise(&a, &fwd).unwrap();
        let (lb, gb) = grad_pairwise(&b, &rev).unwrap();
        assert_eq!(la, lb);
        for (x, y) in ga.head.u.iter().zip(&gb.head.u) {
            assert!((x + y).abs() < 1e-15);
        }
        for (x, y) in ga.trunk.w.iter().zip(&gb.trunk.w) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    fn tiny_absolute(fusion: bool) -> (AbsoluteModel, Vec<(String, Vec<f64>, f64)>) {
        let mut rng = seed::rng(21);
        let (f, d) = (6, 4);
        let trunk = TrunkWeights::init(f, d, &mut rng).unwrap();
        let d_in = if fusion { 2 * d } else { d };
        let head = RegressionHead::init(d_in, &mut rng).unwrap();
        let docs: Vec<(String, Vec<f64>, f64)> = (0..5)
            .map(|i| (format!("d{i}"), random_vec(&mut rng, f), 1.0 + 0.5 * i as f64))
            .collect();
        let frozen = fusion.then(|| FrozenEmbeddings {
            dim: d,
            table: docs
                .iter()
                .map(|(id, _, _)| (id.clone(), random_vec(&mut rng, d)))
                .collect(),
        });
        (AbsoluteModel { params: AbsoluteParams { trunk, head }, frozen }, docs)
    }

    #[test]
    fn exact_fit_gives_zero_gradient() {
        let (m, docs) = tiny_absolute(false);
        let batch: Vec<AbsExample> = docs
            .iter()
            .map(|(id, x, _)| AbsExample { doc_id: id, x, y: m.predict_one(id, x).unwrap() })
            .collect();
        let (loss, g) = grad_absolute(&m, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.l2_norm(), 0.0);
    }

    #[test]
    fn fusion_gradient_has_no_frozen_block() {
        let (m, docs) = tiny_absolute(true);
        let batch: Vec<AbsExample> = docs
            .iter()
            .map(|(id, x, y)| AbsExample { doc_id: id, x, y: *y })
            .collect();
        let (_, g) = grad_absolute(&m, &batch).unwrap();
        let names: Vec<&str> = g.blocks().iter().map(|b| b.name).collect();
        assert_eq!(names, ["trunk.w", "trunk.b", "head.w1", "head.b1", "head.w2", "head.b2"]);
        assert_eq!(g.head.input_dim, 8);
        assert_eq!(g.trunk.output_dim, 4);
    }

    #[test]
    fn fusion_missing_embedding_names_doc() {
        let (m, docs) = tiny_absolute(true);
        let err = m.predict_one("nope", &docs[0].1).unwrap_err();
        assert!(matches!(err, Error::MissingEmbedding(id) if id == "nope"));
    }

    #[test]
    fn head_forward_matches_loop_oracle() {
        let (m, docs) = tiny_absolute(false);
        let p = &m.params;
        for (id, x, _) in &docs {
            let mut h = [0.0; 4];
            for j in 0..4 {
                let mut acc = p.trunk.b[j];
                for i in 0..6 {
                    acc += p.trunk.w[i * 4 + j] * x[i];
                }
                h[j] = acc.max(0.0);
            }
            let mut pred = p.head.b2;
            for j in 0..2 {
                let mut acc = p.head.b1[j];
                for i in 0..4 {
                    acc += p.head.w1[i * 2 + j] * h[i];
                }
                pred += p.head.w2[j] * acc.max(0.0);
            }
            assert!((m.predict_one(id, x).unwrap() - pred).abs() < 1e-12);
        }
    }
}
