//! Brute-force reference for the full classification pipeline.
//!
//! Written directly from the formulas with plain loops and without touching
//! the library's geometry helpers. Distance uses the Möbius-addition form
//! `2 artanh |(-a) ⊕ b|` rather than the arcosh form the library uses.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tdha_core::prototype::{negative_draws, PrototypeConfig};
use tdha_core::textbank::{aggregate, AggregateMode};
use tdha_core::{
    classify_batch, Component, Components, EmbeddingVector, FusionConfig, MeanMode, Metric, PromptBank,
    PrototypeSet, SupportSet,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub dim: usize,
    pub names: Vec<String>,
    pub support: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub prompts_pos: Vec<Vec<Vec<f64>>>,
    pub prompts_neg: Vec<Vec<Vec<f64>>>,
    pub test: Vec<Vec<f64>>,
    pub scale: f64,
    pub seed: u64,
    pub mean_mode: MeanMode,
    pub fusion: FusionConfig,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-4 {
            return v;
        }
    }
}

/// Random small instance: K in 2..=5, d in 2..=4, every knob randomised.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let k = rng.random_range(2..=5);
    let dim = rng.random_range(2..=4);
    let shots = rng.random_range(1..=4);
    let mut support = Vec::new();
    let mut labels = Vec::new();
    // Interleave classes so support order is not grouped by label.
    for _ in 0..shots {
        for c in 0..k {
            support.push(gaussian_vec(rng, dim));
            labels.push(c);
        }
    }
    let prompts = |rng: &mut ChaCha8Rng| -> Vec<Vec<Vec<f64>>> {
        (0..k)
            .map(|_| {
                let l = rng.random_range(1..=3);
                (0..l).map(|_| gaussian_vec(rng, dim).iter().map(|x| x * 3.0).collect()).collect()
            })
            .collect()
    };
    let prompts_pos = prompts(rng);
    let prompts_neg = prompts(rng);
    let test = (0..rng.random_range(1..=6)).map(|_| gaussian_vec(rng, dim)).collect();
    let mut comps = Vec::new();
    while comps.is_empty() {
        for c in [Component::IipPos, Component::IipNeg, Component::ItpPos, Component::ItpNeg] {
            if rng.random_bool(0.6) {
                comps.push(c);
            }
        }
    }
    Instance {
        dim,
        names: (0..k).map(|c| format!("c{c}")).collect(),
        support,
        labels,
        prompts_pos,
        prompts_neg,
        test,
        scale: rng.random_range(0.1..1.5),
        seed: rng.random(),
        mean_mode: if rng.random_bool(0.5) { MeanMode::Ambient } else { MeanMode::Tangent },
        fusion: FusionConfig {
            alpha: rng.random_range(0.0..2.0),
            epsilon: rng.random_range(0.5..10.0),
            tau: [0.01, 0.05, 0.3, 1.0][rng.random_range(0..4)],
            components: Components::new(&comps).unwrap(),
            metric: if rng.random_bool(0.5) { Metric::Hd } else { Metric::Ecs },
            renormalize: false,
        },
    }
}

impl Instance {
    pub fn class_count(&self) -> usize {
        self.names.len()
    }

    pub fn support_set(&self) -> SupportSet {
        let f = self.support.iter().map(|v| EmbeddingVector::new(v.clone()).unwrap()).collect();
        SupportSet::new(f, self.labels.clone(), self.names.clone()).unwrap()
    }

    pub fn prompt_bank(&self) -> PromptBank {
        let conv = |side: &Vec<Vec<Vec<f64>>>| {
            side.iter()
                .map(|ps| ps.iter().map(|p| EmbeddingVector::new(p.clone()).unwrap()).collect())
                .collect()
        };
        PromptBank { class_names: self.names.clone(), positive: conv(&self.prompts_pos), negative: conv(&self.prompts_neg) }
    }

    /// Library output: predicted class and score vector per test item.
    pub fn run_library(&self) -> Vec<(usize, Vec<f64>)> {
        let support = self.support_set();
        let protos = PrototypeSet::build(
            &support,
            &PrototypeConfig { scale: self.scale, seed: self.seed, mean_mode: self.mean_mode },
        )
        .unwrap();
        let bank = aggregate(&self.prompt_bank(), AggregateMode::Normalized).unwrap();
        let test: Vec<EmbeddingVector> = self.test.iter().map(|v| EmbeddingVector::new(v.clone()).unwrap()).collect();
        classify_batch(&test, &protos, &bank, &self.fusion, self.scale)
            .unwrap()
            .into_iter()
            .map(|(c, p)| (c, p.scores))
            .collect()
    }

    /// Reference scores, given the library's choice of negative draws.
    pub fn run_oracle(&self) -> Vec<Vec<f64>> {
        let draws = negative_draws(&self.support_set(), self.seed).unwrap();
        self.test.iter().map(|v| self.oracle_scores(v, &draws)).collect()
    }

    fn oracle_scores(&self, v: &[f64], draws: &[Vec<usize>]) -> Vec<f64> {
        let k = self.class_count();
        let f = &self.fusion;
        let pre = |x: &[f64]| scaled(x, self.scale / len(x));
        let support: Vec<Vec<f64>> = self.support.iter().map(|x| pre(x)).collect();

        let class_mean: Vec<Vec<f64>> = (0..k)
            .map(|c| {
                let members: Vec<&Vec<f64>> =
                    support.iter().zip(&self.labels).filter(|(_, &l)| l == c).map(|(x, _)| x).collect();
                average(&members)
            })
            .collect();
        let neg_euclid: Vec<Vec<f64>> =
            draws.iter().map(|idx| average(&idx.iter().map(|&i| &support[i]).collect::<Vec<_>>())).collect();

        let u = pre(v);
        let (iip_pos, iip_neg) = match f.metric {
            Metric::Hd => {
                let h = exp0(&u);
                let pos: Vec<f64> = class_mean.iter().map(|m| -f.epsilon * mobius_distance(&h, &exp0(m))).collect();
                let neg: Vec<f64> = draws
                    .iter()
                    .zip(&neg_euclid)
                    .map(|(idx, e)| {
                        let proto = match self.mean_mode {
                            MeanMode::Ambient => {
                                let mapped: Vec<Vec<f64>> = idx.iter().map(|&i| exp0(&support[i])).collect();
                                average(&mapped.iter().collect::<Vec<_>>())
                            }
                            // log0(exp0(x)) = x, so the tangent mean is exp0 of the Euclidean mean.
                            MeanMode::Tangent => exp0(e),
                        };
                        f.epsilon * mobius_distance(&h, &proto)
                    })
                    .collect();
                (pos, neg)
            }
            Metric::Ecs => (
                class_mean.iter().map(|m| f.epsilon * cosine(&u, m)).collect(),
                neg_euclid.iter().map(|m| -f.epsilon * cosine(&u, m)).collect(),
            ),
        };

        let text = |side: &Vec<Vec<Vec<f64>>>| -> Vec<Vec<f64>> {
            side.iter()
                .map(|ps| {
                    let units: Vec<Vec<f64>> = ps.iter().map(|p| scaled(p, 1.0 / len(p))).collect();
                    let m = average(&units.iter().collect::<Vec<_>>());
                    scaled(&m, 1.0 / len(&m))
                })
                .collect()
        };
        let tp = text(&self.prompts_pos);
        let tn = text(&self.prompts_neg);
        let itp_pos: Vec<f64> = tp.iter().map(|t| cosine(v, t) / f.tau).collect();
        let itp_neg: Vec<f64> = tn.iter().map(|t| -cosine(v, t) / f.tau).collect();

        let c = f.components;
        let branch = |a: Option<Vec<f64>>, b: Option<Vec<f64>>| -> Option<Vec<f64>> {
            match (a, b) {
                (Some(a), Some(b)) => Some(a.iter().zip(&b).map(|(x, y)| x + y).collect()),
                (a, b) => a.or(b),
            }
        };
        let p_ii = branch(
            c.contains(Component::IipPos).then(|| softmax(&iip_pos)),
            c.contains(Component::IipNeg).then(|| softmax(&iip_neg)),
        );
        let p_it = branch(
            c.contains(Component::ItpPos).then(|| softmax(&itp_pos)),
            c.contains(Component::ItpNeg).then(|| softmax(&itp_neg)),
        );
        match (p_ii, p_it) {
            (Some(ii), Some(it)) => ii.iter().zip(&it).map(|(a, b)| f.alpha * a + b).collect(),
            (Some(ii), None) => ii.iter().map(|a| f.alpha * a).collect(),
            (None, Some(it)) => it,
            (None, None) => unreachable!("at least one component is enabled"),
        }
    }
}

pub fn len(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn scaled(x: &[f64], s: f64) -> Vec<f64> {
    x.iter().map(|a| a * s).collect()
}

fn average(xs: &[&Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; xs[0].len()];
    for x in xs {
        for (a, b) in acc.iter_mut().zip(x.iter()) {
            *a += b;
        }
    }
    acc.iter().map(|a| a / xs.len() as f64).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (len(a) * len(b))
}

pub fn exp0(w: &[f64]) -> Vec<f64> {
    let n = len(w);
    if n == 0.0 {
        return w.to_vec();
    }
    scaled(w, n.tanh() / n)
}

/// `2 artanh |(-a) ⊕ b|` with Möbius addition.
pub fn mobius_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a);
    let nb = dot(b, b);
    let ab = dot(a, b);
    let num_a = 1.0 - 2.0 * ab + nb;
    let num_b = 1.0 - na;
    let denom = 1.0 - 2.0 * ab + na * nb;
    let sum: Vec<f64> = a.iter().zip(b).map(|(x, y)| (-num_a * x + num_b * y) / denom).collect();
    2.0 * len(&sum).atanh()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// First index of the maximum.
pub fn first_argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in z.iter().enumerate() {
        if x > z[best] {
            best = i;
        }
    }
    best
}

/// Largest absolute entry-wise difference, plus whether the argmaxes agree.
pub fn compare(inst: &Instance) -> (f64, bool) {
    let lib = inst.run_library();
    let oracle = inst.run_oracle();
    let mut worst = 0.0f64;
    let mut argmax_ok = true;
    for ((class, scores), reference) in lib.iter().zip(&oracle) {
        for (a, b) in scores.iter().zip(reference) {
            worst = worst.max((a - b).abs());
        }
        argmax_ok &= *class == first_argmax(reference);
    }
    (worst, argmax_ok)
}
