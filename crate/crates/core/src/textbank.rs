//! Per-class text banks built from raw prompt embeddings.

use serde::{Deserialize, Serialize};

use crate::poincare::{check_dims, norm, EmbeddingVector};
use crate::{Error, Result};

/// Placeholder substituted by the class name in prompt templates.
pub const CLASS_PLACEHOLDER: &str = "{class}";

/// Raw prompt embeddings, grouped by class and polarity.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank {
    pub class_names: Vec<String>,
    pub positive: Vec<Vec<EmbeddingVector>>,
    pub negative: Vec<Vec<EmbeddingVector>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateMode {
    /// Normalise each prompt, average, renormalise.
    #[default]
    Normalized,
    /// Average the raw prompt vectors, then normalise.
    Raw,
}

/// Unit-norm positive and negative text feature per class.
#[derive(Debug, Clone, PartialEq)]
pub struct TextBank {
    class_names: Vec<String>,
    positive: Vec<Vec<f64>>,
    negative: Vec<Vec<f64>>,
    diagnostics: Vec<String>,
}

impl TextBank {
    /// Builds a bank from one vector per class and polarity, normalising each.
    pub fn new(
        class_names: Vec<String>,
        positive: Vec<EmbeddingVector>,
        negative: Vec<EmbeddingVector>,
    ) -> Result<Self> {
        let k = class_names.len();
        for side in [&positive, &negative] {
            if side.len() != k {
                return Err(Error::Shape { expected: k, got: side.len() });
            }
        }
        let dim = positive.first().map(EmbeddingVector::dim).unwrap_or(0);
        let unit = |side: &[EmbeddingVector], polarity: &str| -> Result<Vec<Vec<f64>>> {
            side.iter()
                .enumerate()
                .map(|(c, v)| {
                    check_dims(dim, v.dim())?;
                    normalize(v.as_slice()).ok_or_else(|| {
                        Error::Degenerate(format!("zero {polarity} text vector for class {:?}", class_names[c]))
                    })
                })
                .collect()
        };
        let positive = unit(&positive, "positive")?;
        let negative = unit(&negative, "negative")?;
        let diagnostics = positive
            .iter()
            .zip(&negative)
            .enumerate()
            .filter(|(_, (p, n))| p == n)
            .map(|(c, _)| format!("class {:?}: positive and negative text features coincide", class_names[c]))
            .collect();
        Ok(Self { class_names, positive, negative, diagnostics })
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn positive(&self) -> &[Vec<f64>] {
        &self.positive
    }

    pub fn negative(&self) -> &[Vec<f64>] {
        &self.negative
    }

    pub fn dim(&self) -> usize {
        self.positive.first().map_or(0, Vec::len)
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }
}

fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    (n > 0.0).then(|| v.iter().map(|x| x / n).collect())
}

fn aggregate_class(prompts: &[EmbeddingVector], mode: AggregateMode, describe: impl Fn(usize) -> String) -> Result<EmbeddingVector> {
    let first = prompts
        .first()
        .ok_or_else(|| Error::invalid(format!("{} has no prompts", describe(usize::MAX))))?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for (i, p) in prompts.iter().enumerate() {
        check_dims(dim, p.dim())?;
        let n = p.norm();
        if n == 0.0 {
            return Err(Error::Degenerate(format!("zero prompt feature: {}", describe(i))));
        }
        let w = match mode {
            AggregateMode::Normalized => 1.0 / n,
            AggregateMode::Raw => 1.0,
        };
        acc.iter_mut().zip(p.as_slice()).for_each(|(a, x)| *a += w * x);
    }
    let count = prompts.len() as f64;
    acc.iter_mut().for_each(|a| *a /= count);
    let unit = normalize(&acc).ok_or_else(|| {
        Error::Degenerate(format!("prompt features cancel to zero: {}", describe(usize::MAX)))
    })?;
    Ok(EmbeddingVector::new(unit)?)
}

/// Ensembles the prompts of every class into a [`TextBank`].
pub fn aggregate(bank: &PromptBank, mode: AggregateMode) -> Result<TextBank> {
    let k = bank.class_names.len();
    for side in [&bank.positive, &bank.negative] {
        if side.len() != k {
            return Err(Error::Shape { expected: k, got: side.len() });
        }
    }
    let run = |side: &[Vec<EmbeddingVector>], polarity: &'static str| -> Result<Vec<EmbeddingVector>> {
        side.iter()
            .enumerate()
            .map(|(c, prompts)| {
                let name = &bank.class_names[c];
                aggregate_class(prompts, mode, |i| {
                    if i == usize::MAX {
                        format!("{polarity} prompts of class {name:?}")
                    } else {
                        format!("{polarity} prompt {i} of class {name:?}")
                    }
                })
            })
            .collect()
    };
    TextBank::new(bank.class_names.clone(), run(&bank.positive, "positive")?, run(&bank.negative, "negative")?)
}

/// Negated form of a prompt template: `"a photo of {class}"` with `"cat"`
/// becomes `"a photo of no cat"`.
pub fn negate_prompt_text(template: &str, class_name: &str) -> Result<String> {
    if !template.contains(CLASS_PLACEHOLDER) {
        return Err(Error::Format(format!("template {template:?} has no {CLASS_PLACEHOLDER} placeholder")));
    }
    Ok(template.replace(CLASS_PLACEHOLDER, &format!("no {class_name}")))
}

/// Positive form of a prompt template.
pub fn fill_prompt_text(template: &str, class_name: &str) -> Result<String> {
    if !template.contains(CLASS_PLACEHOLDER) {
        return Err(Error::Format(format!("template {template:?} has no {CLASS_PLACEHOLDER} placeholder")));
    }
    Ok(template.replace(CLASS_PLACEHOLDER, class_name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ev(c: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(c.to_vec()).unwrap()
    }

    fn single(pos: Vec<EmbeddingVector>) -> PromptBank {
        let mut neg = vec![0.0; pos.first().map_or(2, EmbeddingVector::dim)];
        neg[1] = 1.0;
        PromptBank {
            class_names: vec!["a".into()],
            positive: vec![pos],
            negative: vec![vec![ev(&neg)]],
        }
    }

    #[test]
    fn aggregate_examples() {
        let tb = aggregate(&single(vec![ev(&[3.0, 4.0])]), AggregateMode::Normalized).unwrap();
        assert_relative_eq!(tb.positive()[0][0], 0.6, max_relative = 1e-15);
        assert_relative_eq!(tb.positive()[0][1], 0.8, max_relative = 1e-15);

        let tb = aggregate(&single(vec![ev(&[1.0, 0.0]), ev(&[0.0, 1.0])]), AggregateMode::Normalized).unwrap();
        assert_relative_eq!(tb.positive()[0][0], std::f64::consts::FRAC_1_SQRT_2, max_relative = 1e-15);
        assert_relative_eq!(tb.positive()[0][1], std::f64::consts::FRAC_1_SQRT_2, max_relative = 1e-15);

        let tb = aggregate(&single(vec![ev(&[2.0, 0.0]), ev(&[1.0, 0.0])]), AggregateMode::Normalized).unwrap();
        assert_eq!(tb.positive()[0], vec![1.0, 0.0]);
    }

    #[test]
    fn raw_mode_weights_by_norm() {
        let bank = single(vec![ev(&[3.0, 0.0]), ev(&[0.0, 1.0])]);
        let raw = aggregate(&bank, AggregateMode::Raw).unwrap();
        let n = (1.5f64 * 1.5 + 0.25).sqrt();
        assert_relative_eq!(raw.positive()[0][0], 1.5 / n, max_relative = 1e-15);
        let normed = aggregate(&bank, AggregateMode::Normalized).unwrap();
        assert_relative_eq!(normed.positive()[0][0], std::f64::consts::FRAC_1_SQRT_2, max_relative = 1e-15);
    }

    #[test]
    fn zero_prompt_names_class_and_index() {
        let err = aggregate(&single(vec![ev(&[1.0, 0.0]), ev(&[0.0, 0.0])]), AggregateMode::Normalized).unwrap_err();
        match err {
            Error::Degenerate(m) => assert!(m.contains("prompt 1") && m.contains("\"a\""), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_prompts_rejected() {
        let bank = PromptBank { class_names: vec!["a".into()], positive: vec![vec![]], negative: vec![vec![ev(&[1.0])]] };
        assert!(matches!(aggregate(&bank, AggregateMode::Normalized), Err(Error::InvalidInput(_))));
        let bank = PromptBank { class_names: vec!["a".into(), "b".into()], positive: vec![vec![ev(&[1.0])]], negative: vec![] };
        assert!(matches!(aggregate(&bank, AggregateMode::Normalized), Err(Error::Shape { .. })));
    }

    #[test]
    fn coinciding_text_features_are_flagged() {
        let tb = TextBank::new(vec!["a".into()], vec![ev(&[1.0, 1.0])], vec![ev(&[2.0, 2.0])]).unwrap();
        assert_eq!(tb.diagnostics().len(), 1);
    }

    #[test]
    fn negation_examples() {
        assert_eq!(negate_prompt_text("a photo of {class}", "cat").unwrap(), "a photo of no cat");
        assert_eq!(negate_prompt_text("a photo of {class}", "Labrador").unwrap(), "a photo of no Labrador");
        assert_eq!(negate_prompt_text("{class}", "dog").unwrap(), "no dog");
        assert!(matches!(negate_prompt_text("a photo", "dog"), Err(Error::Format(_))));
        assert_eq!(fill_prompt_text("a photo of a {class}.", "dog").unwrap(), "a photo of a dog.");
    }

    fn prompt_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..6)
            .prop_filter("nonzero", |ps| ps.iter().all(|p| p.iter().any(|x| x.abs() > 1e-3)))
    }

    proptest! {
        #[test]
        fn aggregate_is_order_and_scale_invariant(ps in prompt_strategy(), s in 0.01f64..100.0, which in 0usize..6) {
            let fwd: Vec<_> = ps.iter().map(|p| ev(p)).collect();
            let mut rev = fwd.clone();
            rev.reverse();
            let i = which % fwd.len();
            let mut scaled = fwd.clone();
            scaled[i] = ev(&ps[i].iter().map(|x| x * s).collect::<Vec<_>>());

            let base = aggregate(&single(fwd), AggregateMode::Normalized);
            // Prompts may cancel exactly; that case is covered elsewhere.
            prop_assume!(base.is_ok());
            let base = base.unwrap();
            let rev = aggregate(&single(rev), AggregateMode::Normalized).unwrap();
            let scaled = aggregate(&single(scaled), AggregateMode::Normalized).unwrap();
            let n: f64 = base.positive()[0].iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-9);
            for j in 0..4 {
                prop_assert!((base.positive()[0][j] - rev.positive()[0][j]).abs() <= 1e-12);
                prop_assert!((base.positive()[0][j] - scaled.positive()[0][j]).abs() <= 1e-12);
            }
        }
    }
}
