//! Declarative operator definitions: slot maps, condition arities, loss
//! configurations, and training-time condition dropping.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, SpaceTag};
use crate::prior::CONDITION_SLOTS;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorName {
    Texturing,
    Scene,
    Union,
    Instruct,
    Composition,
    /// Not one of the paper's five; used for generative-tree tests.
    Identity,
}

impl OperatorName {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "texturing" | "texture" => Ok(OperatorName::Texturing),
            "scene" => Ok(OperatorName::Scene),
            "union" => Ok(OperatorName::Union),
            "instruct" => Ok(OperatorName::Instruct),
            "composition" | "compose" => Ok(OperatorName::Composition),
            "identity" | "id" => Ok(OperatorName::Identity),
            other => Err(Error::UnknownOperator(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OperatorName::Texturing => "texturing",
            OperatorName::Scene => "scene",
            OperatorName::Union => "union",
            OperatorName::Instruct => "instruct",
            OperatorName::Composition => "composition",
            OperatorName::Identity => "identity",
        }
    }
}

impl std::fmt::Display for OperatorName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotEntry {
    pub role: String,
    pub slot: usize,
    pub space: SpaceTag,
}

/// Maps condition roles to fixed token positions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotMap {
    entries: Vec<SlotEntry>,
}

impl SlotMap {
    pub fn new(entries: Vec<SlotEntry>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if e.slot >= CONDITION_SLOTS {
                return Err(Error::SlotOutOfRange(e.slot));
            }
            if !seen.insert(e.slot) {
                return Err(Error::DuplicateSlot(e.slot));
            }
        }
        Ok(SlotMap { entries })
    }

    pub fn entries(&self) -> &[SlotEntry] {
        &self.entries
    }

    pub fn arity(&self) -> usize {
        self.entries.len()
    }

    pub fn slots(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.slot).collect()
    }

    pub fn contains_slot(&self, slot: usize) -> bool {
        self.entries.iter().any(|e| e.slot == slot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    MseOnly,
    /// MSE plus lambda * (1 - cosine(e_text, prediction)). The raw-dot
    /// variant replaces the cosine term with -lambda * <e_text, pred>.
    MsePlusSimilarity { lambda: f64, raw_dot: bool },
}

pub const DEFAULT_INSTRUCT_LAMBDA: f64 = 0.3;

/// Training-time condition dropping.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DropConfig {
    /// Probability of replacing ALL condition slots by zeros (joint drop,
    /// matching the CFG inference formulation).
    pub p_drop: f64,
    /// Optional independent per-slot drop, used to train null-input
    /// sampling behavior.
    pub per_slot: Option<f64>,
}

impl Default for DropConfig {
    fn default() -> Self {
        DropConfig { p_drop: 0.1, per_slot: None }
    }
}

/// An operator's identity, slot assignment, arity, and loss configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub name: OperatorName,
    pub slot_map: SlotMap,
    pub loss: LossKind,
    pub allows_null_conditions: bool,
    pub drop: DropConfig,
}

impl OperatorSpec {
    pub fn validate(&self) -> Result<()> {
        let expected_arity = match self.name {
            OperatorName::Composition => 12,
            OperatorName::Identity => 1,
            _ => 2,
        };
        if self.slot_map.arity() != expected_arity {
            return Err(Error::ArityMismatch {
                operator: self.name.to_string(),
                expected: expected_arity,
                got: self.slot_map.arity(),
            });
        }
        match (self.name, &self.loss) {
            (OperatorName::Instruct, LossKind::MsePlusSimilarity { .. }) => {}
            (OperatorName::Instruct, _) => {
                return Err(Error::Config(
                    "instruct requires the mse_plus_similarity loss".into(),
                ))
            }
            (_, LossKind::MsePlusSimilarity { .. }) => {
                return Err(Error::Config(format!(
                    "{} does not take a similarity loss",
                    self.name
                )))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn arity(&self) -> usize {
        self.slot_map.arity()
    }
}

/// ATR clothing categories occupying fixed slots 0..11.
pub const COMPOSITION_CATEGORIES: [&str; 12] = [
    "hat",
    "hair",
    "sunglasses",
    "upper_clothes",
    "skirt",
    "pants",
    "dress",
    "belt",
    "left_shoe",
    "right_shoe",
    "bag",
    "scarf",
];

/// Returns the canonical spec for a builtin operator.
pub fn builtin_spec(name: OperatorName) -> OperatorSpec {
    let entry = |role: &str, slot: usize, space: SpaceTag| SlotEntry {
        role: role.to_string(),
        slot,
        space,
    };
    let spec = match name {
        OperatorName::Texturing => OperatorSpec {
            name,
            slot_map: SlotMap::new(vec![
                entry("object", 0, SpaceTag::Image),
                entry("texture", 1, SpaceTag::Image),
            ])
            .unwrap(),
            loss: LossKind::MseOnly,
            allows_null_conditions: true,
            // Per-slot drop on so single-input queries sample plausibly.
            drop: DropConfig { p_drop: 0.1, per_slot: Some(0.1) },
        },
        OperatorName::Scene => OperatorSpec {
            name,
            slot_map: SlotMap::new(vec![
                entry("object", 0, SpaceTag::Image),
                entry("background", 1, SpaceTag::Image),
            ])
            .unwrap(),
            loss: LossKind::MseOnly,
            allows_null_conditions: false,
            drop: DropConfig::default(),
        },
        OperatorName::Union => OperatorSpec {
            name,
            slot_map: SlotMap::new(vec![
                entry("a", 0, SpaceTag::Image),
                entry("b", 1, SpaceTag::Image),
            ])
            .unwrap(),
            loss: LossKind::MseOnly,
            allows_null_conditions: false,
            drop: DropConfig::default(),
        },
        OperatorName::Instruct => OperatorSpec {
            name,
            slot_map: SlotMap::new(vec![
                entry("object", 0, SpaceTag::Image),
                entry("adjective", 1, SpaceTag::Text),
            ])
            .unwrap(),
            loss: LossKind::MsePlusSimilarity { lambda: DEFAULT_INSTRUCT_LAMBDA, raw_dot: false },
            allows_null_conditions: false,
            drop: DropConfig::default(),
        },
        OperatorName::Composition => OperatorSpec {
            name,
            slot_map: SlotMap::new(
                COMPOSITION_CATEGORIES
                    .iter()
                    .enumerate()
                    .map(|(k, cat)| entry(cat, k, SpaceTag::Image))
                    .collect(),
            )
            .unwrap(),
            loss: LossKind::MseOnly,
            // Missing clothing categories are zero slots.
            allows_null_conditions: true,
            drop: DropConfig::default(),
        },
        OperatorName::Identity => OperatorSpec {
            name,
            slot_map: SlotMap::new(vec![entry("input", 0, SpaceTag::Image)]).unwrap(),
            loss: LossKind::MseOnly,
            allows_null_conditions: false,
            drop: DropConfig::default(),
        },
    };
    spec.validate().expect("builtin specs are internally consistent");
    spec
}

/// Loss and its gradient w.r.t. the prediction, in full precision.
///
/// mse = ||target - pred||^2 / d; the similarity term is
/// lambda * (1 - cos(e_text, pred)) (or -lambda * <e_text, pred> when the
/// raw-dot flag is set).
pub fn loss_and_grad(
    loss: &LossKind,
    pred: &[f64],
    target: &[f64],
    e_text: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    let d = pred.len();
    if target.len() != d {
        return Err(Error::DimMismatch { expected: d, got: target.len() });
    }
    let mut value = 0.0;
    let mut grad = vec![0.0f64; d];
    for i in 0..d {
        let diff = pred[i] - target[i];
        value += diff * diff / d as f64;
        grad[i] = 2.0 * diff / d as f64;
    }
    if let LossKind::MsePlusSimilarity { lambda, raw_dot } = *loss {
        let e = e_text.ok_or(Error::MissingTextEmbedding)?;
        if e.len() != d {
            return Err(Error::DimMismatch { expected: d, got: e.len() });
        }
        if raw_dot {
            let dot: f64 = e.iter().zip(pred).map(|(a, b)| a * b).sum();
            value -= lambda * dot;
            for i in 0..d {
                grad[i] -= lambda * e[i];
            }
        } else {
            let ne: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            let np: f64 = pred.iter().map(|v| v * v).sum::<f64>().sqrt();
            if ne == 0.0 || np == 0.0 {
                return Err(Error::DegenerateEmbedding);
            }
            let dot: f64 = e.iter().zip(pred).map(|(a, b)| a * b).sum();
            let cos = dot / (ne * np);
            value += lambda * (1.0 - cos);
            for i in 0..d {
                let dcos = e[i] / (ne * np) - cos * pred[i] / (np * np);
                grad[i] -= lambda * dcos;
            }
        }
    }
    Ok((value, grad))
}

/// Scalar operator loss over embedding values.
pub fn operator_loss(
    spec: &OperatorSpec,
    prediction: &Embedding,
    target: &Embedding,
    e_text: Option<&Embedding>,
) -> Result<f64> {
    let e_text_f64 = e_text.map(|e| e.to_f64());
    let (value, _) = loss_and_grad(
        &spec.loss,
        &prediction.to_f64(),
        &target.to_f64(),
        e_text_f64.as_deref(),
    )?;
    Ok(value)
}

/// Training counterpart of the CFG drop: with probability `p_drop` all
/// condition slots are replaced by zeros; with per-slot dropping enabled,
/// each surviving condition is additionally dropped independently.
pub fn drop_conditions(
    conditions: &[(usize, Embedding)],
    drop: &DropConfig,
    rng: &mut impl Rng,
) -> Vec<(usize, Embedding)> {
    if rng.gen::<f64>() < drop.p_drop {
        return Vec::new();
    }
    match drop.per_slot {
        None => conditions.to_vec(),
        Some(p) => conditions
            .iter()
            .filter(|_| rng.gen::<f64>() >= p)
            .cloned()
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec(), SpaceTag::Image).unwrap()
    }

    #[test]
    fn builtin_specs_are_canonical() {
        let tex = builtin_spec(OperatorName::Texturing);
        assert_eq!(tex.arity(), 2);
        assert!(tex.slot_map.entries().iter().all(|e| e.space == SpaceTag::Image));
        assert_eq!(tex.slot_map.slots(), vec![0, 1]);

        let comp = builtin_spec(OperatorName::Composition);
        assert_eq!(comp.arity(), 12);
        assert_eq!(comp.slot_map.slots(), (0..12).collect::<Vec<_>>());

        let ins = builtin_spec(OperatorName::Instruct);
        assert_eq!(ins.slot_map.entries()[1].space, SpaceTag::Text);
        assert!(matches!(ins.loss, LossKind::MsePlusSimilarity { .. }));

        for name in [
            OperatorName::Texturing,
            OperatorName::Scene,
            OperatorName::Union,
            OperatorName::Instruct,
            OperatorName::Composition,
            OperatorName::Identity,
        ] {
            builtin_spec(name).validate().unwrap();
        }
    }

    #[test]
    fn unknown_operator_rejected() {
        assert!(matches!(OperatorName::parse("blend"), Err(Error::UnknownOperator(_))));
    }

    #[test]
    fn mse_loss_values() {
        let spec = builtin_spec(OperatorName::Union);
        let zero = operator_loss(&spec, &emb(&[1.0, 2.0]), &emb(&[1.0, 2.0]), None).unwrap();
        assert_eq!(zero, 0.0);
        // d=2, target [0,0], prediction [1,1] -> (1+1)/2.
        let one = operator_loss(&spec, &emb(&[1.0, 1.0]), &emb(&[0.0, 0.0]), None).unwrap();
        assert!((one - 1.0).abs() < 1e-12);
    }

    #[test]
    fn instruct_loss_zero_at_perfect_alignment() {
        let spec = builtin_spec(OperatorName::Instruct);
        let p = emb(&[1.0, 1.0]);
        let v = operator_loss(&spec, &p, &p, Some(&emb(&[2.0, 2.0]))).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn instruct_loss_requires_e_text() {
        let spec = builtin_spec(OperatorName::Instruct);
        assert!(matches!(
            operator_loss(&spec, &emb(&[1.0]), &emb(&[1.0]), None),
            Err(Error::MissingTextEmbedding)
        ));
    }

    #[test]
    fn similarity_scale_invariant_in_e_text() {
        let loss = LossKind::MsePlusSimilarity { lambda: 0.3, raw_dot: false };
        let pred = [0.5, -1.0, 2.0];
        let target = [0.0, 0.0, 0.0];
        let e = [1.0, 2.0, -0.5];
        let e_scaled: Vec<f64> = e.iter().map(|v| v * 17.0).collect();
        let (a, _) = loss_and_grad(&loss, &pred, &target, Some(&e)).unwrap();
        let (b, _) = loss_and_grad(&loss, &pred, &target, Some(&e_scaled)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn loss_nonnegative_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        use rand::Rng;
        for _ in 0..200 {
            let pred: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let target: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let e: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0) as f64 + 0.01).collect();
            let (v, _) = loss_and_grad(&LossKind::MseOnly, &pred, &target, None).unwrap();
            assert!(v >= 0.0);
            let sim = LossKind::MsePlusSimilarity { lambda: 0.3, raw_dot: false };
            let (v, _) = loss_and_grad(&sim, &pred, &target, Some(&e)).unwrap();
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn drop_extremes() {
        let conds = vec![(0, emb(&[1.0])), (1, emb(&[2.0]))];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let keep = drop_conditions(&conds, &DropConfig { p_drop: 0.0, per_slot: None }, &mut rng);
        assert_eq!(keep.len(), 2);
        let gone = drop_conditions(&conds, &DropConfig { p_drop: 1.0, per_slot: None }, &mut rng);
        assert!(gone.is_empty());
    }

    #[test]
    fn drop_rate_monte_carlo() {
        let conds = vec![(0, emb(&[1.0])), (1, emb(&[2.0]))];
        let cfg = DropConfig { p_drop: 0.1, per_slot: None };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut dropped = 0;
        let trials = 10_000;
        for _ in 0..trials {
            if drop_conditions(&conds, &cfg, &mut rng).is_empty() {
                dropped += 1;
            }
        }
        let rate = dropped as f64 / trials as f64;
        assert!((rate - 0.1).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = builtin_spec(OperatorName::Instruct);
        let json = serde_json::to_string(&spec).unwrap();
        let back: OperatorSpec = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(back.name, spec.name);
        assert_eq!(back.slot_map.slots(), spec.slot_map.slots());
    }
}
