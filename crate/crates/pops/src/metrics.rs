//! Evaluation metrics and report aggregation.
//!
//! Three similarity measures: image-image cosine between a produced
//! embedding and a ground-truth embedding, text cosine between a
//! produced embedding and a target caption's embedding, and sentence
//! similarity between captions under a sentence encoder. Per-item
//! records aggregate into per-method means and a CSV report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::clients::SentenceEncoderClient;
use crate::embedding::{cosine, Embedding, SpaceTag};
use crate::{Error, Result};

/// Reference scores from the full-scale scene-operator run, emitted as a
/// context row in reports so desk-scale numbers are not read as
/// state of the art.
pub const REFERENCE_SCENE_IMAGE_SIM: f64 = 0.6607;
pub const REFERENCE_SCENE_TEXT_SIM: f64 = 0.236;
pub const REFERENCE_SCENE_SENTENCE_SIM: f64 = 0.437;
pub const REFERENCE_METHOD: &str = "reference_scene_full_scale";

/// Cosine similarity between two image-space embeddings.
pub fn image_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.space_tag() != SpaceTag::Image || b.space_tag() != SpaceTag::Image {
        return Err(Error::SpaceMismatch {
            expected: SpaceTag::Image,
            got: if a.space_tag() != SpaceTag::Image { a.space_tag() } else { b.space_tag() },
        });
    }
    cosine(a, b)
}

/// Cosine similarity between a produced embedding and a caption
/// embedding; spaces intentionally differ (CLIP-style shared geometry).
pub fn text_similarity(produced: &Embedding, caption: &Embedding) -> Result<f64> {
    if caption.space_tag() != SpaceTag::Text {
        return Err(Error::SpaceMismatch { expected: SpaceTag::Text, got: caption.space_tag() });
    }
    cosine(produced, caption)
}

/// Similarity between two captions under a sentence encoder.
pub fn sentence_similarity(
    client: &dyn SentenceEncoderClient,
    a: &str,
    b: &str,
) -> Result<f64> {
    let ea = client.encode_sentence(a)?;
    let eb = client.encode_sentence(b)?;
    cosine(&ea, &eb)
}

/// One evaluated item; absent measures are skipped in aggregation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub method: String,
    pub image_sim: Option<f64>,
    pub text_sim: Option<f64>,
    pub sentence_sim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub n: usize,
    pub image_sim_mean: Option<f64>,
    pub text_sim_mean: Option<f64>,
    pub sentence_sim_mean: Option<f64>,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Groups records by method (sorted by name) and averages each measure
/// over the records that carry it.
pub fn aggregate(records: &[EvalRecord]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<&str, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.method).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(method, rs)| {
            let pick = |f: fn(&EvalRecord) -> Option<f64>| {
                mean(&rs.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            Aggregate {
                method: method.to_string(),
                n: rs.len(),
                image_sim_mean: pick(|r| r.image_sim),
                text_sim_mean: pick(|r| r.text_sim),
                sentence_sim_mean: pick(|r| r.sentence_sim),
            }
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// CSV report; with `include_reference` a context row of full-scale
/// scores is appended.
pub fn to_csv(aggregates: &[Aggregate], include_reference: bool) -> String {
    let mut out = String::from("method,n,image_sim_mean,text_sim_mean,sentence_sim_mean\n");
    for a in aggregates {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            a.method,
            a.n,
            cell(a.image_sim_mean),
            cell(a.text_sim_mean),
            cell(a.sentence_sim_mean),
        );
    }
    if include_reference {
        let _ = writeln!(
            out,
            "{REFERENCE_METHOD},,{REFERENCE_SCENE_IMAGE_SIM},{REFERENCE_SCENE_TEXT_SIM},{REFERENCE_SCENE_SENTENCE_SIM}"
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::MockEncoder;

    fn emb(values: Vec<f32>, tag: SpaceTag) -> Embedding {
        Embedding::new(values, tag).unwrap()
    }

    #[test]
    fn image_similarity_known_value() {
        // cos([3,4],[4,3]) = 24/25.
        let a = emb(vec![3.0, 4.0], SpaceTag::Image);
        let b = emb(vec![4.0, 3.0], SpaceTag::Image);
        assert!((image_similarity(&a, &b).unwrap() - 0.96).abs() < 1e-9);
    }

    #[test]
    fn image_similarity_rejects_text_space() {
        let a = emb(vec![1.0, 0.0], SpaceTag::Image);
        let b = emb(vec![1.0, 0.0], SpaceTag::Text);
        assert!(image_similarity(&a, &b).is_err());
    }

    #[test]
    fn text_similarity_crosses_spaces() {
        let a = emb(vec![1.0, 0.0], SpaceTag::Image);
        let c = emb(vec![1.0, 0.0], SpaceTag::Text);
        assert!((text_similarity(&a, &c).unwrap() - 1.0).abs() < 1e-9);
        assert!(text_similarity(&a, &a).is_err());
    }

    #[test]
    fn sentence_similarity_self_is_one() {
        let enc = MockEncoder::new(16);
        let s = sentence_similarity(&enc, "a cat on a mat", "a cat on a mat").unwrap();
        assert!((s - 1.0).abs() < 1e-6);
        let t = sentence_similarity(&enc, "a cat on a mat", "a dog in a bog").unwrap();
        assert!(t < 0.99);
    }

    #[test]
    fn aggregate_matches_brute_force() {
        let records = vec![
            EvalRecord {
                method: "b".into(),
                image_sim: Some(0.5),
                text_sim: Some(0.2),
                sentence_sim: None,
            },
            EvalRecord {
                method: "a".into(),
                image_sim: Some(1.0),
                text_sim: None,
                sentence_sim: Some(0.4),
            },
            EvalRecord {
                method: "b".into(),
                image_sim: Some(0.7),
                text_sim: Some(0.4),
                sentence_sim: None,
            },
        ];
        let aggs = aggregate(&records);
        assert_eq!(aggs.len(), 2);
        assert_eq!(aggs[0].method, "a");
        assert_eq!(aggs[0].n, 1);
        assert_eq!(aggs[0].image_sim_mean, Some(1.0));
        assert_eq!(aggs[0].text_sim_mean, None);
        assert_eq!(aggs[1].method, "b");
        assert_eq!(aggs[1].n, 2);
        assert!((aggs[1].image_sim_mean.unwrap() - 0.6).abs() < 1e-12);
        assert!((aggs[1].text_sim_mean.unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn csv_layout_and_reference_row() {
        let aggs = aggregate(&[EvalRecord {
            method: "union".into(),
            image_sim: Some(0.25),
            text_sim: None,
            sentence_sim: None,
        }]);
        let csv = to_csv(&aggs, true);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "method,n,image_sim_mean,text_sim_mean,sentence_sim_mean");
        assert_eq!(lines[1], "union,1,0.2500,,");
        assert_eq!(lines[2], "reference_scene_full_scale,,0.6607,0.236,0.437");
    }
}
