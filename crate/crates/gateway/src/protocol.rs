//! Canonical response format:
//! `{"detections":[{"label":..,"confidence":..,"box":{"x":..,"y":..,"w":..,"h":..}}]}`
//! with boxes as top-left corner plus width and height in pixels.

use metaod_core::{DetectError, Detection, DetectionSet};
use serde::{Deserialize, Serialize};

const EXCERPT_LEN: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub detections: Vec<Detection>,
}

fn excerpt(body: &[u8]) -> String {
    let text = String::from_utf8_lossy(body);
    text.chars().take(EXCERPT_LEN).collect()
}

/// Parses and validates a response body.
pub fn parse_response(body: &[u8], image_id: &str) -> Result<DetectionSet, DetectError> {
    let wire: WireResponse = serde_json::from_slice(body).map_err(|e| DetectError::Protocol {
        message: format!("malformed response at line {} column {}: {e}", e.line(), e.column()),
        excerpt: excerpt(body),
    })?;
    if let Some((i, d)) = wire.detections.iter().enumerate().find(|(_, d)| !d.is_valid()) {
        return Err(DetectError::Protocol {
            message: format!("detection {i} is invalid: {d:?}"),
            excerpt: excerpt(body),
        });
    }
    Ok(DetectionSet::new(image_id, wire.detections))
}

/// Canonical serialized form, as stored in the cache.
pub fn encode_response(set: &DetectionSet) -> Vec<u8> {
    serde_json::to_vec(&WireResponse { detections: set.detections.clone() }).expect("detections serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use metaod_core::BBox;

    const TWO: &str = r#"{"detections":[
        {"label":"car","confidence":0.9,"box":{"x":1,"y":2,"w":3,"h":4}},
        {"label":"dog","confidence":0.25,"box":{"x":10.5,"y":0,"w":7,"h":8}}]}"#;

    #[test]
    fn parses_two_detections() {
        let set = parse_response(TWO.as_bytes(), "img").unwrap();
        assert_eq!(set.image_id, "img");
        assert_eq!(
            set.detections,
            vec![
                Detection::new("car", 0.9, BBox::new(1., 2., 3., 4.).unwrap()),
                Detection::new("dog", 0.25, BBox::new(10.5, 0., 7., 8.).unwrap()),
            ]
        );
        let again = parse_response(&encode_response(&set), "img").unwrap();
        assert_eq!(again, set);
    }

    #[test]
    fn truncated_body_names_position() {
        let body = &TWO.as_bytes()[..60];
        match parse_response(body, "img") {
            Err(DetectError::Protocol { message, excerpt }) => {
                assert!(message.contains("line 2 column"), "{message}");
                assert_eq!(excerpt.as_bytes(), body);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_detection_is_rejected() {
        let body = r#"{"detections":[{"label":"car","confidence":1.5,"box":{"x":1,"y":2,"w":3,"h":4}}]}"#;
        assert!(matches!(parse_response(body.as_bytes(), "i"), Err(DetectError::Protocol { .. })));
        let body = r#"{"detections":[{"label":"car","confidence":0.5,"box":{"x":1,"y":2,"w":0,"h":4}}]}"#;
        assert!(matches!(parse_response(body.as_bytes(), "i"), Err(DetectError::Protocol { .. })));
        assert_eq!(parse_response(br#"{"detections":[]}"#, "i").unwrap().len(), 0);
    }

    #[test]
    fn canonical_field_order() {
        let set = DetectionSet::new("i", vec![Detection::new("a", 0.5, BBox::new(0., 0., 1., 2.).unwrap())]);
        assert_eq!(
            String::from_utf8(encode_response(&set)).unwrap(),
            r#"{"detections":[{"label":"a","confidence":0.5,"box":{"x":0.0,"y":0.0,"w":1.0,"h":2.0}}]}"#
        );
    }
}
