//! KITTI label-format ingestion and conversion into the library's BEV box
//! convention.
//!
//! Label lines carry 15 whitespace-separated fields, predictions 16 (a
//! trailing score):
//!
//! ```text
//! type truncated occluded alpha x1 y1 x2 y2 h w l X Y Z rotation_y [score]
//! ```
//!
//! Dimensions are height/width/length in that order; `(X, Y, Z)` is the
//! bottom-face center in the camera frame (x right, y down, z forward).
//! The fixed camera-to-BEV mapping used everywhere here:
//!
//! ```text
//! bev x = camera x,  bev y = camera z,  bev z (up) = -camera y
//! yaw = wrap(-rotation_y - pi/2)
//! ```
//!
//! Worked example: a car at camera location (0, 1.65, 10) with h = 1.65 and
//! rotation_y = -pi/2 (facing along camera x) sits at BEV (0, 10) with its
//! center lifted to z = 1.65/2 - 1.65 = -0.825 and yaw = 0.

use crate::geometry::{wrap_angle, Box3d, GeometryError};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KittiError {
    #[error("line {line}: expected 15 or 16 fields, got {got}")]
    FieldCount { line: usize, got: usize },
    #[error("line {line}, column {column}: cannot parse {what} from {text:?}")]
    Parse { line: usize, column: usize, what: &'static str, text: String },
    #[error("line {line}: non-positive dimension {dim} for type {object_type}")]
    NonPositiveDim { line: usize, dim: f64, object_type: String },
    #[error("DontCare records carry no usable geometry")]
    DontCare,
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
}

/// One parsed label or prediction row.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiRecord {
    pub object_type: String,
    pub truncated: f64,
    pub occluded: i64,
    /// Observation angle; parsed and preserved, unused by the evaluator.
    pub alpha: f64,
    /// Image-plane box `(x1, y1, x2, y2)` in pixels.
    pub bbox2d: [f64; 4],
    /// Height, width, length in meters.
    pub h: f64,
    pub w: f64,
    pub l: f64,
    /// Bottom-face center in the camera frame.
    pub location: [f64; 3],
    pub rotation_y: f64,
    /// Present on prediction rows only.
    pub score: Option<f64>,
}

impl KittiRecord {
    pub fn is_dont_care(&self) -> bool {
        self.object_type == "DontCare"
    }
}

fn parse_field(tok: &str, line: usize, column: usize, what: &'static str) -> Result<f64, KittiError> {
    tok.parse::<f64>().map_err(|_| KittiError::Parse { line, column, what, text: tok.to_string() })
}

/// Parses a whole label or prediction file. Line numbers in errors are
/// 1-based; blank lines are skipped. DontCare rows are retained.
pub fn parse_label_file(text: &str) -> Result<Vec<KittiRecord>, KittiError> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.len() != 15 && toks.len() != 16 {
            return Err(KittiError::FieldCount { line, got: toks.len() });
        }
        let f = |col: usize, what: &'static str| parse_field(toks[col], line, col + 1, what);
        let occluded_f = f(2, "occluded")?;
        let record = KittiRecord {
            object_type: toks[0].to_string(),
            truncated: f(1, "truncated")?,
            occluded: occluded_f as i64,
            alpha: f(3, "alpha")?,
            bbox2d: [f(4, "bbox x1")?, f(5, "bbox y1")?, f(6, "bbox x2")?, f(7, "bbox y2")?],
            h: f(8, "height")?,
            w: f(9, "width")?,
            l: f(10, "length")?,
            location: [f(11, "x")?, f(12, "y")?, f(13, "z")?],
            rotation_y: f(14, "rotation_y")?,
            score: if toks.len() == 16 { Some(f(15, "score")?) } else { None },
        };
        if !record.is_dont_care() {
            for dim in [record.h, record.w, record.l] {
                if dim <= 0.0 {
                    return Err(KittiError::NonPositiveDim { line, dim, object_type: record.object_type });
                }
            }
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes records in the fixed KITTI layout: two decimal places for every
/// float, score appended when present.
pub fn write_label_file(records: &[KittiRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{} {:.2} {} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
            r.object_type,
            r.truncated,
            r.occluded,
            r.alpha,
            r.bbox2d[0],
            r.bbox2d[1],
            r.bbox2d[2],
            r.bbox2d[3],
            r.h,
            r.w,
            r.l,
            r.location[0],
            r.location[1],
            r.location[2],
            r.rotation_y,
        ));
        if let Some(score) = r.score {
            out.push_str(&format!(" {score:.2}"));
        }
        out.push('\n');
    }
    out
}

/// Camera-frame record to BEV box: bottom-anchored location becomes a center
/// (lift by h/2 against camera-down y) and `rotation_y` maps to BEV yaw.
pub fn kitti_to_box3d(r: &KittiRecord) -> Result<Box3d, KittiError> {
    if r.is_dont_care() {
        return Err(KittiError::DontCare);
    }
    let [cx, cy, cz] = r.location;
    Ok(Box3d::new(
        cx,
        cz,
        0.5 * r.h - cy,
        r.l,
        r.w,
        r.h,
        wrap_angle(-r.rotation_y - FRAC_PI_2)?,
    )?)
}

/// Inverse of [`kitti_to_box3d`]: `(h, w, l, location, rotation_y)`. Alpha
/// and the image-plane box cannot be reconstructed from BEV geometry.
pub fn box3d_to_kitti_parts(b: &Box3d) -> (f64, f64, f64, [f64; 3], f64) {
    let location = [b.x, 0.5 * b.h - b.z, b.y];
    let rotation_y = wrap_angle(-b.yaw - FRAC_PI_2).expect("finite yaw");
    (b.h, b.w, b.l, location, rotation_y)
}

/// Builds a full record from a BEV box, with neutral image-plane metadata.
pub fn box3d_to_record(b: &Box3d, object_type: &str, score: Option<f64>) -> KittiRecord {
    let (h, w, l, location, rotation_y) = box3d_to_kitti_parts(b);
    let alpha = wrap_angle(rotation_y - location[0].atan2(location[2])).unwrap_or(0.0);
    KittiRecord {
        object_type: object_type.to_string(),
        truncated: 0.0,
        occluded: 0,
        alpha,
        bbox2d: [0.0; 4],
        h,
        w,
        l,
        location,
        rotation_y,
        score,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59";

    #[test]
    fn parse_example_line() {
        let records = parse_label_file(SAMPLE).unwrap();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert_eq!(r.object_type, "Car");
        assert_eq!(r.truncated, 0.0);
        assert_eq!(r.occluded, 0);
        assert_eq!((r.h, r.w, r.l), (1.65, 1.67, 3.64));
        assert_eq!(r.location, [-0.65, 1.71, 46.70]);
        assert_eq!(r.rotation_y, -1.59);
        assert_eq!(r.score, None);
    }

    #[test]
    fn write_reproduces_example_line() {
        let records = parse_label_file(SAMPLE).unwrap();
        assert_eq!(write_label_file(&records), format!("{SAMPLE}\n"));
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert_eq!(parse_label_file("").unwrap(), vec![]);
        assert_eq!(parse_label_file("\n\n").unwrap(), vec![]);
        assert_eq!(write_label_file(&[]), "");
    }

    #[test]
    fn score_row_has_sixteen_fields() {
        let line = format!("{SAMPLE} 0.87");
        let records = parse_label_file(&line).unwrap();
        assert_eq!(records[0].score, Some(0.87));
        let written = write_label_file(&records);
        assert_eq!(written.trim().split_whitespace().count(), 16);
        assert_eq!(parse_label_file(&written).unwrap(), records);
    }

    #[test]
    fn errors_carry_line_and_column() {
        let bad_count = "Car 0.00 0 -1.58 587.01";
        assert_eq!(parse_label_file(bad_count).unwrap_err(), KittiError::FieldCount { line: 1, got: 5 });

        let bad_number = SAMPLE.replace("46.70", "forty");
        match parse_label_file(&bad_number).unwrap_err() {
            KittiError::Parse { line, column, text, .. } => {
                assert_eq!(line, 1);
                assert_eq!(column, 14);
                assert_eq!(text, "forty");
            }
            other => panic!("unexpected {other:?}"),
        }

        let two_lines = format!("{SAMPLE}\nCar bad 0 0 0 0 0 0 1 1 1 0 0 0 0");
        match parse_label_file(&two_lines).unwrap_err() {
            KittiError::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dont_care_rows_are_kept_and_flagged() {
        let line = "DontCare -1 -1 -10 219.31 188.49 245.50 218.56 -1 -1 -1 -1000 -1000 -1000 -10";
        let records = parse_label_file(line).unwrap();
        assert!(records[0].is_dont_care());
        assert_eq!(kitti_to_box3d(&records[0]).unwrap_err(), KittiError::DontCare);
    }

    #[test]
    fn nonpositive_dims_rejected_for_real_objects() {
        let line = "Car 0.00 0 -1.58 0 0 10 10 0.00 1.67 3.64 -0.65 1.71 46.70 -1.59";
        assert!(matches!(parse_label_file(line).unwrap_err(), KittiError::NonPositiveDim { .. }));
    }

    #[test]
    fn camera_to_bev_conversion() {
        let records = parse_label_file(SAMPLE).unwrap();
        let b = kitti_to_box3d(&records[0]).unwrap();
        assert_eq!(b.x, -0.65);
        assert_eq!(b.y, 46.70);
        // bottom-anchored to center-anchored lift
        assert!((b.z - (0.5 * 1.65 - 1.71)).abs() < 1e-12);
        assert_eq!((b.l, b.w, b.h), (3.64, 1.67, 1.65));
        assert!((b.yaw - wrap_angle(1.59 - FRAC_PI_2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zero_rotation_maps_to_documented_heading() {
        let mut r = parse_label_file(SAMPLE).unwrap().remove(0);
        r.rotation_y = 0.0;
        let b = kitti_to_box3d(&r).unwrap();
        assert!((b.yaw + FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn box_conversion_roundtrip() {
        let records = parse_label_file(SAMPLE).unwrap();
        let b = kitti_to_box3d(&records[0]).unwrap();
        let (h, w, l, location, rotation_y) = box3d_to_kitti_parts(&b);
        assert!((h - 1.65).abs() < 1e-9);
        assert!((w - 1.67).abs() < 1e-9);
        assert!((l - 3.64).abs() < 1e-9);
        for (a, e) in location.iter().zip([-0.65, 1.71, 46.70]) {
            assert!((a - e).abs() < 1e-9);
        }
        assert!((rotation_y - (-1.59)).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn parse_write_roundtrip(
            truncated in 0.0..1.0f64,
            occluded in 0i64..4,
            alpha in -3.14..3.14f64,
            h in 0.5..3.0f64,
            w in 0.5..3.0f64,
            l in 0.5..6.0f64,
            x in -40.0..40.0f64,
            y in -2.0..3.0f64,
            z in 1.0..80.0f64,
            ry in -3.14..3.14f64,
            score in proptest::option::of(0.0..1.0f64),
        ) {
            // quantize to the 2-decimal print precision first
            let q = |v: f64| (v * 100.0).round() / 100.0;
            let record = KittiRecord {
                object_type: "Car".to_string(),
                truncated: q(truncated),
                occluded,
                alpha: q(alpha),
                bbox2d: [0.0, 0.0, 100.0, 50.0],
                h: q(h).max(0.01),
                w: q(w).max(0.01),
                l: q(l).max(0.01),
                location: [q(x), q(y), q(z)],
                rotation_y: q(ry),
                score: score.map(q),
            };
            let text = write_label_file(&[record.clone()]);
            let back = parse_label_file(&text).unwrap();
            prop_assert_eq!(back, vec![record]);
        }

        #[test]
        fn bev_roundtrip_is_identity(
            x in -30.0..30.0f64,
            y in 1.0..60.0f64,
            z in -2.0..2.0f64,
            l in 3.0..5.0f64,
            w in 1.5..2.2f64,
            h in 1.2..2.0f64,
            yaw in -3.141..3.141f64,
        ) {
            let b = Box3d::new(x, y, z, l, w, h, yaw).unwrap();
            let (rh, rw, rl, location, ry) = box3d_to_kitti_parts(&b);
            let r = KittiRecord {
                object_type: "Car".into(),
                truncated: 0.0,
                occluded: 0,
                alpha: 0.0,
                bbox2d: [0.0; 4],
                h: rh,
                w: rw,
                l: rl,
                location,
                rotation_y: ry,
                score: None,
            };
            let back = kitti_to_box3d(&r).unwrap();
            prop_assert!((back.x - b.x).abs() < 1e-9);
            prop_assert!((back.y - b.y).abs() < 1e-9);
            prop_assert!((back.z - b.z).abs() < 1e-9);
            prop_assert!((back.l - b.l).abs() < 1e-9);
            prop_assert!((back.w - b.w).abs() < 1e-9);
            prop_assert!((back.h - b.h).abs() < 1e-9);
            let dyaw = wrap_angle(back.yaw - b.yaw).unwrap();
            prop_assert!(dyaw.abs() < 1e-9);
        }
    }
}
