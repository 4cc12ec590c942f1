//! COLMAP text export ingestion (`cameras.txt` + `images.txt`).
//!
//! `cameras.txt`: one camera per line, `CAMERA_ID MODEL WIDTH HEIGHT
//! PARAMS...`. Only PINHOLE (fx fy cx cy) and SIMPLE_PINHOLE (f cx cy) are
//! accepted — anything with distortion must be undistorted upstream.
//!
//! `images.txt`: two lines per image. The first is `IMAGE_ID QW QX QY QZ TX
//! TY TZ CAMERA_ID NAME`; the second lists 2D feature points and is ignored.
//! The quaternion and translation give the world-to-camera map `x_cam = R
//! x_world + t` in COLMAP's camera frame (x right, y down, z forward), which
//! is also our frame, so assembly just transposes: center `-R^T t`, rotation
//! `R^T`.
//!
//! `#` starts a comment line in either file.

use std::collections::HashMap;

use crate::math::{Mat3, Vec3};
use crate::sensor::Camera;

use super::IoError;

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapCamera {
    pub camera_id: u32,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone)]
pub struct ColmapImage {
    pub image_id: u32,
    /// World-to-camera rotation, exactly as stored in the file.
    pub rotation: Mat3,
    /// World-to-camera translation.
    pub translation: Vec3,
    pub camera_id: u32,
    pub name: String,
}

fn malformed(line: usize, reason: impl Into<String>) -> IoError {
    IoError::Colmap {
        line,
        reason: reason.into(),
    }
}

fn parse_field<T: std::str::FromStr>(
    fields: &[&str],
    idx: usize,
    what: &str,
    line: usize,
) -> Result<T, IoError> {
    let raw = fields
        .get(idx)
        .ok_or_else(|| malformed(line, format!("missing {what}")))?;
    raw.parse()
        .map_err(|_| malformed(line, format!("bad {what} {raw:?}")))
}

fn is_comment_or_blank(line: &str) -> bool {
    let t = line.trim_start();
    t.is_empty() || t.starts_with('#')
}

pub fn parse_colmap_cameras(text: &str) -> Result<Vec<ColmapCamera>, IoError> {
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if is_comment_or_blank(raw) {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        let camera_id: u32 = parse_field(&fields, 0, "camera id", line)?;
        let model = *fields
            .get(1)
            .ok_or_else(|| malformed(line, "missing model"))?;
        let width: u32 = parse_field(&fields, 2, "width", line)?;
        let height: u32 = parse_field(&fields, 3, "height", line)?;
        if width == 0 || height == 0 {
            return Err(malformed(line, format!("zero image size {width}x{height}")));
        }
        let (fx, fy, cx, cy, expected_fields): (f64, f64, f64, f64, usize) = match model {
            "PINHOLE" => (
                parse_field(&fields, 4, "fx", line)?,
                parse_field(&fields, 5, "fy", line)?,
                parse_field(&fields, 6, "cx", line)?,
                parse_field(&fields, 7, "cy", line)?,
                8,
            ),
            "SIMPLE_PINHOLE" => {
                let f: f64 = parse_field(&fields, 4, "focal length", line)?;
                (
                    f,
                    f,
                    parse_field(&fields, 5, "cx", line)?,
                    parse_field(&fields, 6, "cy", line)?,
                    7,
                )
            }
            other => {
                return Err(IoError::UnknownCameraModel {
                    line,
                    model: other.to_string(),
                })
            }
        };
        if fields.len() != expected_fields {
            return Err(malformed(
                line,
                format!("{model} takes {expected_fields} fields, got {}", fields.len()),
            ));
        }
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return Err(malformed(line, format!("bad focal lengths {fx} {fy}")));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(malformed(line, "non-finite principal point"));
        }
        if seen.insert(camera_id, line).is_some() {
            return Err(malformed(line, format!("duplicate camera id {camera_id}")));
        }
        out.push(ColmapCamera {
            camera_id,
            width,
            height,
            fx,
            fy,
            cx,
            cy,
        });
    }
    Ok(out)
}

pub fn parse_colmap_images(text: &str) -> Result<Vec<ColmapImage>, IoError> {
    let mut out = Vec::new();
    let mut seen_ids = HashMap::new();
    let mut pending_points_for: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if pending_points_for.is_some() {
            // The 2D-points line; may legitimately be empty.
            pending_points_for = None;
            continue;
        }
        if is_comment_or_blank(raw) {
            continue;
        }
        let mut it = raw.split_whitespace();
        let head: Vec<&str> = it.by_ref().take(9).collect();
        let image_id: u32 = parse_field(&head, 0, "image id", line)?;
        let mut q = [0.0f64; 4];
        for (k, slot) in q.iter_mut().enumerate() {
            *slot = parse_field(&head, 1 + k, "quaternion component", line)?;
        }
        let mut t = [0.0f64; 3];
        for (k, slot) in t.iter_mut().enumerate() {
            *slot = parse_field(&head, 5 + k, "translation component", line)?;
        }
        let camera_id: u32 = parse_field(&head, 8, "camera id", line)?;
        let name = it.collect::<Vec<_>>().join(" ");
        if name.is_empty() {
            return Err(malformed(line, "missing image name"));
        }
        if q.iter().chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(malformed(line, "non-finite pose"));
        }
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(IoError::ZeroQuaternion { line });
        }
        let rotation = Mat3::from_quaternion(q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm);
        if seen_ids.insert(image_id, line).is_some() {
            return Err(malformed(line, format!("duplicate image id {image_id}")));
        }
        out.push(ColmapImage {
            image_id,
            rotation,
            translation: Vec3 {
                x: t[0],
                y: t[1],
                z: t[2],
            },
            camera_id,
            name: name.to_string(),
        });
        pending_points_for = Some(line);
    }
    if let Some(header_line) = pending_points_for {
        return Err(malformed(
            header_line,
            "image record is missing its 2D-points line",
        ));
    }
    Ok(out)
}

/// Joins parsed cameras and images into render-ready cameras, sorted by
/// image name so view order is independent of file order. An optional crop
/// window (x, y, width, height) restricts rendering to part of each sensor.
pub fn assemble_cameras(
    cameras: &[ColmapCamera],
    images: &[ColmapImage],
    crop: Option<(u32, u32, u32, u32)>,
) -> Result<Vec<(String, Camera)>, IoError> {
    let by_id: HashMap<u32, &ColmapCamera> =
        cameras.iter().map(|c| (c.camera_id, c)).collect();
    let mut out = Vec::with_capacity(images.len());
    for img in images {
        let cam = by_id.get(&img.camera_id).ok_or_else(|| IoError::UnknownCameraId {
            name: img.name.clone(),
            camera_id: img.camera_id,
        })?;
        let cam_to_world = img.rotation.transpose();
        let center = cam_to_world.mul_vec(img.translation) * -1.0;
        let window = crop.unwrap_or((0, 0, cam.width, cam.height));
        let camera = Camera::new(
            cam.width, cam.height, window, cam.fx, cam.fy, cam.cx, cam.cy, cam_to_world, center,
        )?;
        out.push((img.name.clone(), camera));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(super) const CAMERAS_FIXTURE: &str = "\
# Camera list with one line of data per camera:
#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]
# Number of cameras: 2
1 PINHOLE 1920 1080 1662.77 1664.12 960.0 540.0
2 SIMPLE_PINHOLE 640 480 500.0 320.0 240.0
";

    pub(super) const IMAGES_FIXTURE: &str = "\
# Image list with two lines of data per image:
#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME
#   POINTS2D[] as (X, Y, POINT3D_ID)
3 1.0 0.0 0.0 0.0 0.5 -1.0 2.0 1 view_001.png
100.25 200.5 -1 300.75 180.25 41
1 0.7071067811865476 0.0 0.7071067811865476 0.0 0.0 0.0 3.0 2 view_000.png

";

    #[test]
    fn fixture_cameras_parse() {
        let cams = parse_colmap_cameras(CAMERAS_FIXTURE).unwrap();
        assert_eq!(cams.len(), 2);
        assert_eq!(
            cams[0],
            ColmapCamera {
                camera_id: 1,
                width: 1920,
                height: 1080,
                fx: 1662.77,
                fy: 1664.12,
                cx: 960.0,
                cy: 540.0,
            }
        );
        assert_eq!(cams[1].fx, 500.0);
        assert_eq!(cams[1].fy, 500.0);
    }

    #[test]
    fn fixture_images_parse_and_assemble() {
        let cams = parse_colmap_cameras(CAMERAS_FIXTURE).unwrap();
        let imgs = parse_colmap_images(IMAGES_FIXTURE).unwrap();
        assert_eq!(imgs.len(), 2);
        let views = assemble_cameras(&cams, &imgs, None).unwrap();
        // Sorted by name, not file order.
        assert_eq!(views[0].0, "view_000.png");
        assert_eq!(views[1].0, "view_001.png");

        // Identity quaternion: camera frame == world frame, center = -t.
        let ident = &views[1].1;
        assert!((ident.center - Vec3 { x: -0.5, y: 1.0, z: -2.0 }).length() < 1e-12);
        let fwd = ident.rotation.mul_vec(Vec3 { x: 0.0, y: 0.0, z: 1.0 });
        assert!((fwd - Vec3 { x: 0.0, y: 0.0, z: 1.0 }).length() < 1e-12);

        // 90-degree rotation about +y: world-to-camera maps +x to -z, so
        // with t = (0, 0, 3) the center -R^T t works out to (3, 0, 0).
        let img = imgs.iter().find(|m| m.name == "view_000.png").unwrap();
        let mapped = img.rotation.mul_vec(Vec3 { x: 1.0, y: 0.0, z: 0.0 });
        assert!((mapped - Vec3 { x: 0.0, y: 0.0, z: -1.0 }).length() < 1e-12);
        let rot = &views[0].1;
        assert!((rot.center - Vec3 { x: 3.0, y: 0.0, z: 0.0 }).length() < 1e-12);
    }

    #[test]
    fn unit_and_double_length_quaternions_give_the_same_pose() {
        let a = parse_colmap_images(
            "7 1.0 0.0 0.0 0.0 1.0 2.0 3.0 1 a.png\n\n",
        )
        .unwrap();
        let b = parse_colmap_images(
            "7 2.0 0.0 0.0 0.0 1.0 2.0 3.0 1 a.png\n\n",
        )
        .unwrap();
        assert_eq!(a[0].rotation, b[0].rotation);
    }

    #[test]
    fn image_names_may_contain_spaces() {
        let imgs = parse_colmap_images(
            "1 1 0 0 0 0 0 0 1 scan 01 front.png\n\n",
        )
        .unwrap();
        assert_eq!(imgs[0].name, "scan 01 front.png");
    }

    #[test]
    fn rejections_name_the_offending_line() {
        let err = parse_colmap_cameras("1 PINHOLE 640 480 500 500 320 240\n2 RADIAL 640 480 1 2 3 4\n");
        match err {
            Err(IoError::UnknownCameraModel { line, model }) => {
                assert_eq!(line, 2);
                assert_eq!(model, "RADIAL");
            }
            other => panic!("expected model rejection, got {other:?}"),
        }

        let err = parse_colmap_images("5 0 0 0 0 1 2 3 1 z.png\n\n");
        assert!(matches!(err, Err(IoError::ZeroQuaternion { line: 1 })));

        let err = parse_colmap_images("5 1 0 0 0 1 2 3 1 z.png\n");
        assert!(matches!(err, Err(IoError::Colmap { line: 1, .. })));
    }

    #[test]
    fn unknown_camera_reference_is_rejected() {
        let cams = parse_colmap_cameras("1 SIMPLE_PINHOLE 640 480 500 320 240\n").unwrap();
        let imgs = parse_colmap_images("1 1 0 0 0 0 0 0 9 a.png\n\n").unwrap();
        assert!(matches!(
            assemble_cameras(&cams, &imgs, None),
            Err(IoError::UnknownCameraId { camera_id: 9, .. })
        ));
    }

    #[test]
    fn crop_window_is_applied() {
        let cams = parse_colmap_cameras("1 SIMPLE_PINHOLE 640 480 500 320 240\n").unwrap();
        let imgs = parse_colmap_images("1 1 0 0 0 0 0 0 1 a.png\n\n").unwrap();
        let views = assemble_cameras(&cams, &imgs, Some((100, 50, 64, 64))).unwrap();
        assert_eq!(views[0].1.width, 64);
        assert_eq!(views[0].1.crop_x, 100);
        assert!(matches!(
            assemble_cameras(&cams, &imgs, Some((600, 0, 64, 64))),
            Err(IoError::Sensor(_))
        ));
    }

    /// Twenty corrupted variants of the valid fixtures; every one must be
    /// rejected with an error, never a panic or a silent acceptance.
    #[test]
    fn corrupted_fixtures_are_rejected() {
        let camera_cases = [
            "x PINHOLE 640 480 500 500 320 240\n",
            "1 PINHOLE 640 480 500 500 320\n",
            "1 PINHOLE 640 480 500 500 320 240 999\n",
            "1 PINHOLE 640 480 banana 500 320 240\n",
            "1 PINHOLE 0 480 500 500 320 240\n",
            "1 PINHOLE 640 480 -500 500 320 240\n",
            "1 PINHOLE 640 480 inf 500 320 240\n",
            "1 OPENCV 640 480 500 500 320 240 0.1 0.1 0 0\n",
            "1 SIMPLE_PINHOLE 640 480 500 320\n",
            "1 PINHOLE 640 480 500 500 320 240\n1 PINHOLE 640 480 500 500 320 240\n",
        ];
        for (i, c) in camera_cases.iter().enumerate() {
            assert!(parse_colmap_cameras(c).is_err(), "camera case {i}");
        }

        let image_cases = [
            "x 1 0 0 0 0 0 0 1 a.png\n\n",
            "1 1 0 0 0 0 0 0 1\n\n",
            "1 1 0 0 nope 0 0 0 1 a.png\n\n",
            "1 0 0 0 0 0 0 0 1 a.png\n\n",
            "1 nan 0 0 0 0 0 0 1 a.png\n\n",
            "1 1 0 0 0 inf 0 0 1 a.png\n\n",
            "1 1 0 0 0 0 0 0 1 a.png\n",
            "1 1 0 0 0 0 0 0 1 a.png\n\n1 1 0 0 0 0 0 0 1 b.png\n\n",
            "1 1 0 0 0 0 0 0 x a.png\n\n",
            "1 1 0 0 0 0 0\n\n",
        ];
        for (i, c) in image_cases.iter().enumerate() {
            assert!(parse_colmap_images(c).is_err(), "image case {i}");
        }
    }
}
