//! Deterministic orthographic rasterizer: depth-sorted flat-shaded triangles
//! for objects, 2d capsule strokes for the skeleton, PNG in and out.

use std::path::Path;

use ndarray::Array2;

use crate::math::{cross, dot, normalize, sub, Mat3, Vec3};
use crate::mesh::ObjectMesh;
use crate::motion::{fk_frame, MotionSequence};
use crate::skeleton::{self, Skeleton};
use crate::{Error, Result};

/// Row-major RGB, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Result<Self> {
        if width == 0 || height == 0 || width > 8192 || height > 8192 {
            return Err(Error::BadImageShape {
                expected: "1..=8192 per side".to_string(),
                got: format!("{width}x{height}"),
            });
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, c: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::BadImageShape {
                expected: format!("{} bytes", width * height * 3),
                got: format!("{}", bytes.len()),
            });
        }
        let data = bytes.iter().map(|&b| f32::from(b) / 255.0).collect();
        Ok(Self { width, height, data })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .ok_or_else(|| Error::msg("png buffer size"))?;
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8();
        Self::from_rgb8(img.width() as usize, img.height() as usize, img.as_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode_png(&std::fs::read(path)?)
    }

    /// Bilinear resample with half-pixel centers.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Self> {
        let mut out = ImageBuf::new(width, height)?;
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, self.height as f64 - 1.0);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = (fy - y0 as f64) as f32;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, self.width as f64 - 1.0);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = (fx - x0 as f64) as f32;
                let mut c = [0.0f32; 3];
                for k in 0..3 {
                    let top = self.pixel(x0, y0)[k] * (1.0 - wx) + self.pixel(x1, y0)[k] * wx;
                    let bot = self.pixel(x0, y1)[k] * (1.0 - wx) + self.pixel(x1, y1)[k] * wx;
                    c[k] = top * (1.0 - wy) + bot * wy;
                }
                out.set_pixel(x, y, c);
            }
        }
        Ok(out)
    }
}

/// Orthographic camera given by an orthonormal frame around a look-at point.
#[derive(Debug, Clone)]
pub struct Camera {
    pub center: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
    pub half_width: f64,
}

impl Camera {
    pub fn new(center: Vec3, forward: Vec3, up_hint: Vec3, half_width: f64) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 1e-6) {
            return Err(Error::BadCamera(format!("half width {half_width}")));
        }
        if crate::math::norm(forward) < 1e-9 {
            return Err(Error::BadCamera("zero view direction".to_string()));
        }
        let f = normalize(forward);
        let r = cross(f, up_hint);
        if crate::math::norm(r) < 1e-6 {
            return Err(Error::BadCamera("up parallel to view direction".to_string()));
        }
        let right = normalize(r);
        let up = normalize(cross(right, f));
        Ok(Self { center, right, up, forward: f, half_width })
    }

    /// Three-quarter view framing a person at the origin facing +z.
    pub fn default_scene() -> Self {
        Camera::new(
            [0.0, 0.75, 0.2],
            [-0.45, -0.35, -0.82],
            [0.0, 1.0, 0.0],
            1.5,
        )
        .unwrap()
    }

    pub fn pixels_per_meter(&self, width: usize) -> f64 {
        width as f64 / (2.0 * self.half_width)
    }

    /// Pixel coordinates (x right, y down) plus depth along the view ray.
    fn project(&self, p: Vec3, width: usize, height: usize) -> (f64, f64, f64) {
        let d = sub(p, self.center);
        let x_cam = dot(d, self.right);
        let y_cam = dot(d, self.up);
        let depth = dot(d, self.forward);
        let half_height = self.half_width * height as f64 / width as f64;
        let px = (0.5 + 0.5 * x_cam / self.half_width) * width as f64 - 0.5;
        let py = (0.5 - 0.5 * y_cam / half_height) * height as f64 - 0.5;
        (px, py, depth)
    }
}

enum Prim {
    Tri {
        pts: [(f64, f64); 3],
        depth: f64,
        color: [f32; 3],
    },
    Capsule {
        a: (f64, f64),
        b: (f64, f64),
        radius_px: f64,
        depth: f64,
        color: [f32; 3],
    },
}

impl Prim {
    fn depth(&self) -> f64 {
        match self {
            Prim::Tri { depth, .. } | Prim::Capsule { depth, .. } => *depth,
        }
    }
}

const LIGHT_DIR: Vec3 = [0.408_248_290_463_863, 0.816_496_580_927_726, 0.408_248_290_463_863];
const BACKGROUND: [f32; 3] = [0.93, 0.94, 0.96];
const FLOOR_COLOR: [f32; 3] = [0.82, 0.83, 0.85];
const BODY_COLOR: [f32; 3] = [0.78, 0.53, 0.42];
const OBJECT_COLOR: [f32; 3] = [0.34, 0.52, 0.78];
const CONTACT_COLOR: [f32; 3] = [0.88, 0.18, 0.15];

fn shaded(base: [f32; 3], normal: Vec3) -> [f32; 3] {
    let lum = (0.55 + 0.45 * dot(normal, LIGHT_DIR).abs()) as f32;
    [base[0] * lum, base[1] * lum, base[2] * lum]
}

struct Painter<'a> {
    cam: &'a Camera,
    width: usize,
    height: usize,
    prims: Vec<Prim>,
}

impl<'a> Painter<'a> {
    fn new(cam: &'a Camera, width: usize, height: usize) -> Self {
        Self { cam, width, height, prims: Vec::new() }
    }

    fn add_mesh(&mut self, mesh: &ObjectMesh, color: [f32; 3]) {
        for face in &mesh.faces {
            let v = [mesh.vertices[face[0]], mesh.vertices[face[1]], mesh.vertices[face[2]]];
            let n = cross(sub(v[1], v[0]), sub(v[2], v[0]));
            let ln = crate::math::norm(n);
            if ln < 1e-12 {
                continue;
            }
            let normal = crate::math::scale(n, 1.0 / ln);
            let mut pts = [(0.0, 0.0); 3];
            let mut depth = 0.0;
            for (k, p) in v.iter().enumerate() {
                let (px, py, d) = self.cam.project(*p, self.width, self.height);
                pts[k] = (px, py);
                depth += d / 3.0;
            }
            self.prims.push(Prim::Tri { pts, depth, color: shaded(color, normal) });
        }
    }

    fn add_capsule(&mut self, a: Vec3, b: Vec3, radius_m: f64, color: [f32; 3]) {
        let (ax, ay, ad) = self.cam.project(a, self.width, self.height);
        let (bx, by, bd) = self.cam.project(b, self.width, self.height);
        self.prims.push(Prim::Capsule {
            a: (ax, ay),
            b: (bx, by),
            radius_px: radius_m * self.cam.pixels_per_meter(self.width),
            depth: (ad + bd) / 2.0,
            color,
        });
    }

    fn paint(mut self, img: &mut ImageBuf) {
        // far to near so closer primitives overwrite
        self.prims
            .sort_by(|a, b| b.depth().partial_cmp(&a.depth()).unwrap_or(std::cmp::Ordering::Equal));
        for prim in &self.prims {
            match prim {
                Prim::Tri { pts, color, .. } => fill_triangle(img, *pts, *color),
                Prim::Capsule { a, b, radius_px, color, .. } => {
                    fill_capsule(img, *a, *b, *radius_px, *color)
                }
            }
        }
    }
}

fn fill_triangle(img: &mut ImageBuf, pts: [(f64, f64); 3], color: [f32; 3]) {
    let (x0, x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.0), hi.max(p.0))
    });
    let (y0, y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.1), hi.max(p.1))
    });
    let xs = (x0.floor().max(0.0)) as usize;
    let xe = (x1.ceil().min(img.width as f64 - 1.0)).max(0.0) as usize;
    let ys = (y0.floor().max(0.0)) as usize;
    let ye = (y1.ceil().min(img.height as f64 - 1.0)).max(0.0) as usize;
    if x1 < 0.0 || y1 < 0.0 || x0 > img.width as f64 || y0 > img.height as f64 {
        return;
    }
    let edge = |a: (f64, f64), b: (f64, f64), px: f64, py: f64| {
        (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0)
    };
    let area = edge(pts[0], pts[1], pts[2].0, pts[2].1);
    if area.abs() < 1e-12 {
        return;
    }
    let sign = area.signum();
    for y in ys..=ye {
        let py = y as f64;
        for x in xs..=xe {
            let px = x as f64;
            let w0 = edge(pts[0], pts[1], px, py) * sign;
            let w1 = edge(pts[1], pts[2], px, py) * sign;
            let w2 = edge(pts[2], pts[0], px, py) * sign;
            if w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0 {
                img.set_pixel(x, y, color);
            }
        }
    }
}

fn fill_capsule(img: &mut ImageBuf, a: (f64, f64), b: (f64, f64), r: f64, color: [f32; 3]) {
    let x0 = (a.0.min(b.0) - r).floor().max(0.0) as usize;
    let x1 = (a.0.max(b.0) + r).ceil().min(img.width as f64 - 1.0).max(0.0) as usize;
    let y0 = (a.1.min(b.1) - r).floor().max(0.0) as usize;
    let y1 = (a.1.max(b.1) + r).ceil().min(img.height as f64 - 1.0).max(0.0) as usize;
    let ab = (b.0 - a.0, b.1 - a.1);
    let len2 = ab.0 * ab.0 + ab.1 * ab.1;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = (x as f64 - a.0, y as f64 - a.1);
            let t = if len2 < 1e-12 { 0.0 } else { ((p.0 * ab.0 + p.1 * ab.1) / len2).clamp(0.0, 1.0) };
            let dx = p.0 - t * ab.0;
            let dy = p.1 - t * ab.1;
            if dx * dx + dy * dy <= r * r {
                img.set_pixel(x, y, color);
            }
        }
    }
}

/// World-space parts of one rendered frame.
pub struct Scene<'a> {
    pub skel: &'a Skeleton,
    pub root: Vec3,
    pub pose: Vec<[f64; 6]>,
    pub object: Option<(&'a ObjectMesh, Mat3, Vec3)>,
    pub contact: [bool; 2],
}

const BONE_RADIUS_M: f64 = 0.032;
const HEAD_RADIUS_M: f64 = 0.065;
const HAND_RADIUS_M: f64 = 0.045;
const FLOOR_HALF_M: f64 = 2.4;

pub fn render_scene(scene: &Scene, cam: &Camera, width: usize, height: usize) -> Result<ImageBuf> {
    let mut img = ImageBuf::filled(width, height, BACKGROUND)?;
    let mut painter = Painter::new(cam, width, height);

    let floor = ObjectMesh {
        vertices: vec![
            [-FLOOR_HALF_M, 0.0, -FLOOR_HALF_M],
            [FLOOR_HALF_M, 0.0, -FLOOR_HALF_M],
            [FLOOR_HALF_M, 0.0, FLOOR_HALF_M],
            [-FLOOR_HALF_M, 0.0, FLOOR_HALF_M],
        ],
        faces: vec![[0, 1, 2], [0, 2, 3]],
        name: "floor".to_string(),
    };
    painter.add_mesh(&floor, FLOOR_COLOR);

    if let Some((mesh, rot, transl)) = &scene.object {
        let posed = mesh.transformed(rot, *transl);
        painter.add_mesh(&posed, OBJECT_COLOR);
    }

    let joints = fk_frame(scene.root, &scene.pose, scene.skel)?;
    for (i, &parent) in scene.skel.parent.iter().enumerate().skip(1) {
        let p = parent as usize;
        let r = if i == skeleton::HEAD { HEAD_RADIUS_M } else { BONE_RADIUS_M };
        painter.add_capsule(joints[p], joints[i], r, BODY_COLOR);
    }
    for (h, j) in [(0usize, skeleton::LEFT_WRIST), (1, skeleton::RIGHT_WRIST)] {
        let color = if scene.contact[h] { CONTACT_COLOR } else { BODY_COLOR };
        painter.add_capsule(joints[j], joints[j], HAND_RADIUS_M, color);
    }

    painter.paint(&mut img);
    Ok(img)
}

pub fn render_frame(
    seq: &MotionSequence,
    frame: usize,
    skel: &Skeleton,
    mesh: Option<&ObjectMesh>,
    cam: &Camera,
    width: usize,
    height: usize,
) -> Result<ImageBuf> {
    if frame >= seq.len() {
        return Err(Error::ShapeMismatch(format!("frame {frame} of {}", seq.len())));
    }
    let pose: Vec<[f64; 6]> = (0..skel.joint_count()).map(|j| seq.joint_block(frame, j)).collect();
    let object = match mesh {
        Some(m) => Some((m, seq.obj_rotation(frame)?, seq.obj_translation(frame))),
        None => None,
    };
    let scene = Scene {
        skel,
        root: seq.root(frame),
        pose,
        object,
        contact: [seq.contact[[frame, 0]], seq.contact[[frame, 1]]],
    };
    render_scene(&scene, cam, width, height)
}

/// Start, middle, and end frame of the longest run where either hand is in
/// contact; earliest run wins ties, and a label-free sequence falls back to
/// (0, L/2, L-1).
pub fn select_keyframes(contact: &Array2<bool>) -> (usize, usize, usize) {
    let l = contact.nrows();
    let any = |f: usize| contact[[f, 0]] || contact[[f, 1]];
    let mut best: Option<(usize, usize)> = None;
    let mut run_start = None;
    for f in 0..=l {
        let on = f < l && any(f);
        match (run_start, on) {
            (None, true) => run_start = Some(f),
            (Some(s), false) => {
                let len = f - s;
                if best.map_or(true, |(bs, bl)| len > bl || (len == bl && s < bs)) {
                    best = Some((s, len));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    match best {
        Some((s, len)) => {
            let e = s + len - 1;
            (s, (s + e) / 2, e)
        }
        None => (0, l / 2, l.saturating_sub(1)),
    }
}

pub fn render_keyframes(
    seq: &MotionSequence,
    skel: &Skeleton,
    mesh: Option<&ObjectMesh>,
    cam: &Camera,
    width: usize,
    height: usize,
) -> Result<[ImageBuf; 3]> {
    let (a, b, c) = select_keyframes(&seq.contact);
    Ok([
        render_frame(seq, a, skel, mesh, cam, width, height)?,
        render_frame(seq, b, skel, mesh, cam, width, height)?,
        render_frame(seq, c, skel, mesh, cam, width, height)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_primitive, PrimitiveKind};
    use crate::motion::rest_pose_sequence;

    fn demo_scene<'a>(skel: &'a Skeleton, mesh: &'a ObjectMesh) -> Scene<'a> {
        Scene {
            skel,
            root: [0.0, skel.rest_root_height(), 0.0],
            pose: vec![crate::rotation::ROT6D_IDENTITY; skel.joint_count()],
            object: Some((mesh, crate::math::MAT3_IDENTITY, [0.0, 0.0, 0.5])),
            contact: [false, false],
        }
    }

    #[test]
    fn empty_scene_is_background_everywhere_above_horizon() {
        let skel = Skeleton::default_22();
        let scene = Scene {
            skel: &skel,
            root: [100.0, 0.9, 100.0],
            pose: vec![crate::rotation::ROT6D_IDENTITY; 22],
            object: None,
            contact: [false, false],
        };
        let cam = Camera::new([100.0, 200.0, 100.0], [0.0, -0.2, -1.0], [0.0, 1.0, 0.0], 1.0)
            .unwrap();
        let img = render_scene(&scene, &cam, 32, 32).unwrap();
        // camera frames empty sky far above the scene
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(img.pixel(x, y), BACKGROUND);
            }
        }
    }

    #[test]
    fn rendering_is_bit_identical_across_runs() {
        let skel = Skeleton::default_22();
        let mesh = make_primitive(PrimitiveKind::Box, &[0.3, 0.25, 0.25]).unwrap();
        let a = render_scene(&demo_scene(&skel, &mesh), &Camera::default_scene(), 96, 96).unwrap();
        let b = render_scene(&demo_scene(&skel, &mesh), &Camera::default_scene(), 96, 96).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.encode_png().unwrap(), b.encode_png().unwrap());
        // content present: body capsules paint their flat color somewhere
        assert!(a
            .data
            .chunks(3)
            .any(|c| (c[0] - BODY_COLOR[0]).abs() < 1e-6 && (c[1] - BODY_COLOR[1]).abs() < 1e-6));
    }

    #[test]
    fn camera_shift_translates_the_image() {
        let skel = Skeleton::default_22();
        let mesh = make_primitive(PrimitiveKind::Box, &[0.3, 0.25, 0.25]).unwrap();
        let cam = Camera::default_scene();
        let (w, h) = (96usize, 96usize);
        let px = 2.0 * cam.half_width / w as f64;
        // pixels are square, so the vertical world step per pixel is also px
        let shifted = Camera {
            center: crate::math::add(
                cam.center,
                crate::math::add(
                    crate::math::scale(cam.right, 3.0 * px),
                    crate::math::scale(cam.up, -2.0 * px),
                ),
            ),
            ..cam.clone()
        };
        let a = render_scene(&demo_scene(&skel, &mesh), &cam, w, h).unwrap();
        let b = render_scene(&demo_scene(&skel, &mesh), &shifted, w, h).unwrap();
        // brute-force alignment: the best integer shift must match
        let mut best = (f64::INFINITY, 0i64, 0i64);
        for dy in -5i64..=5 {
            for dx in -5i64..=5 {
                let mut ssd = 0.0;
                let mut n = 0usize;
                for y in 8..(h as i64 - 8) {
                    for x in 8..(w as i64 - 8) {
                        let (bx, by) = ((x + dx) as usize, (y + dy) as usize);
                        let pa = a.pixel(x as usize, y as usize);
                        let pb = b.pixel(bx, by);
                        for k in 0..3 {
                            ssd += f64::from(pa[k] - pb[k]).powi(2);
                        }
                        n += 1;
                    }
                }
                let score = ssd / n as f64;
                if score < best.0 {
                    best = (score, dx, dy);
                }
            }
        }
        // moving the camera right and down moves content left and up in b,
        // so b(x - 3, y - 2) matches a(x, y)
        assert_eq!((best.1, best.2), (-3, -2), "ssd {:.6}", best.0);
    }

    #[test]
    fn static_sequence_renders_identical_frames() {
        let seq = rest_pose_sequence(5, [0.0, 0.91, 0.0], 30.0, "rest");
        let skel = Skeleton::default_22();
        let a = render_frame(&seq, 0, &skel, None, &Camera::default_scene(), 64, 64).unwrap();
        let b = render_frame(&seq, 4, &skel, None, &Camera::default_scene(), 64, 64).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn png_round_trip_is_quantization_exact() {
        let skel = Skeleton::default_22();
        let mesh = make_primitive(PrimitiveKind::Cylinder, &[0.1, 0.3]).unwrap();
        let img = render_scene(&demo_scene(&skel, &mesh), &Camera::default_scene(), 48, 48).unwrap();
        let back = ImageBuf::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(back.width, 48);
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        let again = ImageBuf::decode_png(&back.encode_png().unwrap()).unwrap();
        assert_eq!(back.data, again.data);
    }

    #[test]
    fn resize_preserves_constant_images_and_means() {
        let img = ImageBuf::filled(37, 23, [0.25, 0.5, 0.75]).unwrap();
        let r = img.resize_bilinear(224, 224).unwrap();
        for c in r.data.chunks(3) {
            assert!((c[0] - 0.25).abs() < 1e-6 && (c[2] - 0.75).abs() < 1e-6);
        }
        let skel = Skeleton::default_22();
        let mesh = make_primitive(PrimitiveKind::Box, &[0.3, 0.25, 0.25]).unwrap();
        let big = render_scene(&demo_scene(&skel, &mesh), &Camera::default_scene(), 128, 128).unwrap();
        let small = big.resize_bilinear(64, 64).unwrap();
        let mean = |im: &ImageBuf| im.data.iter().map(|&v| f64::from(v)).sum::<f64>() / im.data.len() as f64;
        assert!((mean(&big) - mean(&small)).abs() < 0.02);
    }

    #[test]
    fn bad_cameras_and_shapes_are_rejected() {
        assert!(matches!(
            Camera::new([0.0; 3], [0.0; 3], [0.0, 1.0, 0.0], 1.0),
            Err(Error::BadCamera(_))
        ));
        assert!(matches!(
            Camera::new([0.0; 3], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0], 1.0),
            Err(Error::BadCamera(_))
        ));
        assert!(matches!(
            Camera::new([0.0; 3], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0], 0.0),
            Err(Error::BadCamera(_))
        ));
        assert!(ImageBuf::new(0, 10).is_err());
    }

    #[test]
    fn keyframes_match_an_exhaustive_oracle() {
        // brute-force oracle over every maximal run
        fn oracle(mask: &[bool]) -> (usize, usize, usize) {
            let l = mask.len();
            let mut best: Option<(usize, usize)> = None;
            for s in 0..l {
                if !mask[s] || (s > 0 && mask[s - 1]) {
                    continue;
                }
                let mut e = s;
                while e + 1 < l && mask[e + 1] {
                    e += 1;
                }
                let len = e - s + 1;
                if best.map_or(true, |(_, bl)| len > bl) {
                    best = Some((s, len));
                }
            }
            match best {
                Some((s, len)) => (s, (s + s + len - 1) / 2, s + len - 1),
                None => (0, l / 2, l - 1),
            }
        }
        let l = 14usize;
        for bits in 0u32..(1 << l) {
            let mask: Vec<bool> = (0..l).map(|i| bits >> i & 1 == 1).collect();
            let mut contact = Array2::from_elem((l, 2), false);
            for (i, &m) in mask.iter().enumerate() {
                contact[[i, 0]] = m;
            }
            assert_eq!(select_keyframes(&contact), oracle(&mask), "bits {bits:#b}");
        }
    }

    #[test]
    fn keyframes_use_either_hand_and_prefer_earlier_ties() {
        let mut contact = Array2::from_elem((10, 2), false);
        contact[[1, 0]] = true;
        contact[[2, 1]] = true;
        contact[[6, 1]] = true;
        contact[[7, 0]] = true;
        // two runs of length 2: frames 1-2 and 6-7; earliest wins
        assert_eq!(select_keyframes(&contact), (1, 1, 2));
        let none = Array2::from_elem((9, 2), false);
        assert_eq!(select_keyframes(&none), (0, 4, 8));
    }
}
