//! Procedural two-domain face renderer with exact sidecar ground truth.
//!
//! Faces are composites of a skin ellipse, two eye disks, a nose dot and a
//! mouth arc with emphasized corners. Domains differ by a global style
//! transform (palette + stroke width); geometry distributions are shared, so
//! landmarks transfer across domains. The renderer writes its own landmark
//! and mask sidecars, making every guidance signal exactly verifiable.

use crate::error::Result;
use crate::guidance::{
    landmark_csv_path, mask_path, write_landmark_csv, write_sidecar_manifest, SidecarManifest,
};
use crate::imgproc;
use crate::types::{Domain, LandmarkSet};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Clone, Copy, Debug)]
pub struct StyleSpec {
    pub bg: [f32; 3],
    pub skin: [f32; 3],
    pub feature: [f32; 3],
    pub stroke_mult: f32,
}

pub fn domain_style(domain: Domain) -> StyleSpec {
    match domain {
        Domain::X => StyleSpec {
            bg: [0.84, 0.87, 0.92],
            skin: [0.95, 0.82, 0.70],
            feature: [0.16, 0.11, 0.09],
            stroke_mult: 1.0,
        },
        Domain::Y => StyleSpec {
            bg: [0.97, 0.93, 0.86],
            skin: [0.99, 0.91, 0.83],
            feature: [0.10, 0.14, 0.32],
            stroke_mult: 1.8,
        },
    }
}

/// Geometry of one rendered face, in unit coordinates.
#[derive(Clone, Copy, Debug)]
pub struct FaceGeometry {
    pub cx: f64,
    pub cy: f64,
    pub head_rx: f64,
    pub head_ry: f64,
    pub eye_dx: f64,
    pub eye_y: f64,
    pub eye_r: f64,
    pub nose_y: f64,
    pub nose_r: f64,
    pub mouth_y: f64,
    pub mouth_hw: f64,
    pub mouth_curve: f64,
}

impl FaceGeometry {
    /// Base geometry of an identity cluster.
    pub fn identity_base(rng: &mut ChaCha8Rng) -> FaceGeometry {
        FaceGeometry {
            cx: 0.50,
            cy: 0.54,
            head_rx: rng.gen_range(0.27..0.33),
            head_ry: rng.gen_range(0.33..0.39),
            eye_dx: rng.gen_range(0.11..0.15),
            eye_y: 0.54 - rng.gen_range(0.105..0.135),
            eye_r: rng.gen_range(0.028..0.042),
            nose_y: 0.54 + rng.gen_range(0.02..0.04),
            nose_r: rng.gen_range(0.014..0.022),
            mouth_y: 0.54 + rng.gen_range(0.145..0.175),
            mouth_hw: rng.gen_range(0.085..0.115),
            mouth_curve: rng.gen_range(0.015..0.035),
        }
    }

    /// Small per-frame pose jitter around the identity base.
    pub fn jittered(&self, rng: &mut ChaCha8Rng) -> FaceGeometry {
        let dx = rng.gen_range(-0.015..0.015);
        let dy = rng.gen_range(-0.015..0.015);
        let scale = rng.gen_range(0.96..1.04);
        FaceGeometry {
            cx: self.cx + dx,
            cy: self.cy + dy,
            head_rx: self.head_rx * scale,
            head_ry: self.head_ry * scale,
            eye_dx: self.eye_dx * scale,
            eye_y: self.cy + dy + (self.eye_y - self.cy) * scale,
            eye_r: self.eye_r * scale,
            nose_y: self.cy + dy + (self.nose_y - self.cy) * scale,
            nose_r: self.nose_r * scale,
            mouth_y: self.cy + dy + (self.mouth_y - self.cy) * scale,
            mouth_hw: self.mouth_hw * scale,
            mouth_curve: self.mouth_curve * scale,
        }
    }

    /// Exact landmark coordinates in pixels:
    /// [left eye, right eye, nose, left mouth corner, right mouth corner].
    pub fn landmarks(&self, resolution: usize) -> LandmarkSet {
        let s = resolution as f64;
        let pts = [
            [(self.cx - self.eye_dx) * s, self.eye_y * s],
            [(self.cx + self.eye_dx) * s, self.eye_y * s],
            [self.cx * s, self.nose_y * s],
            [(self.cx - self.mouth_hw) * s, self.mouth_y * s],
            [(self.cx + self.mouth_hw) * s, self.mouth_y * s],
        ];
        LandmarkSet::new(Array2::from_shape_fn((5, 2), |(k, d)| pts[k][d])).unwrap()
    }
}

fn smoothstep(edge0: f32, edge1: f32, x: f32) -> f32 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Coverage of a disk at distance `d` from center with radius `r` (1 inside,
/// 0 outside, ~1px soft edge).
fn disk_cov(d: f32, r: f32) -> f32 {
    1.0 - smoothstep(r - 0.7, r + 0.7, d)
}

struct Canvas {
    rgb: Array3<f32>, // [H, W, 3]
    mask: Array2<f32>,
}

impl Canvas {
    fn new(res: usize, bg: [f32; 3]) -> Canvas {
        let mut rgb = Array3::zeros((res, res, 3));
        for c in 0..3 {
            rgb.slice_mut(ndarray::s![.., .., c]).fill(bg[c]);
        }
        Canvas {
            rgb,
            mask: Array2::from_elem((res, res), 0.05),
        }
    }

    fn blend(&mut self, y: usize, x: usize, cov: f32, color: [f32; 3], mask_val: f32) {
        if cov <= 0.0 {
            return;
        }
        for c in 0..3 {
            let cur = self.rgb[[y, x, c]];
            self.rgb[[y, x, c]] = cur + (color[c] - cur) * cov;
        }
        let mcur = self.mask[[y, x]];
        self.mask[[y, x]] = mcur + (mask_val - mcur) * cov;
    }
}

/// Render one face; returns the RGB image in [0, 1] and the parsing mask.
pub fn render_face(
    geo: &FaceGeometry,
    style: &StyleSpec,
    resolution: usize,
    color_jitter: f32,
) -> (Array3<f32>, Array2<f32>) {
    let s = resolution as f32;
    let mut canvas = Canvas::new(resolution, style.bg);
    let jit = |c: [f32; 3]| {
        [
            (c[0] + color_jitter).clamp(0.0, 1.0),
            (c[1] + color_jitter).clamp(0.0, 1.0),
            (c[2] + color_jitter).clamp(0.0, 1.0),
        ]
    };
    let skin = jit(style.skin);
    let feat = jit(style.feature);
    let sm = style.stroke_mult;

    let (cx, cy) = (geo.cx as f32 * s, geo.cy as f32 * s);
    let (rx, ry) = (geo.head_rx as f32 * s, geo.head_ry as f32 * s);
    let eye_y = geo.eye_y as f32 * s;
    let eye_dx = geo.eye_dx as f32 * s;
    // pixel floors keep small features comparably dark after antialiasing,
    // so the landmark detector sees all of them at low resolutions
    let eye_r = (geo.eye_r as f32 * s * sm.sqrt()).max(1.8);
    let nose_y = geo.nose_y as f32 * s;
    let nose_r = (geo.nose_r as f32 * s * sm.sqrt()).max(1.7);
    let mouth_y = geo.mouth_y as f32 * s;
    let mouth_hw = geo.mouth_hw as f32 * s;
    let mouth_th = (0.014 * s * sm).max(1.7);
    let outline_th = (0.010 * s * sm).max(1.0);

    for y in 0..resolution {
        for x in 0..resolution {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            // head: filled ellipse with outline ring
            let ex = (px - cx) / rx;
            let ey = (py - cy) / ry;
            let e = (ex * ex + ey * ey).sqrt();
            // approximate pixel distance to the ellipse boundary
            let grad = ((ex / rx).powi(2) + (ey / ry).powi(2)).sqrt().max(1e-6);
            let dist = (e - 1.0) / grad;
            let head_cov = 1.0 - smoothstep(-0.7, 0.7, dist);
            canvas.blend(y, x, head_cov, skin, 0.55);
            let ring_cov = 1.0 - smoothstep(outline_th * 0.5 - 0.7, outline_th * 0.5 + 0.7, dist.abs());
            canvas.blend(y, x, ring_cov, feat, 0.8);

            // eyes
            for sign in [-1.0f32, 1.0] {
                let d = ((px - (cx + sign * eye_dx)).powi(2) + (py - eye_y).powi(2)).sqrt();
                canvas.blend(y, x, disk_cov(d, eye_r), feat, 1.0);
            }
            // nose
            let dn = ((px - cx).powi(2) + (py - nose_y).powi(2)).sqrt();
            canvas.blend(y, x, disk_cov(dn, nose_r), feat, 1.0);

            // mouth arc: quadratic from left corner to right corner dipping
            // by mouth_curve at the center, drawn as a thick stroke
            if (px - cx).abs() <= mouth_hw + mouth_th * 2.0 {
                let t = ((px - (cx - mouth_hw)) / (2.0 * mouth_hw)).clamp(0.0, 1.0);
                let arc_y = mouth_y + geo.mouth_curve as f32 * s * (4.0 * t * (1.0 - t));
                let d = (py - arc_y).abs();
                let inside = smoothstep(-0.7, 0.7, px - (cx - mouth_hw))
                    * (1.0 - smoothstep(-0.7, 0.7, px - (cx + mouth_hw)));
                let cov = (1.0 - smoothstep(mouth_th * 0.5 - 0.7, mouth_th * 0.5 + 0.7, d)) * inside;
                canvas.blend(y, x, cov, feat, 1.0);
            }
            // emphasized mouth corners for crisp localization
            for sign in [-1.0f32, 1.0] {
                let d = ((px - (cx + sign * mouth_hw)).powi(2) + (py - mouth_y).powi(2)).sqrt();
                canvas.blend(y, x, disk_cov(d, (mouth_th * 1.2).max(2.0)), feat, 1.0);
            }
        }
    }
    (canvas.rgb, canvas.mask)
}

/// Identities for `n` images: shape-parameter clusters, ~10 frames each.
pub fn identity_count(n: usize) -> usize {
    (n / 10).clamp(2, 24)
}

/// Render a full toy domain into `dir`: images, exact landmark/mask sidecars
/// and the sidecar manifest.
pub fn make_toy_domain(
    dir: &Path,
    domain: Domain,
    n: usize,
    resolution: usize,
    seed: u64,
) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let style = domain_style(domain);
    let n_ids = identity_count(n);
    let tag = match domain {
        Domain::X => "x",
        Domain::Y => "y",
    };
    let mut ids = Vec::with_capacity(n);
    let mut bases = Vec::with_capacity(n_ids);
    for ident in 0..n_ids {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed.wrapping_mul(0x100).wrapping_add(ident as u64),
        );
        bases.push(FaceGeometry::identity_base(&mut rng));
    }
    let mut frame_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xf00d));
    for i in 0..n {
        let ident = i % n_ids;
        let geo = bases[ident].jittered(&mut frame_rng);
        let jitter = frame_rng.gen_range(-0.02f32..0.02);
        let (rgb, mask) = render_face(&geo, &style, resolution, jitter);
        let id = format!("{tag}{ident:02}_{:03}", i / n_ids);
        imgproc::save_image_rgb01(&dir.join(format!("{id}.png")), &rgb)?;
        imgproc::save_mask01(&mask_path(dir, &id), &mask)?;
        write_landmark_csv(&landmark_csv_path(dir, &id), &geo.landmarks(resolution))?;
        ids.push(id);
    }
    write_sidecar_manifest(
        dir,
        &SidecarManifest {
            resolution,
            landmark_count: 5,
            eye_indices: [0, 1],
        },
    )?;
    Ok(ids)
}

/// Two unpaired toy domains with disjoint identities.
pub fn make_toy_domains(
    dir_x: &Path,
    dir_y: &Path,
    n_per_domain: usize,
    resolution: usize,
    seed: u64,
) -> Result<()> {
    if n_per_domain < 8 {
        return Err(crate::error::Error::Config(
            "make_toy_domains needs n >= 8".into(),
        ));
    }
    make_toy_domain(dir_x, Domain::X, n_per_domain, resolution, seed)?;
    make_toy_domain(dir_y, Domain::Y, n_per_domain, resolution, seed.wrapping_add(0x5eed))?;
    Ok(())
}

/// Paired toy set: identical geometry rendered in both domain styles, same
/// ids in both directories.
pub fn make_toy_paired(
    dir_x: &Path,
    dir_y: &Path,
    n: usize,
    resolution: usize,
    seed: u64,
) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir_x)?;
    std::fs::create_dir_all(dir_y)?;
    let n_ids = identity_count(n);
    let mut ids = Vec::with_capacity(n);
    let mut bases = Vec::with_capacity(n_ids);
    for ident in 0..n_ids {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x77).wrapping_add(ident as u64));
        bases.push(FaceGeometry::identity_base(&mut rng));
    }
    let mut frame_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xbeef));
    for i in 0..n {
        let ident = i % n_ids;
        let geo = bases[ident].jittered(&mut frame_rng);
        let jitter = frame_rng.gen_range(-0.02f32..0.02);
        let id = format!("p{ident:02}_{:03}", i / n_ids);
        for (dir, domain) in [(dir_x, Domain::X), (dir_y, Domain::Y)] {
            let (rgb, mask) = render_face(&geo, &domain_style(domain), resolution, jitter);
            imgproc::save_image_rgb01(&dir.join(format!("{id}.png")), &rgb)?;
            imgproc::save_mask01(&mask_path(dir, &id), &mask)?;
            write_landmark_csv(&landmark_csv_path(dir, &id), &geo.landmarks(resolution))?;
        }
        ids.push(id);
    }
    for dir in [dir_x, dir_y] {
        write_sidecar_manifest(
            dir,
            &SidecarManifest {
                resolution,
                landmark_count: 5,
                eye_indices: [0, 1],
            },
        )?;
    }
    Ok(ids)
}
