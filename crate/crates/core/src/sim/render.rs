//! Orthographic top-down rendering for the two cameras.

use crate::depth::DepthMap;
use crate::encoders::RgbImage;
use crate::sim::world::*;
use crate::sim::Observation;

pub const IMAGE_SIZE: usize = 32;
/// Meters per pixel of the third-person camera; its frame covers the table exactly.
pub const STATIC_PIXEL: f64 = TABLE_SIZE / IMAGE_SIZE as f64;
pub const STATIC_CAMERA_HEIGHT: f64 = 1.0;
/// Meters per pixel of the gripper camera, which keeps the whole table in view.
pub const GRIPPER_PIXEL: f64 = 0.04;
pub const GRIPPER_CAMERA_OFFSET: f64 = 0.05;
pub const MIN_DEPTH: f64 = 0.01;
pub const FLOOR_HEIGHT: f64 = -0.5;
pub const FLOOR_COLOR: [f64; 3] = [0.05, 0.05, 0.05];
pub const BUTTON_COLOR: [f64; 3] = [0.55, 0.50, 0.10];
pub const BIN_COLOR: [f64; 3] = [0.55, 0.45, 0.30];
pub const TRACK_COLOR: [f64; 3] = [0.45, 0.45, 0.45];
pub const HANDLE_COLOR: [f64; 3] = [0.10, 0.10, 0.10];
pub const GRIPPER_OPEN_COLOR: [f64; 3] = [0.75, 0.75, 0.75];
pub const GRIPPER_CLOSED_COLOR: [f64; 3] = [0.50, 0.50, 0.50];

struct Surface {
    center: [f64; 2],
    half: [f64; 2],
    top: f64,
    color: [f64; 3],
}

fn surfaces(s: &WorldState, with_gripper: bool) -> Vec<Surface> {
    let mut out = Vec::with_capacity(s.objects.len() + 2);
    for o in &s.objects {
        let color = match o.kind {
            ObjectKind::Block => o.color.map_or([0.5; 3], BlockColor::rgb),
            ObjectKind::Button => BUTTON_COLOR,
            ObjectKind::Bin => BIN_COLOR,
            ObjectKind::Slider => TRACK_COLOR,
        };
        out.push(Surface {
            center: [o.pos[0], o.pos[1]],
            half: footprint_half(o.kind),
            top: o.top(),
            color,
        });
        if o.kind == ObjectKind::Slider {
            out.push(Surface {
                center: s.slider_handle(),
                half: [HANDLE_HALF; 2],
                top: HANDLE_HEIGHT,
                color: HANDLE_COLOR,
            });
        }
    }
    if with_gripper {
        let g = s.gripper;
        out.push(Surface {
            center: [g[0], g[1]],
            half: [GRIPPER_HALF; 2],
            top: g[2] + 0.03,
            color: if s.gripper_closed { GRIPPER_CLOSED_COLOR } else { GRIPPER_OPEN_COLOR },
        });
    }
    out
}

/// Highest surface under `(x, y)`: its top height and color.
fn probe(x: f64, y: f64, surfaces: &[Surface], table: [f64; 3]) -> (f64, [f64; 3]) {
    let on_table = (0.0..=TABLE_SIZE).contains(&x) && (0.0..=TABLE_SIZE).contains(&y);
    let mut best = if on_table { (0.0, table) } else { (FLOOR_HEIGHT, FLOOR_COLOR) };
    for sf in surfaces {
        let inside = (x - sf.center[0]).abs() <= sf.half[0] + 1e-9 && (y - sf.center[1]).abs() <= sf.half[1] + 1e-9;
        if inside && sf.top >= best.0 {
            best = (sf.top, sf.color);
        }
    }
    best
}

fn render_view(
    s: &WorldState,
    with_gripper: bool,
    origin: [f64; 2],
    pixel: f64,
    depth_of: impl Fn(f64) -> f64,
) -> (RgbImage, DepthMap) {
    let n = IMAGE_SIZE;
    let sf = surfaces(s, with_gripper);
    let table = s.palette.table_color();
    let mut rgb = vec![0.0; 3 * n * n];
    let mut depth = vec![0.0; n * n];
    for i in 0..n {
        let y = origin[1] + (i as f64 + 0.5) * pixel;
        for j in 0..n {
            let x = origin[0] + (j as f64 + 0.5) * pixel;
            let (top, color) = probe(x, y, &sf, table);
            let p = i * n + j;
            for (c, v) in color.iter().enumerate() {
                rgb[c * n * n + p] = *v;
            }
            depth[p] = depth_of(top);
        }
    }
    (
        RgbImage::new(n, n, rgb).expect("colors in range"),
        DepthMap::new(n, n, depth).expect("positive depth"),
    )
}

/// Third-person view plus gripper-centered view. Depth is the distance from
/// the camera plane to the highest surface under each pixel.
pub fn render_observation(s: &WorldState) -> Observation {
    let (rgb_static, depth_static) = render_view(s, true, [0.0, 0.0], STATIC_PIXEL, |top| STATIC_CAMERA_HEIGHT - top);
    let g = s.gripper;
    let half_span = GRIPPER_PIXEL * IMAGE_SIZE as f64 / 2.0;
    let cam = g[2] + GRIPPER_CAMERA_OFFSET;
    let (rgb_gripper, depth_gripper) = render_view(s, false, [g[0] - half_span, g[1] - half_span], GRIPPER_PIXEL, |top| {
        (cam - top).max(MIN_DEPTH)
    });
    Observation {
        rgb_static,
        rgb_gripper,
        depth_static,
        depth_gripper,
    }
}

/// Pixel `(row, col)` of the third-person camera containing world point `(x, y)`.
pub fn static_pixel_of(x: f64, y: f64) -> (usize, usize) {
    let clampi = |v: f64| ((v / STATIC_PIXEL).floor().max(0.0) as usize).min(IMAGE_SIZE - 1);
    (clampi(y), clampi(x))
}
