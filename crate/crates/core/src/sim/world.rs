//! World state, reset distribution and dynamics.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Action;

/// Side length of the square table, meters.
pub const TABLE_SIZE: f64 = 0.64;
pub const MAX_GRIPPER_Z: f64 = 0.4;
/// Per-step translation limit (meters) applied to every action component.
pub const STEP_CLIP: f64 = 0.1;
pub const GRIPPER_START: [f64; 3] = [0.32, 0.32, 0.3];

pub const BLOCK_HALF: f64 = 0.04;
pub const BUTTON_HALF: f64 = 0.03;
pub const BUTTON_HEIGHT: f64 = 0.02;
pub const BUTTON_PRESSED_HEIGHT: f64 = 0.01;
pub const BIN_HALF: f64 = 0.06;
pub const BIN_HEIGHT: f64 = 0.01;
pub const SLIDER_TRAVEL: f64 = 0.2;
pub const SLIDER_HALF: [f64; 2] = [0.12, 0.02];
pub const SLIDER_TRACK_HEIGHT: f64 = 0.01;
pub const HANDLE_HALF: f64 = 0.02;
pub const HANDLE_HEIGHT: f64 = 0.04;
pub const GRIPPER_HALF: f64 = 0.02;

pub const BLOCK_HEIGHTS: [f64; 3] = [0.05, 0.10, 0.15];
pub const SHORT_HEIGHT: f64 = 0.05;
pub const TALL_HEIGHT: f64 = 0.15;

/// Horizontal grasp radius and how far above a block top a close still grips it.
pub const GRASP_RADIUS: f64 = 0.05;
pub const GRASP_ABOVE_TOP: f64 = 0.03;
/// Gripper height at or below which the button counts as pressed.
pub const PRESS_DEPTH: f64 = 0.015;

/// Object positions are snapped to this grid at reset.
const PLACEMENT_GRID: f64 = 0.04;
const PLACEMENT_MARGIN: f64 = 0.04;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Palette {
    A,
    B,
    C,
    D,
}

impl Palette {
    pub const ALL: [Palette; 4] = [Palette::A, Palette::B, Palette::C, Palette::D];

    pub fn table_color(self) -> [f64; 3] {
        match self {
            Palette::A => [0.42, 0.36, 0.30],
            Palette::B => [0.30, 0.40, 0.32],
            Palette::C => [0.32, 0.34, 0.44],
            Palette::D => [0.35, 0.37, 0.35],
        }
    }

    pub fn block_colors(self) -> [BlockColor; 3] {
        use BlockColor::*;
        match self {
            Palette::A => [Red, Green, Blue],
            Palette::B => [Yellow, Purple, Orange],
            Palette::C => [Cyan, Pink, White],
            Palette::D => [Red, Yellow, Cyan],
        }
    }
}

impl fmt::Display for Palette {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Palette {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Palette::A),
            "B" | "b" => Ok(Palette::B),
            "C" | "c" => Ok(Palette::C),
            "D" | "d" => Ok(Palette::D),
            other => Err(Error::Range {
                field: "palette".into(),
                value: other.into(),
                expected: "one of A, B, C, D".into(),
            }),
        }
    }
}

/// Parses `"ABC"` or `"A,B,C"`.
pub fn parse_palettes(s: &str) -> Result<Vec<Palette>> {
    let out: Vec<Palette> = s
        .chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .map(|c| c.to_string().parse())
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::Range {
            field: "palettes".into(),
            value: s.into(),
            expected: "at least one of A, B, C, D".into(),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockColor {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Orange,
    Cyan,
    Pink,
    White,
}

impl BlockColor {
    pub const ALL: [BlockColor; 9] = [
        BlockColor::Red,
        BlockColor::Green,
        BlockColor::Blue,
        BlockColor::Yellow,
        BlockColor::Purple,
        BlockColor::Orange,
        BlockColor::Cyan,
        BlockColor::Pink,
        BlockColor::White,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockColor::Red => "red",
            BlockColor::Green => "green",
            BlockColor::Blue => "blue",
            BlockColor::Yellow => "yellow",
            BlockColor::Purple => "purple",
            BlockColor::Orange => "orange",
            BlockColor::Cyan => "cyan",
            BlockColor::Pink => "pink",
            BlockColor::White => "white",
        }
    }

    pub fn rgb(self) -> [f64; 3] {
        match self {
            BlockColor::Red => [0.90, 0.15, 0.10],
            BlockColor::Green => [0.15, 0.80, 0.20],
            BlockColor::Blue => [0.15, 0.30, 0.90],
            BlockColor::Yellow => [0.90, 0.85, 0.10],
            BlockColor::Purple => [0.60, 0.20, 0.80],
            BlockColor::Orange => [0.95, 0.55, 0.10],
            BlockColor::Cyan => [0.10, 0.85, 0.85],
            BlockColor::Pink => [0.95, 0.50, 0.70],
            BlockColor::White => [0.95, 0.95, 0.95],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Block,
    Button,
    Slider,
    Bin,
}

/// Scene layouts. `TallShort` holds two blocks of one color with heights
/// 0.05 and 0.15, which render identically in RGB.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scene {
    #[default]
    Standard,
    TallShort,
}

impl FromStr for Scene {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Scene::Standard),
            "tall-short" => Ok(Scene::TallShort),
            other => Err(Error::Range {
                field: "scene".into(),
                value: other.into(),
                expected: "standard or tall-short".into(),
            }),
        }
    }
}

/// `pos` is the footprint center `(x, y)` and the bottom height `z`.
/// For the slider, `pos` is the track center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Object {
    pub kind: ObjectKind,
    pub color: Option<BlockColor>,
    pub pos: [f64; 3],
    pub height: f64,
    pub held: bool,
}

impl Object {
    pub fn top(&self) -> f64 {
        self.pos[2] + self.height
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub gripper: [f64; 3],
    pub gripper_closed: bool,
    pub objects: Vec<Object>,
    pub palette: Palette,
    pub scene: Scene,
    pub button_presses: u32,
    pub button_down: bool,
    /// Slider handle position along the track, in `[0, 1]`.
    pub slider: f64,
    /// Gripper height minus the held block's bottom, fixed at grasp time.
    pub grasp_offset: f64,
}

impl WorldState {
    pub fn blocks(&self) -> impl Iterator<Item = (usize, &Object)> {
        self.objects.iter().enumerate().filter(|(_, o)| o.kind == ObjectKind::Block)
    }

    fn find(&self, kind: ObjectKind) -> &Object {
        self.objects.iter().find(|o| o.kind == kind).expect("every scene has one of each fixture")
    }

    pub fn button(&self) -> &Object {
        self.find(ObjectKind::Button)
    }

    pub fn bin(&self) -> &Object {
        self.find(ObjectKind::Bin)
    }

    pub fn slider_track(&self) -> &Object {
        self.find(ObjectKind::Slider)
    }

    /// Handle center `(x, y)`.
    pub fn slider_handle(&self) -> [f64; 2] {
        let t = self.slider_track();
        [t.pos[0] - SLIDER_TRAVEL / 2.0 + self.slider * SLIDER_TRAVEL, t.pos[1]]
    }

    pub fn held(&self) -> Option<usize> {
        self.objects.iter().position(|o| o.held)
    }

    pub fn in_bin(&self, idx: usize) -> bool {
        let (o, b) = (&self.objects[idx], self.bin());
        !o.held && (o.pos[0] - b.pos[0]).abs() <= BIN_HALF + 1e-9 && (o.pos[1] - b.pos[1]).abs() <= BIN_HALF + 1e-9
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.gripper;
        let inside = |v: f64, lo: f64, hi: f64| v.is_finite() && v >= lo - 1e-9 && v <= hi + 1e-9;
        if !(inside(g[0], 0.0, TABLE_SIZE) && inside(g[1], 0.0, TABLE_SIZE) && inside(g[2], 0.0, MAX_GRIPPER_Z)) {
            return Err(Error::Contract(format!("gripper out of bounds: {g:?}")));
        }
        for o in &self.objects {
            let [hx, hy] = footprint_half(o.kind);
            if !(inside(o.pos[0], hx, TABLE_SIZE - hx) && inside(o.pos[1], hy, TABLE_SIZE - hy) && o.pos[2] >= 0.0) {
                return Err(Error::Contract(format!("{:?} out of bounds: {:?}", o.kind, o.pos)));
            }
        }
        if self.objects.iter().filter(|o| o.held).count() > 1 {
            return Err(Error::Contract("more than one held object".into()));
        }
        if !inside(self.slider, 0.0, 1.0) {
            return Err(Error::Contract(format!("slider value {}", self.slider)));
        }
        Ok(())
    }
}

pub fn footprint_half(kind: ObjectKind) -> [f64; 2] {
    match kind {
        ObjectKind::Block => [BLOCK_HALF; 2],
        ObjectKind::Button => [BUTTON_HALF; 2],
        ObjectKind::Bin => [BIN_HALF; 2],
        ObjectKind::Slider => SLIDER_HALF,
    }
}

fn sample_center(rng: &mut ChaCha8Rng, kind: ObjectKind) -> [f64; 2] {
    let half = footprint_half(kind);
    let axis = |rng: &mut ChaCha8Rng, h: f64| {
        let lo = ((h + PLACEMENT_MARGIN) / PLACEMENT_GRID - 1e-9).ceil() as i64;
        let hi = ((TABLE_SIZE - h - PLACEMENT_MARGIN) / PLACEMENT_GRID + 1e-9).floor() as i64;
        rng.gen_range(lo..=hi) as f64 * PLACEMENT_GRID
    };
    [axis(rng, half[0]), axis(rng, half[1])]
}

fn overlaps(a: &[f64; 2], ha: [f64; 2], b: &[f64; 2], hb: [f64; 2]) -> bool {
    (a[0] - b[0]).abs() < ha[0] + hb[0] + PLACEMENT_MARGIN - 1e-9 && (a[1] - b[1]).abs() < ha[1] + hb[1] + PLACEMENT_MARGIN - 1e-9
}

/// Initial state for `seed`. Geometry depends only on the seed; the palette
/// picks the table color and maps the three color slots to block colors.
pub fn make_env(seed: u64, palette: Palette) -> WorldState {
    make_scene(seed, palette, Scene::Standard)
}

pub fn make_scene(seed: u64, palette: Palette, scene: Scene) -> WorldState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [
        ObjectKind::Bin,
        ObjectKind::Slider,
        ObjectKind::Button,
        ObjectKind::Block,
        ObjectKind::Block,
        ObjectKind::Block,
    ];
    let centers = 'layout: loop {
        let mut placed: Vec<([f64; 2], [f64; 2])> = Vec::new();
        for &k in &kinds {
            let half = footprint_half(k);
            let mut found = None;
            for _ in 0..200 {
                let c = sample_center(&mut rng, k);
                if placed.iter().all(|(p, h)| !overlaps(&c, half, p, *h)) {
                    found = Some(c);
                    break;
                }
            }
            match found {
                Some(c) => placed.push((c, half)),
                None => continue 'layout,
            }
        }
        break placed;
    };

    let mut slots = [0usize, 1, 2];
    slots.shuffle(&mut rng);
    let mut heights: Vec<f64> = (0..3).map(|_| BLOCK_HEIGHTS[rng.gen_range(0..3)]).collect();
    let slider = rng.gen_range(0.3..0.7);
    let colors = palette.block_colors();
    let block_colors: Vec<BlockColor> = match scene {
        Scene::Standard => slots.iter().map(|&s| colors[s]).collect(),
        Scene::TallShort => {
            let tall_first = rng.gen_bool(0.5);
            heights[0] = if tall_first { TALL_HEIGHT } else { SHORT_HEIGHT };
            heights[1] = if tall_first { SHORT_HEIGHT } else { TALL_HEIGHT };
            vec![colors[slots[0]], colors[slots[0]], colors[slots[1]]]
        }
    };

    let mut objects = Vec::with_capacity(kinds.len());
    let mut block = 0;
    for (&kind, (c, _)) in kinds.iter().zip(&centers) {
        let (color, height) = match kind {
            ObjectKind::Block => {
                block += 1;
                (Some(block_colors[block - 1]), heights[block - 1])
            }
            ObjectKind::Button => (None, BUTTON_HEIGHT),
            ObjectKind::Bin => (None, BIN_HEIGHT),
            ObjectKind::Slider => (None, SLIDER_TRACK_HEIGHT),
        };
        objects.push(Object {
            kind,
            color,
            pos: [c[0], c[1], 0.0],
            height,
            held: false,
        });
    }
    WorldState {
        gripper: GRIPPER_START,
        gripper_closed: false,
        objects,
        palette,
        scene,
        button_presses: 0,
        button_down: false,
        slider,
        grasp_offset: 0.0,
    }
}

fn clip(v: f64, bound: f64) -> f64 {
    if v.is_finite() {
        v.clamp(-bound, bound)
    } else {
        0.0
    }
}

/// One control step. Translation is clipped to [`STEP_CLIP`] per axis and
/// clamped to the workspace; rotation components are ignored.
pub fn step_env(s: &WorldState, a: &Action) -> WorldState {
    let mut n = s.clone();
    let old = s.gripper;
    let target = [
        (old[0] + clip(a.pose[0], STEP_CLIP)).clamp(0.0, TABLE_SIZE),
        (old[1] + clip(a.pose[1], STEP_CLIP)).clamp(0.0, TABLE_SIZE),
        (old[2] + clip(a.pose[2], STEP_CLIP)).clamp(0.0, MAX_GRIPPER_Z),
    ];
    let moved = [target[0] - old[0], target[1] - old[1]];

    // An open gripper inside an object's footprint and below its top drags it along.
    if !s.gripper_closed {
        for o in n.objects.iter_mut().filter(|o| o.kind == ObjectKind::Block && !o.held) {
            let reach = BLOCK_HALF + GRIPPER_HALF;
            if (old[0] - o.pos[0]).abs() <= reach && (old[1] - o.pos[1]).abs() <= reach && old[2] < o.top() {
                o.pos[0] = (o.pos[0] + moved[0]).clamp(BLOCK_HALF, TABLE_SIZE - BLOCK_HALF);
                o.pos[1] = (o.pos[1] + moved[1]).clamp(BLOCK_HALF, TABLE_SIZE - BLOCK_HALF);
            }
        }
        let h = s.slider_handle();
        let reach = HANDLE_HALF + GRIPPER_HALF;
        if (old[0] - h[0]).abs() <= reach && (old[1] - h[1]).abs() <= reach && old[2] < HANDLE_HEIGHT {
            n.slider = (s.slider + moved[0] / SLIDER_TRAVEL).clamp(0.0, 1.0);
        }
    }

    n.gripper = target;
    carry_held(&mut n);

    if a.gripper_closed && !s.gripper_closed {
        n.gripper_closed = true;
        let g = n.gripper;
        let pick = n
            .objects
            .iter()
            .enumerate()
            .filter(|(_, o)| o.kind == ObjectKind::Block)
            .map(|(i, o)| (i, (o.pos[0] - g[0]).hypot(o.pos[1] - g[1]), o.top()))
            .filter(|&(_, d, top)| d <= GRASP_RADIUS + 1e-9 && g[2] <= top + GRASP_ABOVE_TOP + 1e-9)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, _, _)) = pick {
            n.objects[i].held = true;
            n.grasp_offset = g[2] - n.objects[i].pos[2];
        }
    } else if !a.gripper_closed && s.gripper_closed {
        n.gripper_closed = false;
        if let Some(i) = n.held() {
            let o = &mut n.objects[i];
            o.held = false;
            o.pos[2] = 0.0;
        }
    }

    let b = n.button().pos;
    let g = n.gripper;
    let down = (g[0] - b[0]).abs() <= BUTTON_HALF && (g[1] - b[1]).abs() <= BUTTON_HALF && g[2] <= PRESS_DEPTH;
    if down && !s.button_down {
        n.button_presses += 1;
    }
    n.button_down = down;
    let pressed_height = if down { BUTTON_PRESSED_HEIGHT } else { BUTTON_HEIGHT };
    if let Some(btn) = n.objects.iter_mut().find(|o| o.kind == ObjectKind::Button) {
        btn.height = pressed_height;
    }
    n
}

fn carry_held(s: &mut WorldState) {
    let g = s.gripper;
    let offset = s.grasp_offset;
    if let Some(o) = s.objects.iter_mut().find(|o| o.held) {
        o.pos[0] = g[0].clamp(BLOCK_HALF, TABLE_SIZE - BLOCK_HALF);
        o.pos[1] = g[1].clamp(BLOCK_HALF, TABLE_SIZE - BLOCK_HALF);
        o.pos[2] = (g[2] - offset).max(0.0);
    }
}
