//! Task families, success predicates, instruction templates and the paraphrase bank.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::Vocabulary;
use crate::sim::world::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Lift,
    Push,
    Press,
    Place,
    Slide,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Lift, Family::Push, Family::Press, Family::Place, Family::Slide];

    pub fn name(self) -> &'static str {
        match self {
            Family::Lift => "lift",
            Family::Push => "push",
            Family::Press => "press",
            Family::Place => "place",
            Family::Slide => "slide",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| Error::Range {
                field: "family".into(),
                value: s.into(),
                expected: "lift, push, press, place or slide".into(),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    Tall,
    Short,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
    Forward,
    Backward,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Left, Direction::Right, Direction::Forward, Direction::Backward];

    pub fn unit(self) -> [f64; 2] {
        match self {
            Direction::Left => [-1.0, 0.0],
            Direction::Right => [1.0, 0.0],
            Direction::Forward => [0.0, 1.0],
            Direction::Backward => [0.0, -1.0],
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

/// A block named by color, optionally disambiguated by height.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockRef {
    pub color: BlockColor,
    pub size: Option<Size>,
}

impl BlockRef {
    pub fn phrase(&self) -> String {
        match self.size {
            Some(Size::Tall) => format!("tall {} block", self.color.name()),
            Some(Size::Short) => format!("short {} block", self.color.name()),
            None => format!("{} block", self.color.name()),
        }
    }

    /// Index of the referenced block: among blocks of the color, the tallest
    /// or shortest when a size is given, otherwise the first.
    pub fn resolve(&self, s: &WorldState) -> Result<usize> {
        let mut matches: Vec<(usize, f64)> = s
            .blocks()
            .filter(|(_, o)| o.color == Some(self.color))
            .map(|(i, o)| (i, o.height))
            .collect();
        match self.size {
            Some(Size::Tall) => matches.sort_by(|a, b| b.1.total_cmp(&a.1)),
            Some(Size::Short) => matches.sort_by(|a, b| a.1.total_cmp(&b.1)),
            None => {}
        }
        matches
            .first()
            .map(|m| m.0)
            .ok_or_else(|| Error::Task(format!("no object matches \"{}\"", self.phrase())))
    }
}

/// Push displacement needed for success, and the distance the expert pushes.
pub const PUSH_SUCCESS: f64 = 0.10;
pub const PUSH_DISTANCE: f64 = 0.14;
pub const SLIDE_LOW: f64 = 0.1;
pub const SLIDE_HIGH: f64 = 0.9;
/// Lift succeeds once the held block's bottom is at least this high.
pub const LIFT_HEIGHT: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: Family,
    pub block: Option<BlockRef>,
    pub direction: Option<Direction>,
    pub instruction: String,
}

impl TaskSpec {
    pub fn new(family: Family, block: Option<BlockRef>, direction: Option<Direction>) -> Result<Self> {
        let needs_block = matches!(family, Family::Lift | Family::Push | Family::Place);
        let needs_dir = matches!(family, Family::Push | Family::Slide);
        if needs_block != block.is_some() || needs_dir != direction.is_some() {
            return Err(Error::Task(format!("malformed {family} task")));
        }
        if family == Family::Slide && matches!(direction, Some(Direction::Forward | Direction::Backward)) {
            return Err(Error::Task("the slider only moves left or right".into()));
        }
        let mut t = Self {
            family,
            block,
            direction,
            instruction: String::new(),
        };
        t.instruction = t.fill(CANONICAL[family as usize]);
        Ok(t)
    }

    fn fill(&self, template: &str) -> String {
        let obj = self.block.map(|b| b.phrase()).unwrap_or_default();
        let dir = self.direction.map(Direction::word).unwrap_or_default();
        template.replace("{obj}", &obj).replace("{dir}", dir)
    }

    pub fn with_instruction(mut self, text: String) -> Self {
        self.instruction = text;
        self
    }

    /// Index of the target block, if the family has one.
    pub fn target(&self, s: &WorldState) -> Result<Option<usize>> {
        self.block.map(|b| b.resolve(s)).transpose()
    }

    /// Success predicate, judged against the state at which the task started.
    pub fn success(&self, anchor: &WorldState, s: &WorldState) -> Result<bool> {
        let target = self.target(anchor)?;
        Ok(match self.family {
            Family::Lift => {
                let i = target.expect("lift has a block");
                s.objects[i].held && s.objects[i].pos[2] >= LIFT_HEIGHT - 1e-9
            }
            Family::Place => s.in_bin(target.expect("place has a block")),
            Family::Push => {
                let i = target.expect("push has a block");
                let u = self.direction.expect("push has a direction").unit();
                let moved = [s.objects[i].pos[0] - anchor.objects[i].pos[0], s.objects[i].pos[1] - anchor.objects[i].pos[1]];
                moved[0] * u[0] + moved[1] * u[1] >= PUSH_SUCCESS - 1e-9
            }
            Family::Press => s.button_presses > anchor.button_presses,
            Family::Slide => match self.direction {
                Some(Direction::Left) => s.slider <= SLIDE_LOW,
                _ => s.slider >= SLIDE_HIGH,
            },
        })
    }
}

const CANONICAL: [&str; 5] = [
    "lift the {obj}",
    "push the {obj} {dir}",
    "press the button",
    "place the {obj} in the bin",
    "slide the slider {dir}",
];

const LIFT_BANK: &[&str] = &[
    "lift the {obj}",
    "pick up the {obj}",
    "raise the {obj}",
    "grab and hold the {obj}",
    "lift up the {obj}",
    "grasp the {obj} and lift it",
    "take the {obj} off the table",
    "pick the {obj} up",
    "hold the {obj} in the air",
    "grab the {obj} and raise it",
    "elevate the {obj}",
];

const PUSH_BANK: &[&str] = &[
    "push the {obj} {dir}",
    "shove the {obj} {dir}",
    "nudge the {obj} {dir}",
    "move the {obj} {dir}",
    "slide the {obj} {dir}",
    "give the {obj} a push {dir}",
    "bump the {obj} {dir}",
    "knock the {obj} {dir}",
    "shift the {obj} {dir}",
    "move the {obj} {dir} with the gripper",
    "sweep the {obj} {dir}",
];

const PRESS_BANK: &[&str] = &[
    "press the button",
    "push the button",
    "press down the button",
    "hit the button",
    "tap the button",
    "push down on the button",
    "activate the button",
    "click the button",
    "depress the button",
    "press the button once",
    "poke the button",
];

const PLACE_BANK: &[&str] = &[
    "place the {obj} in the bin",
    "put the {obj} in the bin",
    "drop the {obj} into the bin",
    "move the {obj} to the bin",
    "store the {obj} in the bin",
    "place the {obj} inside the bin",
    "pick up the {obj} and put it in the bin",
    "deposit the {obj} in the bin",
    "transfer the {obj} into the bin",
    "get the {obj} into the bin",
    "carry the {obj} to the bin",
];

const SLIDE_BANK: &[&str] = &[
    "slide the slider {dir}",
    "move the slider {dir}",
    "push the slider {dir}",
    "shift the slider {dir}",
    "drag the slider to the {dir}",
    "slide the handle {dir}",
    "move the slider handle {dir}",
    "set the slider to the {dir}",
    "pull the slider {dir}",
    "nudge the slider all the way {dir}",
    "push the slider handle to the {dir}",
];

/// Instruction templates per family; the first entry is the canonical one.
pub fn paraphrase_bank(family: Family) -> &'static [&'static str] {
    match family {
        Family::Lift => LIFT_BANK,
        Family::Push => PUSH_BANK,
        Family::Press => PRESS_BANK,
        Family::Place => PLACE_BANK,
        Family::Slide => SLIDE_BANK,
    }
}

/// Uniform draw from the family's templates, filled with the task's target.
pub fn paraphrase_instruction<R: Rng>(t: &TaskSpec, rng: &mut R) -> Result<String> {
    paraphrase_from(t, rng, paraphrase_bank)
}

pub(crate) fn paraphrase_from<R: Rng>(t: &TaskSpec, rng: &mut R, bank: impl Fn(Family) -> &'static [&'static str]) -> Result<String> {
    let templates = bank(t.family);
    if templates.is_empty() {
        return Err(Error::Bank(t.family.to_string()));
    }
    Ok(t.fill(templates[rng.gen_range(0..templates.len())]))
}

/// Every word any instruction can contain.
pub fn instruction_vocabulary() -> Vocabulary {
    let mut texts: Vec<String> = Family::ALL
        .iter()
        .flat_map(|&f| paraphrase_bank(f).iter().map(|t| t.replace("{obj}", "").replace("{dir}", "")))
        .collect();
    texts.extend(BlockColor::ALL.iter().map(|c| c.name().to_string()));
    texts.extend(Direction::ALL.iter().map(|d| d.word().to_string()));
    texts.push("tall short block".into());
    Vocabulary::from_texts(texts.iter().map(String::as_str))
}

/// Every task that is well-defined in `s`, feasible for the expert, and not already satisfied.
pub fn candidate_tasks(s: &WorldState, families: &[Family]) -> Vec<TaskSpec> {
    let mut refs: Vec<BlockRef> = Vec::new();
    for (_, o) in s.blocks() {
        let color = o.color.expect("blocks are colored");
        let same: Vec<f64> = s.blocks().filter(|(_, b)| b.color == Some(color)).map(|(_, b)| b.height).collect();
        let r = if same.len() > 1 {
            let tallest = same.iter().cloned().fold(f64::MIN, f64::max);
            BlockRef {
                color,
                size: Some(if o.height >= tallest { Size::Tall } else { Size::Short }),
            }
        } else {
            BlockRef { color, size: None }
        };
        if !refs.contains(&r) {
            refs.push(r);
        }
    }
    if s.scene == Scene::TallShort {
        refs.retain(|r| r.size.is_some());
    }

    let mut out = Vec::new();
    for &family in families {
        match family {
            Family::Lift | Family::Place => {
                for r in &refs {
                    out.push(TaskSpec::new(family, Some(*r), None).expect("well-formed"));
                }
            }
            Family::Push => {
                for r in &refs {
                    let i = r.resolve(s).expect("built from the scene");
                    let p = s.objects[i].pos;
                    for d in Direction::ALL {
                        let u = d.unit();
                        let dest = [p[0] + u[0] * PUSH_DISTANCE, p[1] + u[1] * PUSH_DISTANCE];
                        let lo = BLOCK_HALF;
                        let hi = TABLE_SIZE - BLOCK_HALF;
                        if dest.iter().all(|&v| v >= lo && v <= hi) {
                            out.push(TaskSpec::new(family, Some(*r), Some(d)).expect("well-formed"));
                        }
                    }
                }
            }
            Family::Press => out.push(TaskSpec::new(family, None, None).expect("well-formed")),
            Family::Slide => {
                for d in [Direction::Left, Direction::Right] {
                    out.push(TaskSpec::new(family, None, Some(d)).expect("well-formed"));
                }
            }
        }
    }
    out.retain(|t| !t.success(s, s).unwrap_or(true));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::UNK_ID;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn banks_are_large_and_start_with_the_canonical_template() {
        for f in Family::ALL {
            let bank = paraphrase_bank(f);
            assert!(bank.len() >= 10, "{f}");
            assert_eq!(bank[0], CANONICAL[f as usize]);
        }
    }

    #[test]
    fn paraphrases_are_seeded_and_in_vocabulary() {
        let vocab = instruction_vocabulary();
        let s = make_env(2, Palette::B);
        for t in candidate_tasks(&s, &Family::ALL) {
            let a = paraphrase_instruction(&t, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let b = paraphrase_instruction(&t, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            assert_eq!(a, b);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..30 {
                let text = paraphrase_instruction(&t, &mut rng).unwrap();
                assert!(vocab.tokenize(&text).unwrap().iter().all(|&id| id != UNK_ID), "{text}");
            }
            assert!(vocab.tokenize(&t.instruction).unwrap().iter().all(|&id| id != UNK_ID));
        }
    }

    #[test]
    fn missing_bank_is_an_error() {
        let t = TaskSpec::new(Family::Press, None, None).unwrap();
        let err = paraphrase_from(&t, &mut ChaCha8Rng::seed_from_u64(0), |_| &[]).unwrap_err();
        assert!(matches!(err, Error::Bank(_)));
    }

    #[test]
    fn descriptors_resolve_by_color_and_size() {
        let s = make_scene(3, Palette::C, Scene::TallShort);
        let color = s.blocks().next().unwrap().1.color.unwrap();
        let tall = BlockRef { color, size: Some(Size::Tall) }.resolve(&s).unwrap();
        let short = BlockRef { color, size: Some(Size::Short) }.resolve(&s).unwrap();
        assert_eq!(s.objects[tall].height, TALL_HEIGHT);
        assert_eq!(s.objects[short].height, SHORT_HEIGHT);
        let absent = BlockRef { color: BlockColor::Red, size: None };
        assert!(matches!(absent.resolve(&s), Err(Error::Task(_))));

        let tasks = candidate_tasks(&s, &[Family::Lift]);
        assert_eq!(tasks.len(), 2);
        assert!(tasks.iter().all(|t| t.instruction.contains("tall") || t.instruction.contains("short")));
    }

    #[test]
    fn malformed_tasks_are_rejected() {
        assert!(TaskSpec::new(Family::Lift, None, None).is_err());
        assert!(TaskSpec::new(Family::Slide, None, Some(Direction::Forward)).is_err());
        let t = TaskSpec::new(Family::Slide, None, Some(Direction::Left)).unwrap();
        assert_eq!(t.instruction, "slide the slider left");
    }
}
