//! Scripted expert: a clipped proportional controller over per-family waypoints.

use crate::error::Result;
use crate::policy::Action;
use crate::sim::task::{Family, TaskSpec, PUSH_DISTANCE, SLIDE_HIGH, SLIDE_LOW};
use crate::sim::world::*;

/// Travel height between waypoints.
pub const CRUISE_HEIGHT: f64 = 0.25;
/// Height the gripper pushes blocks and the slider handle at.
pub const CONTACT_HEIGHT: f64 = 0.02;
pub const PRESS_HEIGHT: f64 = 0.01;
/// Grasp height below the block top.
pub const GRASP_DEPTH: f64 = 0.02;
const TOL: f64 = 1e-6;

fn clip(v: f64) -> f64 {
    v.clamp(-STEP_CLIP, STEP_CLIP)
}

/// Rise to cruise height, travel in xy, then descend to `z`. `None` once there.
fn approach(s: &WorldState, x: f64, y: f64, z: f64, closed: bool) -> Option<Action> {
    let g = s.gripper;
    let far = (x - g[0]).hypot(y - g[1]) > TOL;
    if far {
        if g[2] < CRUISE_HEIGHT - TOL {
            return Some(Action::translate(0.0, 0.0, clip(CRUISE_HEIGHT - g[2]), closed));
        }
        return Some(Action::translate(clip(x - g[0]), clip(y - g[1]), clip(CRUISE_HEIGHT - g[2]), closed));
    }
    if (z - g[2]).abs() > TOL {
        return Some(Action::translate(0.0, 0.0, clip(z - g[2]), closed));
    }
    None
}

fn open() -> Action {
    Action::translate(0.0, 0.0, 0.0, false)
}

fn grasp(s: &WorldState, i: usize) -> Action {
    let b = &s.objects[i];
    approach(s, b.pos[0], b.pos[1], b.top() - GRASP_DEPTH, false).unwrap_or(Action::translate(0.0, 0.0, 0.0, true))
}

/// Next expert action for `t`, begun at `anchor`. Always within the clip bound.
pub fn expert_action(s: &WorldState, t: &TaskSpec, anchor: &WorldState) -> Result<Action> {
    let target = t.target(anchor)?;
    let held = s.held();
    let hand_busy = s.gripper_closed;
    Ok(match t.family {
        Family::Lift => {
            let i = target.expect("lift has a block");
            match held {
                Some(h) if h == i => Action::translate(0.0, 0.0, STEP_CLIP, true),
                _ if hand_busy => open(),
                _ => grasp(s, i),
            }
        }
        Family::Place => {
            let i = target.expect("place has a block");
            match held {
                Some(h) if h == i => {
                    let b = s.bin().pos;
                    approach(s, b[0], b[1], CRUISE_HEIGHT, true).unwrap_or_else(open)
                }
                _ if hand_busy => open(),
                _ => grasp(s, i),
            }
        }
        Family::Push => {
            let i = target.expect("push has a block");
            if hand_busy {
                return Ok(open());
            }
            let u = t.direction.expect("push has a direction").unit();
            let b = s.objects[i].pos;
            let a = anchor.objects[i].pos;
            match approach(s, b[0], b[1], CONTACT_HEIGHT, false) {
                Some(act) => act,
                None => {
                    let done = (b[0] - a[0]) * u[0] + (b[1] - a[1]) * u[1];
                    let step = clip(PUSH_DISTANCE - done);
                    Action::translate(u[0] * step, u[1] * step, 0.0, false)
                }
            }
        }
        Family::Press => {
            if hand_busy {
                return Ok(open());
            }
            let b = s.button().pos;
            approach(s, b[0], b[1], PRESS_HEIGHT, false).unwrap_or_else(open)
        }
        Family::Slide => {
            if hand_busy {
                return Ok(open());
            }
            let h = s.slider_handle();
            match approach(s, h[0], h[1], CONTACT_HEIGHT, false) {
                Some(act) => act,
                None => {
                    let track = s.slider_track().pos[0] - SLIDER_TRAVEL / 2.0;
                    let goal = match t.direction {
                        Some(crate::sim::task::Direction::Left) => SLIDE_LOW / 2.0,
                        _ => (1.0 + SLIDE_HIGH) / 2.0,
                    };
                    Action::translate(clip(track + goal * SLIDER_TRAVEL - s.gripper[0]), 0.0, 0.0, false)
                }
            }
        }
    })
}

/// Runs the expert on world states only. Returns the final state if `t`
/// succeeds within `max_steps`.
pub fn expert_rollout(start: &WorldState, t: &TaskSpec, max_steps: usize) -> Result<Option<(WorldState, usize)>> {
    let mut s = start.clone();
    for step in 1..=max_steps {
        let a = expert_action(&s, t, start)?;
        s = step_env(&s, &a);
        if t.success(start, &s)? {
            return Ok(Some((s, step)));
        }
    }
    Ok(None)
}
