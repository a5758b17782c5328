//! Post-contact compliant sliding.
//!
//! While the frontal bumper senses a contact, the desired control-point
//! velocity follows the discrete admittance law
//!
//! ```text
//! xi_d+1 = (T_s / M) ((F_n + F_c) n - D xi_d) + (t . xi_u) t
//! ```
//!
//! which regulates the sensed normal reaction `F_c` (negative along `n`)
//! towards `-F_n` while sliding along the surface with the tangential part of
//! the upstream avoidance velocity `xi_u`. Planar point-mass dynamics in
//! Cartesian coordinates carry no Coriolis coupling, so that term is zero.

use serde::{Deserialize, Serialize};

use crate::model::{Twist, Vec2};
use crate::sim::ActiveContact;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComplianceParams {
    /// Virtual mass M, kg.
    pub virtual_mass: f64,
    /// Damping D, N s/m, row-major 2x2.
    pub damping: [[f64; 2]; 2],
    /// Reference normal force F_n, N.
    pub reference_force: f64,
    /// Sample time T_s, s. Equal to the control period.
    pub sample_time: f64,
    /// Force above which a contact counts as a collision, N.
    pub force_collision_threshold: f64,
    /// Tangential gain in [0, 2].
    pub lambda_t: f64,
    /// Holonomic speed cap of the desired velocity, m/s.
    pub v_max_holonomic: f64,
}

impl Default for ComplianceParams {
    fn default() -> Self {
        ComplianceParams {
            virtual_mass: 5.0,
            damping: [[10.0, 0.0], [0.0, 10.0]],
            reference_force: 20.0,
            sample_time: crate::sim::DEFAULT_DT,
            force_collision_threshold: 45.0,
            lambda_t: 1.0,
            v_max_holonomic: 1.0,
        }
    }
}

impl ComplianceParams {
    pub fn validate(&self) -> Result<(), crate::error::ModelError> {
        let [[a, b], [c, d]] = self.damping;
        // Positive definite symmetric part.
        let (s11, s12, s22) = (a, 0.5 * (b + c), d);
        let pd = s11 > 0.0 && s11 * s22 - s12 * s12 > 0.0;
        if !(self.virtual_mass > 0.0 && self.reference_force > 0.0 && self.sample_time > 0.0 && pd) {
            return Err(crate::error::ModelError::Invalid(
                "compliance needs M > 0, F_n > 0, T_s > 0 and positive-definite D".into(),
            ));
        }
        if !(0.0..=2.0).contains(&self.lambda_t) {
            return Err(crate::error::ModelError::Invalid("lambda_t must lie in [0, 2]".into()));
        }
        Ok(())
    }

    fn damp(&self, v: Vec2) -> Vec2 {
        let [[a, b], [c, d]] = self.damping;
        Vec2::new(a * v.x + b * v.y, c * v.x + d * v.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactState {
    pub in_contact: bool,
    /// Sensed normal reaction, <= 0 along `normal`.
    pub force: f64,
    /// Unit vector from the control point into the obstacle.
    pub normal: Vec2,
    pub tangent: Vec2,
}

impl ContactState {
    pub const FREE: ContactState = ContactState {
        in_contact: false,
        force: 0.0,
        normal: Vec2::ZERO,
        tangent: Vec2::ZERO,
    };
}

/// Picks the strongest frontal contact and orients its tangent along the
/// upstream avoidance velocity.
pub fn estimate_contact(contacts: &[ActiveContact], upstream: Twist) -> ContactState {
    let Some(c) = contacts
        .iter()
        .filter(|c| c.frontal)
        .max_by(|a, b| a.force.total_cmp(&b.force).then(b.agent_id.cmp(&a.agent_id)))
    else {
        return ContactState::FREE;
    };
    let normal = c.normal;
    let mut tangent = normal.perp();
    if tangent.dot(upstream.vec()) < 0.0 {
        tangent = -tangent;
    }
    ContactState { in_contact: true, force: -c.force, normal, tangent }
}

/// One step of the discrete sliding law.
pub fn sliding_update(prev_desired: Twist, upstream: Twist, contact: &ContactState, params: &ComplianceParams) -> Twist {
    let n = contact.normal;
    let t = contact.tangent;
    let gain = params.sample_time / params.virtual_mass;
    let normal_term = (n * (params.reference_force + contact.force) - params.damp(prev_desired.vec())) * gain;
    let slide = t * t.dot(upstream.vec());
    (normal_term + slide).clamp_norm(params.v_max_holonomic).into()
}

/// Contact layer: pass-through in free space, sliding law in contact.
pub fn blend(avoidance_out: Twist, contact: &ContactState, prev_desired: Twist, params: &ComplianceParams) -> Twist {
    if !contact.in_contact {
        return avoidance_out;
    }
    let scaled = Twist::from(avoidance_out.vec() * params.lambda_t);
    sliding_update(prev_desired, scaled, contact, params)
}

/// Per-trial contact layer with the persistent desired-velocity filter state.
#[derive(Debug, Clone)]
pub struct ContactController {
    pub params: ComplianceParams,
    desired: Twist,
    was_in_contact: bool,
}

impl ContactController {
    pub fn new(params: ComplianceParams) -> Self {
        ContactController { params, desired: Twist::ZERO, was_in_contact: false }
    }

    /// Runs the layer for one tick. `executed` is the current control-point
    /// twist, used to seed the filter at contact onset.
    pub fn update(&mut self, avoidance_out: Twist, contact: &ContactState, executed: Twist) -> Twist {
        if contact.in_contact && !self.was_in_contact {
            self.desired = executed;
        }
        self.was_in_contact = contact.in_contact;
        let out = blend(avoidance_out, contact, self.desired, &self.params);
        self.desired = out;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn active(id: u32, force: f64, normal: Vec2, frontal: bool) -> ActiveContact {
        ActiveContact { agent_id: id, penetration: force / 2000.0, penetration_rate: 0.0, normal, force, frontal }
    }

    fn contact(force: f64) -> ContactState {
        ContactState { in_contact: true, force, normal: Vec2::new(1.0, 0.0), tangent: Vec2::new(0.0, 1.0) }
    }

    #[test]
    fn estimate_examples() {
        assert_eq!(estimate_contact(&[], Twist::ZERO), ContactState::FREE);
        let c = estimate_contact(&[active(1, 30.0, Vec2::new(1.0, 0.0), true)], Twist::new(1.0, 0.2));
        assert!(c.in_contact);
        assert_eq!(c.force, -30.0);
        assert_eq!(c.normal, Vec2::new(1.0, 0.0));
        assert!(c.tangent.dot(Vec2::new(1.0, 0.2)) >= 0.0);
        assert!(c.normal.dot(c.tangent).abs() < 1e-12);
        let two = [active(1, 10.0, Vec2::new(1.0, 0.0), true), active(2, 25.0, Vec2::new(0.0, 1.0), true)];
        assert_eq!(estimate_contact(&two, Twist::ZERO).force, -25.0);
        // Rear contacts give no reading.
        assert!(!estimate_contact(&[active(3, 80.0, Vec2::new(-1.0, 0.0), false)], Twist::ZERO).in_contact);
    }

    #[test]
    fn equilibrium_force_gives_pure_slide() {
        let p = ComplianceParams::default();
        let up = Twist::new(0.6, 0.8);
        let out = sliding_update(Twist::ZERO, up, &contact(-p.reference_force), &p);
        assert!(out.vx.abs() < 1e-15 && (out.vy - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normal_push_without_damping() {
        let p = ComplianceParams { damping: [[0.0, 0.0], [0.0, 0.0]], ..Default::default() };
        let out = sliding_update(Twist::ZERO, Twist::new(1.0, 0.0), &contact(0.0), &p);
        assert!((out.vx - 0.04).abs() < 1e-15 && out.vy.abs() < 1e-15);
    }

    #[test]
    fn over_threshold_force_retreats() {
        let p = ComplianceParams::default();
        let out = sliding_update(Twist::ZERO, Twist::ZERO, &contact(-60.0), &p);
        assert!(out.vx < 0.0);
        assert!((out.vx - (-40.0 * 0.01 / 5.0)).abs() < 1e-15);
    }

    #[test]
    fn blend_layers() {
        let p = ComplianceParams::default();
        let free = Twist::new(0.3, 0.1);
        assert_eq!(blend(free, &ContactState::FREE, Twist::ZERO, &p), free);
        let no_drive = ComplianceParams { lambda_t: 0.0, ..Default::default() };
        let out = blend(Twist::new(0.0, 1.0), &contact(-20.0), Twist::ZERO, &no_drive);
        assert_eq!(out, Twist::ZERO);
    }

    #[test]
    fn controller_seeds_filter_at_onset() {
        let mut ctl = ContactController::new(ComplianceParams::default());
        let free = ctl.update(Twist::new(0.5, 0.0), &ContactState::FREE, Twist::new(0.5, 0.0));
        assert_eq!(free, Twist::new(0.5, 0.0));
        let first = ctl.update(Twist::new(0.5, 0.0), &contact(0.0), Twist::new(0.4, 0.0));
        // (T_s / M)(F_n - D * 0.4) along n.
        assert!((first.vx - 0.002 * (20.0 - 4.0)).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        ComplianceParams::default().validate().unwrap();
        let bad = ComplianceParams { damping: [[1.0, 0.0], [0.0, -1.0]], ..Default::default() };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn equilibrium_update_contracts(vx in -1.0..1.0f64, vy in -1.0..1.0f64) {
            let p = ComplianceParams::default();
            let prev = Twist::new(vx, vy);
            prop_assume!(prev.vec().norm() > 1e-6);
            let out = sliding_update(prev, Twist::ZERO, &contact(-p.reference_force), &p);
            prop_assert!(out.vec().norm() < prev.vec().norm());
        }
    }
}
