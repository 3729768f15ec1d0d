//! Vehicle and observer geometry, kinematics, and noise abatement zones.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acoustics::SoundLevel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("state ({x:.3}, {y:.3}, {z:.3}) leaves the airspace")]
    OutOfDomain { x: f64, y: f64, z: f64 },
    #[error("invalid zone `{id}`: {reason}")]
    InvalidZone { id: String, reason: String },
    #[error("invalid control bounds: {0}")]
    InvalidBounds(String),
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let w = (a + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvtolState {
    /// Airspeed, m/s.
    pub v: f64,
    /// Rotor speed, RPM.
    pub rho: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Heading, rad in `[-π, π)`.
    pub theta: f64,
}

impl EvtolState {
    pub fn new(v: f64, rho: f64, x: f64, y: f64, z: f64, theta: f64) -> Self {
        Self {
            v,
            rho,
            x,
            y,
            z,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn distance_to(&self, other: &EvtolState) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observer {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub z: f64,
}

/// State of the vehicle as seen from a ground observer: `(v, ρ, h, r, φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverRelativeState {
    pub v: f64,
    pub rho: f64,
    /// Height above the observer, m.
    pub h: f64,
    /// Horizontal distance, m.
    pub r: f64,
    /// Azimuth of the observer relative to the heading, rad in `[-π, π)`.
    pub phi: f64,
}

impl ObserverRelativeState {
    pub fn new(v: f64, rho: f64, h: f64, r: f64, phi: f64) -> Self {
        Self { v, rho, h, r, phi }
    }
}

pub fn relative_state(s: &EvtolState, o: &Observer) -> ObserverRelativeState {
    let dx = s.x - o.x;
    let dy = s.y - o.y;
    let r = dx.hypot(dy);
    let phi = if r == 0.0 {
        0.0
    } else {
        wrap_angle(s.theta - dy.atan2(dx))
    };
    ObserverRelativeState {
        v: s.v,
        rho: s.rho,
        h: s.z - o.z,
        r,
        phi,
    }
}

/// Euclidean distance in `(x, y, z)` plus the shortest heading difference
/// weighted by `1/(2π)`.
pub fn kino_dist(a: &EvtolState, b: &EvtolState) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    let dt = wrap_angle(a.theta - b.theta);
    (dx * dx + dy * dy + dz * dz + dt * dt / TAU).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Airspace {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

impl Default for Airspace {
    fn default() -> Self {
        Self {
            x: [0.0, 2200.0],
            y: [0.0, 2200.0],
            z: [0.0, 450.0],
        }
    }
}

impl Airspace {
    pub fn contains(&self, s: &EvtolState) -> bool {
        (self.x[0]..=self.x[1]).contains(&s.x)
            && (self.y[0]..=self.y[1]).contains(&s.y)
            && (self.z[0]..=self.z[1]).contains(&s.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    /// Maximum speed change rate, m/s².
    pub dv_max: f64,
    /// Maximum climb or descent rate, m/s.
    pub dh_rate_max: f64,
    /// Maximum turn rate, rad/s.
    pub dtheta_rate_max: f64,
    pub v_range: [f64; 2],
    pub h_range: [f64; 2],
    pub rho_range: [f64; 2],
}

impl Default for ControlBounds {
    fn default() -> Self {
        Self {
            dv_max: 5.0,
            dh_rate_max: 5.0,
            dtheta_rate_max: 5f64.to_radians(),
            v_range: [20.0, 60.0],
            h_range: [50.0, 450.0],
            rho_range: [500.0, 700.0],
        }
    }
}

impl ControlBounds {
    pub fn validate(&self) -> Result<(), StateError> {
        let rates = [self.dv_max, self.dh_rate_max, self.dtheta_rate_max];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(StateError::InvalidBounds("rate limits must be positive".into()));
        }
        for (name, r) in [("v", self.v_range), ("h", self.h_range), ("rho", self.rho_range)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] < r[1]) {
                return Err(StateError::InvalidBounds(format!("{name} range is degenerate")));
            }
        }
        Ok(())
    }

    /// Rotor speed tied affinely to airspeed.
    pub fn rotor_speed(&self, v: f64) -> f64 {
        let [v0, v1] = self.v_range;
        let [r0, r1] = self.rho_range;
        let t = ((v - v0) / (v1 - v0)).clamp(0.0, 1.0);
        r0 + (r1 - r0) * t
    }
}

fn step_toward(from: f64, to: f64, max_step: f64) -> f64 {
    from + (to - from).clamp(-max_step, max_step)
}

/// One forward-Euler step: turn, then rate-limit speed and altitude, then translate.
///
/// Returns the new state and the elapsed time in seconds.
pub fn simulate_step(
    s: &EvtolState,
    v_cmd: f64,
    h_cmd: f64,
    dtheta_cmd: f64,
    dt: f64,
    bounds: &ControlBounds,
    airspace: &Airspace,
) -> Result<(EvtolState, f64), StateError> {
    let max_turn = bounds.dtheta_rate_max * dt;
    let theta = wrap_angle(s.theta + dtheta_cmd.clamp(-max_turn, max_turn));
    let v_target = v_cmd.clamp(bounds.v_range[0], bounds.v_range[1]);
    let h_target = h_cmd.clamp(bounds.h_range[0], bounds.h_range[1]);
    let v = step_toward(s.v, v_target, bounds.dv_max * dt);
    let z = step_toward(s.z, h_target, bounds.dh_rate_max * dt);
    let next = EvtolState {
        v,
        rho: bounds.rotor_speed(v),
        x: s.x + v * theta.cos() * dt,
        y: s.y + v * theta.sin() * dt,
        z,
        theta,
    };
    if airspace.contains(&next) {
        Ok((next, dt))
    } else {
        Err(StateError::OutOfDomain {
            x: next.x,
            y: next.y,
            z: next.z,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseAbatementZone {
    pub id: String,
    pub observer: Observer,
    pub l_inst: SoundLevel,
    pub l_eq: SoundLevel,
    /// Averaging window, in planner steps.
    pub dt: usize,
}

impl NoiseAbatementZone {
    pub fn validate(&self) -> Result<(), StateError> {
        let fail = |reason: &str| StateError::InvalidZone {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.dt < 1 {
            return Err(fail("window must be at least one step"));
        }
        if self.l_inst.is_silent() || self.l_eq.is_silent() {
            return Err(fail("thresholds must be finite"));
        }
        if !(self.observer.x.is_finite() && self.observer.y.is_finite() && self.observer.z.is_finite()) {
            return Err(fail("observer position must be finite"));
        }
        Ok(())
    }
}

pub fn ordinance_satisfied(l_inst: SoundLevel, l_eq: SoundLevel, zone: &NoiseAbatementZone) -> bool {
    l_inst <= zone.l_inst && l_eq <= zone.l_eq
}

/// On-disk layout of a zone file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneFile {
    pub observers: Vec<ZoneRecord>,
    #[serde(default)]
    pub airspace: Airspace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneRecord {
    pub id: String,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub z: f64,
    #[serde(rename = "L_inst")]
    pub l_inst: f64,
    #[serde(rename = "L_eq")]
    pub l_eq: f64,
    pub dt: usize,
}

impl ZoneFile {
    pub fn zones(&self) -> Result<Vec<NoiseAbatementZone>, StateError> {
        self.observers
            .iter()
            .map(|r| {
                let bad = |reason: &str| StateError::InvalidZone {
                    id: r.id.clone(),
                    reason: reason.to_string(),
                };
                let zone = NoiseAbatementZone {
                    id: r.id.clone(),
                    observer: Observer { x: r.x, y: r.y, z: r.z },
                    l_inst: SoundLevel::try_db(r.l_inst).map_err(|_| bad("L_inst must be finite"))?,
                    l_eq: SoundLevel::try_db(r.l_eq).map_err(|_| bad("L_eq must be finite"))?,
                    dt: r.dt,
                };
                zone.validate()?;
                Ok(zone)
            })
            .collect()
    }

    pub fn from_zones(zones: &[NoiseAbatementZone], airspace: Airspace) -> Self {
        Self {
            observers: zones
                .iter()
                .map(|z| ZoneRecord {
                    id: z.id.clone(),
                    x: z.observer.x,
                    y: z.observer.y,
                    z: z.observer.z,
                    l_inst: z.l_inst.value(),
                    l_eq: z.l_eq.value(),
                    dt: z.dt,
                })
                .collect(),
            airspace,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-12;

    fn at(x: f64, y: f64, z: f64, theta: f64) -> EvtolState {
        EvtolState::new(40.0, 600.0, x, y, z, theta)
    }

    const ORIGIN: Observer = Observer { x: 0.0, y: 0.0, z: 0.0 };

    #[test]
    fn relative_state_examples() {
        let rel = relative_state(&at(100.0, 0.0, 50.0, 0.0), &ORIGIN);
        assert_eq!((rel.h, rel.r, rel.phi), (50.0, 100.0, 0.0));
        assert_eq!((rel.v, rel.rho), (40.0, 600.0));

        let rel = relative_state(&at(0.0, 0.0, 120.0, 1.3), &ORIGIN);
        assert_eq!((rel.h, rel.r, rel.phi), (120.0, 0.0, 0.0));

        let rel = relative_state(&at(0.0, 100.0, 50.0, 0.0), &ORIGIN);
        assert!((rel.phi + PI / 2.0).abs() < EPS);
    }

    #[test]
    fn wrap_boundaries() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < EPS);
        assert!(wrap_angle(-1e-300) < PI);
    }

    #[test]
    fn kino_dist_examples() {
        let a = at(0.0, 0.0, 100.0, 0.0);
        assert_eq!(kino_dist(&a, &a), 0.0);
        assert!((kino_dist(&a, &at(3.0, 4.0, 100.0, 0.0)) - 5.0).abs() < EPS);
        let turned = at(0.0, 0.0, 100.0, PI);
        assert!((kino_dist(&a, &turned) - (PI / 2.0).sqrt()).abs() < EPS);
    }

    #[test]
    fn straight_step() {
        let b = ControlBounds::default();
        let s = EvtolState::new(40.0, b.rotor_speed(40.0), 100.0, 100.0, 200.0, 0.0);
        let (n, dt) = simulate_step(&s, 40.0, 200.0, 0.0, 5.0, &b, &Airspace::default()).unwrap();
        assert_eq!(dt, 5.0);
        assert!((n.x - 300.0).abs() < EPS);
        assert!((n.y - 100.0).abs() < EPS);
        assert_eq!(n.z, 200.0);
        assert_eq!(n.rho, 600.0);
    }

    #[test]
    fn rates_are_clamped() {
        let b = ControlBounds::default();
        let s = EvtolState::new(20.0, 500.0, 1000.0, 1000.0, 100.0, 0.0);
        let (n, _) = simulate_step(&s, 60.0, 450.0, 1.0, 5.0, &b, &Airspace::default()).unwrap();
        assert!((n.v - 45.0).abs() < EPS);
        assert!((n.z - 125.0).abs() < EPS);
        assert!((n.theta - 25f64.to_radians()).abs() < EPS);
    }

    #[test]
    fn leaving_airspace_is_an_error() {
        let b = ControlBounds::default();
        let s = EvtolState::new(60.0, 700.0, 2190.0, 100.0, 100.0, 0.0);
        let err = simulate_step(&s, 60.0, 100.0, 0.0, 5.0, &b, &Airspace::default());
        assert!(matches!(err, Err(StateError::OutOfDomain { .. })));
    }

    #[test]
    fn ordinance_examples() {
        let zone = NoiseAbatementZone {
            id: "a".into(),
            observer: ORIGIN,
            l_inst: SoundLevel::db(45.0),
            l_eq: SoundLevel::db(43.0),
            dt: 3,
        };
        let db = SoundLevel::db;
        assert!(ordinance_satisfied(db(44.0), db(42.0), &zone));
        assert!(ordinance_satisfied(db(45.0), db(43.0), &zone));
        assert!(!ordinance_satisfied(db(46.0), db(30.0), &zone));
        assert!(ordinance_satisfied(SoundLevel::SILENT, SoundLevel::SILENT, &zone));
    }

    #[test]
    fn zone_file_parses() {
        let text = r#"{"observers":[{"id":"c","x":1100,"y":1100,"z":0,"L_inst":35,"L_eq":30,"dt":6}],
                       "airspace":{"x":[0,2200],"y":[0,2200],"z":[0,450]}}"#;
        let file: ZoneFile = serde_json::from_str(text).unwrap();
        let zones = file.zones().unwrap();
        assert_eq!(zones[0].l_eq, SoundLevel::db(30.0));
        assert_eq!(zones[0].dt, 6);

        let bad = r#"{"observers":[{"id":"c","x":0,"y":0,"L_inst":35,"L_eq":30,"dt":0}]}"#;
        let file: ZoneFile = serde_json::from_str(bad).unwrap();
        assert!(matches!(file.zones(), Err(StateError::InvalidZone { .. })));
    }

    fn state() -> impl Strategy<Value = EvtolState> {
        (0.0f64..2200.0, 0.0f64..2200.0, 0.0f64..450.0, -PI..PI)
            .prop_map(|(x, y, z, t)| EvtolState::new(30.0, 550.0, x, y, z, t))
    }

    proptest! {
        #[test]
        fn kino_dist_is_a_metric(a in state(), b in state(), c in state()) {
            let ab = kino_dist(&a, &b);
            prop_assert!((ab - kino_dist(&b, &a)).abs() < 1e-9);
            prop_assert!(ab >= 0.0);
            prop_assert!(ab <= kino_dist(&a, &c) + kino_dist(&c, &b) + 1e-9);
        }

        #[test]
        fn relative_state_is_translation_invariant(
            s in state(), ox in -500.0f64..500.0, oy in -500.0f64..500.0,
            tx in -1e3f64..1e3, ty in -1e3f64..1e3, tz in -50.0f64..50.0,
        ) {
            let o = Observer { x: ox, y: oy, z: 0.0 };
            let a = relative_state(&s, &o);
            let moved = EvtolState { x: s.x + tx, y: s.y + ty, z: s.z + tz, ..s };
            let b = relative_state(&moved, &Observer { x: ox + tx, y: oy + ty, z: tz });
            prop_assert!((a.h - b.h).abs() < 1e-9);
            prop_assert!((a.r - b.r).abs() < 1e-6);
            prop_assert!(wrap_angle(a.phi - b.phi).abs() < 1e-6);
            prop_assert!((-PI..PI).contains(&a.phi));
        }

        #[test]
        fn simulate_respects_rates(
            v in 20.0f64..60.0, z in 50.0f64..450.0, theta in -PI..PI,
            v_cmd in 0.0f64..100.0, h_cmd in -100.0f64..600.0, dth in -3.0f64..3.0,
        ) {
            let b = ControlBounds::default();
            let air = Airspace { x: [-1e6, 1e6], y: [-1e6, 1e6], z: [0.0, 450.0] };
            let s = EvtolState::new(v, b.rotor_speed(v), 0.0, 0.0, z, theta);
            let (n, dt) = simulate_step(&s, v_cmd, h_cmd, dth, 5.0, &b, &air).unwrap();
            prop_assert!((n.v - s.v).abs() <= b.dv_max * dt + 1e-9);
            prop_assert!((n.z - s.z).abs() <= b.dh_rate_max * dt + 1e-9);
            prop_assert!(wrap_angle(n.theta - s.theta).abs() <= b.dtheta_rate_max * dt + 1e-9);
            prop_assert!((-PI..PI).contains(&n.theta));
            prop_assert!(n.rho >= 500.0 && n.rho <= 700.0);
        }
    }
}
