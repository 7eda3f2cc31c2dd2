//! Spring and charged-particle simulators.
//!
//! Unit-mass particles move in 2-D under pairwise forces, integrated with
//! kick-drift-kick leapfrog. Each recorded frame stores `(x, y, vx, vy)`
//! per particle.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::{Adjacency, TrajectorySet};
use crate::error::{Error, Result};
use crate::seed::{tagged_rng, Rng};

pub const FEATURES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Springs,
    Charged,
}

impl System {
    pub fn name(self) -> &'static str {
        match self {
            System::Springs => "springs",
            System::Charged => "charged",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub system: System,
    pub n_samples: usize,
    pub n_particles: usize,
    /// Recorded frames per sample.
    pub n_timesteps: usize,
    /// Integrator steps between recorded frames.
    pub sample_stride: usize,
    pub integrator_step: f64,
    /// Probability that an unordered pair is joined by a spring.
    pub interaction_prob: f64,
    pub spring_constant: f64,
    pub charge_values: Vec<f64>,
    pub coulomb_constant: f64,
    /// Distances below this are clamped in the Coulomb force.
    pub min_distance: f64,
    pub box_half_width: f64,
    /// Mirror particles back into the box when they cross a wall.
    pub reflect_walls: bool,
    pub init_velocity_std: f64,
    /// Velocity-proportional drag; zero keeps the dynamics conservative.
    pub damping: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            system: System::Springs,
            n_samples: 1,
            n_particles: 10,
            n_timesteps: 48,
            sample_stride: 100,
            integrator_step: 1e-3,
            interaction_prob: 0.5,
            spring_constant: 0.1,
            charge_values: vec![-1.0, 1.0],
            coulomb_constant: 1.0,
            min_distance: 0.1,
            box_half_width: 5.0,
            reflect_walls: true,
            init_velocity_std: 0.5,
            damping: 0.0,
            seed: 42,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.n_particles < 2 {
            return bad("n_particles must be at least 2");
        }
        if self.n_timesteps < 1 {
            return bad("n_timesteps must be at least 1");
        }
        if self.sample_stride < 1 {
            return bad("sample_stride must be at least 1");
        }
        if !(self.integrator_step > 0.0 && self.integrator_step.is_finite()) {
            return bad("integrator_step must be positive");
        }
        if !(0.0..=1.0).contains(&self.interaction_prob) {
            return bad("interaction_prob must lie in [0, 1]");
        }
        if !(self.box_half_width > 0.0) {
            return bad("box_half_width must be positive");
        }
        if self.damping < 0.0 || self.init_velocity_std < 0.0 {
            return bad("damping and init_velocity_std must be non-negative");
        }
        if self.system == System::Charged {
            if self.charge_values.is_empty() {
                return bad("charge_values must not be empty");
            }
            if !(self.min_distance > 0.0) {
                return bad("min_distance must be positive");
            }
        }
        Ok(())
    }
}

/// Pairwise force law.
#[derive(Clone, Debug)]
pub enum Interaction {
    /// `F_i = -k Σ_j A_ij (r_i - r_j)`.
    Springs { k: f64, adjacency: Vec<f64> },
    /// `F_i = Σ_{j≠i} c q_i q_j (r_i - r_j) / max(|r_ij|, ε)³`.
    Charged { c: f64, charges: Vec<f64>, eps: f64 },
}

impl Interaction {
    pub fn accelerations(&self, pos: &[[f64; 2]], out: &mut [[f64; 2]]) {
        let n = pos.len();
        out.iter_mut().for_each(|a| *a = [0.0, 0.0]);
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = pos[i][0] - pos[j][0];
                let dy = pos[i][1] - pos[j][1];
                let s = match self {
                    Interaction::Springs { k, adjacency } => -k * adjacency[i * n + j],
                    Interaction::Charged { c, charges, eps } => {
                        let r = (dx * dx + dy * dy).sqrt().max(*eps);
                        c * charges[i] * charges[j] / (r * r * r)
                    }
                };
                let (fx, fy) = (s * dx, s * dy);
                out[i][0] += fx;
                out[i][1] += fy;
                out[j][0] -= fx;
                out[j][1] -= fy;
            }
        }
    }

    pub fn potential(&self, pos: &[[f64; 2]]) -> f64 {
        let n = pos.len();
        let mut e = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = pos[i][0] - pos[j][0];
                let dy = pos[i][1] - pos[j][1];
                let r2 = dx * dx + dy * dy;
                e += match self {
                    Interaction::Springs { k, adjacency } => 0.5 * k * adjacency[i * n + j] * r2,
                    Interaction::Charged { c, charges, eps } => {
                        let qq = c * charges[i] * charges[j];
                        let r = r2.sqrt();
                        if r >= *eps {
                            qq / r
                        } else {
                            qq * (1.5 / eps - r2 / (2.0 * eps * eps * eps))
                        }
                    }
                };
            }
        }
        e
    }
}

/// State of a particle system under leapfrog integration.
#[derive(Clone, Debug)]
pub struct Particles {
    pub pos: Vec<[f64; 2]>,
    pub vel: Vec<[f64; 2]>,
    acc: Vec<[f64; 2]>,
    pub interaction: Interaction,
    pub damping: f64,
    /// Reflecting walls at ±half width, if any.
    pub walls: Option<f64>,
}

impl Particles {
    pub fn new(
        pos: Vec<[f64; 2]>,
        vel: Vec<[f64; 2]>,
        interaction: Interaction,
        damping: f64,
        walls: Option<f64>,
    ) -> Self {
        let mut acc = vec![[0.0; 2]; pos.len()];
        interaction.accelerations(&pos, &mut acc);
        let mut p = Self {
            pos,
            vel,
            acc,
            interaction,
            damping,
            walls,
        };
        p.apply_damping();
        p
    }

    fn apply_damping(&mut self) {
        if self.damping > 0.0 {
            for (a, v) in self.acc.iter_mut().zip(&self.vel) {
                a[0] -= self.damping * v[0];
                a[1] -= self.damping * v[1];
            }
        }
    }

    /// One kick-drift-kick step.
    pub fn step(&mut self, h: f64) {
        for (v, a) in self.vel.iter_mut().zip(&self.acc) {
            v[0] += 0.5 * h * a[0];
            v[1] += 0.5 * h * a[1];
        }
        for (p, v) in self.pos.iter_mut().zip(self.vel.iter_mut()) {
            p[0] += h * v[0];
            p[1] += h * v[1];
            if let Some(b) = self.walls {
                for d in 0..2 {
                    if p[d] > b {
                        p[d] = 2.0 * b - p[d];
                        v[d] = -v[d].abs();
                    } else if p[d] < -b {
                        p[d] = -2.0 * b - p[d];
                        v[d] = v[d].abs();
                    }
                }
            }
        }
        self.interaction.accelerations(&self.pos, &mut self.acc);
        self.apply_damping();
        for (v, a) in self.vel.iter_mut().zip(&self.acc) {
            v[0] += 0.5 * h * a[0];
            v[1] += 0.5 * h * a[1];
        }
    }

    pub fn momentum(&self) -> [f64; 2] {
        self.vel
            .iter()
            .fold([0.0, 0.0], |m, v| [m[0] + v[0], m[1] + v[1]])
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self
            .vel
            .iter()
            .map(|v| v[0] * v[0] + v[1] * v[1])
            .sum::<f64>()
    }

    pub fn energy(&self) -> f64 {
        self.kinetic_energy() + self.interaction.potential(&self.pos)
    }

    fn record(&self, out: &mut Vec<f64>) {
        for (p, v) in self.pos.iter().zip(&self.vel) {
            out.extend_from_slice(&[p[0], p[1], v[0], v[1]]);
        }
    }
}

fn initial_state(cfg: &SimConfig, rng: &mut Rng) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let b = cfg.box_half_width;
    let n = cfg.n_particles;
    let pos = (0..n)
        .map(|_| [rng.gen_range(-b..=b), rng.gen_range(-b..=b)])
        .collect();
    let normal = Normal::new(0.0, cfg.init_velocity_std).expect("validated std");
    let vel = (0..n)
        .map(|_| [normal.sample(rng), normal.sample(rng)])
        .collect();
    (pos, vel)
}

fn run(cfg: &SimConfig, interaction: Interaction, rng: &mut Rng, out: &mut Vec<f64>) {
    let (pos, vel) = initial_state(cfg, rng);
    let walls = cfg.reflect_walls.then_some(cfg.box_half_width);
    let mut p = Particles::new(pos, vel, interaction, cfg.damping, walls);
    p.record(out);
    for _ in 1..cfg.n_timesteps {
        for _ in 0..cfg.sample_stride {
            p.step(cfg.integrator_step);
        }
        p.record(out);
    }
}

fn simulate_with(
    cfg: &SimConfig,
    system: System,
    make: impl Fn(&mut Rng) -> (Interaction, Vec<f64>),
) -> Result<TrajectorySet> {
    if cfg.system != system {
        return Err(Error::Config(format!(
            "config is for {}, not {}",
            cfg.system.name(),
            system.name()
        )));
    }
    cfg.validate()?;
    let (s, t, n) = (cfg.n_samples, cfg.n_timesteps, cfg.n_particles);
    let mut data = Vec::with_capacity(s * t * n * FEATURES);
    let mut adjacency = Vec::with_capacity(s * n * n);
    for i in 0..s {
        let mut rng = tagged_rng(cfg.seed, system.name(), i as u64);
        let (interaction, adj) = make(&mut rng);
        adjacency.extend_from_slice(&adj);
        run(cfg, interaction, &mut rng, &mut data);
    }
    TrajectorySet::new(s, t, n, FEATURES, data, Adjacency::Static(adjacency))
}

/// Particles joined by random springs.
pub fn simulate_springs(cfg: &SimConfig) -> Result<TrajectorySet> {
    let n = cfg.n_particles;
    simulate_with(cfg, System::Springs, |rng| {
        let mut adj = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < cfg.interaction_prob {
                    adj[i * n + j] = 1.0;
                    adj[j * n + i] = 1.0;
                }
            }
        }
        let interaction = Interaction::Springs {
            k: cfg.spring_constant,
            adjacency: adj.clone(),
        };
        (interaction, adj)
    })
}

/// Charged particles under clamped Coulomb forces. The adjacency records
/// the sign pattern `q_i q_j`.
pub fn simulate_charged(cfg: &SimConfig) -> Result<TrajectorySet> {
    let n = cfg.n_particles;
    simulate_with(cfg, System::Charged, |rng| {
        let charges: Vec<f64> = (0..n)
            .map(|_| cfg.charge_values[rng.gen_range(0..cfg.charge_values.len())])
            .collect();
        let mut adj = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    adj[i * n + j] = charges[i] * charges[j];
                }
            }
        }
        let interaction = Interaction::Charged {
            c: cfg.coulomb_constant,
            charges,
            eps: cfg.min_distance,
        };
        (interaction, adj)
    })
}

pub fn simulate(cfg: &SimConfig) -> Result<TrajectorySet> {
    match cfg.system {
        System::Springs => simulate_springs(cfg),
        System::Charged => simulate_charged(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn springs_cfg() -> SimConfig {
        SimConfig {
            n_samples: 3,
            n_particles: 5,
            n_timesteps: 6,
            ..SimConfig::default()
        }
    }

    #[test]
    fn no_edges_no_velocity_means_static() {
        let cfg = SimConfig {
            interaction_prob: 0.0,
            init_velocity_std: 0.0,
            ..springs_cfg()
        };
        let ts = simulate_springs(&cfg).unwrap();
        for s in 0..ts.samples {
            let first = ts.frame(s, 0).to_vec();
            for t in 1..ts.timesteps {
                assert_eq!(ts.frame(s, t), &first[..]);
            }
        }
    }

    #[test]
    fn zero_charges_are_static() {
        let cfg = SimConfig {
            system: System::Charged,
            charge_values: vec![0.0],
            init_velocity_std: 0.0,
            ..springs_cfg()
        };
        let ts = simulate_charged(&cfg).unwrap();
        let first = ts.frame(0, 0).to_vec();
        assert_eq!(ts.frame(0, ts.timesteps - 1), &first[..]);
    }

    #[test]
    fn spring_momentum_is_conserved_without_walls() {
        let mut rng = tagged_rng(7, "test", 0);
        let cfg = SimConfig {
            n_particles: 6,
            interaction_prob: 1.0,
            ..SimConfig::default()
        };
        let (pos, vel) = initial_state(&cfg, &mut rng);
        let n = 6;
        let mut adj = vec![1.0; n * n];
        for i in 0..n {
            adj[i * n + i] = 0.0;
        }
        let mut p = Particles::new(pos, vel, Interaction::Springs { k: 0.1, adjacency: adj }, 0.0, None);
        let m0 = p.momentum();
        for _ in 0..10_000 {
            p.step(1e-3);
        }
        let m1 = p.momentum();
        assert!((m0[0] - m1[0]).abs() < 1e-10 && (m0[1] - m1[1]).abs() < 1e-10);
    }

    #[test]
    fn single_spring_energy_drift_is_small() {
        let interaction = Interaction::Springs {
            k: 0.1,
            adjacency: vec![0.0, 1.0, 1.0, 0.0],
        };
        let mut p = Particles::new(
            vec![[-1.0, 0.3], [1.2, -0.4]],
            vec![[0.2, -0.5], [-0.1, 0.4]],
            interaction,
            0.0,
            None,
        );
        let e0 = p.energy();
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            p.step(1e-3);
            worst = worst.max(((p.energy() - e0) / e0).abs());
        }
        assert!(worst < 1e-3, "relative drift {worst}");
    }

    #[test]
    fn charged_pair_stays_mirror_symmetric() {
        let interaction = Interaction::Charged {
            c: 1.0,
            charges: vec![1.0, 1.0],
            eps: 0.1,
        };
        let mut p = Particles::new(
            vec![[-0.5, 0.25], [0.5, -0.25]],
            vec![[0.0, 0.1], [0.0, -0.1]],
            interaction,
            0.0,
            None,
        );
        let m0 = p.momentum();
        for _ in 0..5000 {
            p.step(1e-3);
            assert_eq!(p.pos[0][0], -p.pos[1][0]);
            assert_eq!(p.pos[0][1], -p.pos[1][1]);
        }
        let m1 = p.momentum();
        assert!((m0[0] - m1[0]).abs() < 1e-10 && (m0[1] - m1[1]).abs() < 1e-10);
    }

    #[test]
    fn adjacency_symmetric_zero_diagonal() {
        for system in [System::Springs, System::Charged] {
            let cfg = SimConfig {
                system,
                ..springs_cfg()
            };
            let ts = simulate(&cfg).unwrap();
            let n = ts.nodes;
            for s in 0..ts.samples {
                let a = ts.adjacency_at(s, 0);
                for i in 0..n {
                    assert_eq!(a[i * n + i], 0.0);
                    for j in 0..n {
                        assert_eq!(a[i * n + j], a[j * n + i]);
                    }
                }
            }
        }
    }

    #[test]
    fn identical_config_is_bit_identical() {
        let a = simulate(&springs_cfg()).unwrap();
        let b = simulate(&springs_cfg()).unwrap();
        assert_eq!(a, b);
        let c = simulate(&SimConfig { seed: 43, ..springs_cfg() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn walls_keep_particles_inside() {
        let cfg = SimConfig {
            n_timesteps: 40,
            init_velocity_std: 3.0,
            ..springs_cfg()
        };
        let ts = simulate(&cfg).unwrap();
        for s in 0..ts.samples {
            for t in 0..ts.timesteps {
                for node in ts.frame(s, t).chunks(FEATURES) {
                    assert!(node[0].abs() <= 5.0 && node[1].abs() <= 5.0);
                }
            }
        }
    }

    #[test]
    fn wrong_system_and_bad_config_rejected() {
        assert!(matches!(simulate_charged(&springs_cfg()), Err(Error::Config(_))));
        let bad = SimConfig {
            n_particles: 1,
            ..springs_cfg()
        };
        assert!(matches!(simulate(&bad), Err(Error::Config(_))));
        let bad = SimConfig {
            integrator_step: 0.0,
            ..springs_cfg()
        };
        assert!(matches!(simulate(&bad), Err(Error::Config(_))));
    }
}
