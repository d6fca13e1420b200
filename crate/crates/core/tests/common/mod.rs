#![allow(dead_code)]

use gmm_imm::sysid::LinearModel;
use gmm_imm::trajectory::Trajectory;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Square-wave-ish random inputs held for a few steps at a time.
pub fn inputs(n: usize, rng: &mut impl Rng) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(n);
    let mut u = [0.0; 2];
    for k in 0..n {
        if k % 5 == 0 {
            u = [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)];
        }
        out.push(u);
    }
    out
}

/// Simulates `model` for `n` steps with its own q and r as noise variances.
pub fn simulate(model: &LinearModel, n: usize, seed: u64) -> Trajectory {
    let mut rng = rng(seed);
    let u = inputs(n, &mut rng);
    let w = Normal::new(0.0, model.q.sqrt()).unwrap();
    let v = Normal::new(0.0, model.r.sqrt()).unwrap();
    let mut x = 0.0;
    let mut omega = Vec::with_capacity(n + 1);
    for uk in &u {
        omega.push(x + v.sample(&mut rng));
        x = model.step(x, *uk) + w.sample(&mut rng);
    }
    omega.push(x + v.sample(&mut rng));
    Trajectory::from_rows(format!("sim_{seed}"), 0.05, &omega, &u).unwrap()
}

/// Textbook scalar Kalman filter, written independently of the library.
/// Returns (x, p, innovation, innovation variance) per step.
pub fn textbook_kf(model: &LinearModel, traj: &Trajectory, p0: f64) -> Vec<(f64, f64, f64, f64)> {
    let s0 = &traj.samples()[0];
    let (mut x, mut p) = (s0.x, p0);
    let mut out = Vec::new();
    for s in traj.samples() {
        let xp = model.a * x + model.b1 * s.u[0] + model.b2 * s.u[1];
        let pp = model.a * model.a * p + model.q;
        let y = s.x_next - xp;
        let sv = pp + model.r;
        let k = pp / sv;
        x = xp + k * y;
        p = (1.0 - k) * pp;
        out.push((x, p, y, sv));
    }
    out
}
