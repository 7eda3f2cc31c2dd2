//! Evaluates the time-weighted basis field on a random latent state and
//! integrates it with RK4 and Euler, then checks that a single unweighted
//! basis reproduces the unified interaction field.
//!
//! cargo run --release --example solve_field

use rand::Rng as _;
use tiode::dynamics::{ode_solve_values, Dynamics, DynamicsConfig, FieldMode, Method, NeighborMask, PairSet, SolverConfig};
use tiode::numeric::{ParamStore, Tensor};
use tiode::seed::rng_from_seed;

fn main() -> tiode::Result<()> {
    let (n, d) = (4, 8);
    let cfg = DynamicsConfig {
        bases: 3,
        basis_hidden: 32,
        weight_hidden: 32,
        aggregator_hidden: 32,
        ..DynamicsConfig::default()
    };
    let mut store = ParamStore::new();
    let field = Dynamics::build(&mut store, &cfg, d, &mut rng_from_seed(1))?;
    // A ring: each node interacts with its two neighbours and itself.
    let mut adjacency = vec![0.0; n * n];
    for i in 0..n {
        adjacency[i * n + (i + 1) % n] = 1.0;
        adjacency[((i + 1) % n) * n + i] = 1.0;
    }
    let pairs = PairSet::from_adjacency(n, &adjacency, NeighborMask::Adjacency, true)?;
    let mut rng = rng_from_seed(2);
    let z0 = Tensor::from_rows_flat(n, d, &(0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
    println!("{} interacting pairs, |dz/dt| at t=0: {:.4}", pairs.len(), field.field_value(&store, &z0, 0.0, &pairs)?.max_abs());

    let times: Vec<f64> = (1..=12).map(|k| 0.1 * k as f64).collect();
    let solve = |method, step| {
        ode_solve_values(
            |tp, z, t| field.field(tp, &store, z, t, &pairs),
            &z0,
            &SolverConfig { method, step },
            &times,
        )
    };
    let reference = solve(Method::Rk4, 0.0125)?;
    for (method, step) in [(Method::Rk4, 0.1), (Method::Rk4, 0.05), (Method::Euler, 0.1), (Method::Euler, 0.05)] {
        let out = solve(method, step)?;
        let err = out[11].zip_map(&reference[11], |a, b| a - b).max_abs();
        println!("{method:?} h={step}: max error at t=1.2 {err:.3e}");
    }

    let single = DynamicsConfig {
        mode: FieldMode::NoW,
        bases: 1,
        mask: NeighborMask::Full,
        ..cfg.clone()
    };
    let mut s1 = ParamStore::new();
    let ti = Dynamics::build(&mut s1, &single, d, &mut rng_from_seed(3))?;
    let unified = Dynamics {
        mode: FieldMode::Unified,
        response: Vec::new(),
        activation: Vec::new(),
        ..ti.clone()
    };
    let full = PairSet::from_adjacency(n, &vec![0.0; n * n], NeighborMask::Full, true)?;
    let same = ti.field_value(&s1, &z0, 0.3, &full)? == unified.field_value(&s1, &z0, 0.3, &full)?;
    println!("single unweighted basis equals the unified field: {same}");
    Ok(())
}
