//! Boundary matrices of a generator model and the projectivity of the
//! resulting limit state.
//!
//! cargo run --release --example limit_state

use schur_states::limit::{
    boundary_matrix, build_from_generators, check_projectivity, geometric_generator_spec,
    limit_state_with, normalization, LimitModel, DEFAULT_TAIL_TOL,
};
use schur_states::random::{random_observable, rng_from_seed};
use schur_states::site::Site;
use schur_states::state::LocalObservable;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rng_from_seed(3);
    // Tr|D_x| = 2^{-|x|} on Z, D = 0 beyond |x| = 60
    let model = build_from_generators(&geometric_generator_spec(&mut rng, 1, 2, 60))?;
    let ex = model.exhaustion();
    println!("summability {:.6}", model.summability());

    let outer: Vec<Site> = (-2..=2).map(Site::id).collect();
    let inner = vec![Site::id(0), Site::id(1)];
    let beta = boundary_matrix(&model, &inner, &ex, DEFAULT_TAIL_TOL)?;
    println!(
        "beta on {{0,1}}: radius {:?}, sites used {}, tail bound {:.2e}",
        beta.radius, beta.sites_used, beta.tail_bound
    );
    for i in 0..beta.entries.rows() {
        let row: Vec<String> = beta
            .entries
            .row(i)
            .as_slice()
            .iter()
            .map(|z| format!("{z:.6}"))
            .collect();
        println!("  {}", row.join("  "));
    }

    let obs = LocalObservable::new(
        inner,
        (0..2).map(|_| random_observable(&mut rng, 2)).collect(),
    )?;
    let z = normalization(&model, &ex, DEFAULT_TAIL_TOL)?;
    println!(
        "limit value {:.12}, normalized {:.12}",
        limit_state_with(&model, &obs, &beta)?,
        limit_state_with(&model, &obs, &beta)? / z
    );

    let rep = check_projectivity(&model, &outer, &obs, &ex, 1e-9, DEFAULT_TAIL_TOL)?;
    println!(
        "projectivity: outer {:.12}, inner {:.12}, gap {:.2e}, pass {}",
        rep.outer, rep.inner, rep.gap, rep.pass
    );
    Ok(())
}
