//! Homogeneous models: finite-volume values approach a mixture of product
//! states, and equal-overlap families sit in the degenerate regime.
//!
//! cargo run --example homogeneous

use schur_states::algebra::CMatrix;
use schur_states::homogeneous::{
    check_generic, detect_product, equal_offdiag_family, finite_normalized_count, generic_limit,
    overlaps, real_beta_limit, HomogeneousModel,
};
use schur_states::kernel::gram_of;
use schur_states::random::{random_observable, random_vector, rng_from_seed};
use schur_states::site::Site;
use schur_states::state::LocalObservable;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rng_from_seed(8);
    let hm = HomogeneousModel::new((0..3).map(|_| random_vector(&mut rng, 3)).collect())?;
    let ov = overlaps(&hm);
    println!(
        "beta_max {:.4}, argmax {:?}, generic {}",
        ov.beta_max,
        ov.argmax,
        check_generic(&ov)
    );

    let obs = LocalObservable::new(
        vec![Site::id(0), Site::id(1)],
        (0..2).map(|_| random_observable(&mut rng, 3)).collect(),
    )?;
    let lim = generic_limit(&hm, &obs)?;
    println!(
        "limit {:.12} from components {:?}",
        lim.value, lim.components
    );
    for extra in [0, 5, 20, 80, 320] {
        let v = finite_normalized_count(&hm, &obs, extra)?;
        println!(
            "  |Λ1| = {:>3}: {v:.12}, gap {:.2e}",
            extra + 2,
            (v - lim.value).norm()
        );
    }

    // equal pairwise overlaps c, real beta
    let eq = HomogeneousModel::new(equal_offdiag_family(3, 0.5, 3)?)?;
    println!("equal overlaps gram:");
    let g = gram_of(eq.vectors());
    for i in 0..g.rows() {
        let row: Vec<String> = g
            .row(i)
            .as_slice()
            .iter()
            .map(|z| format!("{z:.3}"))
            .collect();
        println!("  {}", row.join("  "));
    }
    let b = LocalObservable::single(Site::id(0), CMatrix::diag_real(&[1.0, 0.0, 0.0]))?;
    let r = real_beta_limit(&eq, &b)?;
    println!("real-beta limit {:.6} over pairs {:?}", r.value, r.pairs);

    let same = HomogeneousModel::new(vec![random_vector(&mut rng, 2); 3])?;
    println!(
        "identical vectors give a product state: {}",
        detect_product(&overlaps(&same), 1e-12)
    );
    Ok(())
}
