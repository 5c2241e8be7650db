//! Finite-volume values three ways: dense contraction, Schur product of
//! local kernel matrices, and the extended region formula.
//!
//! cargo run --example finite_volume

use schur_states::random::{random_family, random_observable, rng_from_seed};
use schur_states::site::Site;
use schur_states::state::{
    eval_dense, eval_extended, eval_schur, schur_matrix, LocalObservable, DEFAULT_DENSE_CAP,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rng_from_seed(17);
    let lambda1: Vec<Site> = (0..5).map(Site::id).collect();
    let fam = random_family(&mut rng, &lambda1, 2, 3);

    let full = LocalObservable::new(
        lambda1.clone(),
        lambda1
            .iter()
            .map(|_| random_observable(&mut rng, 2))
            .collect(),
    )?;
    let dense = eval_dense(&fam, &lambda1, &full, DEFAULT_DENSE_CAP)?;
    let schur = eval_schur(&fam, &full)?;
    println!("full region: dense {dense:.12}, schur {schur:.12}");
    let m = schur_matrix(&fam, &full)?;
    println!("schur matrix ({}x{}):", m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = m
            .row(i)
            .as_slice()
            .iter()
            .map(|z| format!("{z:.4}"))
            .collect();
        println!("  {}", row.join("  "));
    }

    // observable on two sites, identities elsewhere
    let inner = LocalObservable::new(
        lambda1[1..3].to_vec(),
        (0..2).map(|_| random_observable(&mut rng, 2)).collect(),
    )?;
    let dense = eval_dense(&fam, &lambda1, &inner, DEFAULT_DENSE_CAP)?;
    let ext = eval_extended(&fam, &lambda1, &inner)?;
    let unit = LocalObservable::identity(lambda1.clone(), 2)?;
    let z = eval_extended(&fam, &lambda1, &unit)?;
    println!(
        "inner observable: dense {dense:.12}, extended {ext:.12}, normalized {:.12}",
        ext / z.re
    );
    Ok(())
}
