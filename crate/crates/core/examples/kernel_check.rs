//! Choi and Property-(S) certificates for a random fiber family.
//!
//! cargo run --example kernel_check

use schur_states::algebra::is_psd;
use schur_states::kernel::{certify_cp, choi_matrix, property_s_matrix, tensor_property_s_matrix};
use schur_states::random::{random_family, random_observable, rng_from_seed};
use schur_states::site::Site;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rng_from_seed(5);
    let sites: Vec<Site> = (0..3).map(Site::id).collect();
    let fam = random_family(&mut rng, &sites, 2, 3);

    for x in &sites {
        let report = certify_cp(&fam, x, 1e-10)?;
        let choi = choi_matrix(&fam, x)?;
        println!(
            "site {x}: choi {}x{}, min eig {:+.3e}, max eig {:.3e}, psd {}",
            choi.rows(),
            choi.cols(),
            report.min_eigenvalue,
            report.max_eigenvalue,
            report.psd
        );
        let bs: Vec<_> = (0..4).map(|_| random_observable(&mut rng, 2)).collect();
        let s = is_psd(&property_s_matrix(&fam, x, &bs)?, 1e-10)?;
        println!(
            "  property S with 4 observables: min eig {:+.3e}",
            s.min_eigenvalue
        );
    }

    let tuples: Vec<Vec<_>> = (0..3)
        .map(|_| {
            sites
                .iter()
                .map(|_| random_observable(&mut rng, 2))
                .collect()
        })
        .collect();
    let t = is_psd(&tensor_property_s_matrix(&fam, &sites, &tuples)?, 1e-10)?;
    println!(
        "tensor kernel on 3 sites: min eig {:+.3e}, psd {}",
        t.min_eigenvalue, t.psd
    );
    Ok(())
}
