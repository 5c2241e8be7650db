//! Mixing gaps of a perturbed product family on Z^2, next to the
//! orthonormal homogeneous model, which does not mix.
//!
//! cargo run --release --example mixing_scan

use schur_states::algebra::{CMatrix, CVector, C64};
use schur_states::homogeneous::HomogeneousModel;
use schur_states::lattice::Lattice;
use schur_states::limit::PerturbedModel;
use schur_states::mixing::{mixing_scan, ScanOptions, Strategy};
use schur_states::site::Site;
use schur_states::state::LocalObservable;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // h_{x,i} = (e_1 + 2^{-|x|} v_i) / norm, v_1 = e_2, v_2 = i e_2
    let h = CVector::basis(2, 0);
    let v = vec![
        CVector::basis(2, 1),
        CVector::basis(2, 1).scale(C64::new(0.0, 1.0)),
    ];
    let eps = PerturbedModel::new(2, h, v, 1.0, 0.5)?;

    let s = std::f64::consts::FRAC_1_SQRT_2;
    let u = CVector::from_real(&[s, s]);
    let a = LocalObservable::single(Site::new([0, 0]), u.outer(&u))?;

    let ts = [5, 10, 20, 40];
    let strategies = [Strategy::Translate, Strategy::Random(11)];
    let table = mixing_scan(&eps, &a, &a, &ts, &strategies, &ScanOptions::default())?;
    println!("perturbed family");
    print!("{}", table.to_csv());
    for (label, frac) in &table.trend {
        println!("# {label}: fraction of decreasing steps {frac:.2}");
    }

    let ortho = HomogeneousModel::new(vec![CVector::basis(2, 0), CVector::basis(2, 1)])?
        .on(Lattice::Zd { dim: 2 });
    let p = LocalObservable::single(Site::new([0, 0]), CMatrix::diag_real(&[1.0, 0.0]))?;
    let table = mixing_scan(
        &ortho,
        &p,
        &p,
        &ts,
        &[Strategy::Translate],
        &ScanOptions::default(),
    )?;
    println!("\northonormal homogeneous family");
    print!("{}", table.to_csv());
    println!(
        "# far-field limits independent of (i,j): {}",
        table.alpha[0].1.independent
    );
    Ok(())
}
