//! Noise ceilings, certificates and one sanitized gradient step.
//!
//! cargo run --example privacy_certificate

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use riskqa::privacy::{certify, clip, max_noise_std, sanitize, GradSet, PrivacyBudget};

fn main() -> riskqa::Result<()> {
    println!("{:>6} {:>8} {:>6} {:>6} {:>12}", "eps", "delta", "clip", "n", "max_noise");
    for (eps, delta, clip_norm, n) in [(1.0, 1e-5, 1.0, 1000), (2.0, 1e-5, 0.5, 100), (0.5, 1e-6, 1.0, 160)] {
        let b = PrivacyBudget::new(eps, delta, clip_norm, n, 1.0);
        println!("{eps:>6} {delta:>8.0e} {clip_norm:>6} {n:>6} {:>12.6}", max_noise_std(&b)?);
    }

    for noise in [1.0, 4.9, 10.0] {
        let cert = certify(&PrivacyBudget::new(1.0, 1e-5, 1.0, 1000, noise))?;
        println!("\nnoise_std {noise}:\n{}", serde_json::to_string_pretty(&cert)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let per_example = vec![
        GradSet::flat(&[3.0, 4.0]),
        GradSet::flat(&[0.3, -0.4]),
        GradSet::flat(&[-6.0, 8.0]),
    ];
    for g in &per_example {
        println!("norm {:.3} -> clipped {:.3}", g.global_norm(), clip(g, 1.0)?.global_norm());
    }
    let budget = PrivacyBudget::new(1.0, 1e-5, 1.0, per_example.len(), 0.1);
    let step = sanitize(&per_example, &budget, &mut rng)?;
    println!("sanitized batch gradient {:?}", step.values().collect::<Vec<_>>());
    Ok(())
}
