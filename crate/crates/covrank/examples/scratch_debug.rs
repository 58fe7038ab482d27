// Temporary measurement: noise-estimate behavior vs the reference rank M.
use covrank::bootstrap::estimate_noise;
use covrank::fit::{scree_sequence, FitOptions};
use covrank::sim::{generate_model, ModelSpec};

fn main() {
    for model in ["A1", "I1"] {
        let spec = ModelSpec::named(model).unwrap();
        let (w, truth) = generate_model(&spec, 150, 25, 5).unwrap();
        let k = w.covariance(true).unwrap();
        let opts = FitOptions::default().with_seed(1);
        let scree = scree_sequence(&k, 12, &opts).unwrap();
        println!("== {model}: true noise mean {:.3}", truth.noise_var.iter().sum::<f64>() / 25.0);
        print!("   T_q: ");
        for f in &scree.fits {
            print!("{:.3} ", f.statistic);
        }
        println!("\n   t0 = {:.1}", scree.t0);
        for m in [2usize, 3, 6, 10, 11, 12] {
            let noise = estimate_noise(&k, &scree.fits[m - 1].theta, m, false).unwrap();
            let mean = noise.diag.iter().sum::<f64>() / 25.0;
            let min = noise.diag.iter().cloned().fold(f64::INFINITY, f64::min);
            println!("   M = {m:2}: mean D̂ = {mean:.3}  min D̂ = {min:.3}");
        }
    }
}
