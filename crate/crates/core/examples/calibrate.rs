//! Print score moments of the default simulated sample, averaged over seeds.

use peerfx::sim::{simulate_sample, DgpConfig};

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn main() {
    let reps = 50;
    let mut acc = [0.0; 4];
    for seed in 0..reps {
        let cfg = DgpConfig {
            seed,
            ..Default::default()
        };
        let (s, _) = simulate_sample(&cfg).expect("default config is valid");
        let (m1, s1) = moments(&s.y1);
        let (m2, s2) = moments(&s.y2);
        for (a, v) in acc.iter_mut().zip([m1, s1, m2, s2]) {
            *a += v / reps as f64;
        }
    }
    println!("y1 mean {:.2} sd {:.2}", acc[0], acc[1]);
    println!("y2 mean {:.2} sd {:.2}", acc[2], acc[3]);
}
