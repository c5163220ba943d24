//! Scratch diagnostic: how well does a linear feedback law
//! u = A (pos - goal) + B vel + c fit the expert labels across episodes?

use nalgebra::{DMatrix, DVector};
use proxops::config::RunConfig;
use proxops::dataset;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg = RunConfig::load(std::path::Path::new(&args[1])).unwrap();
    let run_dir = std::path::Path::new(&args[2]);
    let manifest = dataset::read_manifest(run_dir).unwrap();
    let _ = &cfg;

    let collect = |ids: &Vec<u64>| -> (Vec<[f64; 7]>, Vec<[f64; 3]>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for id in ids {
            let meta = manifest.episode(*id).unwrap();
            let ep = dataset::read_episode(run_dir, meta).unwrap();
            for r in &ep.records {
                let u = r.u_expert.unwrap();
                let d = r.state.position - r.goal.position;
                let v = r.state.velocity;
                xs.push([d.x, d.y, d.z, v.x, v.y, v.z, 1.0]);
                ys.push([u.force.x, u.force.y, u.force.z]);
            }
        }
        (xs, ys)
    };

    let (xt, yt) = collect(&manifest.splits.train);
    let (xv, yv) = collect(&manifest.splits.test);

    // Least squares per output axis.
    let n = xt.len();
    let mut a = DMatrix::<f64>::zeros(n, 7);
    for (i, x) in xt.iter().enumerate() {
        for j in 0..7 {
            a[(i, j)] = x[j];
        }
    }
    let ata = a.transpose() * &a;
    let mut coefs = Vec::new();
    for axis in 0..3 {
        let b = DVector::from_iterator(n, yt.iter().map(|y| y[axis]));
        let atb = a.transpose() * b;
        let k = ata.clone().lu().solve(&atb).unwrap();
        coefs.push(k);
    }

    let eval = |xs: &Vec<[f64; 7]>, ys: &Vec<[f64; 3]>| -> (f64, f64) {
        let mut rmse_sum = 0.0;
        let mut zero_sum = 0.0;
        for (x, y) in xs.iter().zip(ys.iter()) {
            let mut se = 0.0;
            let mut ze = 0.0;
            for axis in 0..3 {
                let pred: f64 = (0..7).map(|j| coefs[axis][j] * x[j]).sum();
                let clamped = pred.clamp(-7.0, 7.0);
                se += (clamped - y[axis]).powi(2);
                ze += y[axis].powi(2);
            }
            rmse_sum += (se / 3.0).sqrt();
            zero_sum += (ze / 3.0).sqrt();
        }
        (rmse_sum / xs.len() as f64, zero_sum / xs.len() as f64)
    };

    let (tr, trz) = eval(&xt, &yt);
    let (te, tez) = eval(&xv, &yv);
    println!("linear law: train rmse {tr:.3} (zero {trz:.3}), test rmse {te:.3} (zero {tez:.3}, ratio {:.2})", te / tez);
    for axis in 0..3 {
        let k = &coefs[axis];
        println!(
            "  axis {axis}: Kp [{:.2e} {:.2e} {:.2e}]  Kv [{:.3} {:.3} {:.3}]  c {:.3}",
            k[0], k[1], k[2], k[3], k[4], k[5], k[6]
        );
    }
}
