//! FFBS with a slope component against dense Gaussian conditioning.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use tvcast::sampler::{ffbs_states, FfbsModel};

#[test]
fn local_linear_trend_draws_match_dense_conditional() {
    let model = FfbsModel { obs_var: 0.8, level_var: 0.5, trend_var: 0.3, include_trend: true, init_var: 4.0 };
    let obs = [1.0, 2.5, 2.0, 3.5];
    let t = obs.len();
    // z = (α1, ν1, ..., αT, νT) = L u, u = (α1, ν1, w1, e1, ...)
    let d = 2 * t;
    let mut l = DMatrix::<f64>::zeros(d, d);
    l[(0, 0)] = 1.0;
    l[(1, 1)] = 1.0;
    for k in 1..t {
        let (a, n) = (2 * k, 2 * k + 1);
        for j in 0..d {
            l[(a, j)] = l[(a - 2, j)] + l[(n - 2, j)];
            l[(n, j)] = l[(n - 2, j)];
        }
        l[(a, a)] += 1.0;
        l[(n, n)] += 1.0;
    }
    let u_var = DVector::from_fn(d, |i, _| match i {
        0 | 1 => model.init_var,
        i if i % 2 == 0 => model.level_var,
        _ => model.trend_var,
    });
    let sz = &l * DMatrix::from_diagonal(&u_var) * l.transpose();
    let h = DMatrix::from_fn(t, d, |i, j| if j == 2 * i { 1.0 } else { 0.0 });
    let syy = &h * &sz * h.transpose() + DMatrix::<f64>::identity(t, t) * model.obs_var;
    let szy = &sz * h.transpose();
    let k = &szy * syy.try_inverse().unwrap();
    let mean = &k * DVector::from_column_slice(&obs);
    let cov = &sz - &k * szy.transpose();

    let n = 40_000;
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let draws: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let (a, v) = ffbs_states(&obs, &model, &mut rng).unwrap();
            a.iter().zip(&v).flat_map(|(a, v)| [*a, *v]).collect()
        })
        .collect();
    let m: Vec<f64> = (0..d).map(|i| draws.iter().map(|x| x[i]).sum::<f64>() / n as f64).collect();
    for i in 0..d {
        let se = (cov[(i, i)] / n as f64).sqrt();
        assert!((m[i] - mean[i]).abs() < 4.0 * se, "mean {i}: {} vs {}", m[i], mean[i]);
        for j in 0..d {
            let c = draws.iter().map(|x| (x[i] - m[i]) * (x[j] - m[j])).sum::<f64>() / (n - 1) as f64;
            // compare on the correlation scale so near-zero entries are not amplified
            let scale = (cov[(i, i)] * cov[(j, j)]).sqrt();
            assert!((c - cov[(i, j)]).abs() < 0.04 * scale, "cov ({i},{j}): {c} vs {}", cov[(i, j)]);
        }
    }
}
