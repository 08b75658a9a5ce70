use pgo_core::PortableRng;
use pgo_rl::gradcheck::random_matrix;
use pgo_rl::diffnet::{
    ema_update, kaiming_init, tanh_gaussian_logprob, AdamConfig, AdamState, Lstm, LstmState, Matrix, ParameterBlock,
};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn saturated_forget_gate_accumulates_cell() {
    let mut rng = PortableRng::seed_from_u64(3);
    let (n_in, hd, batch) = (3, 4, 2);
    let mut cell = Lstm::new(n_in, hd, &mut rng);
    cell.b.value = random_matrix(4 * hd, 1, 0.3, &mut rng);
    for r in hd..2 * hd {
        cell.b.value[r] = 20.0;
    }
    let x = random_matrix(n_in, batch, 0.5, &mut rng);
    let state = LstmState {
        h: random_matrix(hd, batch, 0.5, &mut rng),
        c: random_matrix(hd, batch, 1.0, &mut rng),
    };
    let (next, _) = cell.step(&x, &state).unwrap();
    // Oracle built row by row from the raw weights.
    let pre = |row: usize, b: usize| -> f64 {
        let mut z = cell.b.value[row];
        for k in 0..n_in {
            z += cell.wx.value[(row, k)] * x[(k, b)];
        }
        for k in 0..hd {
            z += cell.wh.value[(row, k)] * state.h[(k, b)];
        }
        z
    };
    for b in 0..batch {
        for r in 0..hd {
            let i = sigmoid(pre(r, b));
            let g = pre(2 * hd + r, b).tanh();
            let expected = state.c[(r, b)] + i * g;
            assert!((next.c[(r, b)] - expected).abs() < 1e-6, "{} vs {expected}", next.c[(r, b)]);
        }
    }
}

#[test]
fn squashed_density_integrates_to_one() {
    // ∫ p_a(a) da over (−1, 1), substituting a = tanh(u).
    let (mu, log_std) = (0.3, (0.8f64).ln());
    let (lo, hi, n) = (-12.0, 12.0, 200_000);
    let h = (hi - lo) / n as f64;
    let mut total = 0.0;
    for k in 0..=n {
        let u: f64 = lo + k as f64 * h;
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        let jac = 1.0 - u.tanh().powi(2);
        total += w * tanh_gaussian_logprob(&[mu], &[log_std], &[u]).exp() * jac * h;
    }
    assert!((total - 1.0).abs() < 1e-5, "{total}");
}

#[test]
fn adam_minimizes_a_quadratic_bowl() {
    let target = Matrix::from_column_slice(3, 1, &[0.5, -0.25, 0.1]);
    let mut p = ParameterBlock::zeros(3, 1);
    let config = AdamConfig {
        lr: 0.02,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(config, &[&p]);
    for _ in 0..200 {
        p.grad = 2.0 * (&p.value - &target);
        adam.step(&mut [&mut p]);
    }
    let err = (&p.value - &target).amax();
    assert!(err < 1e-3, "{err}");
}

#[test]
fn kaiming_variance_matches_fan_in() {
    let mut rng = PortableRng::seed_from_u64(17);
    let m = kaiming_init(1000, 100, 2, &mut rng);
    let n = m.len() as f64;
    let mean = m.sum() / n;
    let var = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!((var - 1.0).abs() < 0.05, "{var}");
    assert_eq!(m, kaiming_init(1000, 100, 2, &mut PortableRng::seed_from_u64(17)));
}

#[test]
fn ema_converges_geometrically() {
    let online = ParameterBlock::from_value(Matrix::from_column_slice(2, 1, &[1.0, -2.0]));
    let mut target = ParameterBlock::zeros(2, 1);
    let tau = 0.01;
    let d0 = (&target.value - &online.value).norm();
    for k in 1..=300 {
        ema_update(&mut [&mut target], &[&online], tau);
        let d = (&target.value - &online.value).norm();
        let expected = d0 * (1.0 - tau).powi(k);
        assert!((d - expected).abs() < 1e-12 * d0, "step {k}: {d} vs {expected}");
    }
}
