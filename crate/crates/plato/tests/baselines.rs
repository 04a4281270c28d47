use proptest::prelude::*;
use rand::Rng as _;

use plato::baselines::*;
use plato::kg::Neighborhoods;
use plato::nn::Tensor2;
use plato::seed;

fn random_problem(n: usize, d: usize, seed_value: u64) -> (Tensor2<f64>, Vec<f64>) {
    let mut rng = seed::rng(seed_value, "lin", 0);
    let x = Tensor2::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect());
    let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (x, y)
}

/// Normal equations by Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|k| a[c][k] * x[k]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    x
}

fn normal_equations(xs: &Tensor2<f64>, yc: &[f64], lambda: f64) -> Vec<f64> {
    let d = xs.cols();
    let a = (0..d)
        .map(|j| {
            (0..d)
                .map(|k| (0..xs.rows()).map(|i| xs.get(i, j) * xs.get(i, k)).sum::<f64>() + if j == k { lambda } else { 0.0 })
                .collect()
        })
        .collect();
    let b = (0..d).map(|j| (0..xs.rows()).map(|i| xs.get(i, j) * yc[i]).sum()).collect();
    gauss_solve(a, b)
}

fn gradient(xs: &Tensor2<f64>, yc: &[f64], w: &[f64]) -> Vec<f64> {
    let n = xs.rows() as f64;
    let r: Vec<f64> = (0..xs.rows()).map(|i| yc[i] - plato::nn::dot(xs.row(i), w)).collect();
    (0..xs.cols()).map(|j| -(0..xs.rows()).map(|i| xs.get(i, j) * r[i]).sum::<f64>() / n).collect()
}

#[test]
fn ridge_exact_fit_example() {
    let x = Tensor2::from_rows(&[vec![1.0], vec![2.0]]);
    let m = fit_ridge(&x, &[1.0, 2.0], 0.0).unwrap();
    assert!((m.weights[0] - 1.0).abs() < 1e-12 && m.intercept.abs() < 1e-12);
    assert_eq!(m.predict(&Tensor2::from_rows(&[vec![3.0]])), [3.0]);
}

#[test]
fn ridge_matches_normal_equations_over_100_draws() {
    for s in 0..100 {
        let (x, y) = random_problem(5, 3, s);
        let lambda = 0.01 * (s % 7) as f64;
        let m = fit_ridge(&x, &y, lambda).unwrap();
        let xs = m.standardization.transform(&x);
        let yc = m.standardization.center(&y);
        let oracle = normal_equations(&xs, &yc, lambda);
        for (a, b) in m.standardized_weights.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "draw {s}: {a} vs {b}");
        }
        // Residual of the system itself.
        let g = gradient(&xs, &yc, &m.standardized_weights);
        let n = xs.rows() as f64;
        let res: f64 = g
            .iter()
            .zip(&m.standardized_weights)
            .map(|(gj, wj)| (n * gj + lambda * wj).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(res < 1e-8, "draw {s}: residual {res}");
    }
}

#[test]
fn ridge_dual_agrees_with_primal() {
    let (x, y) = random_problem(6, 15, 3);
    let m = fit_ridge(&x, &y, 0.7).unwrap();
    let xs = m.standardization.transform(&x);
    let oracle = normal_equations(&xs, &m.standardization.center(&y), 0.7);
    for (a, b) in m.standardized_weights.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn ridge_shrinkage_and_singularity() {
    let (x, y) = random_problem(8, 3, 1);
    let m = fit_ridge(&x, &y, 1e12).unwrap();
    assert!(m.weights.iter().map(|w| w * w).sum::<f64>().sqrt() < 1e-6);
    let (wide, yw) = random_problem(4, 10, 2);
    assert!(matches!(fit_ridge(&wide, &yw, 0.0), Err(BaselineError::Singular { .. })));
    let dup = Tensor2::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]);
    assert!(matches!(fit_ridge(&dup, &[1.0, 2.0, 2.5], 0.0), Err(BaselineError::Singular { .. })));
    assert!(fit_ridge(&x, &y, -1.0).is_err());
}

fn assert_kkt(xs: &Tensor2<f64>, yc: &[f64], w: &[f64], lambda: f64) {
    for (j, (g, wj)) in gradient(xs, yc, w).iter().zip(w).enumerate() {
        if *wj == 0.0 {
            assert!(g.abs() <= lambda + 1e-6, "coordinate {j}: |{g}| > {lambda}");
        } else {
            assert!((g + lambda * wj.signum()).abs() < 1e-6, "coordinate {j}: {g} vs {}", -lambda * wj.signum());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lasso_satisfies_kkt(seed_value in any::<u64>(), lambda in 1e-3f64..0.5, d in 2usize..12) {
        let (x, y) = random_problem(20, d, seed_value);
        let m = fit_lasso(&x, &y, lambda).unwrap();
        let xs = m.standardization.transform(&x);
        assert_kkt(&xs, &m.standardization.center(&y), &m.standardized_weights, lambda);
    }

    #[test]
    fn graphnet_penalty_matches_brute_force(seed_value in any::<u64>(), d in 2usize..15) {
        let mut rng = seed::rng(seed_value, "g", 0);
        let pairs: Vec<(usize, usize)> = (0..3 * d).map(|_| (rng.random_range(0..d), rng.random_range(0..d))).collect();
        let g = Neighborhoods::from_pairs(d, &pairs);
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut adj = vec![vec![false; d]; d];
        for &(a, b) in &pairs {
            if a != b {
                adj[a][b] = true;
                adj[b][a] = true;
            }
        }
        let deg: Vec<f64> = adj.iter().map(|r| r.iter().filter(|&&e| e).count() as f64).collect();
        let (mut gn, mut nc, mut nl) = (0.0, 0.0, 0.0);
        for j in 0..d {
            for k in j + 1..d {
                if adj[j][k] {
                    gn += (w[j] - w[k]).powi(2);
                    nc += (w[j] / deg[j].sqrt() - w[k] / deg[k].sqrt()).powi(2);
                    nl += (w[j] - w[k]).abs();
                }
            }
        }
        prop_assert!((graph_penalty(Penalty::GraphNet, &w, &g, 0.7) - 0.7 * gn).abs() < 1e-12 * (1.0 + gn));
        prop_assert!((graph_penalty(Penalty::NcLasso, &w, &g, 0.7) - 0.7 * nc).abs() < 1e-12 * (1.0 + nc));
        prop_assert!((graph_penalty(Penalty::NetworkLasso, &w, &g, 0.7) - 0.7 * nl).abs() < 1e-12 * (1.0 + nl));
    }
}

#[test]
fn lasso_limits() {
    let (x, y) = random_problem(30, 5, 9);
    let st = Standardization::fit(&x, &y);
    let xs = st.transform(&x);
    let yc = st.center(&y);
    let n = xs.rows() as f64;
    let lmax = (0..5)
        .map(|j| ((0..30).map(|i| xs.get(i, j) * yc[i]).sum::<f64>() / n).abs())
        .fold(0.0, f64::max);
    assert!(fit_lasso(&x, &y, lmax * 1.0001).unwrap().weights.iter().all(|&w| w == 0.0));
    assert!(fit_lasso(&x, &y, lmax * 0.9).unwrap().weights.iter().any(|&w| w != 0.0));
    let ls = fit_lasso(&x, &y, 0.0).unwrap();
    let oracle = normal_equations(&xs, &yc, 0.0);
    for (a, b) in ls.standardized_weights.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn lasso_orthogonal_design_is_soft_thresholding() {
    // Standardized orthogonal columns: xⱼᵀxₖ = n·δⱼₖ.
    let x = Tensor2::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0], vec![-1.0, -1.0]]);
    let y = [3.0, 1.0, -1.0, -2.5];
    let m = fit_lasso(&x, &y, 0.4).unwrap();
    let yc = m.standardization.center(&y);
    for j in 0..2 {
        let z: f64 = (0..4).map(|i| x.get(i, j) * yc[i]).sum::<f64>() / 4.0;
        assert!((m.standardized_weights[j] - soft_threshold(z, 0.4)).abs() < 1e-12);
    }
}

fn path3() -> Neighborhoods {
    Neighborhoods::from_pairs(3, &[(0, 1), (1, 2)])
}

#[test]
fn huge_graph_weight_equalizes_coefficients() {
    let (x, y) = random_problem(12, 3, 4);
    let m = fit_graph_regularized(&x, &y, &path3(), Penalty::GraphNet, 1e6, 0.0).unwrap();
    let w = &m.standardized_weights;
    assert!((w[0] - w[1]).abs() < 1e-4 && (w[1] - w[2]).abs() < 1e-4, "{w:?}");
}

#[test]
fn empty_graph_or_zero_weight_reduces_to_lasso() {
    let (x, y) = random_problem(15, 4, 5);
    let lasso = fit_lasso(&x, &y, 0.05).unwrap();
    let empty = Neighborhoods::from_pairs(4, &[]);
    let full = Neighborhoods::from_pairs(4, &[(0, 1), (1, 2), (2, 3)]);
    for p in [Penalty::GraphNet, Penalty::NcLasso] {
        for (g, lg) in [(&empty, 0.3), (&full, 0.0)] {
            let m = fit_graph_regularized(&x, &y, g, p, lg, 0.05).unwrap();
            for (a, b) in m.standardized_weights.iter().zip(&lasso.standardized_weights) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
    let nl = fit_graph_regularized(&x, &y, &full, Penalty::NetworkLasso, 0.0, 0.05).unwrap();
    for (a, b) in nl.standardized_weights.iter().zip(&lasso.standardized_weights) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn graph_variants_match_a_grid_oracle() {
    let x = Tensor2::from_rows(&[
        vec![1.0, 0.2, -0.5],
        vec![0.3, 1.1, 0.4],
        vec![-0.7, 0.5, 1.2],
        vec![0.9, -0.8, 0.1],
        vec![-1.2, -0.4, -0.9],
        vec![0.2, 0.9, -1.1],
    ]);
    let y = [1.0, 0.8, 0.1, 0.3, -1.5, 0.2];
    let g = path3();
    let step = 0.02;
    for p in [Penalty::GraphNet, Penalty::NcLasso, Penalty::NetworkLasso] {
        for (lg, l1) in [(0.2, 0.0), (0.2, 0.05), (1.0, 0.02)] {
            let m = fit_graph_regularized(&x, &y, &g, p, lg, l1).unwrap();
            let xs = m.standardization.transform(&x);
            let yc = m.standardization.center(&y);
            let got = objective(p, &xs, &yc, &m.standardized_weights, Some(&g), l1, lg);
            let mut best = f64::INFINITY;
            let grid: Vec<f64> = (-60..=60).map(|i| i as f64 * step).collect();
            for &a in &grid {
                for &b in &grid {
                    for &c in &grid {
                        best = best.min(objective(p, &xs, &yc, &[a, b, c], Some(&g), l1, lg));
                    }
                }
            }
            // Coordinate descent is exact; the subgradient method only gets
            // within a fraction of a grid cell.
            let slack = if p == Penalty::NetworkLasso { 1e-3 } else { 1e-9 };
            assert!(got <= best + slack, "{p:?} {lg} {l1}: solver {got} grid {best}");
            assert!(best - got < 5e-3, "{p:?} {lg} {l1}: solver {got} grid {best}");
        }
    }
}

#[test]
fn quadratic_graph_fit_is_stationary() {
    let (x, y) = random_problem(20, 6, 8);
    let g = Neighborhoods::from_pairs(6, &[(0, 1), (1, 2), (3, 4), (4, 5), (0, 5)]);
    for p in [Penalty::GraphNet, Penalty::NcLasso] {
        let m = fit_graph_regularized(&x, &y, &g, p, 0.3, 0.02).unwrap();
        let xs = m.standardization.transform(&x);
        let yc = m.standardization.center(&y);
        let w = &m.standardized_weights;
        let a: Vec<f64> = (0..6)
            .map(|j| if p == Penalty::NcLasso { 1.0 / (g.degree(j) as f64).sqrt() } else { 1.0 })
            .collect();
        let mut grad = gradient(&xs, &yc, w);
        for j in 0..6 {
            for &k in g.of(j) {
                grad[j] += 2.0 * 0.3 * a[j] * (a[j] * w[j] - a[k] * w[k]);
            }
        }
        assert_kkt_grad(&grad, w, 0.02, 1e-5);
    }
}

fn assert_kkt_grad(grad: &[f64], w: &[f64], l1: f64, tol: f64) {
    for (g, wj) in grad.iter().zip(w) {
        if *wj == 0.0 {
            assert!(g.abs() <= l1 + tol);
        } else {
            assert!((g + l1 * wj.signum()).abs() < tol);
        }
    }
}

#[test]
fn sampled_linear_configs_follow_their_ranges() {
    for i in 0..2000 {
        let r = sample_linear_config(Penalty::Ridge, 1, i);
        assert!((1e-4..=10.0).contains(&r.lambda_l2));
        let l = sample_linear_config(Penalty::Lasso, 1, i);
        assert!((1e-4..=10.0).contains(&l.lambda_l1) && l.lambda_l2 == 0.0);
        let g = sample_linear_config(Penalty::NcLasso, 1, i);
        for v in [g.lambda_graph, g.lambda_l1] {
            assert!(v == 0.0 || (1e-5..=1e2).contains(&v));
        }
    }
    assert_eq!("nc-lasso".parse::<Penalty>().unwrap(), Penalty::NcLasso);
    assert!(fit_linear(&sample_linear_config(Penalty::GraphNet, 0, 0), &Tensor2::zeros(3, 2), &[0.0, 1.0, 2.0], None).is_err());
}

#[test]
fn coefficients_are_reported_in_original_units() {
    let (mut x, y) = random_problem(25, 3, 12);
    for i in 0..25 {
        let r = x.row_mut(i);
        r[0] = r[0] * 10.0 + 5.0;
    }
    let m = fit_lasso(&x, &y, 0.01).unwrap();
    let xs = m.standardization.transform(&x);
    for i in 0..25 {
        let std_pred = m.standardization.y_mean + plato::nn::dot(xs.row(i), &m.standardized_weights);
        assert!((m.predict(&x)[i] - std_pred).abs() < 1e-12);
    }
}
