use rand::{Rng, SeedableRng};
use weightscope::linalg::{self, pca_fit, pca_project, Matrix};

/// Largest root of det(λI − C) for a symmetric 3×3 C, by bisection on the
/// cubic, and a unit null vector of C − λI from a cross product of its rows.
fn char_poly_top(c: [[f64; 3]; 3]) -> (f64, [f64; 3]) {
    let tr = c[0][0] + c[1][1] + c[2][2];
    let minors = c[0][0] * c[1][1] - c[0][1] * c[1][0] + c[0][0] * c[2][2] - c[0][2] * c[2][0]
        + c[1][1] * c[2][2]
        - c[1][2] * c[2][1];
    let det = c[0][0] * (c[1][1] * c[2][2] - c[1][2] * c[2][1]) - c[0][1] * (c[1][0] * c[2][2] - c[1][2] * c[2][0])
        + c[0][2] * (c[1][0] * c[2][1] - c[1][1] * c[2][0]);
    let p = |l: f64| l * l * l - tr * l * l + minors * l - det;
    // all roots lie within the Gershgorin bound
    let bound = (0..3).map(|i| c[i].iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let (mut lo, mut hi) = (-bound - 1.0, bound + 1.0);
    // p > 0 beyond the top root; scan down for the first sign change
    let steps = 20000;
    for s in 0..steps {
        let x = hi - (hi - lo) * (s as f64 + 1.0) / steps as f64;
        if p(x) <= 0.0 {
            lo = x;
            hi = x + (bound * 2.0 + 2.0) / steps as f64;
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if p(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let l = 0.5 * (lo + hi);
    let m = [
        [c[0][0] - l, c[0][1], c[0][2]],
        [c[1][0], c[1][1] - l, c[1][2]],
        [c[2][0], c[2][1], c[2][2] - l],
    ];
    let cross = |a: [f64; 3], b: [f64; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let v = [cross(m[0], m[1]), cross(m[0], m[2]), cross(m[1], m[2])]
        .into_iter()
        .max_by(|a, b| a.iter().map(|x| x * x).sum::<f64>().total_cmp(&b.iter().map(|x| x * x).sum()))
        .unwrap();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (l, [v[0] / n, v[1] / n, v[2] / n])
}

fn brute_cov(points: &[[f64; 3]]) -> [[f64; 3]; 3] {
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        for d in 0..3 {
            mean[d] += p[d] / n;
        }
    }
    let mut c = [[0.0; 3]; 3];
    for p in points {
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    c
}

fn same_direction(a: &[f64], b: &[f64], tol: f64) -> bool {
    let plus = a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol);
    let minus = a.iter().zip(b).all(|(x, y)| (x + y).abs() < tol);
    plus || minus
}

#[test]
fn line_cloud_matches_characteristic_polynomial() {
    let pts: Vec<[f64; 3]> = (-2..=2).map(|t| [t as f64, 2.0 * t as f64, 0.0]).collect();
    let (l, v) = char_poly_top(brute_cov(&pts));
    let m = Matrix::from_rows(&pts.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap();
    let basis = pca_fit(&m, 1).unwrap();
    let got = basis.components.row(0);
    let want = [1.0 / 5f64.sqrt(), 2.0 / 5f64.sqrt(), 0.0];
    assert!(same_direction(got, &v, 1e-9), "{got:?} vs oracle {v:?}");
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{got:?}");
    }
    assert!((basis.explained_variance[0] - l).abs() < 1e-9);
    assert!((l - 12.5).abs() < 1e-9);
}

#[test]
fn random_clouds_match_characteristic_polynomial() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let scale: [f64; 3] = [rng.random_range(0.1..3.0), rng.random_range(0.1..3.0), rng.random_range(0.1..3.0)];
        let pts: Vec<[f64; 3]> = (0..40)
            .map(|_| {
                let a: f64 = rng.random_range(-1.0..1.0);
                [
                    scale[0] * a + rng.random_range(-0.3..0.3),
                    scale[1] * rng.random_range(-1.0..1.0) + a,
                    scale[2] * rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let (l, v) = char_poly_top(brute_cov(&pts));
        let m = Matrix::from_rows(&pts.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap();
        let basis = pca_fit(&m, 3).unwrap();
        assert!((basis.explained_variance[0] - l).abs() < 1e-9 * l.max(1.0));
        assert!(same_direction(basis.components.row(0), &v, 1e-6));
    }
}

#[test]
fn isotropic_cross_has_scaled_identity_covariance() {
    let pts = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]];
    let c = brute_cov(&pts);
    assert!((c[0][0] - 2.0 / 3.0).abs() < 1e-15 && (c[1][1] - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(c[0][1], 0.0);
    let m = Matrix::from_rows(&pts.iter().map(|p| p[..2].to_vec()).collect::<Vec<_>>()).unwrap();
    let basis = pca_fit(&m, 2).unwrap();
    for ev in &basis.explained_variance {
        assert!((ev - 2.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn full_basis_preserves_distances_and_reconstructs() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for d in 1..=6 {
        let data: Vec<f64> = (0..30 * d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let m = Matrix::from_vec(30, d, data).unwrap();
        let basis = pca_fit(&m, d).unwrap();
        let proj = pca_project(&basis, &m).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                let a = linalg::dist(m.row(i), m.row(j));
                let b = linalg::dist(proj.row(i), proj.row(j));
                assert!((a - b).abs() < 1e-9);
            }
        }
        assert!(basis.reconstruct(&proj).unwrap().max_abs_diff(&m) < 1e-9);
    }
}
