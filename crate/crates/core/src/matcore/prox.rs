use nalgebra::DMatrix;

/// `sign(x)·max(|x|−t, 0)`.
#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Entrywise soft-threshold. With `exempt_diagonal` the diagonal passes through untouched.
pub fn soft_threshold_matrix(a: &DMatrix<f64>, t: f64, exempt_diagonal: bool) -> DMatrix<f64> {
    let mut out = a.map(|x| soft_threshold(x, t));
    if exempt_diagonal {
        for i in 0..a.nrows().min(a.ncols()) {
            out[(i, i)] = a[(i, i)];
        }
    }
    out
}

/// Euclidean projection onto the ℓ1 ball `{u : Σ|u_i| ≤ radius}`.
///
/// Sort-based: find the soft-threshold level θ with `Σ max(|v_i|−θ, 0) = radius`.
pub fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    assert!(radius > 0.0, "l1 ball radius must be positive");
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return v.to_vec();
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in mags.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - radius) / (j + 1) as f64;
        if u > t {
            theta = t;
        } else {
            break;
        }
    }
    v.iter().map(|&x| soft_threshold(x, theta)).collect()
}
