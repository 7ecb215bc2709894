/// `y(t) = c0 + c1·t + c2·t²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Quadratic {
    pub fn eval(&self, t: f64) -> f64 {
        self.c0 + self.c1 * t + self.c2 * t * t
    }
}

/// Least-squares quadratic through `(t, ys[t])` for `t = 0, 1, ...`.
///
/// The abscissa is centered before solving the normal equations, which keeps them well
/// conditioned for long runs. Returns `None` for fewer than three samples.
pub fn fit_quadratic(ys: &[f64]) -> Option<Quadratic> {
    let n = ys.len();
    if n < 3 {
        return None;
    }
    let m = (n - 1) as f64 / 2.0;
    let mut s = [0.0f64; 5];
    let mut r = [0.0f64; 3];
    for (i, &y) in ys.iter().enumerate() {
        let u = i as f64 - m;
        let mut p = 1.0;
        for k in 0..5 {
            s[k] += p;
            if k < 3 {
                r[k] += p * y;
            }
            p *= u;
        }
    }
    let a = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
    let [b0, b1, b2] = solve3(a, r)?;
    // expand b0 + b1·(t−m) + b2·(t−m)²
    Some(Quadratic {
        c0: b0 - b1 * m + b2 * m * m,
        c1: b1 - 2.0 * b2 * m,
        c2: b2,
    })
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}
