// Row-major dense kernels used by the encoder. Weight matrices are stored
// `[in, out]`, so a layer is `y = x · W + b`.

/// `out[n×m] = x[n×k] · w[k×m] (+ bias)`.
pub(crate) fn matmul(x: &[f64], w: &[f64], bias: Option<&[f64]>, n: usize, k: usize, m: usize, out: &mut [f64]) {
    debug_assert_eq!(x.len(), n * k);
    debug_assert_eq!(w.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        match bias {
            Some(b) => row.copy_from_slice(b),
            None => row.fill(0.0),
        }
        for (p, &xv) in x[i * k..(i + 1) * k].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&w[p * m..(p + 1) * m]) {
                *o += xv * wv;
            }
        }
    }
}

/// `dw[k×m] += xᵀ · dy` for `x[n×k]`, `dy[n×m]`.
pub(crate) fn accum_xt_dy(x: &[f64], dy: &[f64], n: usize, k: usize, m: usize, dw: &mut [f64]) {
    for i in 0..n {
        let dyr = &dy[i * m..(i + 1) * m];
        for (p, &xv) in x[i * k..(i + 1) * k].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (g, &d) in dw[p * m..(p + 1) * m].iter_mut().zip(dyr) {
                *g += xv * d;
            }
        }
    }
}

/// `db[m] += Σ_rows dy`.
pub(crate) fn accum_rows(dy: &[f64], n: usize, m: usize, db: &mut [f64]) {
    for i in 0..n {
        for (g, &d) in db.iter_mut().zip(&dy[i * m..(i + 1) * m]) {
            *g += d;
        }
    }
}

/// `dx[n×k] (+)= dy[n×m] · wᵀ` for `w[k×m]`.
pub(crate) fn dy_wt(dy: &[f64], w: &[f64], n: usize, k: usize, m: usize, dx: &mut [f64], accumulate: bool) {
    for i in 0..n {
        let dyr = &dy[i * m..(i + 1) * m];
        for p in 0..k {
            let s = dot(dyr, &w[p * m..(p + 1) * m]);
            if accumulate {
                dx[i * k + p] += s;
            } else {
                dx[i * k + p] = s;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_C * (x + GELU_A * x * x * x)))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = libm::tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Numerically stable `ln σ(x)`.
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -libm::log1p(libm::exp(-x))
    } else {
        x - libm::log1p(libm::exp(x))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// In-place softmax over a slice.
pub(crate) fn softmax(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = libm::exp(*x - max);
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let x = [1.0, 2.0, 3.0, 4.0]; // 2x2
        let w = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0]; // 2x3
        let mut out = [0.0; 6];
        matmul(&x, &w, Some(&[0.5, 0.5, 0.5]), 2, 2, 3, &mut out);
        assert_eq!(out, [1.5, 2.5, 3.5, 3.5, 4.5, 7.5]);
        let mut dx = [0.0; 4];
        dy_wt(&[1.0, 0.0, 0.0, 0.0, 0.0, 1.0], &w, 2, 2, 3, &mut dx, false);
        assert_eq!(dx, [1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(0.0) + core::f64::consts::LN_2).abs() < 1e-15);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
        assert!((sigmoid(1.0) - 0.731_058_578_630_004_9).abs() < 1e-15);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
