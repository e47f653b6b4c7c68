//! Adaptive Dormand–Prince 5(4) integrator for autonomous systems.

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// error weights: b - b*
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Dopri5 {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Dopri5 {
            rtol,
            atol,
            h_max: f64::INFINITY,
            max_steps: 1_000_000,
        }
    }

    /// One embedded step of size `h` (may be negative). Returns the
    /// fifth-order solution and the scaled error norm.
    pub fn step<F>(&self, f: &mut F, y: &[f64], h: f64) -> (Vec<f64>, f64)
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let n = y.len();
        let mut k = vec![vec![0.0; n]; 7];
        let mut tmp = vec![0.0; n];
        f(y, &mut k[0]);
        let stage = |coeffs: &[f64], k: &[Vec<f64>], tmp: &mut [f64]| {
            for i in 0..n {
                let mut s = 0.0;
                for (c, ki) in coeffs.iter().zip(k) {
                    s += c * ki[i];
                }
                tmp[i] = y[i] + h * s;
            }
        };
        stage(&[A21], &k, &mut tmp);
        f(&tmp, &mut k[1]);
        stage(&[A31, A32], &k, &mut tmp);
        f(&tmp, &mut k[2]);
        stage(&[A41, A42, A43], &k, &mut tmp);
        f(&tmp, &mut k[3]);
        stage(&[A51, A52, A53, A54], &k, &mut tmp);
        f(&tmp, &mut k[4]);
        stage(&[A61, A62, A63, A64, A65], &k, &mut tmp);
        f(&tmp, &mut k[5]);
        let mut y_new = vec![0.0; n];
        stage(&[B1, 0.0, B3, B4, B5, B6], &k, &mut y_new);
        f(&y_new, &mut k[6]);
        let mut err = 0.0_f64;
        for i in 0..n {
            let e = h
                * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i]
                    + E7 * k[6][i]);
            let sc = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
            err = err.max((e / sc).abs());
        }
        (y_new, err)
    }

    /// Integrates `y' = f(y)` over a span of length `span` (sign gives the
    /// direction), adapting the step. `h` carries the step-size guess in
    /// and out so consecutive calls continue smoothly.
    pub fn advance<F>(&self, f: &mut F, y: &mut Vec<f64>, span: f64, h: &mut f64) -> Result<(), String>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        if span == 0.0 {
            return Ok(());
        }
        let dir = span.signum();
        let mut done = 0.0;
        let total = span.abs();
        let mut steps = 0;
        if *h <= 0.0 || !h.is_finite() {
            *h = (total * 1e-2).min(self.h_max);
        }
        while done < total {
            steps += 1;
            if steps > self.max_steps {
                return Err("step budget exhausted".into());
            }
            let hh = h.min(self.h_max).min(total - done);
            let (y_new, err) = self.step(f, y, dir * hh);
            if !y_new.iter().all(|v| v.is_finite()) {
                *h = hh * 0.1;
                if *h < 1e-14 * total.max(1.0) {
                    return Err("non-finite state".into());
                }
                continue;
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                *y = y_new;
                done += hh;
                if hh < h.min(self.h_max) {
                    // truncated final step: keep the previous guess
                    continue;
                }
                *h = hh * factor;
            } else {
                *h = hh * factor.min(0.9);
                if *h < 1e-14 * total.max(1.0) {
                    return Err("step size underflow".into());
                }
            }
        }
        Ok(())
    }
}
