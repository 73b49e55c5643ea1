//! Dormand-Prince 5(4) core: embedded error estimate, PI step-size control,
//! dense output evaluated at the caller's output times. Follows the classic
//! DOPRI5 formulation (Hairer, Norsett & Wanner).

use super::{IntegratorConfig, OdeError};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

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
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFE: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC1: f64 = 0.2;
const FAC2: f64 = 10.0;

/// Integrate from `y0` at `times[0]` and return the state at every output
/// time (the first row is `y0` itself).
pub(super) fn solve<F>(
    rhs: F,
    y0: &[f64],
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<Vec<f64>>, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    solve_weighted(rhs, y0, times, cfg, y0.len())
}

/// Like [`solve`] but with error control relaxed (100x looser) on the
/// components from `n_strict` onward. Used for sensitivity blocks whose
/// role is steering gradient-based samplers rather than reporting.
pub(super) fn solve_weighted<F>(
    mut rhs: F,
    y0: &[f64],
    times: &[f64],
    cfg: &IntegratorConfig,
    n_strict: usize,
) -> Result<Vec<Vec<f64>>, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let t0 = times[0];
    let t_end = *times.last().unwrap();
    let mut out = Vec::with_capacity(times.len());
    out.push(y0.to_vec());
    if times.len() == 1 {
        return Ok(out);
    }

    let rtol = cfg.rel_tol;
    let atol = cfg.abs_tol;
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut y1 = vec![0.0; n];

    rhs(t, &y, &mut k1);
    if !k1.iter().all(|v| v.is_finite()) {
        return Err(OdeError::NonFiniteState { t });
    }

    let mut h = match cfg.initial_step {
        Some(h0) => h0.min(t_end - t0),
        None => initial_step(&mut rhs, t, &y, &k1, t_end, rtol, atol, &mut ytmp, &mut k2),
    };
    let h_floor = 1e-14 * (t_end - t0).max(t0.abs()).max(1.0);

    let expo1 = 0.2 - BETA * 0.75;
    let mut facold: f64 = 1e-4;
    let mut next_out = 1usize;
    let mut nonfinite_reject = false;

    for _step in 0..cfg.max_steps {
        if h < h_floor {
            return if nonfinite_reject {
                Err(OdeError::NonFiniteState { t })
            } else {
                Err(OdeError::StepLimitExceeded { t })
            };
        }
        if t + h > t_end {
            h = t_end - t;
        }

        for i in 0..n {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        rhs(t + C2 * h, &ytmp, &mut k2);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(t + C3 * h, &ytmp, &mut k3);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(t + C4 * h, &ytmp, &mut k4);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(t + C5 * h, &ytmp, &mut k5);
        for i in 0..n {
            ytmp[i] =
                y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs(t + h, &ytmp, &mut k6);
        for i in 0..n {
            y1[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        rhs(t + h, &y1, &mut k7);

        let mut err_sq = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let relax = if i < n_strict { 1.0 } else { 100.0 };
            let sk = relax * (atol + rtol * y[i].abs().max(y1[i].abs()));
            let r = e / sk;
            err_sq += r * r;
        }
        let err = (err_sq / n as f64).sqrt();

        if !err.is_finite() {
            // Blow-up inside the step: retry much smaller before giving up.
            nonfinite_reject = true;
            h *= 0.1;
            continue;
        }
        nonfinite_reject = false;

        let fac11 = err.powf(expo1);
        if err <= 1.0 {
            let fac = (fac11 / facold.powf(BETA) / SAFE).clamp(1.0 / FAC2, 1.0 / FAC1);
            facold = err.max(1e-4);
            let t_new = t + h;

            while next_out < times.len() && times[next_out] <= t_new + h_floor {
                let to = times[next_out];
                if (to - t_new).abs() <= h_floor {
                    out.push(y1.clone());
                } else {
                    out.push(dense_eval(&y, &y1, &k1, &k3, &k4, &k5, &k6, &k7, h, (to - t) / h));
                }
                next_out += 1;
            }

            t = t_new;
            std::mem::swap(&mut y, &mut y1);
            std::mem::swap(&mut k1, &mut k7);
            if next_out >= times.len() {
                return Ok(out);
            }
            h /= fac;
        } else {
            h /= (fac11 / SAFE).min(1.0 / FAC1);
        }
    }
    Err(OdeError::StepLimitExceeded { t })
}

/// Automatic initial step selection (Hairer's `hinit`).
#[allow(clippy::too_many_arguments)]
fn initial_step<F>(
    rhs: &mut F,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    t_end: f64,
    rtol: f64,
    atol: f64,
    y1: &mut [f64],
    f1: &mut [f64],
) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..n {
        let sk = atol + rtol * y0[i].abs();
        dnf += (f0[i] / sk).powi(2);
        dny += (y0[i] / sk).powi(2);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        0.01 * (dny / dnf).sqrt()
    };
    h = h.min(t_end - t0);

    for i in 0..n {
        y1[i] = y0[i] + h * f0[i];
    }
    rhs(t0 + h, y1, f1);

    let mut der2 = 0.0;
    for i in 0..n {
        let sk = atol + rtol * y0[i].abs();
        der2 += ((f1[i] - f0[i]) / sk).powi(2);
    }
    let der2 = der2.sqrt() / h;
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    (100.0 * h).min(h1).min(t_end - t0)
}

/// Evaluate the 4th-order continuous extension at fraction `theta` of the
/// step from `t` to `t + h`.
#[allow(clippy::too_many_arguments)]
fn dense_eval(
    y: &[f64],
    y1: &[f64],
    k1: &[f64],
    k3: &[f64],
    k4: &[f64],
    k5: &[f64],
    k6: &[f64],
    k7: &[f64],
    h: f64,
    theta: f64,
) -> Vec<f64> {
    let n = y.len();
    let mut out = vec![0.0; n];
    let th1 = 1.0 - theta;
    for i in 0..n {
        let ydiff = y1[i] - y[i];
        let bspl = h * k1[i] - ydiff;
        let r1 = y[i];
        let r2 = ydiff;
        let r3 = bspl;
        let r4 = ydiff - h * k7[i] - bspl;
        let r5 = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        out[i] = r1 + theta * (r2 + th1 * (r3 + theta * (r4 + th1 * r5)));
    }
    out
}
